"""Shared test construction helpers."""

from __future__ import annotations

from plansum.corpus import Document, document_from_record


def make_edu_doc(clauses: list[str], reference: str | None = None,
                 doc_id: str = "doc") -> Document:
    """Document whose extraction units are exactly the given clause strings.

    Units are laid out space-separated in one sentence, so tokenization of
    each unit matches tokenize(clause).
    """
    text = " ".join(clauses)
    spans = []
    cursor = 0
    for i, clause in enumerate(clauses):
        end = cursor + len(clause) + (1 if i + 1 < len(clauses) else 0)
        spans.append([cursor, end])
        cursor = end
    return document_from_record(
        {"id": doc_id, "text": text, "reference": reference, "edus": spans})
