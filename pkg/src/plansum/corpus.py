"""Document model: sentence splitting, clause-level segmentation, tokenization, JSONL I/O.

Segmentation is rule-based and deterministic. A document is split into
sentences at terminal punctuation followed by whitespace and a capital
letter; each sentence is split into clause-level extraction units at
(a) a comma followed by a coordinating conjunction, (b) a semicolon, and
(c) a comma followed by a subordinating or relative marker. Units shorter
than ``min_edu_tokens`` are merged into their following neighbor (the last
unit of a sentence merges backward), so units stay clause-sized.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


class CorpusError(ValueError):
    """A document or corpus record violates the corpus contracts."""


_SENT_BOUNDARY = re.compile(r"(?<=[.!?])\s+(?=[A-Z])")

# clause boundary markers: coordinating conjunctions plus the subordinating /
# relative markers that require a preceding comma
_CLAUSE_MARKERS = (
    "and", "but", "or", "so", "yet",
    "who", "which", "that", "because", "although", "while", "when",
)
_COMMA_SPLIT = re.compile(r",(?=\s+(?:%s)\b)" % "|".join(_CLAUSE_MARKERS), re.IGNORECASE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and peel punctuation into separate tokens.

    Interior punctuation (hyphens, apostrophes) is left attached, so
    "don't" stays one token while "cat," becomes ["cat", ","].
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        head: list[str] = []
        tail: list[str] = []
        while chunk and not chunk[0].isalnum():
            head.append(chunk[0])
            chunk = chunk[1:]
        while chunk and not chunk[-1].isalnum():
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(head)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(tail))
    return tokens


@dataclass(frozen=True)
class EduSpan:
    """One extraction unit: a contiguous clause-level span of a sentence."""

    index: int
    sentence_index: int
    char_start: int
    char_end: int
    token_count: int


@dataclass(frozen=True)
class Document:
    """Immutable source document with sentence spans and extraction units.

    ``sentences`` and ``edus`` carry character offsets into ``text``. Within
    each sentence the unit spans are contiguous and concatenate back to the
    sentence text exactly.
    """

    id: str
    text: str
    sentences: tuple[tuple[int, int], ...]
    edus: tuple[EduSpan, ...]
    reference: str | None = None
    tokens: tuple[tuple[str, ...], ...] = ()
    _edu_tokens: tuple[tuple[str, ...], ...] = field(default=(), repr=False)

    @property
    def num_edus(self) -> int:
        return len(self.edus)

    def sentence_text(self, i: int) -> str:
        start, end = self.sentences[i]
        return self.text[start:end]

    def edu_text(self, i: int) -> str:
        span = self.edus[i]
        return self.text[span.char_start:span.char_end]

    def edu_tokens(self, i: int) -> tuple[str, ...]:
        return self._edu_tokens[i]

    def plan_tokens(self, indices: Iterable[int]) -> list[str]:
        """Tokens of the selected units concatenated in document order."""
        out: list[str] = []
        for i in sorted(set(indices)):
            out.extend(self._edu_tokens[i])
        return out

    def plan_text(self, indices: Iterable[int]) -> str:
        return " ".join(self.edu_text(i).strip() for i in sorted(set(indices)))

    def reference_tokens(self) -> list[str]:
        return tokenize(self.reference) if self.reference else []


def _validate(doc: Document) -> Document:
    n = len(doc.text)
    prev_end = 0
    for start, end in doc.sentences:
        if not (0 <= start < end <= n):
            raise CorpusError(f"doc {doc.id!r}: sentence span ({start}, {end}) out of bounds")
        if start < prev_end:
            raise CorpusError(f"doc {doc.id!r}: sentence spans overlap or are out of order")
        prev_end = end
    by_sentence: dict[int, list[EduSpan]] = {}
    for k, span in enumerate(doc.edus):
        if span.index != k:
            raise CorpusError(f"doc {doc.id!r}: edu indices not dense at position {k}")
        if not (0 <= span.sentence_index < len(doc.sentences)):
            raise CorpusError(f"doc {doc.id!r}: edu {k} has bad sentence index")
        by_sentence.setdefault(span.sentence_index, []).append(span)
    covered = sorted(by_sentence)
    if covered and covered != list(range(len(doc.sentences))):
        raise CorpusError(f"doc {doc.id!r}: some sentences have no extraction unit")
    for s_idx, spans in by_sentence.items():
        s_start, s_end = doc.sentences[s_idx]
        cursor = s_start
        for span in spans:
            if span.char_start != cursor:
                raise CorpusError(
                    f"doc {doc.id!r}: edus in sentence {s_idx} overlap or leave a gap "
                    f"at offset {span.char_start}"
                )
            if span.char_end <= span.char_start:
                raise CorpusError(f"doc {doc.id!r}: empty edu span in sentence {s_idx}")
            cursor = span.char_end
        if cursor != s_end:
            raise CorpusError(f"doc {doc.id!r}: edus do not cover sentence {s_idx} exactly")
    return doc


def _make_document(doc_id: str, text: str, sentences: list[tuple[int, int]],
                   edu_spans: list[tuple[int, int, int]], reference: str | None) -> Document:
    """Assemble a Document from (sentence_index, start, end) unit spans."""
    edus = []
    edu_tokens = []
    for k, (s_idx, start, end) in enumerate(edu_spans):
        toks = tuple(tokenize(text[start:end]))
        edus.append(EduSpan(index=k, sentence_index=s_idx, char_start=start,
                            char_end=end, token_count=len(toks)))
        edu_tokens.append(toks)
    doc = Document(
        id=doc_id,
        text=text,
        sentences=tuple(sentences),
        edus=tuple(edus),
        reference=reference,
        tokens=tuple(tuple(tokenize(text[s:e])) for s, e in sentences),
        _edu_tokens=tuple(edu_tokens),
    )
    return _validate(doc)


def _sentence_spans(text: str) -> list[tuple[int, int]]:
    bounds = [0]
    for m in _SENT_BOUNDARY.finditer(text):
        bounds.append(m.end())
    bounds.append(len(text))
    spans = []
    for a, b in zip(bounds, bounds[1:]):
        seg = text[a:b]
        lo = a + (len(seg) - len(seg.lstrip()))
        hi = b - (len(seg) - len(seg.rstrip()))
        if hi > lo:
            spans.append((lo, hi))
    return spans


def _clause_cuts(sentence: str) -> list[int]:
    cuts = {m.end() for m in _COMMA_SPLIT.finditer(sentence)}
    cuts.update(i + 1 for i, ch in enumerate(sentence) if ch == ";")
    return sorted(c for c in cuts if 0 < c < len(sentence))


def _merge_short(spans: list[tuple[int, int]], text: str, min_tokens: int) -> list[tuple[int, int]]:
    spans = list(spans)
    counts = [len(tokenize(text[a:b])) for a, b in spans]
    while len(spans) > 1:
        victim = next((i for i, c in enumerate(counts) if c < min_tokens), None)
        if victim is None:
            break
        lo = victim - 1 if victim == len(spans) - 1 else victim
        hi = lo + 1
        spans[lo] = (spans[lo][0], spans[hi][1])
        counts[lo] = len(tokenize(text[spans[lo][0]:spans[lo][1]]))
        del spans[hi], counts[hi]
    return spans


def segment(text: str, min_edu_tokens: int = 5, doc_id: str = "",
            reference: str | None = None) -> Document:
    """Segment raw text into sentences and clause-level extraction units."""
    if not text or not text.strip():
        raise CorpusError("cannot segment empty or whitespace-only text")
    sentences = _sentence_spans(text)
    edu_spans: list[tuple[int, int, int]] = []
    for s_idx, (s_start, s_end) in enumerate(sentences):
        sent = text[s_start:s_end]
        bounds = [0] + _clause_cuts(sent) + [len(sent)]
        raw = [(a, b) for a, b in zip(bounds, bounds[1:])]
        merged = _merge_short(raw, sent, min_edu_tokens)
        edu_spans.extend((s_idx, s_start + a, s_start + b) for a, b in merged)
    return _make_document(doc_id, text, sentences, edu_spans, reference)


def _char_offsets_from_bytes(text: str, spans: Sequence[Sequence[int]]) -> list[tuple[int, int]]:
    """Map UTF-8 byte offsets to character offsets; reject mid-character cuts."""
    byte_to_char = {}
    pos = 0
    for i, ch in enumerate(text):
        byte_to_char[pos] = i
        pos += len(ch.encode("utf-8"))
    byte_to_char[pos] = len(text)
    out = []
    for pair in spans:
        if len(pair) != 2:
            raise CorpusError(f"edu span {pair!r} is not a [start, end] pair")
        start, end = pair
        if start not in byte_to_char or end not in byte_to_char:
            raise CorpusError(f"edu byte span ({start}, {end}) does not land on character boundaries")
        out.append((byte_to_char[start], byte_to_char[end]))
    return out


def _byte_offsets(text: str, start: int, end: int) -> tuple[int, int]:
    return (len(text[:start].encode("utf-8")), len(text[:end].encode("utf-8")))


def _document_from_explicit_edus(doc_id: str, text: str, byte_spans: Sequence[Sequence[int]],
                                 reference: str | None) -> Document:
    char_spans = _char_offsets_from_bytes(text, byte_spans)
    for (a1, b1), (a2, b2) in zip(char_spans, char_spans[1:]):
        if a2 < b1:
            raise CorpusError(f"doc {doc_id!r}: edu spans overlap at offset {a2}")
    # sentences are maximal runs of contiguous units; gaps must be whitespace
    sentences: list[tuple[int, int]] = []
    edu_spans: list[tuple[int, int, int]] = []
    run_start = None
    prev_end = 0
    for a, b in char_spans:
        if run_start is None or a != prev_end:
            if text[prev_end:a].strip():
                raise CorpusError(
                    f"doc {doc_id!r}: text at offsets {prev_end}..{a} is not covered by any edu"
                )
            run_start = a
            sentences.append((a, b))
        else:
            sentences[-1] = (run_start, b)
        edu_spans.append((len(sentences) - 1, a, b))
        prev_end = b
    if text[prev_end:].strip():
        raise CorpusError(f"doc {doc_id!r}: trailing text at offset {prev_end} is not covered by any edu")
    return _make_document(doc_id, text, sentences, edu_spans, reference)


def document_from_record(record: dict, min_edu_tokens: int = 5) -> Document:
    if not isinstance(record, dict):
        raise CorpusError("record is not a JSON object")
    doc_id = record.get("id")
    text = record.get("text")
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusError("record is missing a non-empty 'id'")
    if not isinstance(text, str) or not text.strip():
        raise CorpusError(f"doc {doc_id!r}: missing or empty 'text'")
    reference = record.get("reference")
    if reference is not None and not isinstance(reference, str):
        raise CorpusError(f"doc {doc_id!r}: 'reference' must be a string or null")
    edus = record.get("edus")
    if edus is None:
        return segment(text, min_edu_tokens=min_edu_tokens, doc_id=doc_id, reference=reference)
    if not isinstance(edus, list) or not edus:
        raise CorpusError(f"doc {doc_id!r}: 'edus' must be a non-empty array of [start, end] pairs")
    return _document_from_explicit_edus(doc_id, text, edus, reference)


def document_to_record(doc: Document) -> dict:
    return {
        "id": doc.id,
        "text": doc.text,
        "reference": doc.reference,
        "edus": [list(_byte_offsets(doc.text, s.char_start, s.char_end)) for s in doc.edus],
    }


def load_jsonl(path: str | Path, min_edu_tokens: int = 5) -> list[Document]:
    """Load documents from JSONL. Pre-supplied edu spans are honored verbatim."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                docs.append(document_from_record(record, min_edu_tokens=min_edu_tokens))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return docs


def save_jsonl(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_record(doc), ensure_ascii=False) + "\n")
