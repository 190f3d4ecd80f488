"""Self-contained ROUGE-1/2/L F1 scoring over pre-tokenized text.

N-gram overlap uses clipped counts; ROUGE-L uses the longest common
subsequence. No stemming and no stopword removal — lowercasing is the
tokenizer's job — so scores are deterministic and reproducible.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Sequence


class Score(NamedTuple):
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class RougeScore:
    r1: Score
    r2: Score
    rl: Score


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> Score:
    """Clipped n-gram overlap precision/recall/F1. Zero counts give 0, not an error."""
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    precision = overlap / cand_total if cand_total else 0.0
    recall = overlap / ref_total if ref_total else 0.0
    return Score(precision, recall, _f1(precision, recall))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> Score:
    """LCS-based precision (LCS/|candidate|), recall (LCS/|reference|), F1."""
    lcs = _lcs_length(candidate, reference)
    precision = lcs / len(candidate) if candidate else 0.0
    recall = lcs / len(reference) if reference else 0.0
    return Score(precision, recall, _f1(precision, recall))


def rouge_score(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    return RougeScore(
        r1=rouge_n(candidate, reference, 1),
        r2=rouge_n(candidate, reference, 2),
        rl=rouge_l(candidate, reference),
    )


def mean_r1_r2(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Arithmetic mean of ROUGE-1 F1 and ROUGE-2 F1 (the oracle's gain metric)."""
    return (rouge_n(candidate, reference, 1).f1 + rouge_n(candidate, reference, 2).f1) / 2


def mean_f1(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Mean of ROUGE-1/2/L F1 — the re-ranker's target metric."""
    score = rouge_score(candidate, reference)
    return (score.r1.f1 + score.r2.f1 + score.rl.f1) / 3
