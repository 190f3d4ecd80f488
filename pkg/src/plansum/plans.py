"""Content plans: greedy oracle construction, derived plans, random distractors.

A content plan is a sorted set of extraction-unit indices. The oracle plan
greedily adds the unit that most improves the average of ROUGE-1 and
ROUGE-2 F1 of the selected units (concatenated in document order) against
the reference, stopping at the first step with no strictly positive gain.
A derived plan runs the same alignment against a model summary instead of
the reference.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document
from .rouge import mean_r1_r2

PROVENANCES = ("oracle", "random", "generated", "derived", "null")

DEFAULT_MAX_PLAN_LEN = 20


@dataclass(frozen=True)
class ContentPlan:
    edu_indices: tuple[int, ...]
    provenance: str = "null"
    log_prob: float | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        idx = self.edu_indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"plan indices must be strictly increasing, got {idx}")
        if self.provenance == "null" and idx:
            raise ValueError("a null plan cannot carry indices")

    def __len__(self) -> int:
        return len(self.edu_indices)

    @property
    def is_empty(self) -> bool:
        return not self.edu_indices

    def as_set(self) -> frozenset[int]:
        return frozenset(self.edu_indices)

    def validate_for(self, doc: Document) -> None:
        if self.edu_indices and self.edu_indices[-1] >= doc.num_edus:
            raise ValueError(
                f"plan index {self.edu_indices[-1]} out of range for doc {doc.id!r} "
                f"with {doc.num_edus} units"
            )


NULL_PLAN = ContentPlan(edu_indices=(), provenance="null")


def _greedy_select(doc: Document, target: Sequence[str], max_len: int) -> list[int]:
    selected: list[int] = []
    current = 0.0
    while len(selected) < min(max_len, doc.num_edus):
        best_gain = 0.0
        best_idx = None
        for i in range(doc.num_edus):
            if i in selected:
                continue
            score = mean_r1_r2(doc.plan_tokens(selected + [i]), target)
            gain = score - current
            if gain > best_gain:
                best_gain = gain
                best_idx = i
        if best_idx is None:
            break
        selected.append(best_idx)
        current += best_gain
    return sorted(selected)


def greedy_oracle(doc: Document, reference: Sequence[str],
                  max_len: int = DEFAULT_MAX_PLAN_LEN) -> ContentPlan:
    """Greedy ROUGE-maximizing plan for a reference. Ties go to the lowest index."""
    if doc.num_edus < 1:
        raise ValueError(f"doc {doc.id!r} has no extraction units")
    if not reference:
        raise ValueError("reference token list is empty")
    return ContentPlan(tuple(_greedy_select(doc, reference, max_len)), provenance="oracle")


def derive_dcp(doc: Document, summary: Sequence[str],
               max_len: int = DEFAULT_MAX_PLAN_LEN) -> ContentPlan:
    """Align a summary back onto source units with the same greedy procedure."""
    if doc.num_edus < 1:
        raise ValueError(f"doc {doc.id!r} has no extraction units")
    if not summary:
        raise ValueError("summary token list is empty")
    return ContentPlan(tuple(_greedy_select(doc, summary, max_len)), provenance="derived")


def sample_distractor(doc: Document, oracle: ContentPlan, rng_seed: int) -> ContentPlan:
    """Uniform same-length sample from the units outside the oracle plan.

    Returns all non-oracle units when fewer exist, and an empty plan when
    the oracle covers the whole document (the caller then drops the
    distractor-dependent loss term).
    """
    oracle.validate_for(doc)
    pool = sorted(set(range(doc.num_edus)) - oracle.as_set())
    take = min(len(oracle), len(pool))
    if take == 0:
        return ContentPlan((), provenance="random")
    picked = random.Random(rng_seed).sample(pool, take)
    return ContentPlan(tuple(sorted(picked)), provenance="random")


def plan_to_record(doc_id: str, plan: ContentPlan, beam: int | None = None) -> dict:
    record = {
        "doc_id": doc_id,
        "provenance": plan.provenance,
        "edu_indices": list(plan.edu_indices),
        "log_prob": plan.log_prob,
    }
    if beam is not None:
        record["beam"] = beam
    return record


def plan_from_record(record: dict) -> tuple[str, ContentPlan]:
    return record["doc_id"], ContentPlan(
        edu_indices=tuple(record["edu_indices"]),
        provenance=record.get("provenance", "null") or "null",
        log_prob=record.get("log_prob"),
    )


def save_plans(plans: Iterable[tuple[str, ContentPlan]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, plan in plans:
            fh.write(json.dumps(plan_to_record(doc_id, plan)) + "\n")


def load_plans(path: str | Path) -> dict[str, ContentPlan]:
    """Load one plan per document id (later lines win)."""
    out: dict[str, ContentPlan] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc_id, plan = plan_from_record(json.loads(line))
                out[doc_id] = plan
    return out
