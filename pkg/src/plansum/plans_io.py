"""JSONL I/O for per-document plan beams (multi-plan records)."""

from __future__ import annotations

import json
from pathlib import Path

from .plans import ContentPlan, plan_from_record, plan_to_record


def save_plan_beams(beams: dict[str, list[ContentPlan]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, plans in beams.items():
            for beam, plan in enumerate(plans):
                fh.write(json.dumps(plan_to_record(doc_id, plan, beam=beam)) + "\n")


def load_plan_beams(path: str | Path) -> dict[str, list[ContentPlan]]:
    out: dict[str, list[ContentPlan]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc_id, plan = plan_from_record(json.loads(line))
                out.setdefault(doc_id, []).append(plan)
    return out
