"""Candidate-set diagnostics: salience, uniqueness, fusion, plan adherence.

``report`` aggregates candidate sets into seven CSV tables (beam-level
tables live in a per-method subdirectory) and renders the matching
matplotlib figures next to them:

    <method>/rouge_by_beam.csv   beam,mean_r1,mean_len
    <method>/salience_by_beam.csv beam,salience
    <method>/quartiles.csv       quartile,mean_r1
    uniqueness.csv               method,uniqueness
    fusion.csv                   method,fusion_ratio
    adherence.csv                method,adherence_r,adherence_p,adherence_f1
    plan_quality.csv             method,plan_r1,plan_r2,plan_rl,unique_plans

Rows whose inputs are missing (for example a document without a
reference) are left out rather than written as zero.
"""

from __future__ import annotations

import csv
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .abstractor import Candidate, CandidateSet
from .corpus import Document, segment, tokenize, CorpusError
from .plans import ContentPlan, derive_dcp
from .rouge import rouge_n, rouge_score

log = logging.getLogger(__name__)


def salience(dcp: ContentPlan, doc: Document, reference: Sequence[str]) -> float:
    """ROUGE-1 F1 of the derived plan's unit text against the reference."""
    if not reference:
        raise ValueError("reference token list is empty")
    if dcp.is_empty:
        return 0.0
    return rouge_n(doc.plan_tokens(dcp.edu_indices), reference, 1).f1


def uniqueness(dcps: Iterable[ContentPlan]) -> int:
    """Number of distinct unit-index sets."""
    return len({plan.as_set() for plan in dcps})


def candidate_sentence_count(text: str) -> int:
    try:
        return len(segment(text).sentences)
    except CorpusError:
        return 0


def fusion_ratio(candidate_text: str, doc: Document, dcp: ContentPlan | None = None) -> float:
    """Unique source sentences feeding the implied plan per summary sentence."""
    n_sents = candidate_sentence_count(candidate_text)
    if n_sents < 1:
        raise ValueError("candidate text has no sentences")
    if dcp is None:
        dcp = derive_dcp(doc, tokenize(candidate_text))
    if dcp.is_empty:
        log.warning("empty derived plan; fusion ratio reported as 0")
        return 0.0
    source_sentences = {doc.edus[i].sentence_index for i in dcp.edu_indices}
    return len(source_sentences) / n_sents


def plan_adherence(ecp: ContentPlan, dcp: ContentPlan) -> tuple[float, float, float]:
    """Set overlap (recall, precision, F1) of provided vs realized plans."""
    overlap = len(ecp.as_set() & dcp.as_set())
    recall = overlap / len(ecp) if len(ecp) else 0.0
    precision = overlap / len(dcp) if len(dcp) else 0.0
    f1 = 0.0 if recall + precision == 0 else 2 * recall * precision / (recall + precision)
    return recall, precision, f1


@dataclass
class SetMetrics:
    """Per-document diagnostics for one candidate set."""

    doc_id: str
    method: str
    salience_by_beam: list[float] = field(default_factory=list)
    uniqueness: int = 0
    fusion: float = 0.0
    adherence: tuple[float, float, float] | None = None
    mean_r1_by_beam: list[float] = field(default_factory=list)
    mean_len_by_beam: list[float] = field(default_factory=list)
    dcp_rouge: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ecp_rouge: tuple[float, float, float] | None = None
    ecp_uniqueness: int | None = None
    selected_r1: float | None = None


def _dcp_of(candidate: Candidate, doc: Document) -> ContentPlan:
    tokens = candidate.text.split()
    if not tokens:
        return ContentPlan((), provenance="derived")
    return derive_dcp(doc, tokens)


def compute_set_metrics(cset: CandidateSet, doc: Document) -> SetMetrics:
    """Salience, uniqueness, fusion, adherence, and beam stats for one set."""
    reference = doc.reference_tokens()
    if not reference:
        raise ValueError(f"doc {doc.id!r} has no reference")
    metrics = SetMetrics(doc_id=cset.doc_id, method=cset.method)
    candidates = cset.valid()
    dcps = [_dcp_of(c, doc) for c in candidates]
    metrics.uniqueness = uniqueness(dcps)
    fusions = []
    adherences = []
    dcp_scores = []
    ecp_scores = []
    for cand, dcp in zip(candidates, dcps):
        tokens = cand.text.split()
        metrics.salience_by_beam.append(salience(dcp, doc, reference))
        metrics.mean_r1_by_beam.append(rouge_n(tokens, reference, 1).f1)
        metrics.mean_len_by_beam.append(float(len(tokens)))
        if candidate_sentence_count(cand.text) >= 1:
            fusions.append(fusion_ratio(cand.text, doc, dcp))
        sc = rouge_score(doc.plan_tokens(dcp.edu_indices), reference)
        dcp_scores.append((sc.r1.f1, sc.r2.f1, sc.rl.f1))
        if cand.plan is not None and not cand.plan.is_empty:
            adherences.append(plan_adherence(cand.plan, dcp))
            esc = rouge_score(doc.plan_tokens(cand.plan.edu_indices), reference)
            ecp_scores.append((esc.r1.f1, esc.r2.f1, esc.rl.f1))
    ecps = [c.plan for c in candidates if c.plan is not None]
    if ecps:
        metrics.ecp_uniqueness = uniqueness(ecps)
    metrics.fusion = statistics.fmean(fusions) if fusions else 0.0
    if adherences:
        metrics.adherence = tuple(statistics.fmean(col) for col in zip(*adherences))
    metrics.dcp_rouge = tuple(statistics.fmean(col) for col in zip(*dcp_scores)) \
        if dcp_scores else (0.0, 0.0, 0.0)
    if ecp_scores:
        metrics.ecp_rouge = tuple(statistics.fmean(col) for col in zip(*ecp_scores))
    selected = _selected_candidate(candidates)
    if selected is not None:
        metrics.selected_r1 = rouge_n(selected.text.split(), reference, 1).f1
    return metrics


def _selected_candidate(candidates: Sequence[Candidate]) -> Candidate | None:
    """The re-ranked top candidate when ranks exist, else the first beam."""
    if not candidates:
        return None
    ranked = [c for c in candidates if c.rank is not None]
    if ranked:
        return min(ranked, key=lambda c: c.rank)
    return min(candidates, key=lambda c: c.beam_index)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _column_means(rows: list[list[float]]) -> list[float]:
    width = max(len(r) for r in rows)
    out = []
    for b in range(width):
        vals = [r[b] for r in rows if len(r) > b]
        out.append(statistics.fmean(vals))
    return out


def quartile_bins(values: Sequence[int | float]) -> list[int]:
    """Quartile index (0..3) per value, split at the 25/50/75 percentiles."""
    qs = statistics.quantiles(values, n=4, method="inclusive") if len(values) > 1 else []
    out = []
    for v in values:
        out.append(sum(v > q for q in qs))
    return out


def report(sets: Sequence[CandidateSet], docs_by_id: dict[str, Document],
           out_dir: str | Path, plots: bool = True,
           quartile_key: str = "edus") -> dict[str, Path]:
    """Emit the seven diagnostic tables plus figures; returns written paths.

    ``quartile_key`` bins documents by source unit count by default; the
    ``summary_length`` variant bins by reference token count instead.
    """
    if quartile_key not in ("edus", "summary_length"):
        raise ValueError(f"unknown quartile key {quartile_key!r}")
    out_dir = Path(out_dir)
    per_method: dict[str, list[SetMetrics]] = {}
    skipped = 0
    for cset in sets:
        doc = docs_by_id.get(cset.doc_id)
        if doc is None or not doc.reference or not cset.valid():
            skipped += 1
            continue
        per_method.setdefault(cset.method, []).append(compute_set_metrics(cset, doc))
    if skipped:
        log.warning("%d candidate sets lacked a reference or candidates; rows omitted", skipped)

    written: dict[str, Path] = {}
    uniqueness_rows = []
    fusion_rows = []
    adherence_rows = []
    plan_rows = []
    beam_curves: dict[str, tuple[list[float], list[float], list[float]]] = {}

    for method in sorted(per_method):
        group = per_method[method]
        mean_r1 = _column_means([m.mean_r1_by_beam for m in group])
        mean_len = _column_means([m.mean_len_by_beam for m in group])
        sal = _column_means([m.salience_by_beam for m in group])
        beam_curves[method] = (mean_r1, mean_len, sal)
        mdir = out_dir / method
        path = mdir / "rouge_by_beam.csv"
        _write_csv(path, ["beam", "mean_r1", "mean_len"],
                   [[b + 1, f"{r:.6f}", f"{l:.2f}"]
                    for b, (r, l) in enumerate(zip(mean_r1, mean_len))])
        written[f"{method}/rouge_by_beam"] = path
        path = mdir / "salience_by_beam.csv"
        _write_csv(path, ["beam", "salience"],
                   [[b + 1, f"{s:.6f}"] for b, s in enumerate(sal)])
        written[f"{method}/salience_by_beam"] = path

        selected = [(m, docs_by_id[m.doc_id]) for m in group if m.selected_r1 is not None]
        if selected:
            if quartile_key == "edus":
                keys = [doc.num_edus for _, doc in selected]
            else:
                keys = [len(doc.reference_tokens()) for _, doc in selected]
            bins = quartile_bins(keys)
            rows = []
            for q in range(4):
                vals = [m.selected_r1 for (m, _), b in zip(selected, bins) if b == q]
                if vals:
                    rows.append([f"Q{q + 1}", f"{statistics.fmean(vals):.6f}"])
            path = mdir / "quartiles.csv"
            _write_csv(path, ["quartile", "mean_r1"], rows)
            written[f"{method}/quartiles"] = path

        uniqueness_rows.append([method, f"{statistics.fmean([m.uniqueness for m in group]):.4f}"])
        fusion_rows.append([method, f"{statistics.fmean([m.fusion for m in group]):.4f}"])
        adhered = [m.adherence for m in group if m.adherence is not None]
        if adhered:
            r, p, f1 = (statistics.fmean(col) for col in zip(*adhered))
            adherence_rows.append([method, f"{r:.6f}", f"{p:.6f}", f"{f1:.6f}"])
        d1, d2, dl = (statistics.fmean(col) for col in zip(*[m.dcp_rouge for m in group]))
        plan_rows.append([f"{method}-dcp", f"{d1:.6f}", f"{d2:.6f}", f"{dl:.6f}",
                          f"{statistics.fmean([m.uniqueness for m in group]):.4f}"])
        ecp = [m.ecp_rouge for m in group if m.ecp_rouge is not None]
        if ecp:
            e1, e2, el = (statistics.fmean(col) for col in zip(*ecp))
            ecp_unique = statistics.fmean(
                [m.ecp_uniqueness for m in group if m.ecp_uniqueness is not None])
            plan_rows.append([f"{method}-ecp", f"{e1:.6f}", f"{e2:.6f}", f"{el:.6f}",
                              f"{ecp_unique:.4f}"])

    _write_csv(out_dir / "uniqueness.csv", ["method", "uniqueness"], uniqueness_rows)
    written["uniqueness"] = out_dir / "uniqueness.csv"
    _write_csv(out_dir / "fusion.csv", ["method", "fusion_ratio"], fusion_rows)
    written["fusion"] = out_dir / "fusion.csv"
    _write_csv(out_dir / "adherence.csv",
               ["method", "adherence_r", "adherence_p", "adherence_f1"], adherence_rows)
    written["adherence"] = out_dir / "adherence.csv"
    _write_csv(out_dir / "plan_quality.csv",
               ["method", "plan_r1", "plan_r2", "plan_rl", "unique_plans"], plan_rows)
    written["plan_quality"] = out_dir / "plan_quality.csv"

    if plots and beam_curves:
        written.update(_render_plots(out_dir, beam_curves, per_method))
    return written


def _render_plots(out_dir: Path, beam_curves: dict, per_method: dict) -> dict[str, Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out: dict[str, Path] = {}

    def line_plot(name: str, series_idx: int, ylabel: str) -> None:
        fig, ax = plt.subplots(figsize=(6, 4))
        for method, curves in sorted(beam_curves.items()):
            ys = curves[series_idx]
            ax.plot(range(1, len(ys) + 1), ys, marker="o", label=method)
        ax.set_xlabel("beam")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"{name}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        out[name] = path

    line_plot("rouge_by_beam", 0, "mean ROUGE-1 F1")
    line_plot("length_by_beam", 1, "mean candidate length (tokens)")
    line_plot("salience_by_beam", 2, "mean salience")

    fig, ax = plt.subplots(figsize=(6, 4))
    methods = sorted(per_method)
    values = [statistics.fmean([m.uniqueness for m in per_method[meth]]) for meth in methods]
    ax.bar(methods, values)
    ax.set_ylabel("mean unique derived plans")
    fig.tight_layout()
    path = out_dir / "uniqueness.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    out["uniqueness_plot"] = path
    return out
