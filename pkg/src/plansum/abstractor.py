"""Plan-guided abstract generation.

The abstractor is a token-level encoder-decoder whose input is the
document with <e>...</e> markers around exactly the in-plan units. The
training objective rewards generating the reference given its oracle plan,
penalizes generating it given a random distractor plan (a per-token
unlikelihood term), and optionally mixes in the plain no-plan likelihood
as regularization:

    objective = lam * logP(ref | doc, oracle)
              + lam * sum_t log(1 - p(ref_t | ref_<t, doc, distractor))
              + beta * logP(ref | doc)

and training minimizes its negation. Weights follow the presets
(lam=1, beta=10) and (lam=1, beta=0).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import torch

from .corpus import Document
from .plans import ContentPlan, NULL_PLAN, sample_distractor
from .rouge import mean_f1
from .seq2seq.config import ModelConfig, DecodeConfig, TrainConfig, PLAN_DECODE
from .seq2seq.decoding import (Hypothesis, beam_search, diverse_beam_search,
                               nucleus_sample, parallel_beam_search)
from .seq2seq.model import Seq2SeqModel, build_model, batch_token_logprobs, pad_batch
from .seq2seq.training import train_loop
from .seq2seq.vocab import Vocab

log = logging.getLogger(__name__)

METHODS = ("pga", "beam", "diverse_beam", "nucleus", "llm")

UNLIKELIHOOD_CLAMP = 1e-6


def _stable_seed(*parts) -> int:
    """Process-independent integer seed from arbitrary parts."""
    digest = hashlib.blake2b(":".join(map(str, parts)).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "big")


def decorate(doc: Document, plan: ContentPlan, vocab: Vocab) -> list[int]:
    """Token ids with <e>/<\\e> markers around exactly the in-plan units.

    A null or empty plan yields the undecorated document.
    """
    plan.validate_for(doc)
    chosen = plan.as_set()
    ids: list[int] = []
    for i in range(doc.num_edus):
        toks = vocab.encode(doc.edu_tokens(i))
        if i in chosen:
            ids.append(vocab.open_id)
            ids.extend(toks)
            ids.append(vocab.close_id)
        else:
            ids.extend(toks)
    return ids


def strip_markers(ids: Sequence[int], vocab: Vocab) -> list[int]:
    return [i for i in ids if i not in (vocab.open_id, vocab.close_id)]


@dataclass(frozen=True)
class GuidedExample:
    doc: Document
    oracle: ContentPlan
    distractor: ContentPlan
    reference_ids: tuple[int, ...]
    lam: float = 1.0
    beta: float = 10.0

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be non-negative")
        if self.oracle.as_set() & self.distractor.as_set():
            raise ValueError("oracle and distractor plans must be disjoint")


def guided_loss_terms(oracle_logps: torch.Tensor, distractor_logps: torch.Tensor | None,
                      noplan_logps: torch.Tensor | None, lam: float,
                      beta: float) -> tuple[torch.Tensor, dict[str, float]]:
    """Assemble the negated objective from per-token log-probabilities.

    ``distractor_logps`` feeds the per-token unlikelihood sum with the
    probability clamped away from 1; pass None to drop the term (empty
    distractor). Returns (loss, term values for diagnostics).
    """
    zero = oracle_logps.new_zeros(())
    ll_oracle = oracle_logps.sum()
    if distractor_logps is not None:
        p = distractor_logps.exp().clamp(max=1.0 - UNLIKELIHOOD_CLAMP)
        unlikelihood = torch.log1p(-p).sum()
    else:
        unlikelihood = zero
    ll_noplan = noplan_logps.sum() if noplan_logps is not None else zero
    objective = lam * (ll_oracle + unlikelihood) + beta * ll_noplan
    loss = -objective
    parts = {
        "ll_oracle": float(ll_oracle.detach()),
        "unlikelihood": float(unlikelihood.detach()),
        "ll_noplan": float(ll_noplan.detach()),
    }
    for name, value in parts.items():
        if value != value or value in (float("inf"), float("-inf")):
            raise RuntimeError(f"guided loss term {name} is not finite: {value}")
    return loss, parts


def _token_logprob_rows(model: Seq2SeqModel, vocab: Vocab,
                        sources: Sequence[Sequence[int]],
                        targets: Sequence[Sequence[int]]) -> list[torch.Tensor]:
    logp, mask = batch_token_logprobs(model, sources, targets, pad_id=vocab.pad_id,
                                      bos_id=vocab.bos_id, eos_id=vocab.eos_id)
    return [logp[i][mask[i]] for i in range(logp.shape[0])]


def guided_loss(model: Seq2SeqModel, vocab: Vocab,
                example: GuidedExample) -> tuple[torch.Tensor, dict[str, float]]:
    """Guided-abstraction loss for one example (teacher-forced)."""
    ref = list(example.reference_ids)
    sources: list[list[int]] = []
    want_distractor = example.lam > 0 and not example.distractor.is_empty
    if example.lam > 0:
        sources.append(decorate(example.doc, example.oracle, vocab))
    if want_distractor:
        sources.append(decorate(example.doc, example.distractor, vocab))
    if example.beta > 0:
        sources.append(decorate(example.doc, NULL_PLAN, vocab))
    if not sources:
        raise ValueError("both lam and beta are zero; nothing to optimize")
    rows = _token_logprob_rows(model, vocab, sources, [ref] * len(sources))
    rows_iter = iter(rows)
    oracle_row = next(rows_iter) if example.lam > 0 else torch.zeros(0)
    distractor_row = next(rows_iter) if want_distractor else None
    noplan_row = next(rows_iter) if example.beta > 0 else None
    return guided_loss_terms(oracle_row, distractor_row, noplan_row,
                             example.lam, example.beta)


def make_guided_example(doc: Document, oracle: ContentPlan, vocab: Vocab, *,
                        lam: float, beta: float, distractor_seed: int) -> GuidedExample:
    if not doc.reference:
        raise ValueError(f"doc {doc.id!r} has no reference")
    distractor = sample_distractor(doc, oracle, distractor_seed)
    return GuidedExample(
        doc=doc,
        oracle=oracle,
        distractor=distractor,
        reference_ids=tuple(vocab.encode(doc.reference_tokens())),
        lam=lam,
        beta=beta,
    )


def abstractor_batch_loss(model: Seq2SeqModel, vocab: Vocab,
                          examples: Sequence[GuidedExample]) -> torch.Tensor:
    """Batched guided loss, normalized per reference token for stable steps."""
    sources: list[list[int]] = []
    targets: list[list[int]] = []
    layout: list[tuple[int, int | None, int | None]] = []
    for ex in examples:
        ref = list(ex.reference_ids)
        oracle_i = distractor_i = noplan_i = None
        if ex.lam > 0:
            oracle_i = len(sources)
            sources.append(decorate(ex.doc, ex.oracle, vocab))
            targets.append(ref)
            if not ex.distractor.is_empty:
                distractor_i = len(sources)
                sources.append(decorate(ex.doc, ex.distractor, vocab))
                targets.append(ref)
        if ex.beta > 0:
            noplan_i = len(sources)
            sources.append(decorate(ex.doc, NULL_PLAN, vocab))
            targets.append(ref)
        layout.append((oracle_i, distractor_i, noplan_i))
    rows = _token_logprob_rows(model, vocab, sources, targets)
    total = None
    for ex, (oracle_i, distractor_i, noplan_i) in zip(examples, layout):
        oracle_row = rows[oracle_i] if oracle_i is not None else torch.zeros(0)
        loss, _ = guided_loss_terms(
            oracle_row,
            rows[distractor_i] if distractor_i is not None else None,
            rows[noplan_i] if noplan_i is not None else None,
            ex.lam, ex.beta)
        loss = loss / (len(ex.reference_ids) + 1)
        total = loss if total is None else total + loss
    return total / len(examples)


def greedy_abstract(model: Seq2SeqModel, vocab: Vocab, doc: Document,
                    plan: ContentPlan, decode: DecodeConfig) -> list[int]:
    """Greedy (beam 1) realization of a plan; used for validation scoring."""
    src = decorate(doc, plan, vocab)
    hyp = beam_search(token_step_fn(model, src), bos_id=vocab.bos_id, eos_id=vocab.eos_id,
                      decode=decode, beam_size=1, num_return=1)[0]
    return list(hyp.tokens)


def train_abstractor(model: Seq2SeqModel, vocab: Vocab, docs: Sequence[Document],
                     oracles: dict[str, ContentPlan], cfg: TrainConfig, *,
                     lam: float = 1.0, beta: float = 10.0, distractor_seed: int = 0,
                     val_docs: Sequence[Document] | None = None,
                     val_decode: DecodeConfig | None = None) -> list[float]:
    """Optimize the guided objective; keep the oracle-guided best-ROUGE weights.

    When ``val_docs`` is given and cfg.eval_every > 0, the model is scored
    every eval_every steps by greedy decoding with the oracle plan and the
    best-scoring weights are restored at the end.
    """
    usable = [d for d in docs
              if d.reference and not oracles.get(d.id, NULL_PLAN).is_empty]
    skipped = len(list(docs)) - len(usable)
    if skipped:
        log.warning("skipping %d documents without reference or oracle plan", skipped)

    def batch_loss(batch: Sequence[Document], step: int) -> torch.Tensor:
        examples = []
        for doc in batch:
            seed = _stable_seed(distractor_seed, doc.id, step)
            examples.append(make_guided_example(doc, oracles[doc.id], vocab,
                                                lam=lam, beta=beta, distractor_seed=seed))
        return abstractor_batch_loss(model, vocab, examples)

    best = {"score": float("-inf"), "state": None}

    def on_eval(step: int) -> None:
        score = validation_rouge(model, vocab, val_docs, oracles, val_decode or DecodeConfig())
        log.info("step %d oracle-guided validation rouge %.4f", step, score)
        if score > best["score"]:
            best["score"] = score
            best["state"] = {k: v.detach().clone() for k, v in model.state_dict().items()}

    losses = train_loop(model, cfg, usable, batch_loss,
                        on_eval=on_eval if (val_docs and cfg.eval_every) else None)
    if best["state"] is not None:
        model.load_state_dict(best["state"])
    return losses


def validation_rouge(model: Seq2SeqModel, vocab: Vocab, docs: Sequence[Document],
                     oracles: dict[str, ContentPlan], decode: DecodeConfig) -> float:
    scores = []
    for doc in docs:
        plan = oracles.get(doc.id)
        if plan is None or not doc.reference:
            continue
        ids = greedy_abstract(model, vocab, doc, plan, decode)
        scores.append(mean_f1(vocab.decode(ids), doc.reference_tokens()))
    return sum(scores) / len(scores) if scores else 0.0


def token_step_fn(model: Seq2SeqModel, src_ids: Sequence[int]):
    """Incremental scorer over a fixed encoded source for the decoders."""
    model.eval()
    src = torch.tensor([list(src_ids)], dtype=torch.long)
    with torch.no_grad():
        memory = model.encode(src)

    def step(prefixes: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            n = prefixes.shape[0]
            logits = model.decode(prefixes, memory.expand(n, -1, -1),
                                  src_ids=src.expand(n, -1))
            return torch.log_softmax(logits[:, -1, :], dim=-1)

    return step


def realize_plans(model: Seq2SeqModel, vocab: Vocab, doc: Document,
                  plans: Sequence[ContentPlan], decode: DecodeConfig) -> list[Hypothesis]:
    """Top-beam realization of each plan, decoded in one lockstep batch."""
    model.eval()
    sources = [decorate(doc, plan, vocab) for plan in plans]
    with torch.no_grad():
        src_ids, src_pad = pad_batch(sources, vocab.pad_id)
        memory = model.encode(src_ids, src_padding_mask=src_pad)

    def step(prefixes: torch.Tensor, src_idx: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            logits = model.decode(prefixes, memory[src_idx],
                                  memory_key_padding_mask=src_pad[src_idx],
                                  src_ids=src_ids[src_idx])
            return torch.log_softmax(logits[:, -1, :], dim=-1)

    results = parallel_beam_search(step, n_sources=len(sources), bos_id=vocab.bos_id,
                                   eos_id=vocab.eos_id, decode=decode,
                                   beam_size=decode.beam_size, num_return=1)
    return [hyps[0] for hyps in results]


@dataclass
class Candidate:
    doc_id: str
    method: str
    beam_index: int
    text: str
    token_ids: tuple[int, ...] = ()
    plan: ContentPlan | None = None
    log_likelihood: float = 0.0
    rank: int | None = None
    score: float | None = None
    invalid: bool = False
    error: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown candidate method {self.method!r}")
        if self.method == "pga" and self.plan is None:
            raise ValueError("pga candidates must carry their generating plan")


@dataclass
class CandidateSet:
    doc_id: str
    method: str
    candidates: list[Candidate] = field(default_factory=list)

    def valid(self) -> list[Candidate]:
        return [c for c in self.candidates if not c.invalid]


def _hyp_to_candidate(doc: Document, method: str, beam: int, hyp: Hypothesis,
                      vocab: Vocab, plan: ContentPlan | None = None) -> Candidate:
    tokens = vocab.decode(hyp.tokens)
    return Candidate(
        doc_id=doc.id,
        method=method,
        beam_index=beam,
        text=" ".join(tokens),
        token_ids=tuple(hyp.tokens),
        plan=plan,
        log_likelihood=hyp.log_prob,
    )


def generate_candidates(planner, abstractor: Seq2SeqModel, vocab: Vocab, doc: Document,
                        method: str, decode: DecodeConfig,
                        plan_decode: DecodeConfig = PLAN_DECODE,
                        include_null_plan: bool = False) -> CandidateSet:
    """K candidates for one document by the requested strategy.

    ``pga`` realizes each of the planner's K distinct plans with the
    abstractor's top beam; the baselines decode the undecorated input.
    """
    if method not in ("pga", "beam", "diverse_beam", "nucleus"):
        raise ValueError(f"unknown generation method {method!r}")
    abstractor.eval()
    k = decode.num_candidates
    cset = CandidateSet(doc_id=doc.id, method=method)
    if method == "pga":
        from .planner import generate_plans  # local import to avoid a cycle

        plans = generate_plans(planner, doc, plan_decode.replace(num_candidates=k),
                               include_null=include_null_plan)
        if len(plans) < k:
            log.warning("doc %s: only %d plans available for %d candidates",
                        doc.id, len(plans), k)
        for beam, (plan, hyp) in enumerate(zip(plans, realize_plans(abstractor, vocab,
                                                                    doc, plans, decode))):
            cset.candidates.append(_hyp_to_candidate(doc, method, beam, hyp, vocab, plan))
        return cset

    src = decorate(doc, NULL_PLAN, vocab)
    step = token_step_fn(abstractor, src)
    if method == "beam":
        hyps = beam_search(step, bos_id=vocab.bos_id, eos_id=vocab.eos_id,
                           decode=decode, beam_size=k, num_return=k)
    elif method == "diverse_beam":
        hyps = diverse_beam_search(step, bos_id=vocab.bos_id, eos_id=vocab.eos_id,
                                   decode=decode.replace(num_candidates=k))
    else:
        hyps = nucleus_sample(step, bos_id=vocab.bos_id, eos_id=vocab.eos_id,
                              pad_id=vocab.pad_id, decode=decode, num_return=k)
    for beam, hyp in enumerate(hyps):
        cset.candidates.append(_hyp_to_candidate(doc, method, beam, hyp, vocab))
    return cset


def candidate_to_record(c: Candidate) -> dict:
    record = {
        "doc_id": c.doc_id,
        "method": c.method,
        "beam": c.beam_index,
        "plan": list(c.plan.edu_indices) if c.plan is not None else None,
        "text": c.text,
        "lp": c.log_likelihood,
    }
    if c.rank is not None:
        record["rank"] = c.rank
    if c.score is not None:
        record["score"] = c.score
    if c.invalid:
        record["invalid"] = True
        record["error"] = c.error
    return record


def candidate_from_record(record: dict) -> Candidate:
    plan = record.get("plan")
    return Candidate(
        doc_id=record["doc_id"],
        method=record["method"],
        beam_index=record["beam"],
        text=record["text"],
        plan=ContentPlan(tuple(plan), provenance="generated") if plan is not None else None,
        log_likelihood=record.get("lp", 0.0),
        rank=record.get("rank"),
        score=record.get("score"),
        invalid=record.get("invalid", False),
        error=record.get("error"),
    )


def save_candidates(sets: Iterable[CandidateSet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cset in sets:
            for c in cset.candidates:
                fh.write(json.dumps(candidate_to_record(c), ensure_ascii=False) + "\n")


def load_candidates(path: str | Path) -> list[CandidateSet]:
    """Group candidate records into per-document sets (one method per file)."""
    by_doc: dict[tuple[str, str], CandidateSet] = {}
    order: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            c = candidate_from_record(json.loads(line))
            key = (c.doc_id, c.method)
            if key not in by_doc:
                by_doc[key] = CandidateSet(doc_id=c.doc_id, method=c.method)
                order.append(key)
            by_doc[key].candidates.append(c)
    for cset in by_doc.values():
        cset.candidates.sort(key=lambda c: c.beam_index)
    return [by_doc[key] for key in order]
