"""Candidate scoring and ranking with a margin-trained likelihood scorer.

The scorer is the abstractor architecture reading the undecorated
document; a candidate's score is its length-normalized log-likelihood
f(doc, y) = sum_t log p(y_t | y_<t, doc) / |y|^alpha. Training coordinates
scores with ROUGE orderings through a pairwise margin ranking loss

    sum_{i<j} max(0, f_j - f_i + (j - i) * margin)

over candidates listed best-first by mean ROUGE-1/2/L F1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import torch

from .abstractor import Candidate, CandidateSet, decorate
from .corpus import Document
from .plans import NULL_PLAN
from .rouge import mean_f1
from .seq2seq.config import TrainConfig
from .seq2seq.model import Seq2SeqModel, batch_token_logprobs
from .seq2seq.training import train_loop
from .seq2seq.vocab import Vocab

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 1.0
DEFAULT_MARGIN = 0.001


def score_candidates(model: Seq2SeqModel, vocab: Vocab, doc: Document,
                     token_rows: Sequence[Sequence[int]],
                     alpha: float = DEFAULT_ALPHA) -> torch.Tensor:
    """Length-normalized log-likelihoods for candidates of one document."""
    if any(len(row) == 0 for row in token_rows):
        raise ValueError("cannot score a zero-length candidate")
    src = decorate(doc, NULL_PLAN, vocab)
    logp, mask = batch_token_logprobs(model, [src] * len(token_rows), list(token_rows),
                                      pad_id=vocab.pad_id, bos_id=vocab.bos_id,
                                      eos_id=vocab.eos_id)
    sums = (logp * mask).sum(dim=1)
    lengths = torch.tensor([len(row) for row in token_rows], dtype=sums.dtype)
    return sums / lengths.pow(alpha)


def score(model: Seq2SeqModel, vocab: Vocab, doc: Document,
          candidate_ids: Sequence[int], alpha: float = DEFAULT_ALPHA) -> float:
    model.eval()
    with torch.no_grad():
        return float(score_candidates(model, vocab, doc, [list(candidate_ids)], alpha)[0])


def margin_loss(scores: Sequence[float] | torch.Tensor, margin: float) -> torch.Tensor:
    """Pairwise hinge over scores listed in target order (best first)."""
    if not isinstance(scores, torch.Tensor):
        scores = torch.tensor(list(scores), dtype=torch.float64)
    n = scores.shape[0]
    if n < 2:
        return scores.new_zeros(())
    idx = torch.arange(n)
    gap = (idx.unsqueeze(0) - idx.unsqueeze(1)).to(scores.dtype)   # [i, j] -> j - i
    diff = scores.unsqueeze(0) - scores.unsqueeze(1)               # [i, j] -> f_j - f_i
    hinge = torch.relu(diff + gap * margin)
    upper = torch.triu(torch.ones(n, n, dtype=torch.bool), diagonal=1)
    return hinge[upper].sum()


def target_order(candidates: Sequence[Candidate], reference: Sequence[str]) -> list[int]:
    """Candidate indices sorted by descending mean ROUGE F1 (ties: lower beam)."""
    keyed = [(-mean_f1(c.text.split(), reference), c.beam_index, i)
             for i, c in enumerate(candidates)]
    return [i for _, _, i in sorted(keyed)]


def _candidate_ids(c: Candidate, vocab: Vocab) -> list[int]:
    if c.token_ids:
        return list(c.token_ids)
    return vocab.encode(c.text.split())


def reranker_set_loss(model: Seq2SeqModel, vocab: Vocab, doc: Document,
                      cset: CandidateSet, alpha: float, margin: float) -> torch.Tensor:
    candidates = cset.valid()
    order = target_order(candidates, doc.reference_tokens())
    rows = [_candidate_ids(candidates[i], vocab) for i in order]
    scores = score_candidates(model, vocab, doc, rows, alpha)
    return margin_loss(scores, margin)


def train_reranker(model: Seq2SeqModel, vocab: Vocab, docs_by_id: dict[str, Document],
                   sets: Sequence[CandidateSet], cfg: TrainConfig,
                   alpha: float = DEFAULT_ALPHA,
                   margin: float = DEFAULT_MARGIN) -> list[float]:
    usable = []
    for cset in sets:
        doc = docs_by_id.get(cset.doc_id)
        if doc is None or not doc.reference:
            log.warning("candidate set %s has no reference document; skipped", cset.doc_id)
            continue
        if len(cset.valid()) < 2:
            log.warning("candidate set %s has fewer than 2 candidates; skipped", cset.doc_id)
            continue
        usable.append(cset)
    if not usable:
        raise ValueError("no usable candidate sets for re-ranker training")

    def batch_loss(batch: Sequence[CandidateSet], step: int) -> torch.Tensor:
        total = None
        for cset in batch:
            loss = reranker_set_loss(model, vocab, docs_by_id[cset.doc_id], cset,
                                     alpha, margin)
            total = loss if total is None else total + loss
        return total / len(batch)

    return train_loop(model, cfg, usable, batch_loss)


@dataclass
class RankedSet:
    doc_id: str
    candidates: list[Candidate] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    margin: float = DEFAULT_MARGIN

    @property
    def top(self) -> Candidate:
        return self.candidates[0]


def rank(model: Seq2SeqModel, vocab: Vocab, doc: Document, cset: CandidateSet,
         alpha: float = DEFAULT_ALPHA, margin: float = DEFAULT_MARGIN) -> RankedSet:
    """Sort candidates by learned score, ties broken by lower beam index."""
    candidates = cset.valid()
    if not candidates:
        raise ValueError(f"candidate set for doc {cset.doc_id!r} is empty")
    model.eval()
    with torch.no_grad():
        scores = score_candidates(model, vocab, doc,
                                  [_candidate_ids(c, vocab) for c in candidates], alpha)
    scored = sorted(zip(scores.tolist(), candidates), key=lambda t: (-t[0], t[1].beam_index))
    ranked = RankedSet(doc_id=cset.doc_id, margin=margin)
    for position, (value, cand) in enumerate(scored):
        cand.rank = position
        cand.score = value
        ranked.candidates.append(cand)
        ranked.scores.append(value)
    return ranked
