"""Decoding strategies: beam search, diverse beam search, nucleus sampling.

All three operate on a step function mapping a batch of prefixes (token-id
rows of equal length, starting with BOS) to next-token log-probabilities,
so the token-level abstractor and the unit-level planner share them.

Scores are length-penalized: sum(logp) / len**alpha over content tokens
(BOS and the end token excluded from the length). The reported log_prob is
the raw model log-probability including the end token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import torch

from .config import DecodeConfig

StepFn = Callable[[torch.Tensor], torch.Tensor]  # [B, L] -> [B, V] log-probs


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    score: float


def _length_score(log_prob: float, length: int, alpha: float) -> float:
    return log_prob / (max(length, 1) ** alpha)


def _finish(tokens: Sequence[int], log_prob: float, alpha: float) -> Hypothesis:
    return Hypothesis(tuple(tokens), log_prob, _length_score(log_prob, len(tokens), alpha))


def _rescue_dead_rows(logps: torch.Tensor, eos_id: int) -> torch.Tensor:
    """Rows with no finite entry (every continuation masked) fall back to eos."""
    dead = ~torch.isfinite(logps).any(dim=-1)
    if dead.any():
        logps = logps.clone()
        logps[dead, eos_id] = 0.0
    return logps


class _BeamState:
    """One source's beam search state, advanced one timestep at a time."""

    def __init__(self, bos_id: int, eos_id: int, beam: int, min_len: int, alpha: float):
        self.eos_id = eos_id
        self.beam = beam
        self.min_len = min_len
        self.alpha = alpha
        self.prefixes: torch.Tensor | None = torch.tensor([[bos_id]], dtype=torch.long)
        self.sums = torch.zeros(1, dtype=torch.float64)
        self.finished: list[Hypothesis] = []

    @property
    def active(self) -> int:
        return 0 if self.prefixes is None else self.prefixes.shape[0]

    def advance(self, logps: torch.Tensor, t: int) -> None:
        logps = logps.to(torch.float64)
        if t < self.min_len:
            logps[:, self.eos_id] = float("-inf")
            logps = _rescue_dead_rows(logps, self.eos_id)
        total = self.sums.unsqueeze(1) + logps
        flat = total.flatten()
        k = min(2 * self.beam, flat.numel())
        top_vals, top_idx = torch.topk(flat, k)
        vocab = logps.shape[1]
        new_rows, new_sums = [], []
        for pos, (val, idx) in enumerate(zip(top_vals.tolist(), top_idx.tolist())):
            if not math.isfinite(val):
                continue
            row, tok = divmod(idx, vocab)
            if tok == self.eos_id:
                # an end-of-sequence only completes if it ranks in the top beam
                if pos < self.beam:
                    self.finished.append(
                        _finish(self.prefixes[row, 1:].tolist(), val, self.alpha))
            elif len(new_rows) < self.beam:
                new_rows.append(torch.cat([self.prefixes[row], torch.tensor([tok])]))
                new_sums.append(val)
        if new_rows:
            self.prefixes = torch.stack(new_rows)
            self.sums = torch.tensor(new_sums, dtype=torch.float64)
        else:
            self.prefixes = None

    def force_finish(self, logps: torch.Tensor) -> None:
        """Terminate surviving beams at the length limit."""
        logps = logps.to(torch.float64)
        for row in range(self.prefixes.shape[0]):
            val = float(self.sums[row] + logps[row, self.eos_id])
            self.finished.append(_finish(self.prefixes[row, 1:].tolist(), val, self.alpha))
        self.prefixes = None

    def results(self, want: int) -> list[Hypothesis]:
        self.finished.sort(key=lambda h: -h.score)
        return self.finished[:want]


def beam_search(step_fn: StepFn, *, bos_id: int, eos_id: int, decode: DecodeConfig,
                beam_size: int | None = None, num_return: int | None = None,
                min_len: int | None = None, max_len: int | None = None) -> list[Hypothesis]:
    """Standard beam search; returns distinct hypotheses sorted by score."""
    beam = beam_size if beam_size is not None else decode.beam_size
    want = num_return if num_return is not None else beam
    if beam < want:
        raise ValueError(f"beam_size {beam} < number of returned hypotheses {want}")
    lo = decode.min_len if min_len is None else min_len
    hi = decode.max_len if max_len is None else max_len

    state = _BeamState(bos_id, eos_id, beam, lo, decode.length_penalty)
    for t in range(hi):
        state.advance(step_fn(state.prefixes), t)
        if state.prefixes is None:
            break
    else:
        state.force_finish(step_fn(state.prefixes))
    return state.results(want)


IndexedStepFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def parallel_beam_search(step_fn: IndexedStepFn, *, n_sources: int, bos_id: int,
                         eos_id: int, decode: DecodeConfig, beam_size: int | None = None,
                         num_return: int = 1, min_len: int | None = None,
                         max_len: int | None = None) -> list[list[Hypothesis]]:
    """Independent beam searches over many sources, stepped in lockstep.

    ``step_fn`` receives (prefixes [N, L], source_index [N]) where rows from
    different sources share a timestep, so one batched model call serves
    every active beam.
    """
    beam = beam_size if beam_size is not None else decode.beam_size
    lo = decode.min_len if min_len is None else min_len
    hi = decode.max_len if max_len is None else max_len
    states = [_BeamState(bos_id, eos_id, beam, lo, decode.length_penalty)
              for _ in range(n_sources)]

    def batched(t: int, finishing: bool) -> None:
        live = [i for i, s in enumerate(states) if s.prefixes is not None]
        if not live:
            return
        prefixes = torch.cat([states[i].prefixes for i in live])
        src_idx = torch.cat([torch.full((states[i].active,), i, dtype=torch.long)
                             for i in live])
        logps = step_fn(prefixes, src_idx)
        offset = 0
        for i in live:
            rows = states[i].active
            chunk = logps[offset:offset + rows]
            offset += rows
            if finishing:
                states[i].force_finish(chunk)
            else:
                states[i].advance(chunk, t)

    for t in range(hi):
        if all(s.prefixes is None for s in states):
            break
        batched(t, finishing=False)
    batched(hi, finishing=True)
    return [s.results(num_return) for s in states]


def diverse_beam_search(step_fn: StepFn, *, bos_id: int, eos_id: int,
                        decode: DecodeConfig, group_size: int = 1,
                        min_len: int | None = None,
                        max_len: int | None = None) -> list[Hypothesis]:
    """Beam search in groups with a Hamming diversity penalty at each timestep.

    Group g's scores at step t are reduced by ``diversity_penalty`` times the
    number of times a token was already selected at step t by groups before g.
    Hypotheses are returned in group order, ``group_size`` per group.
    """
    if decode.num_candidates % group_size != 0:
        raise ValueError(
            f"num_candidates {decode.num_candidates} not divisible by group_size {group_size}")
    n_groups = decode.num_candidates // group_size
    lo = decode.min_len if min_len is None else min_len
    hi = decode.max_len if max_len is None else max_len
    alpha = decode.length_penalty
    penalty = decode.diversity_penalty

    groups = [{"prefixes": torch.tensor([[bos_id]], dtype=torch.long),
               "sums": torch.zeros(1, dtype=torch.float64),
               "finished": []} for _ in range(n_groups)]

    for t in range(hi):
        counts: dict[int, int] = {}
        for g in groups:
            if g["prefixes"] is None:
                continue
            logps = step_fn(g["prefixes"]).to(torch.float64)
            if t < lo:
                logps[:, eos_id] = float("-inf")
                logps = _rescue_dead_rows(logps, eos_id)
            adjusted = logps.clone()
            for tok, c in counts.items():
                adjusted[:, tok] -= penalty * c
            total_sel = g["sums"].unsqueeze(1) + adjusted
            total_raw = g["sums"].unsqueeze(1) + logps
            flat = total_sel.flatten()
            k = min(2 * group_size, flat.numel())
            top_vals, top_idx = torch.topk(flat, k)
            vocab = logps.shape[1]
            new_rows, new_sums = [], []
            for pos, (val, idx) in enumerate(zip(top_vals.tolist(), top_idx.tolist())):
                if not math.isfinite(val):
                    continue
                row, tok = divmod(idx, vocab)
                raw = float(total_raw[row, tok])
                if tok == eos_id:
                    if pos < group_size:
                        counts[tok] = counts.get(tok, 0) + 1
                        g["finished"].append(
                            _finish(g["prefixes"][row, 1:].tolist(), raw, alpha))
                elif len(new_rows) < group_size:
                    counts[tok] = counts.get(tok, 0) + 1
                    new_rows.append(torch.cat([g["prefixes"][row], torch.tensor([tok])]))
                    new_sums.append(raw)
            if new_rows:
                g["prefixes"] = torch.stack(new_rows)
                g["sums"] = torch.tensor(new_sums, dtype=torch.float64)
            else:
                g["prefixes"] = None

    out: list[Hypothesis] = []
    for g in groups:
        if g["prefixes"] is not None:
            logps = step_fn(g["prefixes"]).to(torch.float64)
            for row in range(g["prefixes"].shape[0]):
                raw = float(g["sums"][row] + logps[row, eos_id])
                g["finished"].append(_finish(g["prefixes"][row, 1:].tolist(), raw, alpha))
        g["finished"].sort(key=lambda h: -h.score)
        out.extend(g["finished"][:group_size])
    return out


def nucleus_sample(step_fn: StepFn, *, bos_id: int, eos_id: int, pad_id: int,
                   decode: DecodeConfig, num_return: int | None = None,
                   min_len: int | None = None,
                   max_len: int | None = None) -> list[Hypothesis]:
    """Independent top-p samples, deterministic under decode.rng_seed.

    Temperature rescales log-probabilities before the nucleus truncation;
    reported log_prob is under the unmodified model distribution.
    """
    n = num_return if num_return is not None else decode.num_candidates
    lo = decode.min_len if min_len is None else min_len
    hi = decode.max_len if max_len is None else max_len
    alpha = decode.length_penalty
    gen = torch.Generator().manual_seed(decode.rng_seed)

    prefixes = torch.full((n, 1), bos_id, dtype=torch.long)
    sums = torch.zeros(n, dtype=torch.float64)
    done = torch.zeros(n, dtype=torch.bool)

    for t in range(hi):
        active = (~done).nonzero(as_tuple=True)[0]
        if active.numel() == 0:
            break
        logps = step_fn(prefixes[active]).to(torch.float64)
        if t < lo:
            logps[:, eos_id] = float("-inf")
            logps = _rescue_dead_rows(logps, eos_id)
        scaled = logps / decode.temperature
        probs = torch.softmax(scaled, dim=-1)
        sorted_probs, sorted_idx = torch.sort(probs, dim=-1, descending=True)
        cumulative = torch.cumsum(sorted_probs, dim=-1)
        # smallest prefix reaching mass p; keep at least the top token
        cutoff = torch.searchsorted(
            cumulative,
            torch.full((active.numel(), 1), decode.nucleus_p, dtype=cumulative.dtype))
        cutoff = cutoff.clamp(max=probs.shape[1] - 1).squeeze(1)
        keep = torch.arange(probs.shape[1]).unsqueeze(0) <= cutoff.unsqueeze(1)
        truncated = torch.where(keep, sorted_probs, torch.zeros_like(sorted_probs))
        truncated = truncated / truncated.sum(dim=-1, keepdim=True)
        choice = torch.multinomial(truncated, 1, generator=gen)
        picked = sorted_idx.gather(-1, choice).squeeze(1)
        step_lp = logps.gather(-1, picked.unsqueeze(1)).squeeze(1)
        tokens = torch.full((n,), pad_id, dtype=torch.long)
        tokens[active] = picked
        sums[active] = sums[active] + step_lp
        done[active] = picked == eos_id
        prefixes = torch.cat([prefixes, tokens.unsqueeze(1)], dim=1)

    active = (~done).nonzero(as_tuple=True)[0]
    if active.numel() > 0:
        logps = step_fn(prefixes[active]).to(torch.float64)
        sums[active] = sums[active] + logps[:, eos_id]

    out = []
    for i in range(n):
        content = [tok for tok in prefixes[i, 1:].tolist() if tok not in (eos_id, pad_id)]
        out.append(_finish(content, float(sums[i]), alpha))
    return out
