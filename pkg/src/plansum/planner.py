"""Unit-level content-plan generator with a copy mechanism.

A token encoder reads the document with every extraction unit bracketed by
<e>...</e>; unit states are mean-pooled over each unit's tokens (markers
included), given unit-position embeddings, and contextualized together
with a learned end-of-extract embedding by a shallow unit-level encoder.
A shallow decoder consumes the states of the units selected so far and a
single-layer scorer ranks each still-valid unit against the end-of-extract
state, so plans are generated left-to-right in document order. In-order
generation makes distinct beam sequences distinct plan *sets*.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from .corpus import Document
from .plans import ContentPlan, NULL_PLAN
from .seq2seq.config import ModelConfig, DecodeConfig, TrainConfig
from .seq2seq.decoding import Hypothesis, beam_search
from .seq2seq.model import TransformerEncoder, TransformerDecoder, _dtype_of
from .seq2seq.training import train_loop
from .seq2seq.vocab import Vocab

log = logging.getLogger(__name__)


@dataclass
class PlannerState:
    """Encoded document: pooled unit states and their contextualized versions.

    ``contextual`` has one row per unit plus a final row for the
    end-of-extract symbol.
    """

    doc: Document
    pooled: torch.Tensor      # [K, D]
    contextual: torch.Tensor  # [K + 1, D]

    @property
    def num_edus(self) -> int:
        return self.pooled.shape[0]

    @property
    def eoe_index(self) -> int:
        return self.num_edus


class PlannerModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab: Vocab):
        super().__init__()
        if len(vocab) != config.vocab_size:
            raise ValueError("vocab size does not match model config")
        self.config = config
        d = config.d_model
        self.vocab = vocab
        self.token_emb = nn.Embedding(config.vocab_size, d)
        self.token_pos_emb = nn.Embedding(config.max_positions, d)
        self.token_encoder = TransformerEncoder(config.token_encoder_layers, d,
                                                config.n_heads, config.ffn_dim, config.dropout)
        self.edu_pos_emb = nn.Embedding(config.max_positions, d)
        self.eoe_emb = nn.Parameter(torch.zeros(d))
        self.edu_encoder = TransformerEncoder(config.edu_encoder_layers, d,
                                              config.n_heads, config.ffn_dim, config.dropout)
        self.dec_bos = nn.Parameter(torch.zeros(d))
        self.step_pos_emb = nn.Embedding(config.max_positions, d)
        self.edu_decoder = TransformerDecoder(config.decoder_layers, d,
                                              config.n_heads, config.ffn_dim, config.dropout)
        self.scorer = nn.Linear(2 * d, 1)
        self.emb_dropout = nn.Dropout(config.dropout)
        nn.init.normal_(self.eoe_emb, std=0.02)
        nn.init.normal_(self.dec_bos, std=0.02)

    def planner_input_ids(self, doc: Document) -> tuple[list[int], list[tuple[int, int]]]:
        """Token ids with every unit bracketed, plus each unit's id range."""
        ids: list[int] = []
        ranges: list[tuple[int, int]] = []
        for i in range(doc.num_edus):
            start = len(ids)
            ids.append(self.vocab.open_id)
            ids.extend(self.vocab.encode(doc.edu_tokens(i)))
            ids.append(self.vocab.close_id)
            ranges.append((start, len(ids)))
        return ids, ranges

    def encode_edus(self, doc: Document) -> PlannerState:
        if doc.num_edus < 1:
            raise ValueError(f"doc {doc.id!r} has no extraction units")
        if doc.num_edus + 1 > self.config.max_positions:
            raise ValueError(
                f"doc {doc.id!r} has {doc.num_edus} units; truncate the document to at most "
                f"{self.config.max_positions - 1} units")
        ids, ranges = self.planner_input_ids(doc)
        if len(ids) > self.config.max_positions:
            raise ValueError(
                f"doc {doc.id!r} spans {len(ids)} tokens; truncate it to fit "
                f"max_positions {self.config.max_positions}")
        id_tensor = torch.tensor([ids], dtype=torch.long)
        positions = torch.arange(len(ids))
        h = self.emb_dropout(self.token_emb(id_tensor) + self.token_pos_emb(positions))
        token_states = self.token_encoder(h)[0]  # [L, D]
        pooled = torch.stack([token_states[a:b].mean(dim=0) for a, b in ranges])
        k = pooled.shape[0]
        # unit states carry document-position embeddings; the end-of-extract
        # slot is a learned embedding with no position of its own
        pooled = pooled + self.edu_pos_emb(torch.arange(k))
        stacked = torch.cat([pooled, self.eoe_emb.unsqueeze(0)], dim=0)
        contextual = self.edu_encoder(stacked.unsqueeze(0))[0]
        return PlannerState(doc=doc, pooled=pooled, contextual=contextual)

    def _decoder_states(self, state: PlannerState, prefixes: torch.Tensor) -> torch.Tensor:
        """Decoder states for a batch of same-length selection prefixes.

        ``prefixes`` is [B, m] of unit indices (m may be 0). Returns
        [B, m + 1, D]: the state after consuming BOS and each selection.
        """
        bsz, m = prefixes.shape
        bos = self.dec_bos.unsqueeze(0).expand(bsz, 1, -1)
        if m > 0:
            picked = state.contextual[prefixes.reshape(-1)].reshape(bsz, m, -1)
            inputs = torch.cat([bos, picked], dim=1)
        else:
            inputs = bos
        inputs = inputs + self.step_pos_emb(torch.arange(m + 1))
        memory = state.contextual.unsqueeze(0).expand(bsz, -1, -1)
        return self.edu_decoder(inputs, memory)

    def _step_logits(self, state: PlannerState, dec_states: torch.Tensor) -> torch.Tensor:
        """Scorer logits for every (step, choice) pair: [B, S, K + 1].

        The single-layer scorer on the concatenation [candidate; decoder]
        decomposes into two projections, evaluated for all pairs at once.
        """
        d = self.config.d_model
        w_cand = self.scorer.weight[:, :d]
        w_dec = self.scorer.weight[:, d:]
        cand = state.contextual @ w_cand.T            # [K + 1, 1]
        dec = dec_states @ w_dec.T                    # [B, S, 1]
        return cand.T.unsqueeze(0) + dec + self.scorer.bias

    @staticmethod
    def _validity_mask(prefixes: torch.Tensor, num_edus: int) -> torch.Tensor:
        """True where a choice is allowed: units after the last pick, plus eoe."""
        bsz, m = prefixes.shape
        last = prefixes[:, -1] if m > 0 else torch.full((bsz,), -1, dtype=torch.long)
        choice = torch.arange(num_edus + 1).unsqueeze(0)
        allowed = choice > last.unsqueeze(1)
        allowed[:, num_edus] = True
        return allowed

    def next_plan_distribution(self, state: PlannerState, partial: Sequence[int]) -> torch.Tensor:
        """Probability over {valid units, end-of-extract} given a partial plan.

        Forbidden indices (at or before the last selection) carry exactly
        zero mass. Index ``num_edus`` is the end-of-extract symbol.
        """
        partial = list(partial)
        if any(b <= a for a, b in zip(partial, partial[1:])):
            raise ValueError(f"partial plan must be strictly increasing, got {partial}")
        if partial and not (0 <= partial[0] and partial[-1] < state.num_edus):
            raise ValueError(f"partial plan {partial} out of range for {state.num_edus} units")
        prefixes = torch.tensor([partial], dtype=torch.long).reshape(1, len(partial))
        dec = self._decoder_states(state, prefixes)[:, -1:, :]
        logits = self._step_logits(state, dec)[0, 0]
        allowed = self._validity_mask(prefixes, state.num_edus)[0]
        logits = logits.masked_fill(~allowed, float("-inf"))
        return torch.softmax(logits, dim=-1)

    def sequence_logprobs(self, state: PlannerState, plan: Sequence[int]) -> torch.Tensor:
        """Per-step log-probs of selecting each plan unit in order, then eoe."""
        plan = list(plan)
        prefixes = torch.tensor([plan], dtype=torch.long).reshape(1, len(plan))
        dec = self._decoder_states(state, prefixes)           # [1, m + 1, D]
        logits = self._step_logits(state, dec)[0]             # [m + 1, K + 1]
        steps = logits.shape[0]
        mask = torch.ones(steps, state.num_edus + 1, dtype=torch.bool)
        for step in range(steps):
            last = plan[step - 1] if step > 0 else -1
            mask[step, :max(last + 1, 0)] = False
            mask[step, state.num_edus] = True
        logits = logits.masked_fill(~mask, float("-inf"))
        logp = torch.log_softmax(logits, dim=-1)
        targets = torch.tensor(plan + [state.num_edus], dtype=torch.long)
        return logp.gather(-1, targets.unsqueeze(1)).squeeze(1)


def build_planner(config: ModelConfig, vocab: Vocab) -> PlannerModel:
    torch.manual_seed(config.seed)
    model = PlannerModel(config, vocab)
    return model.to(_dtype_of(config))


def init_token_encoder_from(planner: PlannerModel, abstractor: nn.Module) -> None:
    """Copy the trained abstractor's token embedding/encoder into the planner."""
    planner.token_emb.load_state_dict(abstractor.token_emb.state_dict())
    planner.token_pos_emb.load_state_dict(abstractor.pos_emb.state_dict())
    planner.token_encoder.load_state_dict(abstractor.encoder.state_dict())


def planner_loss(model: PlannerModel, docs: Sequence[Document],
                 oracles: dict[str, ContentPlan]) -> torch.Tensor:
    """Mean negative log-likelihood per selection step, teacher-forced."""
    total = None
    steps = 0
    for doc in docs:
        plan = oracles.get(doc.id)
        if plan is None or plan.is_empty:
            log.warning("doc %s has no oracle plan; skipped", doc.id)
            continue
        state = model.encode_edus(doc)
        logps = model.sequence_logprobs(state, plan.edu_indices)
        total = logps.sum() if total is None else total + logps.sum()
        steps += logps.shape[0]
    if total is None:
        raise ValueError("no trainable examples in batch (all oracle plans empty)")
    return -total / steps


def planner_batch_loss(model: PlannerModel, docs: Sequence[Document],
                       oracles: dict[str, ContentPlan]) -> torch.Tensor:
    """Batched equivalent of planner_loss: one model call set per batch.

    Unit slots are padded to the widest document with the end-of-extract
    state in a shared final slot; padded slots are masked out of attention
    and scoring, so the result matches the per-document loss.
    """
    usable = [(doc, oracles.get(doc.id)) for doc in docs]
    usable = [(d, p) for d, p in usable if p is not None and not p.is_empty]
    if not usable:
        raise ValueError("no trainable examples in batch (all oracle plans empty)")
    bsz = len(usable)
    dtype = model.eoe_emb.dtype

    token_rows, ranges_per_doc = [], []
    for doc, _ in usable:
        ids, ranges = model.planner_input_ids(doc)
        if len(ids) > model.config.max_positions:
            raise ValueError(f"doc {doc.id!r} exceeds max_positions; truncate it")
        token_rows.append(ids)
        ranges_per_doc.append(ranges)
    width = max(len(r) for r in token_rows)
    ids = torch.zeros(bsz, width, dtype=torch.long)
    pad_mask = torch.ones(bsz, width, dtype=torch.bool)
    for i, row in enumerate(token_rows):
        ids[i, :len(row)] = torch.tensor(row)
        pad_mask[i, :len(row)] = False
    h = model.emb_dropout(model.token_emb(ids) + model.token_pos_emb(torch.arange(width)))
    token_states = model.token_encoder(h, key_padding_mask=pad_mask)

    k_max = max(doc.num_edus for doc, _ in usable)
    unit_states = torch.zeros(bsz, k_max + 1, model.config.d_model, dtype=dtype)
    unit_pad = torch.ones(bsz, k_max + 1, dtype=torch.bool)
    for i, (doc, _) in enumerate(usable):
        pooled = torch.stack([token_states[i, a:b].mean(dim=0)
                              for a, b in ranges_per_doc[i]])
        pooled = pooled + model.edu_pos_emb(torch.arange(doc.num_edus))
        unit_states[i, :doc.num_edus] = pooled
        unit_pad[i, :doc.num_edus] = False
    unit_states[:, k_max] = model.eoe_emb
    unit_pad[:, k_max] = False
    contextual = model.edu_encoder(unit_states, key_padding_mask=unit_pad)

    plans = [list(p.edu_indices) for _, p in usable]
    s_max = max(len(p) for p in plans) + 1
    dec_in = model.dec_bos.expand(bsz, s_max, -1).clone()
    step_mask = torch.zeros(bsz, s_max, dtype=torch.bool)
    for i, plan in enumerate(plans):
        if plan:
            dec_in[i, 1:len(plan) + 1] = contextual[i, plan]
        step_mask[i, :len(plan) + 1] = True
    dec_in = dec_in + model.step_pos_emb(torch.arange(s_max))
    dec_states = model.edu_decoder(dec_in, contextual, memory_key_padding_mask=unit_pad)

    d = model.config.d_model
    w_cand, w_dec = model.scorer.weight[:, :d], model.scorer.weight[:, d:]
    cand = (contextual @ w_cand.T).squeeze(-1)           # [B, K + 1]
    dec = (dec_states @ w_dec.T)                          # [B, S, 1]
    logits = cand.unsqueeze(1) + dec + model.scorer.bias  # [B, S, K + 1]

    choice = torch.arange(k_max + 1)
    allowed = torch.zeros(bsz, s_max, k_max + 1, dtype=torch.bool)
    # padded steps keep a one-hot eoe row so their (masked-out) log-probs
    # stay finite; NaNs would survive the loss mask through multiplication
    allowed[:, :, k_max] = True
    targets = torch.full((bsz, s_max), k_max, dtype=torch.long)
    for i, (doc, _) in enumerate(usable):
        plan = plans[i]
        for step in range(len(plan) + 1):
            last = plan[step - 1] if step > 0 else -1
            allowed[i, step] = (choice > last) & (choice < doc.num_edus)
            allowed[i, step, k_max] = True
            targets[i, step] = plan[step] if step < len(plan) else k_max
    logits = logits.masked_fill(~allowed, float("-inf"))
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(picked * step_mask).sum() / step_mask.sum()


def train_planner(model: PlannerModel, docs: Sequence[Document],
                  oracles: dict[str, ContentPlan], cfg: TrainConfig) -> list[float]:
    usable = [d for d in docs if not oracles.get(d.id, NULL_PLAN).is_empty]
    skipped = len(list(docs)) - len(usable)
    if skipped:
        log.warning("skipping %d documents without oracle plans", skipped)
    return train_loop(model, cfg, usable,
                      lambda batch, step: planner_batch_loss(model, batch, oracles))


def _plan_step_fn(model: PlannerModel, state: PlannerState, min_len: int = 1):
    k = state.num_edus

    def step(prefixes: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            selections = prefixes[:, 1:]  # strip the BOS sentinel
            dec = model._decoder_states(state, selections)[:, -1:, :]
            logits = model._step_logits(state, dec)[:, 0, :]
            allowed = model._validity_mask(selections, k)
            # picking unit j leaves k-1-j later units; keep min_len reachable
            t = selections.shape[1]
            limit = k - min_len + t
            if limit < k - 1:
                feasible = torch.arange(k + 1) <= limit
                feasible[k] = True
                allowed = allowed & feasible.unsqueeze(0)
            logits = logits.masked_fill(~allowed, float("-inf"))
            return torch.log_softmax(logits, dim=-1)

    return step


def generate_plans(model: PlannerModel, doc: Document, decode: DecodeConfig,
                   include_null: bool = False) -> list[ContentPlan]:
    """Top-K distinct plans via beam search over the masked copy distribution."""
    model.eval()
    state = model.encode_edus(doc)
    k = state.num_edus
    min_len = decode.min_len
    if min_len > k:
        log.warning("doc %s has %d units < min plan length %d; clamping", doc.id, k, min_len)
        min_len = k
    want = decode.num_candidates - 1 if include_null else decode.num_candidates
    beam = max(decode.beam_size, decode.num_candidates)
    hyps = beam_search(_plan_step_fn(model, state, min_len), bos_id=k + 1, eos_id=k,
                       decode=decode, beam_size=beam, num_return=want,
                       min_len=min_len, max_len=min(decode.max_len, k))
    if len(hyps) < want:
        # relax the length constraints and the penalty to fill the set
        relaxed = decode.replace(length_penalty=0.0)
        log.warning("doc %s yielded %d/%d plans; relaxing length constraints",
                    doc.id, len(hyps), want)
        extra = beam_search(_plan_step_fn(model, state, 1), bos_id=k + 1, eos_id=k,
                            decode=relaxed, beam_size=2 * beam, num_return=2 * beam,
                            min_len=1, max_len=k)
        seen = {h.tokens for h in hyps}
        for h in extra:
            if h.tokens not in seen and len(hyps) < want:
                hyps.append(h)
                seen.add(h.tokens)
    plans = [ContentPlan(tuple(h.tokens), provenance="generated", log_prob=h.score)
             for h in hyps]
    if include_null:
        plans.append(NULL_PLAN)
    return plans
