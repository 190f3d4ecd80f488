"""Transformer encoder-decoder built from scratch on torch primitives.

Pre-norm layers, learned positional embeddings, and explicit boolean
masks. Small enough to train on CPU in minutes and to pass 64-bit
finite-difference gradient checks.
"""

from __future__ import annotations

import math
from typing import Sequence

import torch
from torch import nn

from .config import ModelConfig


def _dtype_of(config: ModelConfig) -> torch.dtype:
    return torch.float64 if config.dtype == "float64" else torch.float32


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query, key, value, attn_mask=None, key_padding_mask=None):
        # query: [B, Lq, D]; attn_mask: [Lq, Lk] bool, True = blocked
        # key_padding_mask: [B, Lk] bool, True = padding
        bsz, q_len, _ = query.shape
        k_len = key.shape[1]

        def split(x):
            return x.view(bsz, -1, self.n_heads, self.head_dim).transpose(1, 2)

        q = split(self.q_proj(query))
        k = split(self.k_proj(key))
        v = split(self.v_proj(value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if attn_mask is not None:
            scores = scores.masked_fill(attn_mask.view(1, 1, q_len, k_len), float("-inf"))
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask.view(bsz, 1, 1, k_len), float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        attn = self.dropout(attn)
        out = (attn @ v).transpose(1, 2).reshape(bsz, q_len, -1)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, ffn_dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(ffn_dim, d_model),
        )

    def forward(self, x):
        return self.net(x)


class EncoderLayer(nn.Module):
    def __init__(self, d_model, n_heads, ffn_dim, dropout):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.ffn = FeedForward(d_model, ffn_dim, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, key_padding_mask=None):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, h, key_padding_mask=key_padding_mask))
        x = x + self.dropout(self.ffn(self.norm2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, d_model, n_heads, ffn_dim, dropout):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.ffn = FeedForward(d_model, ffn_dim, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, memory, causal_mask, memory_key_padding_mask=None):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, h, attn_mask=causal_mask))
        h = self.norm2(x)
        x = x + self.dropout(self.cross_attn(h, memory, memory,
                                             key_padding_mask=memory_key_padding_mask))
        x = x + self.dropout(self.ffn(self.norm3(x)))
        return x


class TransformerEncoder(nn.Module):
    def __init__(self, n_layers, d_model, n_heads, ffn_dim, dropout):
        super().__init__()
        self.layers = nn.ModuleList(
            EncoderLayer(d_model, n_heads, ffn_dim, dropout) for _ in range(n_layers))
        self.norm = nn.LayerNorm(d_model)

    def forward(self, x, key_padding_mask=None):
        for layer in self.layers:
            x = layer(x, key_padding_mask=key_padding_mask)
        return self.norm(x)


class TransformerDecoder(nn.Module):
    def __init__(self, n_layers, d_model, n_heads, ffn_dim, dropout):
        super().__init__()
        self.layers = nn.ModuleList(
            DecoderLayer(d_model, n_heads, ffn_dim, dropout) for _ in range(n_layers))
        self.norm = nn.LayerNorm(d_model)

    def forward(self, x, memory, memory_key_padding_mask=None):
        l_tgt = x.shape[1]
        causal = torch.triu(torch.ones(l_tgt, l_tgt, dtype=torch.bool, device=x.device), 1)
        for layer in self.layers:
            x = layer(x, memory, causal, memory_key_padding_mask=memory_key_padding_mask)
        return self.norm(x)


class Seq2SeqModel(nn.Module):
    """Token-level encoder-decoder with a shared embedding and output projection."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d, ffn = config.d_model, config.ffn_dim
        self.token_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_positions, d)
        self.encoder = TransformerEncoder(config.token_encoder_layers, d, config.n_heads,
                                          ffn, config.dropout)
        self.decoder = TransformerDecoder(config.decoder_layers, d, config.n_heads,
                                          ffn, config.dropout)
        self.out_proj = nn.Linear(d, config.vocab_size)
        if config.tie_embeddings:
            self.out_proj.weight = self.token_emb.weight
        if config.copy_attention:
            self.copy_query = nn.Linear(d, d)
            self.copy_gate = nn.Linear(d, 1)
        self.emb_dropout = nn.Dropout(config.dropout)

    def _check_ids(self, ids: torch.Tensor, what: str) -> None:
        if ids.numel() == 0:
            raise ValueError(f"{what} sequence is empty")
        if ids.shape[-1] > self.config.max_positions:
            raise ValueError(
                f"{what} length {ids.shape[-1]} exceeds max_positions "
                f"{self.config.max_positions}")
        if int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size:
            raise ValueError(f"{what} contains token ids outside the vocabulary")

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(ids.shape[1], device=ids.device)
        return self.emb_dropout(self.token_emb(ids) + self.pos_emb(positions))

    def encode(self, src_ids: torch.Tensor, src_padding_mask=None) -> torch.Tensor:
        self._check_ids(src_ids, "source")
        return self.encoder(self.embed(src_ids), key_padding_mask=src_padding_mask)

    def decode(self, tgt_ids: torch.Tensor, memory: torch.Tensor,
               memory_key_padding_mask=None, src_ids=None) -> torch.Tensor:
        """Next-token scores per position.

        Plain models return logits. With copy attention the result is
        already-normalized log-probabilities (a mixture of the vocabulary
        softmax and copy mass scattered onto source tokens); downstream
        log_softmax is a numerical no-op on them.
        """
        self._check_ids(tgt_ids, "target")
        h = self.decoder(self.embed(tgt_ids), memory,
                         memory_key_padding_mask=memory_key_padding_mask)
        logits = self.out_proj(h)
        if not self.config.copy_attention:
            return logits
        if src_ids is None:
            raise ValueError("copy attention requires the source token ids")
        scores = self.copy_query(h) @ memory.transpose(1, 2)
        scores = scores / math.sqrt(self.config.d_model)
        if memory_key_padding_mask is not None:
            scores = scores.masked_fill(memory_key_padding_mask.unsqueeze(1), float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        gate = torch.sigmoid(self.copy_gate(h))
        generated = torch.softmax(logits, dim=-1)
        spread = src_ids.unsqueeze(1).expand(-1, tgt_ids.shape[1], -1)
        copied = torch.zeros_like(generated).scatter_add(-1, spread, attn)
        mixture = gate * generated + (1 - gate) * copied
        return torch.log(mixture.clamp_min(1e-12))

    def forward(self, src_ids: torch.Tensor, tgt_ids: torch.Tensor,
                src_padding_mask=None) -> torch.Tensor:
        memory = self.encode(src_ids, src_padding_mask)
        return self.decode(tgt_ids, memory, memory_key_padding_mask=src_padding_mask,
                           src_ids=src_ids)


def build_model(config: ModelConfig) -> Seq2SeqModel:
    """Construct a model with a seed-determined initialization."""
    torch.manual_seed(config.seed)
    model = Seq2SeqModel(config)
    return model.to(_dtype_of(config))


def forward_probs(model: Seq2SeqModel, source: Sequence[int],
                  target_prefix: Sequence[int]) -> torch.Tensor:
    """Next-token probability distributions for every prefix position.

    Row t is p(token | target_prefix[:t+1], source); each row sums to 1.
    """
    model.eval()
    with torch.no_grad():
        src = torch.tensor([list(source)], dtype=torch.long)
        tgt = torch.tensor([list(target_prefix)], dtype=torch.long)
        logits = model(src, tgt)
        return torch.softmax(logits[0], dim=-1)


def pad_batch(sequences: Sequence[Sequence[int]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad to a rectangle. Returns (ids [B, L], padding_mask [B, L]) with True = pad."""
    if not sequences:
        raise ValueError("cannot pad an empty batch")
    width = max(len(s) for s in sequences)
    ids = torch.full((len(sequences), width), pad_id, dtype=torch.long)
    mask = torch.ones((len(sequences), width), dtype=torch.bool)
    for i, seq in enumerate(sequences):
        ids[i, :len(seq)] = torch.tensor(list(seq), dtype=torch.long)
        mask[i, :len(seq)] = False
    return ids, mask


def batch_token_logprobs(model: Seq2SeqModel, sources: Sequence[Sequence[int]],
                         targets: Sequence[Sequence[int]], pad_id: int, bos_id: int,
                         eos_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Teacher-forced per-token log-probabilities of target + end-of-sequence.

    Returns (logp [B, T+1], mask [B, T+1]) where T is the longest target and
    mask is True on real (non-pad) steps. Row sums over the mask give
    log p(target, eos | source).
    """
    if len(sources) != len(targets):
        raise ValueError("sources and targets must have equal length")
    src_ids, src_mask = pad_batch(sources, pad_id)
    dec_inputs = [[bos_id] + list(t) for t in targets]
    dec_targets = [list(t) + [eos_id] for t in targets]
    tgt_in, _ = pad_batch(dec_inputs, pad_id)
    tgt_out, step_pad = pad_batch(dec_targets, pad_id)
    logits = model(src_ids, tgt_in, src_padding_mask=src_mask)
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, tgt_out.unsqueeze(-1)).squeeze(-1)
    return picked, ~step_pad
