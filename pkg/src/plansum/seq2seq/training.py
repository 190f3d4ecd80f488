"""Shared optimizer setup and the deterministic minibatch loop."""

from __future__ import annotations

import logging
import random
from typing import Callable, Iterator, Sequence, TypeVar

import torch
from torch import nn

from .config import TrainConfig

log = logging.getLogger(__name__)

T = TypeVar("T")


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def lr_scale(step: int, cfg: TrainConfig) -> float:
    if cfg.warmup_steps <= 0:
        return 1.0
    return min(1.0, (step + 1) / cfg.warmup_steps)


def minibatches(items: Sequence[T], cfg: TrainConfig) -> Iterator[list[T]]:
    """Cycle through shuffled epochs, yielding cfg.steps batches."""
    rng = random.Random(cfg.seed)
    order: list[T] = []
    for _ in range(cfg.steps):
        batch = []
        while len(batch) < cfg.batch_size:
            if not order:
                order = list(items)
                rng.shuffle(order)
            batch.append(order.pop())
        yield batch


def train_loop(model: nn.Module, cfg: TrainConfig, items: Sequence[T],
               loss_fn: Callable[[list[T], int], torch.Tensor],
               on_eval: Callable[[int], None] | None = None) -> list[float]:
    """Run AdamW over minibatches; returns the per-step loss curve."""
    torch.manual_seed(cfg.seed)
    optimizer = make_optimizer(model, cfg)
    losses = []
    model.train()
    for step, batch in enumerate(minibatches(items, cfg)):
        for group in optimizer.param_groups:
            group["lr"] = cfg.lr * lr_scale(step, cfg)
        optimizer.zero_grad(set_to_none=True)
        loss = loss_fn(batch, step)
        if not torch.isfinite(loss):
            raise RuntimeError(f"training diverged: non-finite loss at step {step}")
        loss.backward()
        if cfg.clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
        optimizer.step()
        losses.append(float(loss.detach()))
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            window = losses[-cfg.log_every:]
            log.info("step %d/%d loss %.4f", step + 1, cfg.steps, sum(window) / len(window))
        if on_eval is not None and cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            model.eval()
            on_eval(step + 1)
            model.train()
    model.eval()
    return losses
