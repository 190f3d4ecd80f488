"""Finite-difference verification of analytic gradients.

Compares backprop gradients against central differences on a random
subset of parameter coordinates. Meaningful results require a float64
model and a deterministic loss closure (dropout off, fixed inputs).
"""

from __future__ import annotations

import math
from typing import Callable

import torch
from torch import nn


class GradCheckError(RuntimeError):
    pass


def grad_check(model: nn.Module, loss_fn: Callable[[], torch.Tensor],
               epsilon: float = 1e-5, min_coords: int = 200,
               rng_seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not (1e-6 <= epsilon <= 1e-3):
        raise ValueError(f"epsilon must be in [1e-6, 1e-3], got {epsilon}")
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise GradCheckError("model has no trainable parameters")

    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise GradCheckError(f"loss is not finite: {float(loss.detach())}")
    loss.backward()
    grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
             for p in params]

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    gen = torch.Generator().manual_seed(rng_seed)
    n = min(min_coords, total) if min_coords < total else total
    coords = torch.randperm(total, generator=gen)[:n].tolist()

    offsets = []
    acc = 0
    for s in sizes:
        offsets.append(acc)
        acc += s

    max_rel = 0.0
    with torch.no_grad():
        for flat_idx in coords:
            pi = max(i for i, off in enumerate(offsets) if off <= flat_idx)
            local = flat_idx - offsets[pi]
            param = params[pi]
            view = param.view(-1)
            original = view[local].item()
            view[local] = original + epsilon
            up = float(loss_fn())
            view[local] = original - epsilon
            down = float(loss_fn())
            view[local] = original
            numeric = (up - down) / (2 * epsilon)
            analytic = float(grads[pi].view(-1)[local])
            # the floor keeps central-difference rounding noise on
            # zero-gradient coordinates from registering as relative error
            denom = max(abs(analytic) + abs(numeric), 1e-6)
            rel = abs(analytic - numeric) / denom
            if not math.isfinite(rel):
                raise GradCheckError(f"non-finite difference at coordinate {flat_idx}")
            max_rel = max(max_rel, rel)
    model.zero_grad(set_to_none=True)
    return max_rel
