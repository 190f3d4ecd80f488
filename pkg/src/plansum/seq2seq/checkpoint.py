"""Versioned checkpoint files: model config, vocabulary, and weights.

Tensors round-trip bit-exact through torch's serialization.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .config import ModelConfig
from .vocab import Vocab

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: ModelConfig
    vocab: Vocab
    state_dict: dict
    extra: dict


def save_checkpoint(path: str | Path, *, kind: str, config: ModelConfig,
                    vocab: Vocab, model: nn.Module, extra: dict | None = None) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config.to_dict(),
        "vocab": vocab.to_list(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": dict(extra or {}),
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path, expect_kind: str | None = None) -> Checkpoint:
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format version {version!r}")
    kind = payload.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path}: expected a {expect_kind!r} checkpoint, found {kind!r}")
    return Checkpoint(
        kind=kind,
        config=ModelConfig.from_dict(payload["config"]),
        vocab=Vocab(payload["vocab"]),
        state_dict=payload["state_dict"],
        extra=payload.get("extra", {}),
    )
