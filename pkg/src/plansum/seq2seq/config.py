"""Model, decoding, and training configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    token_encoder_layers: int = 2
    edu_encoder_layers: int = 2
    decoder_layers: int = 2
    ffn_dim: int = 0  # 0 means 4 * d_model
    max_positions: int = 512
    dropout: float = 0.1
    seed: int = 0
    dtype: str = "float32"
    tie_embeddings: bool = True
    copy_attention: bool = False  # pointer-style source-copy output mixture

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        for name in ("vocab_size", "d_model", "n_heads", "token_encoder_layers",
                     "edu_encoder_layers", "decoder_layers", "max_positions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ffn_dim == 0:
            self.ffn_dim = 4 * self.d_model
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class DecodeConfig:
    num_candidates: int = 16
    beam_size: int = 4
    min_len: int = 1
    max_len: int = 48
    length_penalty: float = 1.0
    nucleus_p: float = 0.92
    diversity_penalty: float = 1.0
    temperature: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 < self.nucleus_p <= 1):
            raise ValueError(f"nucleus_p must be in (0, 1], got {self.nucleus_p}")
        if self.min_len > self.max_len:
            raise ValueError(f"min_len {self.min_len} > max_len {self.max_len}")
        if self.min_len < 1 or self.num_candidates < 1 or self.beam_size < 1:
            raise ValueError("min_len, num_candidates, and beam_size must be >= 1")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")

    def replace(self, **kwargs) -> "DecodeConfig":
        data = asdict(self)
        data.update(kwargs)
        return DecodeConfig(**data)


# plan generation: lengths 2-20, length penalty 1.0
PLAN_DECODE = DecodeConfig(num_candidates=16, beam_size=16, min_len=2, max_len=20,
                           length_penalty=1.0)


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 8
    lr: float = 3e-4
    weight_decay: float = 5e-5
    warmup_steps: int = 100
    clip_norm: float = 1.0
    seed: int = 0
    log_every: int = 200
    eval_every: int = 0  # 0 disables validation-based checkpoint selection

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


# full-scale recipe kept for reference; desk-scale runs use the defaults above
PRODUCTION_TRAINING = TrainConfig(steps=150_000, batch_size=16, lr=1e-5,
                                  weight_decay=5e-5, warmup_steps=200)
