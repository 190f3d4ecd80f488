"""Word-level vocabulary with the special symbols shared by all models."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
E_OPEN = "<e>"
E_CLOSE = "</e>"
EOE = "<eoe>"

SPECIALS = (PAD, BOS, EOS, UNK, E_OPEN, E_CLOSE, EOE)


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special symbols")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicates")
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    @classmethod
    def build(cls, token_streams: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        counts = Counter()
        for stream in token_streams:
            counts.update(stream)
        for special in SPECIALS:
            counts.pop(special, None)
        words = sorted((tok for tok, c in counts.items() if c >= min_count),
                       key=lambda tok: (-counts[tok], tok))
        return cls(list(SPECIALS) + words)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def open_id(self) -> int:
        return self._ids[E_OPEN]

    @property
    def close_id(self) -> int:
        return self._ids[E_CLOSE]

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self._ids[UNK])

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self._ids[UNK]
        return [self._ids.get(tok, unk) for tok in tokens]

    def decode(self, ids: Sequence[int], skip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            tok = self._tokens[i]
            if skip_special and tok in SPECIALS:
                continue
            out.append(tok)
        return out

    def text(self, ids: Sequence[int]) -> str:
        return " ".join(self.decode(ids))

    def to_list(self) -> list[str]:
        return list(self._tokens)
