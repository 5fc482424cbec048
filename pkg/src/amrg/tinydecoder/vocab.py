"""Whitespace vocabulary for the toy decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

PAD, BOS, EOS, IMG, UNK = "<pad>", "<bos>", "<eos>", "<img>", "<unk>"
SPECIALS = (PAD, BOS, EOS, IMG, UNK)


@dataclass(frozen=True)
class TinyVocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if self.tokens[:len(SPECIALS)] != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")

    @classmethod
    def build(cls, texts: Iterable[str]) -> "TinyVocab":
        words: list[str] = []
        seen = set(SPECIALS)
        for text in texts:
            for w in text.split():
                if w not in seen:
                    seen.add(w)
                    words.append(w)
        return cls(SPECIALS + tuple(words))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    pad_id = property(lambda self: 0)
    bos_id = property(lambda self: 1)
    eos_id = property(lambda self: 2)
    img_id = property(lambda self: 3)
    unk_id = property(lambda self: 4)

    def encode(self, text: str, eos: bool = False) -> list[int]:
        index = self.index
        ids = [index.get(w, self.unk_id) for w in text.split()]
        return ids + [self.eos_id] if eos else ids

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            if i == self.eos_id:
                break
            if i in (self.pad_id, self.bos_id):
                continue
            out.append(self.tokens[i])
        return " ".join(out)
