"""BI-RADS / breast-density label extraction and clinical term comparison.

Extraction is regex based and case-insensitive. When a report mentions a label
more than once, the last mention wins (final assessments sit at the end of
an impression).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from amrg.nlgmetrics import tokenize

UNLABELED = "unlabeled"

# "6" is not in the DMID table but is a standard BI-RADS category.
BIRADS_VALUES = ("0", "1", "2", "3", "4", "4a", "4b", "4c", "5", "6", "3 and 5")
DENSITY_VALUES = ("a", "b", "c", "d")

_FILLER_WORDS = r"(?:categories|category|cat|code|final|assessment|score|class|grade|is|of)"
_BIRADS_RE = re.compile(
    r"(?<![a-z0-9])(?:acr[\s\-]+)?bi[\s\-]?rads"
    rf"(?:[\s:\-=(),.]*{_FILLER_WORDS}(?![a-z0-9]))*"
    r"[\s:\-=(]*"
    r"(3\s+and\s+5|4\s*[abc]|[0-6])(?![a-z0-9])"
)

_DENSITY_CODE_RES = (
    re.compile(
        r"(?<![a-z0-9])(?:acr\s+)?(?:breast\s+)?density"
        r"(?:\s+(?:category|type|grade|class|pattern))?"
        r"(?:\s+is)?[\s:\-=(]*(?:acr\s+)?([abcd])(?![a-z0-9])"
    ),
    re.compile(r"(?<![a-z0-9])acr(?:\s+(?:category|type))?[\s:\-]*([abcd])(?![a-z0-9])"),
    re.compile(
        r"(?<![a-z0-9])(?:category|type)\s+([abcd])\s+(?:breast\s+)?densit"
    ),
)


def _squash(text: str) -> str:
    return " ".join(text.lower().split())


def extract_birads(report: str) -> str:
    """Return the last BI-RADS code mentioned in ``report`` or ``"unlabeled"``.

    >>> extract_birads("IMPRESSION: BI-RADS category 4c.")
    '4c'
    """
    matches = list(_BIRADS_RE.finditer(_squash(report)))
    if not matches:
        return UNLABELED
    code = matches[-1].group(1)
    if "and" in code:
        return "3 and 5"
    return code.replace(" ", "")


@dataclass(frozen=True)
class DensityTable:
    """Descriptor phrase -> ACR code mapping, matched longest phrase first."""

    entries: tuple[tuple[str, str], ...]
    pattern: re.Pattern = field(repr=False, compare=False)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "DensityTable":
        entries = []
        for phrase, code in pairs:
            code = code.strip().lower()
            if code not in DENSITY_VALUES:
                raise ValueError(f"density table: bad code {code!r} for {phrase!r}")
            words = re.findall(r"[a-z0-9]+", phrase.lower())
            if not words:
                raise ValueError(f"density table: empty phrase for code {code!r}")
            entries.append((" ".join(words), code))
        # longest first so "fibro-fatty" beats "fatty" at the same position
        entries.sort(key=lambda e: (-len(e[0]), e[0]))
        alternation = "|".join(
            "(" + r"[^a-z0-9]+".join(map(re.escape, phrase.split())) + ")"
            for phrase, _ in entries
        )
        pattern = re.compile(rf"(?<![a-z0-9])(?:{alternation})(?![a-z0-9])")
        return cls(tuple(entries), pattern)

    @classmethod
    def load(cls, path: str | Path) -> "DensityTable":
        return cls.from_pairs(_read_table(Path(path).read_text(encoding="utf-8")))

    def lookup(self, text: str) -> list[tuple[int, str]]:
        """(position, code) for every descriptor mention in ``text``."""
        found = []
        for m in self.pattern.finditer(text):
            idx = next(i for i, g in enumerate(m.groups()) if g is not None)
            found.append((m.start(), self.entries[idx][1]))
        return found


def _read_table(content: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(content.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"density table line {lineno}: expected phrase<TAB>code")
        pairs.append((parts[0], parts[1]))
    return pairs


@lru_cache(maxsize=1)
def default_density_table() -> DensityTable:
    content = resources.files("amrg.data").joinpath("density_table.tsv").read_text("utf-8")
    return DensityTable.from_pairs(_read_table(content))


def extract_density(report: str, table: DensityTable | None = None) -> str:
    """ACR density code (a-d) from explicit codes, else from descriptor phrases."""
    text = _squash(report)
    explicit = [(m.start(), m.group(1)) for rx in _DENSITY_CODE_RES for m in rx.finditer(text)]
    if explicit:
        return max(explicit)[1]
    phrases = (table or default_density_table()).lookup(text)
    if phrases:
        return max(phrases)[1]
    return UNLABELED


def label_accuracy(pred: Sequence[str], gold: Sequence[str | None]) -> float | None:
    """Exact-match accuracy, skipping pairs whose gold label is missing.

    Returns ``None`` when no pair has a gold label.
    """
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gold)} gold labels")
    included = [(p, g) for p, g in zip(pred, gold) if g is not None and g != UNLABELED]
    if not included:
        return None
    return sum(p == g for p, g in included) / len(included)


@dataclass
class TermDiff:
    matched: set[str] = field(default_factory=set)
    hallucinated: set[str] = field(default_factory=set)
    missed: set[str] = field(default_factory=set)
    conflicting: list[tuple[str, str, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "matched": sorted(self.matched),
            "hallucinated": sorted(self.hallucinated),
            "missed": sorted(self.missed),
            "conflicting": [list(c) for c in self.conflicting],
            "counts": {
                "matched": len(self.matched),
                "hallucinated": len(self.hallucinated),
                "missed": len(self.missed),
                "conflicting": len(self.conflicting),
            },
        }


def load_vocab(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        content = resources.files("amrg.data").joinpath("clinical_terms.txt").read_text("utf-8")
    else:
        content = Path(path).read_text(encoding="utf-8")
    terms = {
        line.strip() for line in content.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    }
    return frozenset(terms)


def find_terms(text: str, vocab: Iterable[str]) -> set[str]:
    """Vocabulary terms present in ``text``; greedy longest match over tokens.

    Tokens consumed by a longer phrase are not reused, so "calcified lymph node"
    does not also report "lymph node".
    """
    by_tokens: dict[tuple[str, ...], str] = {}
    for term in vocab:
        toks = tuple(tokenize(term))
        if toks:
            by_tokens.setdefault(toks, term)
    lengths = sorted({len(t) for t in by_tokens}, reverse=True)
    tokens = tokenize(text)
    found = set()
    i = 0
    while i < len(tokens):
        for n in lengths:
            key = tuple(tokens[i:i + n])
            if len(key) == n and key in by_tokens:
                found.add(by_tokens[key])
                i += n
                break
        else:
            i += 1
    return found


def _laterality(text: str) -> str | None:
    toks = set(tokenize(text))
    if "bilateral" in toks or {"left", "right"} <= toks:
        return "bilateral"
    if "left" in toks:
        return "left"
    if "right" in toks:
        return "right"
    return None


def term_diff(generated: str, reference: str, vocab: Iterable[str]) -> TermDiff:
    """Classify clinical terms of a generated report against its reference.

    Conflicts are slot level only (BI-RADS, density, laterality) and are
    reported when both reports state the slot and the values differ.
    """
    vocab = list(vocab)
    if not vocab:
        raise ValueError("term_diff needs a non-empty vocabulary")
    gen_terms = find_terms(generated, vocab)
    ref_terms = find_terms(reference, vocab)
    conflicts = []
    for slot, fn in (("birads", extract_birads), ("density", extract_density)):
        g, r = fn(generated), fn(reference)
        if g != UNLABELED and r != UNLABELED and g != r:
            conflicts.append((slot, g, r))
    g, r = _laterality(generated), _laterality(reference)
    if g and r and g != r:
        conflicts.append(("laterality", g, r))
    return TermDiff(
        matched=gen_terms & ref_terms,
        hallucinated=gen_terms - ref_terms,
        missed=ref_terms - gen_terms,
        conflicting=conflicts,
    )
