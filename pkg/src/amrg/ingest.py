"""Paired image/report manifests and split bookkeeping.

A manifest is JSON Lines, one case per line::

    {"case_id": "c1", "image_paths": ["img/c1_cc.png"], "laterality": "left",
     "report_text": "...", "birads": "4c", "density": "b", "split": "test"}
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from amrg.clinical import BIRADS_VALUES, DENSITY_VALUES, UNLABELED

SPLITS = ("train", "val", "test")
LATERALITIES = ("left", "right", "unknown")


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest content."""


@dataclass(frozen=True)
class ReportRecord:
    case_id: str
    image_paths: tuple[str, ...]
    report_text: str
    split: str
    laterality: str = "unknown"
    birads_gold: str | None = None
    density_gold: str | None = None

    def __post_init__(self):
        if not self.image_paths:
            raise ManifestError(f"case {self.case_id!r}: image_paths must be non-empty")
        if self.split not in SPLITS:
            raise ManifestError(f"case {self.case_id!r}: bad split {self.split!r}")
        if self.laterality not in LATERALITIES:
            raise ManifestError(f"case {self.case_id!r}: bad laterality {self.laterality!r}")
        if self.birads_gold is not None and self.birads_gold not in BIRADS_VALUES:
            raise ManifestError(f"case {self.case_id!r}: unknown BI-RADS code {self.birads_gold!r}")
        if self.density_gold is not None and self.density_gold not in DENSITY_VALUES:
            raise ManifestError(f"case {self.case_id!r}: unknown density code {self.density_gold!r}")

    @classmethod
    def from_json(cls, obj: dict) -> "ReportRecord":
        paths = obj.get("image_paths")
        if isinstance(paths, str) or not isinstance(paths, list):
            raise ManifestError("image_paths must be a list of strings")
        return cls(
            case_id=str(obj["case_id"]),
            image_paths=tuple(str(p) for p in paths),
            report_text=str(obj.get("report_text", "")),
            split=obj["split"],
            laterality=obj.get("laterality") or "unknown",
            birads_gold=_normalize_code(obj.get("birads")),
            density_gold=_normalize_code(obj.get("density")),
        )

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "image_paths": list(self.image_paths),
            "laterality": None if self.laterality == "unknown" else self.laterality,
            "report_text": self.report_text,
            "birads": self.birads_gold,
            "density": self.density_gold,
            "split": self.split,
        }


def _normalize_code(value) -> str | None:
    if value is None:
        return None
    value = " ".join(str(value).strip().lower().split())
    return value or None


def load_manifest(path: str | Path) -> list[ReportRecord]:
    """Read a JSONL manifest, preserving file order.

    Blank lines are skipped. Errors carry the 1-based line number.
    """
    records: list[ReportRecord] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ManifestError("expected a JSON object")
                rec = ReportRecord.from_json(obj)
            except (json.JSONDecodeError, KeyError, ManifestError, TypeError) as exc:
                if isinstance(exc, KeyError):
                    msg = f"missing field {exc.args[0]!r}"
                else:
                    msg = str(exc)
                raise ManifestError(f"{path}:{lineno}: {msg}") from exc
            if rec.case_id in seen:
                raise ManifestError(
                    f"{path}:{lineno}: duplicate case_id {rec.case_id!r} "
                    f"(first seen on line {seen[rec.case_id]})"
                )
            seen[rec.case_id] = lineno
            records.append(rec)
    return records


def write_manifest(records: Iterable[ReportRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


@dataclass
class SplitStats:
    """Per-split label counts. Missing gold labels are counted under ``"unlabeled"``."""

    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        for split in SPLITS:
            self.counts.setdefault(split, {})

    @property
    def totals(self) -> dict[str, int]:
        return {split: sum(self.counts[split].values()) for split in self.counts}

    def to_json(self) -> dict:
        return {split: dict(sorted(labels.items())) for split, labels in self.counts.items()}

    @classmethod
    def from_json(cls, obj: dict) -> "SplitStats":
        counts = {}
        for split, labels in obj.items():
            if split not in SPLITS:
                raise ManifestError(f"unknown split {split!r} in expected stats")
            counts[split] = {_normalize_code(k) or UNLABELED: int(v) for k, v in labels.items()}
        return cls(counts)


def split_stats(records: Iterable[ReportRecord]) -> SplitStats:
    per_split: dict[str, Counter] = {s: Counter() for s in SPLITS}
    for rec in records:
        per_split[rec.split][rec.birads_gold or UNLABELED] += 1
    return SplitStats({s: dict(c) for s, c in per_split.items()})


def validate_against(stats: SplitStats, expected: SplitStats) -> list[str]:
    """Describe every (split, label) whose count differs; empty list means a clean match."""
    problems = []
    for split in SPLITS:
        got = stats.counts.get(split, {})
        want = expected.counts.get(split, {})
        if sum(got.values()) != sum(want.values()):
            problems.append(
                f"split={split} total: expected {sum(want.values())}, actual {sum(got.values())}"
            )
        for label in sorted(set(got) | set(want)):
            actual, exp = got.get(label, 0), want.get(label, 0)
            if actual != exp:
                problems.append(
                    f"split={split} label={label!r}: expected {exp}, actual {actual}"
                )
    return problems


# BI-RADS distribution of the DMID splits (train / val / test).
DMID_SPLIT_COUNTS = {
    "train": {"0": 1, "1": 157, "2": 24, "3": 109, "3 and 5": 1, "4": 3,
              "4a": 31, "4b": 26, "4c": 39, "5": 16},
    "val": {"1": 30, "2": 1, "3": 10, "4a": 1, "4c": 7, "5": 2},
    "test": {"1": 22, "2": 5, "3": 9, "4a": 5, "4b": 5, "4c": 6},
}


def dmid_expected_stats() -> SplitStats:
    return SplitStats({s: dict(c) for s, c in DMID_SPLIT_COUNTS.items()})
