"""Metric tables: one row per metric, one column per run, best value per row in bold."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

from amrg.nlgmetrics import METRIC_KEYS, METRIC_LABELS

_ALIASES = {label.lower(): key for key, label in METRIC_LABELS.items()}
_ALIASES.update({key.lower(): key for key in METRIC_KEYS})
_ALIASES.update({"rouge-l": "rougeL", "f1": "word_f1", "bleu-1": "bleu1"})


def _canonical(key: str) -> str:
    try:
        return _ALIASES[key.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown metric {key!r}") from None


@dataclass
class RunReport:
    bundles: dict[str, dict[str, float | None]]
    highlight_best: bool = True
    decimals: int = 4

    def __post_init__(self):
        if not self.bundles:
            raise ValueError("report needs at least one run")
        normalized = {}
        key_set = None
        for name, metrics in self.bundles.items():
            m = {_canonical(k): v for k, v in metrics.items()}
            if key_set is None:
                key_set = set(m)
            elif set(m) != key_set:
                raise ValueError(
                    f"run {name!r} has metrics {sorted(m)}, expected {sorted(key_set)}"
                )
            normalized[name] = m
        self.bundles = normalized

    @classmethod
    def from_json(cls, obj, **kwargs) -> "RunReport":
        """Accept ``{run: {metric: value}}`` or ``[{"name": run, "metrics": {...}}]``."""
        if isinstance(obj, list):
            obj = {item["name"]: item["metrics"] for item in obj}
        return cls(dict(obj), **kwargs)

    @property
    def runs(self) -> list[str]:
        return list(self.bundles)

    @property
    def metrics(self) -> list[str]:
        present = next(iter(self.bundles.values()))
        return [k for k in METRIC_KEYS if k in present]

    def best_runs(self, metric: str) -> set[str]:
        vals = {r: b[metric] for r, b in self.bundles.items() if b[metric] is not None}
        if not vals:
            return set()
        top = max(round(v, self.decimals) for v in vals.values())
        return {r for r, v in vals.items() if round(v, self.decimals) == top}

    def _cell(self, value) -> str:
        return "n/a" if value is None else f"{value:.{self.decimals}f}"

    def to_markdown(self) -> str:
        lines = ["| Metric | " + " | ".join(self.runs) + " |",
                 "|---|" + "---|" * len(self.runs)]
        for metric in self.metrics:
            best = self.best_runs(metric) if self.highlight_best else set()
            cells = []
            for run in self.runs:
                text = self._cell(self.bundles[run][metric])
                cells.append(f"**{text}**" if run in best else text)
            lines.append(f"| {METRIC_LABELS[metric]} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", *self.runs])
        for metric in self.metrics:
            writer.writerow([METRIC_LABELS[metric],
                             *(self._cell(self.bundles[r][metric]) for r in self.runs)])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [
            {
                "metric": METRIC_LABELS[m],
                "values": {r: self.bundles[r][m] for r in self.runs},
                "best": sorted(self.best_runs(m)),
            }
            for m in self.metrics
        ]
        return json.dumps({"runs": self.runs, "rows": rows}, indent=2) + "\n"

    def render(self, fmt: str = "markdown") -> str:
        if fmt == "markdown":
            return self.to_markdown()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json()
        raise ValueError(f"unknown format {fmt!r}")
