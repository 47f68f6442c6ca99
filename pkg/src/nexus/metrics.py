"""Forecast accuracy metrics and report assembly.

Metric conventions
------------------
MAPE  mean(|actual - predicted| / |actual|), stored as a fraction (0.05 =
      5% average error), never as a percent.  Actuals with magnitude below
      ``NEAR_ZERO_EPS`` are a hard error rather than being smoothed away:
      the target domains (prices, inventory counts) are strictly positive,
      so a near-zero actual signals corrupt data, not a small denominator.

RMSE  sqrt(mean squared residual): same units as the target, penalizes
      large misses.

Aggregation is *pooled*: a report cell's MAPE/RMSE are computed over the
union of all (actual, predicted) pairs that fall into the cell, not as a
mean of per-task metrics.  Average rows weight each horizon's cell by its
sample count.  Display rounding: 4 decimals for MAPE/RMSE, 1 decimal for
improvement percentages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import EmptyInput, LengthMismatch, NearZeroActual, NonPositiveBaseline

NEAR_ZERO_EPS = 1e-9


def mape(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Mean absolute percentage error as a fraction."""
    if len(actual) != len(predicted) or not actual:
        raise LengthMismatch(f"got lengths {len(actual)} and {len(predicted)}")
    terms = []
    for a, p in zip(actual, predicted):
        if abs(a) < NEAR_ZERO_EPS:
            raise NearZeroActual(f"actual value {a!r} below {NEAR_ZERO_EPS}")
        terms.append(abs(a - p) / abs(a))
    return math.fsum(terms) / len(terms)


def rmse(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Root mean square error."""
    if len(actual) != len(predicted) or not actual:
        raise LengthMismatch(f"got lengths {len(actual)} and {len(predicted)}")
    sq = math.fsum((a - p) ** 2 for a, p in zip(actual, predicted))
    return math.sqrt(sq / len(actual))


def relative_improvement(baseline: float, treatment: float) -> float:
    """(baseline - treatment) / baseline; positive means treatment is better."""
    if baseline <= 0:
        raise NonPositiveBaseline(f"baseline must be > 0, got {baseline!r}")
    return (baseline - treatment) / baseline


def format_improvement(fraction: float) -> str:
    """Render an improvement fraction as a 1-decimal percent arrow label."""
    pct = fraction * 100.0
    arrow = "↓" if pct >= 0 else "↑"
    return f"{arrow}{abs(pct):.1f}%"


@dataclass(frozen=True)
class SampleKey:
    """Report cell coordinates for one evaluated forecast."""

    dataset: str
    setting: str
    horizon: int
    method: str


@dataclass(frozen=True)
class CellStats:
    mape: float
    rmse: float
    sample_count: int

    def __post_init__(self):
        if self.mape < 0 or self.rmse < 0:
            raise ValueError("metrics must be nonnegative")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


AVERAGE_ROW = "average"


class MetricReport:
    """Pooled MAPE/RMSE per (dataset, setting, horizon, method) plus a
    sample-count-weighted Average row per (dataset, setting, method)."""

    def __init__(self, cells: dict[SampleKey, CellStats]):
        self.cells = dict(cells)

    def get(self, dataset: str, setting: str, horizon: int, method: str) -> CellStats:
        return self.cells[SampleKey(dataset, setting, horizon, method)]

    def methods(self, dataset: str, setting: str) -> list[str]:
        seen: list[str] = []
        for k in self.cells:
            if (k.dataset, k.setting) == (dataset, setting) and k.method not in seen:
                seen.append(k.method)
        return seen

    def horizons(self, dataset: str, setting: str) -> list[int]:
        hs = {k.horizon for k in self.cells if (k.dataset, k.setting) == (dataset, setting)}
        return sorted(hs)

    def groups(self) -> list[tuple[str, str]]:
        seen: list[tuple[str, str]] = []
        for k in self.cells:
            g = (k.dataset, k.setting)
            if g not in seen:
                seen.append(g)
        return seen

    def average(self, dataset: str, setting: str, method: str) -> CellStats:
        """Sample-count-weighted mean of the method's per-horizon cells."""
        rows = [
            s for k, s in self.cells.items()
            if (k.dataset, k.setting, k.method) == (dataset, setting, method)
        ]
        if not rows:
            raise EmptyInput(f"no cells for {method!r} in {dataset}/{setting}")
        total = sum(r.sample_count for r in rows)
        w_mape = math.fsum(r.mape * r.sample_count for r in rows) / total
        w_rmse = math.fsum(r.rmse * r.sample_count for r in rows) / total
        return CellStats(w_mape, w_rmse, total)

    def to_json(self) -> str:
        payload = {}
        for k, s in sorted(
            self.cells.items(),
            key=lambda kv: (kv[0].dataset, kv[0].setting, kv[0].horizon, kv[0].method),
        ):
            payload.setdefault(k.dataset, {}).setdefault(k.setting, {}).setdefault(
                str(k.horizon), {}
            )[k.method] = {
                "mape": round(s.mape, 4),
                "rmse": round(s.rmse, 4),
                "sample_count": s.sample_count,
            }
        for dataset, setting in self.groups():
            for method in self.methods(dataset, setting):
                avg = self.average(dataset, setting, method)
                payload[dataset][setting].setdefault(AVERAGE_ROW, {})[method] = {
                    "mape": round(avg.mape, 4),
                    "rmse": round(avg.rmse, 4),
                    "sample_count": avg.sample_count,
                }
        return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_markdown(self, baseline_method: str | None = None) -> str:
        """One table per (dataset, setting): horizon rows, MAPE/RMSE columns per
        method, an Average row, and improvement subscripts vs the baseline
        method when one is named."""
        out: list[str] = []
        for dataset, setting in self.groups():
            methods = self.methods(dataset, setting)
            horizons = self.horizons(dataset, setting)
            out.append(f"## {dataset} - {setting}")
            out.append("")
            header = ["Horizon"]
            for m in methods:
                header += [f"{m} MAPE", f"{m} RMSE"]
            out.append("| " + " | ".join(header) + " |")
            out.append("|" + "---|" * len(header))
            labels = _horizon_labels(horizons)
            for h in horizons:
                row = [labels[h]]
                for m in methods:
                    key = SampleKey(dataset, setting, h, m)
                    if key in self.cells:
                        s = self.cells[key]
                        row += [f"{s.mape:.4f}", f"{s.rmse:.4f}"]
                    else:
                        row += ["–", "–"]
                out.append("| " + " | ".join(row) + " |")
            avg_row = ["**Average**"]
            base_avg = None
            if baseline_method is not None and baseline_method in methods:
                base_avg = self.average(dataset, setting, baseline_method)
            for m in methods:
                avg = self.average(dataset, setting, m)
                mape_txt, rmse_txt = f"{avg.mape:.4f}", f"{avg.rmse:.4f}"
                if base_avg is not None and m != baseline_method:
                    mape_txt += f" ({format_improvement(relative_improvement(base_avg.mape, avg.mape))})"
                    rmse_txt += f" ({format_improvement(relative_improvement(base_avg.rmse, avg.rmse))})"
                avg_row += [mape_txt, rmse_txt]
            out.append("| " + " | ".join(avg_row) + " |")
            out.append("")
        return "\n".join(out)


def _horizon_labels(horizons: list[int]) -> dict[int, str]:
    names = ["Short", "Medium", "Long"]
    if len(horizons) == 3:
        return {h: f"{names[i]} (h={h})" for i, h in enumerate(sorted(horizons))}
    return {h: f"h={h}" for h in horizons}


def aggregate(
    results: Iterable[tuple[SampleKey, Sequence[float], Sequence[float]]],
) -> MetricReport:
    """Pool per-task (actual, predicted) pairs into report cells.

    ``sample_count`` counts tasks, not individual forecast steps; the pooled
    metrics are computed over every step of every task in the cell.
    """
    pooled: dict[SampleKey, tuple[list[float], list[float], int]] = {}
    for key, actual, predicted in results:
        if len(actual) != len(predicted) or not actual:
            raise LengthMismatch(
                f"{key}: got lengths {len(actual)} and {len(predicted)}"
            )
        acc = pooled.setdefault(key, ([], [], 0))
        acc[0].extend(actual)
        acc[1].extend(predicted)
        pooled[key] = (acc[0], acc[1], acc[2] + 1)
    if not pooled:
        raise EmptyInput("no results to aggregate")
    cells = {
        key: CellStats(mape(a, p), rmse(a, p), n)
        for key, (a, p, n) in pooled.items()
    }
    return MetricReport(cells)
