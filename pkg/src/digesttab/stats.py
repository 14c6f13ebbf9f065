"""Agreement statistics, bootstrap intervals, rank tests, and the
matched-vs-unmatched rating report.

Everything here is a pure function of its inputs; randomness is confined
to seeded bootstrap resampling so reports are reproducible.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import MissingAlignmentError, TooFewSamplesError, ValidationError

EXACT_MANN_WHITNEY_MAX_N = 20  # combined sample size above which the normal approximation kicks in


# -- bootstrap -------------------------------------------------------------


def bootstrap_ci(
    samples: Sequence[float],
    statistic: Callable[[np.ndarray], float] | None = None,
    iterations: int = 2000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap (2.5/97.5) of ``statistic`` over ``samples``.

    Resampling draws ``rng.integers(0, n, size=n)`` once per iteration from
    ``np.random.default_rng(seed)``; callers relying on replay determinism
    depend on that exact convention.
    """
    data = np.asarray(list(samples), dtype=float)
    if data.size < 2:
        raise TooFewSamplesError("bootstrap needs at least 2 samples")
    stat = statistic if statistic is not None else (lambda a: float(np.mean(a)))
    rng = np.random.default_rng(seed)
    n = data.size
    boot = np.empty(iterations, dtype=float)
    for i in range(iterations):
        idx = rng.integers(0, n, size=n)
        boot[i] = stat(data[idx])
    low, high = np.quantile(boot, [0.025, 0.975])
    return float(low), float(high)


# -- Cohen's kappa ----------------------------------------------------------


def cohen_kappa(labels_a: Sequence[Any], labels_b: Sequence[Any], *, with_flag: bool = False):
    """Chance-corrected agreement between two equal-length label lists.

    When both raters assign one identical constant label, chance agreement
    is 1 and the ratio is undefined; that degenerate case is scored 1.0
    and flagged.
    """
    if len(labels_a) != len(labels_b):
        raise ValidationError("label lists must have equal length")
    if not labels_a:
        raise ValidationError("label lists must be non-empty")
    n = len(labels_a)
    p_o = sum(a == b for a, b in zip(labels_a, labels_b)) / n
    freq_a = Counter(labels_a)
    freq_b = Counter(labels_b)
    p_e = sum(freq_a[label] * freq_b.get(label, 0) for label in freq_a) / (n * n)
    if p_e >= 1.0 - 1e-15:
        return (1.0, True) if with_flag else 1.0
    kappa = (p_o - p_e) / (1.0 - p_e)
    return (kappa, False) if with_flag else kappa


# -- Krippendorff's alpha ----------------------------------------------------


def _units_from_ratings(ratings: Any) -> dict[Any, list[float]]:
    """Accepts rater -> {item: value} mappings or a rater-by-item matrix
    with None for missing entries; returns item -> values with >= 2 ratings."""
    units: dict[Any, list[float]] = {}
    if isinstance(ratings, Mapping):
        rows: Iterable = ratings.values()
    else:
        rows = ratings
    n_raters = 0
    for row in rows:
        n_raters += 1
        if isinstance(row, Mapping):
            entries = row.items()
        else:
            entries = enumerate(row)
        for item, value in entries:
            if value is None:
                continue
            units.setdefault(item, []).append(float(value))
    if n_raters < 2:
        raise ValidationError("alpha needs at least 2 raters")
    pairable = {item: vals for item, vals in units.items() if len(vals) > 1}
    if not pairable:
        raise ValidationError("alpha needs at least one item rated by 2+ raters")
    return pairable


def krippendorff_alpha(ratings: Any, level: str = "ordinal", *, with_flag: bool = False):
    """Coincidence-matrix alpha with ordinal (default), interval, or
    nominal distances. Missing entries are handled natively; all-identical
    data has no expected disagreement and is scored 1.0 with a flag.
    """
    units = _units_from_ratings(ratings)
    values = sorted({v for vals in units.values() for v in vals})
    if len(values) == 1:
        return (1.0, True) if with_flag else 1.0
    index = {v: i for i, v in enumerate(values)}
    k = len(values)

    # ordered pairs within each unit, weighted by 1/(m_u - 1)
    coincidence = np.zeros((k, k), dtype=float)
    for vals in units.values():
        m_u = len(vals)
        for i, a in enumerate(vals):
            for j, b in enumerate(vals):
                if i == j:
                    continue
                coincidence[index[a], index[b]] += 1.0 / (m_u - 1)

    marginals = coincidence.sum(axis=1)
    n = marginals.sum()

    if level == "nominal":
        delta = 1.0 - np.eye(k)
    elif level == "interval":
        grid = np.asarray(values, dtype=float)
        delta = (grid[:, None] - grid[None, :]) ** 2
    elif level == "ordinal":
        delta = np.zeros((k, k), dtype=float)
        for c in range(k):
            for d in range(c + 1, k):
                span = marginals[c : d + 1].sum() - (marginals[c] + marginals[d]) / 2.0
                delta[c, d] = delta[d, c] = span**2
    else:
        raise ValidationError(f"unknown measurement level {level!r}")

    observed = float((coincidence * delta).sum()) / n
    expected = float((np.outer(marginals, marginals) * delta).sum()) / (n * (n - 1))
    if expected <= 0:
        return (1.0, True) if with_flag else 1.0
    alpha = 1.0 - observed / expected
    return (alpha, False) if with_flag else alpha


# -- Mann-Whitney U -----------------------------------------------------------


def _u_statistic(x: Sequence[float], y: Sequence[float]) -> float:
    u = 0.0
    for a in x:
        for b in y:
            if a > b:
                u += 1.0
            elif a == b:
                u += 0.5
    return u


def mann_whitney_u(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Rank-sum U of ``x`` against ``y`` with a two-sided p value.

    Small samples (combined n <= 20) are enumerated exactly over every
    assignment of the pooled values; larger samples use the
    tie-corrected normal approximation with continuity correction.
    """
    if not x or not y:
        raise ValidationError("both samples must be non-empty")
    n1, n2 = len(x), len(y)
    u = _u_statistic(x, y)
    total = n1 * n2

    if n1 + n2 <= EXACT_MANN_WHITNEY_MAX_N:
        pooled = list(x) + list(y)
        indices = range(len(pooled))
        u_lo = min(u, total - u)
        u_hi = max(u, total - u)
        count = 0
        hits = 0
        for chosen in combinations(indices, n1):
            chosen_set = set(chosen)
            xs = [pooled[i] for i in chosen]
            ys = [pooled[i] for i in indices if i not in chosen_set]
            u_perm = _u_statistic(xs, ys)
            count += 1
            if u_perm <= u_lo + 1e-12 or u_perm >= u_hi - 1e-12:
                hits += 1
        return u, min(1.0, hits / count)

    n = n1 + n2
    ties = Counter(list(x) + list(y))
    tie_term = sum(t**3 - t for t in ties.values())
    sigma_sq = (total / 12.0) * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma_sq <= 0:
        return u, 1.0
    mean = total / 2.0
    diff = u - mean
    if diff > 0:
        diff -= 0.5
    elif diff < 0:
        diff += 0.5
    z = diff / math.sqrt(sigma_sq)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return u, min(1.0, p)


# -- Likert ratings and the matched/unmatched report --------------------------


class RatingDimension(str, Enum):
    USEFUL = "useful"
    SPECIFIC = "specific"
    INSIGHTFUL = "insightful"


@dataclass(frozen=True)
class LikertRating:
    table_id: str
    aspect: str
    dimension: RatingDimension
    rater_id: str
    value: int
    matched_gold: bool | None = None

    def __post_init__(self):
        if self.value not in (1, 2, 3, 4, 5):
            raise ValidationError(f"Likert value must be 1..5, got {self.value}")


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    n: int
    ci95: tuple[float, float]


def summarize(values: Sequence[float], *, seed: int = 0, iterations: int = 2000) -> Summary:
    if not values:
        raise ValidationError("cannot summarize an empty sample")
    arr = np.asarray(list(values), dtype=float)
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size >= 2 else 0.0
    if arr.size >= 2:
        ci = bootstrap_ci(arr, iterations=iterations, seed=seed)
    else:
        ci = (mean, mean)
    return Summary(mean=mean, sd=sd, n=int(arr.size), ci95=ci)


@dataclass(frozen=True)
class GroupComparison:
    matched: Summary | None
    unmatched: Summary | None
    p_value: float | None


def matched_vs_unmatched_report(
    ratings: Sequence[LikertRating],
    alignments: Mapping[tuple[str, str], bool],
    conditions: Mapping[str, str] | None = None,
    *,
    seed: int = 0,
) -> dict[str, dict[str, GroupComparison]]:
    """Group ratings by condition and dimension, split each group by
    whether the rated aspect matched a gold aspect, and attach a rank-test
    p value per cell. ``conditions`` maps table_id to a condition label;
    unlisted tables fall into "all".
    """
    if not ratings:
        raise ValidationError("no ratings supplied")
    grouped: dict[str, dict[RatingDimension, dict[bool, list[int]]]] = {}
    for rating in ratings:
        key = (rating.table_id, rating.aspect)
        if key in alignments:
            matched = alignments[key]
        elif rating.matched_gold is not None:
            matched = rating.matched_gold
        else:
            raise MissingAlignmentError(f"no alignment verdict for {key}")
        condition = (conditions or {}).get(rating.table_id, "all")
        cell = grouped.setdefault(condition, {}).setdefault(rating.dimension, {True: [], False: []})
        cell[matched].append(rating.value)

    report: dict[str, dict[str, GroupComparison]] = {}
    for condition, by_dimension in sorted(grouped.items()):
        report[condition] = {}
        for dimension in RatingDimension:
            if dimension not in by_dimension:
                continue
            values = by_dimension[dimension]
            matched_summary = summarize(values[True], seed=seed) if values[True] else None
            unmatched_summary = summarize(values[False], seed=seed) if values[False] else None
            p_value = None
            if values[True] and values[False]:
                _, p_value = mann_whitney_u(values[True], values[False])
            report[condition][dimension.value] = GroupComparison(
                matched=matched_summary, unmatched=unmatched_summary, p_value=p_value
            )
    return report


def render_matched_report_markdown(report: Mapping[str, Mapping[str, GroupComparison]]) -> str:
    conditions = list(report.keys())
    header = ["Dimension"]
    for condition in conditions:
        header += [f"{condition} M", f"{condition} NM", f"{condition} p"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    dimensions = sorted({d for cells in report.values() for d in cells})
    for dimension in dimensions:
        row = [dimension]
        for condition in conditions:
            cell = report[condition].get(dimension)
            if cell is None:
                row += ["n/a", "n/a", "n/a"]
                continue
            row.append(_fmt_summary(cell.matched))
            row.append(_fmt_summary(cell.unmatched))
            row.append(f"{cell.p_value:.3f}" if cell.p_value is not None else "n/a")
        lines.append("| " + " | ".join(row) + " |")
    counts = ["# Samples"]
    for condition in conditions:
        cells = report[condition]
        n_m = sum(c.matched.n for c in cells.values() if c.matched)
        n_nm = sum(c.unmatched.n for c in cells.values() if c.unmatched)
        counts += [str(n_m), str(n_nm), ""]
    lines.append("| " + " | ".join(counts) + " |")
    return "\n".join(lines) + "\n"


def _fmt_summary(summary: Summary | None) -> str:
    if summary is None:
        return "n/a"
    return f"{summary.mean:.2f} ({summary.sd:.2f})"


def report_to_json(report: Mapping[str, Mapping[str, GroupComparison]]) -> dict:
    out: dict = {}
    for condition, cells in report.items():
        out[condition] = {}
        for dimension, cell in cells.items():
            out[condition][dimension] = {
                "matched": _summary_json(cell.matched),
                "unmatched": _summary_json(cell.unmatched),
                "p_value": cell.p_value,
            }
    return out


def _summary_json(summary: Summary | None) -> dict | None:
    if summary is None:
        return None
    return {
        "mean": summary.mean,
        "sd": summary.sd,
        "n": summary.n,
        "ci95": [summary.ci95[0], summary.ci95[1]],
    }
