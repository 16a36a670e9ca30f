"""Rank correlation, agreement and multiple-testing statistics.

Also holds the ratings tables and the two intensity normalisations used
before segmentation and WMH thresholding.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats as sps

from .volume_io import ImageVolume

__all__ = [
    "ALTERNATIVES",
    "RATING_LEVELS",
    "REGIONAL_MEASURES",
    "GLOBAL_MEASURES",
    "CorrelationResult",
    "ICCResult",
    "BlandAltmanResult",
    "RankSumResult",
    "GroupComparison",
    "RatingsTable",
    "mid_ranks",
    "correlation_pvalue",
    "spearman",
    "partial_spearman",
    "icc_average_fixed_raters",
    "bland_altman",
    "bh_fdr",
    "rank_sum_test",
    "significance_stars",
    "pairwise_group_tests",
    "standardize_minmax",
    "rescale_0_1000",
    "load_region_mapping",
    "read_region_mapping",
]

ALTERNATIVES = ("less", "greater", "two-sided")
RATING_LEVELS = (0.0, 0.5, 1.0, 2.0, 3.0)
REGIONAL_MEASURES = ("ptau", "abeta", "tdp43", "asyn", "neuronloss")
GLOBAL_RANGES = {"a_score": 3, "b_score": 3, "c_score": 3, "braak06": 6}
GLOBAL_MEASURES = tuple(GLOBAL_RANGES)

EXACT_SPEARMAN_MAX_N = 10
EXACT_RANKSUM_MAX_N = 12


# --------------------------------------------------------------------------
# result types


@dataclass
class CorrelationResult:
    rho: float
    p: float
    n: int
    alternative: str
    partialed_on: Optional[str] = None
    bh_rejected: Optional[bool] = None
    flag: str = ""


@dataclass
class ICCResult:
    icc: float
    n_targets: int
    k_raters: int
    model: str = "average fixed raters"


@dataclass
class BlandAltmanResult:
    mean_difference: float
    sd_difference: float
    loa_low: float
    loa_high: float
    n: int = 0


@dataclass
class RankSumResult:
    u_statistic: float
    p: float
    method: str


@dataclass
class GroupComparison:
    group_a: str
    group_b: str
    n_a: int
    n_b: int
    u_statistic: float
    p: float
    bh_rejected: bool = False
    stars: str = "ns"


# --------------------------------------------------------------------------
# helpers


def _check_alternative(alternative):
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")


def _as_float(values) -> np.ndarray:
    return np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64)


def _complete_cases(*series) -> List[np.ndarray]:
    arrs = [_as_float(s) for s in series]
    n = len(arrs[0])
    if any(len(a) != n for a in arrs):
        raise ValueError("series must have equal lengths")
    keep = np.ones(n, dtype=bool)
    for a in arrs:
        keep &= np.isfinite(a)
    return [a[keep] for a in arrs]


def mid_ranks(values) -> np.ndarray:
    """1-based ranks with ties given the average of their positions."""
    return sps.rankdata(np.asarray(values, dtype=np.float64), method="average")


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    den = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if den == 0.0:
        raise ValueError("constant input: correlation undefined")
    return float(min(1.0, max(-1.0, np.dot(da, db) / den)))


def _t_pvalue(r: float, df: int, alternative: str) -> float:
    if abs(r) >= 1.0:
        if alternative == "two-sided":
            return 0.0
        matching = (r < 0) == (alternative == "less")
        return 0.0 if matching else 1.0
    t = r * math.sqrt(df / (1.0 - r * r))
    if alternative == "less":
        return float(sps.t.cdf(t, df))
    if alternative == "greater":
        return float(sps.t.sf(t, df))
    return float(min(1.0, 2.0 * sps.t.sf(abs(t), df)))


def correlation_pvalue(r: float, n: int, alternative: str = "two-sided", n_covariates: int = 0) -> float:
    """p-value of a (partial) rank correlation ``r`` from ``n`` cases.

    The t statistic ``r * sqrt(df / (1 - r^2))`` on ``df = n - 2 -
    n_covariates`` degrees of freedom, as used by :func:`spearman` and
    :func:`partial_spearman`.
    """
    _check_alternative(alternative)
    df = n - 2 - n_covariates
    if df < 1:
        raise ValueError("not enough cases for the requested covariates")
    if not -1.0 <= r <= 1.0:
        raise ValueError("correlation must lie in [-1, 1]")
    return _t_pvalue(float(r), df, alternative)


def _permutation_pvalue(rx, ry, rho, alternative):
    """Exact p over all permutations of ``ry`` (small n only)."""
    n = len(rx)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    den = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int8)
    null = (dy[perms] @ dx) / den
    eps = 1e-12
    if alternative == "less":
        hits = np.count_nonzero(null <= rho + eps)
    elif alternative == "greater":
        hits = np.count_nonzero(null >= rho - eps)
    else:
        hits = np.count_nonzero(np.abs(null) >= abs(rho) - eps)
    return hits / len(perms)


# --------------------------------------------------------------------------
# correlation


def spearman(x, y, alternative: str = "two-sided", method: str = "t") -> CorrelationResult:
    """Spearman rank correlation with a t-approximation p-value.

    Pairs with a missing value in either series are dropped. Ties get mid
    ranks. ``method="exact"`` uses the full permutation distribution and is
    limited to n <= 10.

    Raises
    ------
    ValueError
        Fewer than 3 complete pairs, or a series constant after ranking.
    """
    _check_alternative(alternative)
    xs, ys = _complete_cases(x, y)
    n = len(xs)
    if n < 3:
        raise ValueError(f"spearman needs at least 3 complete pairs, got {n}")
    rx, ry = mid_ranks(xs), mid_ranks(ys)
    rho = _pearson(rx, ry)
    if method == "t":
        p = _t_pvalue(rho, n - 2, alternative)
    elif method == "exact":
        if n > EXACT_SPEARMAN_MAX_N:
            raise ValueError(f"exact permutation p limited to n <= {EXACT_SPEARMAN_MAX_N}")
        p = _permutation_pvalue(rx, ry, rho, alternative)
    else:
        raise ValueError(f"unknown method {method!r}")
    return CorrelationResult(rho, p, n, alternative)


def partial_spearman(
    x, y, covariate, alternative: str = "two-sided", covariate_name: str = "covariate"
) -> CorrelationResult:
    """Spearman correlation of x and y controlling for one covariate.

    First-order partial correlation of the mid-rank series, tested with a t
    statistic on n - 3 degrees of freedom. A constant covariate falls back
    to plain :func:`spearman` and sets ``flag="constant-covariate"``.
    """
    _check_alternative(alternative)
    xs, ys, zs = _complete_cases(x, y, covariate)
    n = len(xs)
    if n < 4:
        raise ValueError(f"partial spearman needs at least 4 complete cases, got {n}")
    if np.all(zs == zs[0]):
        warnings.warn("constant covariate; reporting plain Spearman correlation")
        res = spearman(xs, ys, alternative)
        res.flag = "constant-covariate"
        return res
    rx, ry, rz = mid_ranks(xs), mid_ranks(ys), mid_ranks(zs)
    r_xy = _pearson(rx, ry)
    r_xz = _pearson(rx, rz)
    r_yz = _pearson(ry, rz)
    if abs(r_xz) >= 1.0 or abs(r_yz) >= 1.0:
        raise ValueError("covariate is collinear with a variable; partial correlation undefined")
    r = (r_xy - r_xz * r_yz) / math.sqrt((1.0 - r_xz * r_xz) * (1.0 - r_yz * r_yz))
    r = min(1.0, max(-1.0, r))
    return CorrelationResult(r, _t_pvalue(r, n - 3, alternative), n, alternative, covariate_name)


# --------------------------------------------------------------------------
# agreement


def icc_average_fixed_raters(measurements) -> ICCResult:
    """Two-way, consistency, average-measures ICC, i.e. ICC(3,k).

    ``(MS_rows - MS_error) / MS_rows`` from the two-way ANOVA without
    interaction. Sums of squares are accumulated in exact rational
    arithmetic, so a constant added to one rater's column cancels exactly.
    """
    m = np.asarray(measurements, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("measurements must be an n_targets x k_raters matrix")
    n, k = m.shape
    if n < 2 or k < 2:
        raise ValueError("ICC needs at least 2 targets and 2 raters")
    if not np.all(np.isfinite(m)):
        raise ValueError("ICC does not accept missing cells")
    x = [[Fraction(float(v)) for v in row] for row in m]
    grand = sum(sum(row) for row in x) / (n * k)
    row_means = [sum(row) / k for row in x]
    col_means = [sum(x[i][j] for i in range(n)) / n for j in range(k)]
    ss_rows = k * sum((r - grand) ** 2 for r in row_means)
    ss_err = sum(
        (x[i][j] - row_means[i] - col_means[j] + grand) ** 2 for i in range(n) for j in range(k)
    )
    ms_rows = ss_rows / (n - 1)
    ms_err = ss_err / ((n - 1) * (k - 1))
    if ms_rows == 0:
        raise ValueError("ICC undefined: zero between-target variance")
    return ICCResult(float((ms_rows - ms_err) / ms_rows), n, k)


def bland_altman(a, b) -> BlandAltmanResult:
    """Mean difference ``a - b``, its sample SD and the 95% limits of agreement."""
    xa, xb = _complete_cases(a, b)
    n = len(xa)
    if n < 2:
        raise ValueError(f"Bland-Altman needs at least 2 complete pairs, got {n}")
    d = xa - xb
    mean = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    return BlandAltmanResult(mean, sd, mean - 1.96 * sd, mean + 1.96 * sd, n)


# --------------------------------------------------------------------------
# multiple testing and group comparisons


def bh_fdr(p_values, q: float = 0.05) -> List[bool]:
    """Benjamini-Hochberg step-up rejections, in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    m = p.size
    if m == 0:
        raise ValueError("no p-values given")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="stable")
    thresh = np.arange(1, m + 1) * q / m
    passed = np.nonzero(p[order] <= thresh)[0]
    reject = np.zeros(m, dtype=bool)
    if passed.size:
        reject[order[: passed[-1] + 1]] = True
    return reject.tolist()


def _u_counts(n_a: int, n_b: int) -> List[int]:
    """Number of orderings giving each U = 0..n_a*n_b, assuming no ties."""
    # f(u; m, n) = f(u - n; m - 1, n) + f(u; m, n - 1), built up over m
    prev = [[1] for _ in range(n_b + 1)]  # m = 0: only U = 0
    for m in range(1, n_a + 1):
        cur = [[1]]  # n = 0
        for n in range(1, n_b + 1):
            row = [0] * (m * n + 1)
            for u, c in enumerate(prev[n]):
                row[u + n] += c
            for u, c in enumerate(cur[n - 1]):
                row[u] += c
            cur.append(row)
        prev = cur
    return prev[n_b]


def rank_sum_test(group_a, group_b) -> RankSumResult:
    """Two-sided Mann-Whitney U test; U is reported for ``group_a``.

    Exact null distribution when the pooled size is at most 12 with no
    ties, otherwise the normal approximation with tie-corrected variance
    and continuity correction.
    """
    a = _as_float(group_a)
    b = _as_float(group_b)
    a, b = a[np.isfinite(a)], b[np.isfinite(b)]
    n_a, n_b = a.size, b.size
    if n_a == 0 or n_b == 0:
        raise ValueError("empty group")
    pooled = np.concatenate([a, b])
    ranks = mid_ranks(pooled)
    u = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    n = n_a + n_b
    _, tie_counts = np.unique(pooled, return_counts=True)
    ties = bool(np.any(tie_counts > 1))
    if n <= EXACT_RANKSUM_MAX_N and not ties:
        counts = _u_counts(n_a, n_b)
        ui = int(round(u))
        c_le = sum(counts[: ui + 1])
        c_ge = sum(counts[ui:])
        total = math.comb(n, n_a)
        return RankSumResult(u, min(1.0, 2.0 * min(c_le, c_ge) / total), "exact")
    mu = n_a * n_b / 2.0
    tie_term = float(np.sum(tie_counts.astype(float) ** 3 - tie_counts)) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return RankSumResult(u, 1.0, "normal")
    z = (abs(u - mu) - 0.5) / math.sqrt(var)
    p = 1.0 if z <= 0 else min(1.0, 2.0 * float(sps.norm.sf(z)))
    return RankSumResult(u, p, "normal")


def significance_stars(p: float) -> str:
    """Star code: * for p <= 0.05, ** <= 0.01, *** <= 0.001, **** <= 0.0001."""
    if p <= 0.0001:
        return "****"
    if p <= 0.001:
        return "***"
    if p <= 0.01:
        return "**"
    if p <= 0.05:
        return "*"
    return "ns"


def pairwise_group_tests(groups: Mapping[str, Sequence[float]], q: float = 0.05) -> List[GroupComparison]:
    """All pairwise rank-sum tests between groups, BH-corrected across the pairs.

    Pairs whose groups have fewer than two values are skipped. Stars are
    only assigned to comparisons that survive the correction.
    """
    names = list(groups)
    out = []
    for ga, gb in itertools.combinations(names, 2):
        va = [v for v in groups[ga] if v is not None and np.isfinite(v)]
        vb = [v for v in groups[gb] if v is not None and np.isfinite(v)]
        if len(va) < 2 or len(vb) < 2:
            continue
        res = rank_sum_test(va, vb)
        out.append(GroupComparison(ga, gb, len(va), len(vb), res.u_statistic, res.p))
    if out:
        for comp, rej in zip(out, bh_fdr([c.p for c in out], q)):
            comp.bh_rejected = rej
            comp.stars = significance_stars(comp.p) if rej else "ns"
    return out


# --------------------------------------------------------------------------
# intensity normalisation


def _values(volume) -> Tuple[np.ndarray, Optional[ImageVolume]]:
    if isinstance(volume, ImageVolume):
        return np.asarray(volume.data, dtype=np.float64), volume
    return np.asarray(volume, dtype=np.float64), None


def _minmax(x: np.ndarray, top: float) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise ValueError("degenerate intensity range")
    return (x - lo) / (hi - lo) * top


def standardize_minmax(volume):
    """Z-score (population SD) then rescale linearly onto [0, 1]."""
    x, src = _values(volume)
    sd = float(x.std())
    if not sd > 0:
        raise ValueError("degenerate intensity range")
    out = _minmax((x - x.mean()) / sd, 1.0)
    return ImageVolume(src.grid, out) if src is not None else out


def rescale_0_1000(volume):
    """Linear min-max rescale onto [0, 1000]."""
    x, src = _values(volume)
    out = _minmax(x, 1000.0)
    return ImageVolume(src.grid, out) if src is not None else out


# --------------------------------------------------------------------------
# ratings tables


def _parse_rating(text: str, where: str) -> Optional[float]:
    text = text.strip()
    if text == "" or text.upper() in ("NA", "NAN"):
        return None
    v = float(text)
    if v not in RATING_LEVELS:
        raise ValueError(f"{where}: rating {text!r} not in {RATING_LEVELS}")
    return v


@dataclass
class RatingsTable:
    """Regional semi-quantitative ratings and per-subject global stages.

    ``regional[(subject, region)][measure]`` holds a value from
    ``RATING_LEVELS`` or None; ``globals[subject][stage]`` an integer stage
    or None.
    """

    regional: Dict[Tuple[str, str], Dict[str, Optional[float]]] = field(default_factory=dict)
    globals: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)

    def validate(self):
        for key, row in self.regional.items():
            for m, v in row.items():
                if v is not None and v not in RATING_LEVELS:
                    raise ValueError(f"{key}/{m}: rating {v} not in {RATING_LEVELS}")
        for subj, row in self.globals.items():
            for m, v in row.items():
                top = GLOBAL_RANGES[m]
                if v is not None and (v != int(v) or not 0 <= v <= top):
                    raise ValueError(f"{subj}/{m}: stage {v} outside 0..{top}")

    def regional_value(self, subject: str, region: str, measure: str) -> Optional[float]:
        return self.regional.get((subject, region), {}).get(measure)

    def global_value(self, subject: str, measure: str) -> Optional[float]:
        return self.globals.get(subject, {}).get(measure)

    @classmethod
    def read(cls, ratings_path=None, globals_path=None) -> "RatingsTable":
        """Load ``subject,region,ptau,...`` and ``subject,a_score,...`` CSVs (blank = missing)."""
        table = cls()
        if ratings_path is not None:
            with open(ratings_path, newline="") as fh:
                reader = csv.DictReader(fh)
                need = {"subject", "region", *REGIONAL_MEASURES}
                if reader.fieldnames is None or not need <= set(reader.fieldnames):
                    raise ValueError(f"{ratings_path}: ratings CSV needs columns {sorted(need)}")
                for i, row in enumerate(reader, start=2):
                    key = (row["subject"].strip(), row["region"].strip())
                    table.regional[key] = {
                        m: _parse_rating(row[m] or "", f"{ratings_path}:{i}") for m in REGIONAL_MEASURES
                    }
        if globals_path is not None:
            with open(globals_path, newline="") as fh:
                reader = csv.DictReader(fh)
                need = {"subject", *GLOBAL_MEASURES}
                if reader.fieldnames is None or not need <= set(reader.fieldnames):
                    raise ValueError(f"{globals_path}: globals CSV needs columns {sorted(need)}")
                for row in reader:
                    table.globals[row["subject"].strip()] = {
                        m: (None if not (row[m] or "").strip() else float(row[m])) for m in GLOBAL_MEASURES
                    }
        table.validate()
        return table


def read_region_mapping(source) -> Dict[str, Tuple[str, bool]]:
    """Parse a ``roi,pathology_region,exact`` CSV into ``{roi: (region, exact)}``."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    need = {"roi", "pathology_region", "exact"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ValueError(f"region mapping needs columns {sorted(need)}")
    mapping = {}
    for row in reader:
        mapping[row["roi"].strip()] = (
            row["pathology_region"].strip(),
            row["exact"].strip().upper() in ("Y", "YES", "TRUE", "1"),
        )
    return mapping


def load_region_mapping() -> Dict[str, Tuple[str, bool]]:
    """The packaged ROI to pathology-sampling-region table (16 cortical landmarks)."""
    with resources.files("cortimorph").joinpath("data/region_mapping.csv").open("r") as fh:
        return read_region_mapping(fh)
