"""Brute-force reference implementations used by the tests.

Each one follows the textbook definition directly, with no shortcuts
shared with the package code.
"""
import itertools
import math
from fractions import Fraction

import numpy as np


def edt_brute(mask, spacing):
    """Distance from every foreground voxel to every background voxel, minimised."""
    mask = np.asarray(mask, dtype=bool)
    fg = np.argwhere(mask)
    bg = np.argwhere(~mask)
    out = np.zeros(mask.shape)
    if len(bg) == 0:
        out[mask] = np.inf
        return out
    for v in fg:
        d = (bg - v).astype(float)
        t0 = d[:, 0] * spacing[0]
        t1 = d[:, 1] * spacing[1]
        t2 = d[:, 2] * spacing[2]
        out[tuple(v)] = np.sqrt(np.min((t0 * t0 + t1 * t1) + t2 * t2))
    return out


def boundary_brute(mask):
    """Foreground voxels with a face neighbour outside the mask or off the grid."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    for v in np.argwhere(mask):
        for ax in range(3):
            for step in (-1, 1):
                w = v.copy()
                w[ax] += step
                if w[ax] < 0 or w[ax] >= mask.shape[ax] or not mask[tuple(w)]:
                    out[tuple(v)] = True
    return out


def dice_brute(a, b):
    sa = {tuple(v) for v in np.argwhere(a)}
    sb = {tuple(v) for v in np.argwhere(b)}
    if not sa and not sb:
        return 1.0
    return 2.0 * len(sa & sb) / (len(sa) + len(sb))


def hd95_brute(a, b, spacing):
    """All-pairs boundary distances, 95th percentile each way, then the max."""
    if not np.any(a) or not np.any(b):
        return math.nan
    pa = np.argwhere(boundary_brute(a))
    pb = np.argwhere(boundary_brute(b))

    def directed(src, dst):
        out = []
        for v in src:
            d = (dst - v).astype(float)
            t0 = d[:, 0] * spacing[0]
            t1 = d[:, 1] * spacing[1]
            t2 = d[:, 2] * spacing[2]
            out.append(np.sqrt(np.min((t0 * t0 + t1 * t1) + t2 * t2)))
        return np.array(out)

    return float(max(np.percentile(directed(pa, pb), 95), np.percentile(directed(pb, pa), 95)))


def flood_fill_components(mask, connectivity=26):
    """Component sizes by breadth-first search, largest first."""
    mask = np.asarray(mask, dtype=bool)
    if connectivity == 6:
        steps = [s for s in itertools.product((-1, 0, 1), repeat=3) if sum(map(abs, s)) == 1]
    elif connectivity == 18:
        steps = [s for s in itertools.product((-1, 0, 1), repeat=3) if 0 < sum(map(abs, s)) <= 2]
    else:
        steps = [s for s in itertools.product((-1, 0, 1), repeat=3) if any(s)]
    seen = np.zeros_like(mask)
    sizes = []
    for start in map(tuple, np.argwhere(mask)):
        if seen[start]:
            continue
        seen[start] = True
        queue = [start]
        n = 0
        while queue:
            v = queue.pop()
            n += 1
            for s in steps:
                w = (v[0] + s[0], v[1] + s[1], v[2] + s[2])
                if all(0 <= w[i] < mask.shape[i] for i in range(3)) and mask[w] and not seen[w]:
                    seen[w] = True
                    queue.append(w)
        sizes.append(n)
    return sorted(sizes, reverse=True)


# statistics -----------------------------------------------------------------


def midranks_brute(x):
    """Rank = 1 + #smaller + (#equal - 1) / 2."""
    x = list(x)
    return [1 + sum(v < xi for v in x) + (sum(v == xi for v in x) - 1) / 2 for xi in x]


def pearson_formula(a, b):
    n = len(a)
    ma = math.fsum(a) / n
    mb = math.fsum(b) / n
    sab = math.fsum((ai - ma) * (bi - mb) for ai, bi in zip(a, b))
    saa = math.fsum((ai - ma) ** 2 for ai in a)
    sbb = math.fsum((bi - mb) ** 2 for bi in b)
    return sab / math.sqrt(saa * sbb)


def spearman_formula(x, y):
    return pearson_formula(midranks_brute(x), midranks_brute(y))


def partial_formula(rxy, rxz, ryz):
    return (rxy - rxz * ryz) / math.sqrt((1 - rxz**2) * (1 - ryz**2))


def icc_formula(m):
    """Average-measures consistency ICC from the two-way ANOVA mean squares."""
    m = [[Fraction(v) for v in row] for row in m]
    n, k = len(m), len(m[0])
    grand = sum(sum(r) for r in m) / (n * k)
    row_means = [sum(r) / k for r in m]
    col_means = [sum(m[i][j] for i in range(n)) / n for j in range(k)]
    ss_rows = k * sum((rm - grand) ** 2 for rm in row_means)
    ss_cols = n * sum((cm - grand) ** 2 for cm in col_means)
    ss_total = sum((m[i][j] - grand) ** 2 for i in range(n) for j in range(k))
    ss_err = ss_total - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    return float((msr - mse) / msr)


def bland_altman_formula(a, b):
    d = [x - y for x, y in zip(a, b)]
    n = len(d)
    mean = math.fsum(d) / n
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in d) / (n - 1))
    return mean, sd, mean - 1.96 * sd, mean + 1.96 * sd


def bh_formula(p, q):
    """Reject H_(1..k) for the largest k with p_(k) <= k q / m."""
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    k_max = 0
    for rank, i in enumerate(order, start=1):
        if p[i] <= rank * q / m:
            k_max = rank
    rejected = [False] * m
    for rank, i in enumerate(order, start=1):
        if rank <= k_max:
            rejected[i] = True
    return rejected


def rank_sum_enumeration(a, b):
    """Two-sided exact p by enumerating every split of the pooled sample."""
    pooled = list(a) + list(b)
    n, na = len(pooled), len(a)

    def u_of(idx):
        chosen = set(idx)
        xa = [pooled[i] for i in chosen]
        xb = [pooled[i] for i in range(n) if i not in chosen]
        return sum((x > y) + 0.5 * (x == y) for x in xa for y in xb)

    u_obs = sum((x > y) + 0.5 * (x == y) for x in a for y in b)
    us = [u_of(c) for c in itertools.combinations(range(n), na)]
    lo = sum(u <= u_obs for u in us) / len(us)
    hi = sum(u >= u_obs for u in us) / len(us)
    return u_obs, min(1.0, 2 * min(lo, hi))
