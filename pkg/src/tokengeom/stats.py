"""Cohort statistics: quartiles, two-sample Kolmogorov-Smirnov, token classes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

NUMERIC = "numeric"
NON_NUMERIC = "non-numeric"


@dataclass
class CohortSummary:
    label: str
    count: int
    q1: float
    q2: float
    q3: float
    values: np.ndarray

    def as_dict(self):
        return {"label": self.label, "count": self.count, "q1": self.q1, "q2": self.q2, "q3": self.q3}


def quartiles(values) -> tuple[float, float, float]:
    """Quartiles by linear interpolation between order statistics.

    The ``q`` quantile sits at sorted position ``h = (n - 1) q``.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("quartiles of an empty sample")
    if not np.isfinite(x).all():
        raise ValueError("quartiles require finite values")
    q = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    return float(q[0]), float(q[1]), float(q[2])


def kolmogorov_q(lam: float, tol: float = 1e-12) -> float:
    """Kolmogorov survival function ``2 sum (-1)^(k-1) exp(-2 k^2 lam^2)``."""
    if lam < 0.2:
        # the alternating series converges too slowly here; the value is 1 to
        # well below double precision for lam this small
        return 1.0
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < tol:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value.

    ``p = Q_KS((sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D)`` with effective size
    ``ne = na nb / (na + nb)``.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("KS test needs two non-empty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    ne = a.size * b.size / (a.size + b.size)
    sq = math.sqrt(ne)
    p = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
    # Q_KS reaches 0 only in the limit
    p = max(p, np.finfo(np.float64).tiny)
    return d, p


def classify_token(text: str) -> str:
    """``numeric`` if the token contains any Unicode decimal digit."""
    return NUMERIC if any(ch.isdecimal() for ch in text) else NON_NUMERIC


def cohort_masks(tokens: Sequence[str]) -> dict:
    classes = np.array([classify_token(t) for t in tokens])
    return {NON_NUMERIC: classes == NON_NUMERIC, NUMERIC: classes == NUMERIC}


def summarize(label: str, values) -> CohortSummary:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        nan = float("nan")
        return CohortSummary(label, 0, nan, nan, nan, v)
    return CohortSummary(label, int(v.size), *quartiles(v), v)


def summarize_cohorts(estimates, masks: dict, fields=("n_hat", "K_prime", "ric_hat")):
    """Quartile summaries per cohort and field, and KS tests on ``n_hat``.

    Degenerate estimates are left out of every summary.
    """
    cohorts = {}
    dims = {}
    for name, mask in masks.items():
        chosen = [e for e, m in zip(estimates, mask) if m and not e.degenerate]
        cohorts[name] = {f: summarize(name, [getattr(e, f) for e in chosen]) for f in fields}
        dims[name] = cohorts[name]["n_hat"].values
    ks = []
    for x, y in combinations(dims, 2):
        if dims[x].size and dims[y].size:
            d, p = ks_two_sample(dims[x], dims[y])
            ks.append({"a": x, "b": y, "field": "n_hat", "statistic": d, "p_value": p})
    return cohorts, ks
