"""Local dimension, volume scaling and Ricci scalar curvature from radius curves.

Near a point of an ``n``-dimensional stratum the ball volume behaves like::

    log v = log K + n log r - Ric / (6 (n + 2)) * r**2 + O(r**4)

Dimension and scaling come from an ordinary least-squares line through
``(log r_k, log k)`` over a band of neighbor ranks; the scaling is debiased
with the intercept's standard error; Ricci curvature is the band mean of
``6 (n + 2) / r**2 * (log K' + n log r - log v)``.

With ``method="corrected"`` (the default) the line is fitted to the volume
curve with the curvature term added back, and the curvature is solved
self-consistently.  A straight line fitted to a curved ``log v`` absorbs part
of the ``r**2`` term, which otherwise biases the residual (and hence Ricci)
towards zero; on an exactly quadratic curve the corrected fit returns the
true ``(n, K, Ric)``.  ``method="plain"`` is the single-pass variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core_geometry import Metric, NeighborRadii, PointCloud, radii_matrix

DEFAULT_K_LO = 50
DEFAULT_K_HI = 1000
METHODS = ("corrected", "plain")

FLAG_DEGENERATE = "degenerate"
FLAG_DUPLICATES = "duplicates"
FLAG_SINGULAR = "curvature-singular"
# |1 - mean(fit(r^2) / r^2)| below this amplifies noise in the corrected fit
# more than 20-fold; such anchors fall back to the plain fit
_SINGULAR_TOL = 0.05


class EstimationError(ValueError):
    """Raised when a curve or band cannot support a regression."""


@dataclass(frozen=True)
class Band:
    """Inclusive range of neighbor ranks ``[k_lo, k_hi]`` used in the fit."""

    k_lo: int
    k_hi: int

    def __post_init__(self):
        if self.k_lo < 1:
            raise EstimationError(f"k_lo must be >= 1, got {self.k_lo}")
        if self.k_hi <= self.k_lo:
            raise EstimationError(f"band needs k_lo < k_hi, got [{self.k_lo}, {self.k_hi}]")

    @classmethod
    def default(cls, p: int, k_lo: Optional[int] = None, k_hi: Optional[int] = None) -> "Band":
        """Default band for a cloud of ``p`` points.

        ``k_hi = min(p - 1, 1000)``; ``k_lo = 50`` unless the cloud is too
        small, in which case it shrinks to a tenth of the available ranks.
        """
        hi = min(p - 1, DEFAULT_K_HI) if k_hi is None else k_hi
        lo = min(DEFAULT_K_LO, max(1, (p - 1) // 10)) if k_lo is None else k_lo
        return cls(lo, hi)

    def as_dict(self):
        return {"k_lo": self.k_lo, "k_hi": self.k_hi}


@dataclass(frozen=True)
class VolumeCurve:
    """Log-log volume curve of one anchor.

    ``ranks`` keeps the neighbor rank of every row so a band can be applied
    after zero radii were dropped.
    """

    log_r: np.ndarray
    log_v: np.ndarray
    ranks: np.ndarray
    anchor: int = -1

    def __post_init__(self):
        log_r = np.asarray(self.log_r, dtype=np.float64)
        log_v = np.asarray(self.log_v, dtype=np.float64)
        ranks = np.asarray(self.ranks, dtype=np.int64)
        if not (log_r.shape == log_v.shape == ranks.shape) or log_r.ndim != 1:
            raise EstimationError("log_r, log_v and ranks must be equal-length vectors")
        if not (np.isfinite(log_r).all() and np.isfinite(log_v).all()):
            raise EstimationError("volume curve entries must be finite")
        object.__setattr__(self, "log_r", log_r)
        object.__setattr__(self, "log_v", log_v)
        object.__setattr__(self, "ranks", ranks)

    @classmethod
    def from_arrays(cls, log_r, log_v, anchor: int = -1) -> "VolumeCurve":
        log_r = np.asarray(log_r, dtype=np.float64)
        return cls(log_r, log_v, np.arange(1, log_r.size + 1), anchor)

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.log_r.tolist(), self.log_v.tolist()))

    def __len__(self):
        return self.log_r.size

    def in_band(self, band: Band) -> np.ndarray:
        return (self.ranks >= band.k_lo) & (self.ranks <= band.k_hi)

    def restrict(self, band: Band) -> "VolumeCurve":
        m = self.in_band(band)
        return VolumeCurve(self.log_r[m], self.log_v[m], self.ranks[m], self.anchor)


@dataclass
class GeometryEstimate:
    anchor: int
    n_hat: float
    logK_hat: float
    K_prime: float
    sigma: float
    ric_hat: float
    band: Band
    rms_residual: float
    usable_rows: int
    flags: list = field(default_factory=list)
    duplicates: int = 0

    @property
    def degenerate(self) -> bool:
        return FLAG_DEGENERATE in self.flags

    def as_dict(self):
        return {
            "anchor": self.anchor,
            "n_hat": self.n_hat,
            "logK_hat": self.logK_hat,
            "K_prime": self.K_prime,
            "sigma": self.sigma,
            "ric_hat": self.ric_hat,
            "k_lo": self.band.k_lo,
            "k_hi": self.band.k_hi,
            "rms_residual": self.rms_residual,
            "usable_rows": self.usable_rows,
            "duplicates": self.duplicates,
            "flags": list(self.flags),
        }


def build_curve(radii: NeighborRadii, log_offset: float = 0.0) -> VolumeCurve:
    """Pairs ``(log r_k, log k + log_offset)`` for every rank with ``r_k > 0``.

    ``log_offset`` is the log of the per-point Monte-Carlo volume; it only
    shifts the scaling coefficient and is zero unless the total volume of the
    sampled space is known.
    """
    r = radii.radii
    ranks = radii.counts
    keep = r > 0
    if not keep.any():
        raise EstimationError(f"anchor {radii.anchor}: all radii are zero")
    return VolumeCurve(np.log(r[keep]), np.log(ranks[keep]) + log_offset, ranks[keep], radii.anchor)


def _design(log_r):
    return np.column_stack([np.ones_like(log_r), log_r])


def _band_rows(curve: VolumeCurve, band: Band):
    m = curve.in_band(band)
    return curve.log_r[m], curve.log_v[m]


def _check_rows(log_r):
    if log_r.size < 3:
        raise EstimationError(f"need at least 3 rows in the band, got {log_r.size}")
    if np.unique(log_r).size < 3:
        raise EstimationError("degenerate band: fewer than 3 distinct radii (isolated point)")


def _ols(log_r, log_v):
    """Intercept, slope, intercept standard error and residuals."""
    X = _design(log_r)
    beta, *_ = np.linalg.lstsq(X, log_v, rcond=None)
    resid = log_v - X @ beta
    m = log_r.size
    s2 = float(resid @ resid) / (m - 2)
    xbar = log_r.mean()
    sxx = float(np.sum((log_r - xbar) ** 2))
    # (X^T X)^-1 [0, 0] = sum(x^2) / (m * Sxx)
    var_a = s2 * float(np.sum(log_r**2)) / (m * sxx)
    return float(beta[0]), float(beta[1]), math.sqrt(max(var_a, 0.0)), resid


def fit_dimension_scaling(curve: VolumeCurve, band: Band):
    """OLS of ``log v`` on ``(1, log r)`` over the band rows.

    Returns ``(n_hat, logK_hat, sigma)`` where ``sigma`` is the standard
    error of the intercept with residual variance ``SSR / (m - 2)``.
    """
    log_r, log_v = _band_rows(curve, band)
    _check_rows(log_r)
    a, b, sigma, _ = _ols(log_r, log_v)
    return b, a, sigma


def debias_scaling(logK_hat: float, sigma: float) -> float:
    """Log-normal bias correction ``K' = exp(log K) * exp(sigma**2 / 2)``."""
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise EstimationError(f"sigma must be finite and non-negative, got {sigma}")
    try:
        return math.exp(logK_hat) * math.exp(0.5 * sigma * sigma)
    except OverflowError:
        return math.inf


def ricci_terms(log_r, log_v, n_hat, K_prime):
    r2 = np.exp(2.0 * np.asarray(log_r))
    return 6.0 * (n_hat + 2.0) / r2 * (math.log(K_prime) + n_hat * np.asarray(log_r) - np.asarray(log_v))


def estimate_ricci(curve: VolumeCurve, band: Band, n_hat: float, K_prime: float) -> float:
    """Band mean of ``6 (n + 2) / r^2 * (log K' + n log r - log v)``."""
    log_r, log_v = _band_rows(curve, band)
    if log_r.size == 0:
        raise EstimationError("empty band")
    if not math.isfinite(n_hat):
        raise EstimationError("n_hat must be finite")
    return float(np.mean(ricci_terms(log_r, log_v, n_hat, K_prime)))


def _corrected_fit(log_r, log_v, max_iter=20):
    """Self-consistent ``(n, log K, sigma, c)`` with ``c = Ric / (6 (n + 2))``.

    The line is fitted to ``log v + c r^2`` and ``c`` must equal the band mean
    of ``(log K' + n log r - log v) / r^2``.  Everything is linear in ``c``
    except the small ``sigma^2 / 2`` debiasing term, handled by a short
    fixed-point loop.
    """
    r2 = np.exp(2.0 * log_r)
    inv_r2 = 1.0 / r2
    X = _design(log_r)
    pinv = np.linalg.pinv(X)
    beta0 = pinv @ log_v
    beta_q = pinv @ r2
    # residual of the uncorrected line, and the line's own fit of r^2
    res0 = X @ beta0 - log_v
    fit_q = X @ beta_q
    denom = 1.0 - float(np.mean(fit_q * inv_r2))
    if abs(denom) < _SINGULAR_TOL:
        raise EstimationError("curvature correction is singular for this band")
    base = float(np.mean(res0 * inv_r2))
    mean_inv = float(np.mean(inv_r2))
    c = base / denom
    step = math.inf
    for _ in range(max_iter):
        a, n, sigma, _ = _ols(log_r, log_v + c * r2)
        c_new = (base + 0.5 * sigma * sigma * mean_inv) / denom
        new_step = abs(c_new - c)
        c = c_new
        if new_step <= 1e-15 * max(1.0, abs(c)):
            break
        if new_step >= step:
            # the debiasing term feeds back on itself: no usable fixed point
            raise EstimationError("curvature correction did not converge")
        step = new_step
    else:
        raise EstimationError("curvature correction did not converge")
    a, n, sigma, _ = _ols(log_r, log_v + c * r2)
    if not all(map(math.isfinite, (a, n, sigma, c))):
        raise EstimationError("curvature correction diverged")
    return n, a, sigma, c


def analyze_point(
    radii: NeighborRadii,
    band: Band,
    *,
    method: str = "corrected",
    log_offset: float = 0.0,
) -> GeometryEstimate:
    """Full per-anchor pipeline: curve, fit, debias, curvature.

    Anchors whose band holds fewer than 3 distinct positive radii are flagged
    ``degenerate`` with ``n_hat = 0`` and ``ric_hat = nan``.
    """
    if method not in METHODS:
        raise EstimationError(f"unknown method {method!r}")
    flags = []
    dups = radii.duplicates
    if dups:
        flags.append(FLAG_DUPLICATES)
    nan = float("nan")
    try:
        curve = build_curve(radii, log_offset)
        log_r, log_v = _band_rows(curve, band)
        _check_rows(log_r)
    except EstimationError:
        usable = int(np.count_nonzero((radii.radii > 0) & (radii.counts >= band.k_lo) & (radii.counts <= band.k_hi)))
        return GeometryEstimate(radii.anchor, 0.0, nan, nan, nan, nan, band, nan, usable,
                                flags + [FLAG_DEGENERATE], dups)

    est = analyze_curve(curve, band, method=method)
    est.anchor = radii.anchor
    est.flags = flags + est.flags
    est.duplicates = dups
    return est


def analyze_curve(curve: VolumeCurve, band: Band, *, method: str = "corrected") -> GeometryEstimate:
    """Fit, debias and estimate curvature on an already built volume curve.

    Raises :class:`EstimationError` when the band cannot support a fit.
    """
    if method not in METHODS:
        raise EstimationError(f"unknown method {method!r}")
    log_r, log_v = _band_rows(curve, band)
    _check_rows(log_r)
    flags = []
    if method == "corrected":
        try:
            n_hat, logK, sigma, _ = _corrected_fit(log_r, log_v)
        except EstimationError:
            flags.append(FLAG_SINGULAR)
            logK, n_hat, sigma, _ = _ols(log_r, log_v)
    else:
        logK, n_hat, sigma, _ = _ols(log_r, log_v)
    K_prime = debias_scaling(logK, sigma)
    ric = estimate_ricci(curve, band, n_hat, K_prime)
    resid = log_v - (logK + n_hat * log_r)
    rms = float(np.sqrt(np.mean(resid**2)))
    return GeometryEstimate(curve.anchor, float(n_hat), float(logK), K_prime, float(sigma), ric,
                            band, rms, int(log_r.size), flags)


@dataclass
class AnalysisReport:
    """Per-anchor estimates plus cohort summaries and KS comparisons."""

    estimates: list
    tokens: Optional[list] = None
    cohorts: dict = field(default_factory=dict)
    ks: list = field(default_factory=list)
    diagnostics: Optional[list] = None
    config: dict = field(default_factory=dict)

    def column(self, name: str, include_degenerate: bool = False) -> np.ndarray:
        vals = [getattr(e, name) for e in self.estimates if include_degenerate or not e.degenerate]
        return np.asarray(vals, dtype=np.float64)


def analyze_radii(radii_rows, anchors, band: Band, *, method="corrected", log_offset=0.0):
    """Estimates for precomputed radius rows (one row per anchor)."""
    return [
        analyze_point(NeighborRadii(int(a), row), band, method=method, log_offset=log_offset)
        for a, row in zip(anchors, radii_rows)
    ]


def analyze_cloud(
    cloud: PointCloud,
    metric: Metric,
    band: Optional[Band] = None,
    k_max=None,
    *,
    anchors: Optional[Sequence[int]] = None,
    method: str = "corrected",
    log_offset: float = 0.0,
    workers: int = 1,
    cohorts: Optional[dict] = None,
) -> AnalysisReport:
    """Estimate geometry at every anchor (default: every point) of ``cloud``.

    ``cohorts`` maps a cohort name to a boolean mask over the anchors; each
    gets quartile summaries, and every pair of cohorts a KS test on the
    dimension estimates.
    """
    from . import stats

    if band is None and cloud.p < 3:
        # no band fits; every anchor comes back flagged degenerate
        band, k = Band(1, 2), cloud.p - 1
    else:
        band = Band.default(cloud.p) if band is None else band
        k = min(cloud.p - 1, band.k_hi) if k_max is None else int(k_max)
        if band.k_hi > k:
            raise EstimationError(f"band k_hi={band.k_hi} exceeds k_max={k}")
    anchors = np.arange(cloud.p) if anchors is None else np.asarray(anchors, dtype=np.int64)
    rows = radii_matrix(cloud, metric, k, anchors, workers=workers)
    estimates = analyze_radii(rows, anchors, band, method=method, log_offset=log_offset)
    report = AnalysisReport(estimates)
    if cloud.labels is not None:
        report.tokens = [cloud.labels[a] for a in anchors]
    cohorts = {"all": np.ones(anchors.size, dtype=bool)} if cohorts is None else cohorts
    report.cohorts, report.ks = stats.summarize_cohorts(estimates, cohorts)
    return report
