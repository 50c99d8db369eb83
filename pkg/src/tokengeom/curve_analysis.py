"""Shape diagnostics of log-log volume curves.

* knees: abrupt slope changes, evidence that the neighborhood crosses into a
  stratum of different dimension;
* gaps: radius intervals with no new neighbors (several components nearby);
* concavity: sign of the quadratic term, opposite to the curvature sign.

The thresholds are heuristics, exposed as parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .estimators import Band, EstimationError, VolumeCurve

DEFAULT_MAX_SEGMENTS = 3
DEFAULT_KNEE_THRESHOLD = 0.5
DEFAULT_MIN_GAP_RATIO = 1.5
DEFAULT_GAP_MIN_RANK = 10
# knees are searched over at most this many candidate positions
KNEE_GRID = 48
CONCAVITY_ZERO_TOL = 1e-9


@dataclass
class Knee:
    log_r: float
    slope_before: float
    slope_after: float

    def as_dict(self):
        return {"log_r": self.log_r, "slope_before": self.slope_before, "slope_after": self.slope_after}


@dataclass
class CurveDiagnostics:
    knees: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    concavity: str = "zero"
    concavity_coef: float = 0.0

    def as_dict(self):
        return {
            "knees": [k.as_dict() for k in self.knees],
            "gaps": [list(g) for g in self.gaps],
            "concavity": self.concavity,
            "concavity_coef": self.concavity_coef,
        }


def _thin(x, y, max_points=400):
    if x.size <= max_points:
        return x, y
    idx = np.unique(np.linspace(0, x.size - 1, max_points).round().astype(int))
    return x[idx], y[idx]


def _hinge_fits(x, y, cand, idx):
    """Least-squares continuous piecewise-linear fits for many knot sets at once.

    ``idx`` holds rows of indices into the candidate knots ``cand``.  Returns
    SSE and coefficients ``[a, b, c_1, ..., c_m]`` of
    ``a + b x + sum c_j (x - t_j)_+``.  All fits share one Gram matrix of the
    columns ``1, x, (x - t)_+`` so each costs only a tiny solve.
    """
    cols = np.column_stack([np.ones_like(x), x, np.maximum(x[:, None] - cand[None, :], 0.0)])
    # column scaling keeps the normal equations well conditioned
    scale = np.sqrt(np.einsum("ij,ij->j", cols, cols))
    scale[scale == 0] = 1.0
    cols = cols / scale
    ym = float(y.mean())
    y = y - ym  # centring keeps y'y - coef'X'y free of cancellation
    gram = cols.T @ cols
    proj = cols.T @ y
    sel = np.column_stack([np.zeros(len(idx), dtype=np.int64), np.ones(len(idx), dtype=np.int64), idx + 2])
    XtX = gram[sel[:, :, None], sel[:, None, :]]
    XtX += 1e-12 * np.eye(sel.shape[1])[None]
    Xty = proj[sel]
    coef = np.linalg.solve(XtX, Xty[..., None])[..., 0]
    sse = float(y @ y) - np.einsum("fj,fj->f", coef, Xty)
    coef = coef / scale[sel]
    coef[:, 0] += ym
    return np.maximum(sse, 0.0), coef


def _refine_knots(x, y, cand, knots, sweeps=2):
    """Move each coarse knot to the best observed ``log_r`` between its
    neighbouring coarse candidates, holding the other knots fixed."""
    knots = np.array(knots, dtype=np.float64)
    obs = np.unique(x)
    for _ in range(sweeps):
        for j in range(knots.size):
            c = int(np.searchsorted(cand, knots[j]))
            lo = cand[c - 1] if c > 0 else cand[0]
            hi = cand[c + 1] if c + 1 < cand.size else cand[-1]
            if j > 0:
                lo = max(lo, knots[j - 1])
            if j + 1 < knots.size:
                hi = min(hi, knots[j + 1])
            local = obs[(obs >= lo) & (obs <= hi)]
            local = local[~np.isin(local, np.delete(knots, j))]
            if local.size == 0:
                continue
            trial = np.repeat(knots[None, :], local.size, axis=0)
            trial[:, j] = local
            grid = np.unique(trial)
            idx = np.searchsorted(grid, trial)
            sse, _ = _hinge_fits(x, y, grid, idx)
            knots[j] = local[int(np.argmin(sse))]
    grid = np.unique(knots)
    _, coef = _hinge_fits(x, y, grid, np.searchsorted(grid, knots)[None, :])
    return knots, coef[0]


def detect_knees(
    curve: VolumeCurve,
    max_segments: int = DEFAULT_MAX_SEGMENTS,
    knee_threshold: float = DEFAULT_KNEE_THRESHOLD,
    *,
    grid: int = KNEE_GRID,
) -> list:
    """Breakpoints of the best continuous piecewise-linear fit.

    Breakpoints are searched exhaustively over observed ``log_r`` values
    (thinned to ``grid`` candidates, each segment keeping at least a few
    points); only breakpoints where the slope changes by at least
    ``knee_threshold`` are reported.
    """
    x, y = curve.log_r, curve.log_v
    if max_segments < 1:
        raise EstimationError("max_segments must be at least 1")
    if x.size < 2 * max_segments + 2:
        raise EstimationError(f"curve too short for {max_segments} segments: {x.size} points")
    if np.unique(x).size < 3:
        raise EstimationError("degenerate curve")
    if max_segments == 1:
        return []
    xt, yt = _thin(x, y)
    min_seg = max(3, xt.size // 20)
    inner = np.unique(xt[min_seg:xt.size - min_seg])
    if inner.size == 0:
        return []
    cand = inner[np.unique(np.linspace(0, inner.size - 1, min(grid, inner.size)).round().astype(int))]

    # number of points at or below each candidate, for the segment-length rule
    pos = np.searchsorted(xt, cand, side="right")
    best = None
    for m in range(1, max_segments):
        idx = np.array(list(combinations(range(cand.size), m)), dtype=np.int64).reshape(-1, m)
        ok = (np.diff(pos[idx], axis=1) >= min_seg).all(axis=1)
        if not ok.any():
            continue
        sse, coef = _hinge_fits(xt, yt, cand, idx[ok])
        j = int(np.argmin(sse))
        if best is None or sse[j] < best[0] - 1e-12 * max(1.0, best[0]):
            best = (sse[j], cand[idx[ok][j]])
    if best is None:
        return []
    knots, coef = _refine_knots(x, y, cand, best[1])
    slopes = np.cumsum(coef[1:])  # slope of each segment
    knees = []
    for j, t in enumerate(knots):
        before, after = float(slopes[j]), float(slopes[j + 1])
        if abs(after - before) >= knee_threshold:
            knees.append(Knee(float(t), before, after))
    return knees


def detect_gaps(
    curve: VolumeCurve,
    min_gap_ratio: float = DEFAULT_MIN_GAP_RATIO,
    *,
    min_rank: int = DEFAULT_GAP_MIN_RANK,
) -> list:
    """Radius intervals ``(r_a, r_b)`` with no new neighbors and ``r_b / r_a >= min_gap_ratio``.

    Only steps starting at rank ``min_rank`` or later count; the first few
    nearest-neighbor spacings are dominated by sampling noise.
    """
    if len(curve) == 0:
        return []
    r = np.exp(curve.log_r)
    ranks = curve.ranks
    # last row of every run of tied radii
    last = np.r_[r[1:] > r[:-1], True]
    r, ranks = r[last], ranks[last]
    hit = np.flatnonzero((ranks[:-1] >= min_rank) & (r[1:] >= min_gap_ratio * r[:-1]))
    return [(float(r[j]), float(r[j + 1])) for j in hit]


def concavity_sign(curve: VolumeCurve, band: Band | None = None):
    """Sign and coefficient of the quadratic term of ``log v`` vs ``log r``.

    ``negative`` (concave down) goes with positive Ricci curvature.  With
    ``band=None`` the whole curve is used.
    """
    c = curve if band is None else curve.restrict(band)
    if np.unique(c.log_r).size < 4:
        raise EstimationError("concavity needs at least 4 distinct radii")
    xm = c.log_r.mean()
    coef = float(np.polyfit(c.log_r - xm, c.log_v, 2)[0])
    if abs(coef) < CONCAVITY_ZERO_TOL:
        return "zero", coef
    return ("negative" if coef < 0 else "positive"), coef


def diagnose(curve: VolumeCurve, band: Band | None = None, *, max_segments=DEFAULT_MAX_SEGMENTS,
             knee_threshold=DEFAULT_KNEE_THRESHOLD, min_gap_ratio=DEFAULT_MIN_GAP_RATIO) -> CurveDiagnostics:
    """All three diagnostics; failures of a single check leave it empty."""
    out = CurveDiagnostics()
    try:
        out.knees = detect_knees(curve, max_segments, knee_threshold)
    except EstimationError:
        pass
    out.gaps = detect_gaps(curve, min_gap_ratio)
    try:
        out.concavity, out.concavity_coef = concavity_sign(curve, band)
    except EstimationError:
        out.concavity, out.concavity_coef = "zero", float("nan")
    return out
