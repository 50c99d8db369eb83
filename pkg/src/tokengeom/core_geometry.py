"""Point clouds, metrics and exact sorted neighbor-radius sequences.

The expensive part of the whole pipeline is finding, for every anchor point,
the ``k_max`` smallest distances to the other points.  This is done exactly
(no approximate index): candidates are gathered in tiles with the Gram
identity ``|x-y|^2 = |x|^2 + |y|^2 - 2 x.y`` (clamped at zero).  Distances
short enough for the identity to lose precision are re-measured directly, and
a row is recomputed in full whenever a point outside the kept candidates could
still reach the k-th radius.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

EUCLIDEAN = "euclidean"
CIRCLE_ARCLENGTH = "circle-arclength"
SPHERE_GREATCIRCLE = "sphere-greatcircle"
METRIC_KINDS = (EUCLIDEAN, CIRCLE_ARCLENGTH, SPHERE_GREATCIRCLE)

# relative tolerance for "point lies on the circle/sphere"
ON_MANIFOLD_RTOL = 1e-9
# extra gram-ranked candidates kept per row before exact re-measurement
_SLACK = 32
# squared distances below this fraction of |x|^2 + |y|^2 are re-measured directly
_NEAR = 1e-4


class GeometryError(ValueError):
    """Invalid geometric input (bad shapes, off-manifold points, ...)."""


@dataclass(frozen=True)
class PointCloud:
    """``p`` points in ``D``-dimensional ambient space with optional labels."""

    coords: np.ndarray
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64, copy=True)
        if coords.ndim != 2:
            raise GeometryError(f"coords must be a 2-d matrix, got shape {coords.shape}")
        p, d = coords.shape
        if p < 2:
            raise GeometryError(f"a point cloud needs at least 2 points, got {p}")
        if d < 1:
            raise GeometryError("ambient dimension must be at least 1")
        bad = ~np.isfinite(coords).all(axis=1)
        if bad.any():
            raise GeometryError(f"non-finite coordinate in row {int(np.argmax(bad))}")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != p:
                raise GeometryError(f"got {len(labels)} labels for {p} points")
            object.__setattr__(self, "labels", labels)

    @property
    def p(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return self.p


@dataclass(frozen=True)
class Metric:
    """Distance on the ambient coordinates.

    ``euclidean`` works for any ambient dimension.  ``circle-arclength``
    expects points on the circle of radius ``radius`` in the plane and
    ``sphere-greatcircle`` points on the sphere of radius ``radius`` in R^3;
    both return ``radius * central_angle``.
    """

    kind: str = EUCLIDEAN
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise GeometryError(f"unknown metric kind {self.kind!r}; expected one of {METRIC_KINDS}")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise GeometryError(f"metric radius must be positive, got {self.radius}")

    @classmethod
    def euclidean(cls) -> "Metric":
        return cls(EUCLIDEAN)

    @classmethod
    def circle(cls, radius: float = 1.0) -> "Metric":
        return cls(CIRCLE_ARCLENGTH, radius)

    @classmethod
    def sphere(cls, radius: float = 1.0) -> "Metric":
        return cls(SPHERE_GREATCIRCLE, radius)

    @property
    def intrinsic(self) -> bool:
        return self.kind != EUCLIDEAN

    @property
    def ambient_dim(self) -> Optional[int]:
        return {CIRCLE_ARCLENGTH: 2, SPHERE_GREATCIRCLE: 3}.get(self.kind)

    def check_points(self, coords: np.ndarray) -> None:
        """Raise unless ``coords`` (n x D) are admissible for this metric."""
        if not self.intrinsic:
            return
        coords = np.atleast_2d(coords)
        if coords.shape[1] != self.ambient_dim:
            raise GeometryError(
                f"{self.kind} needs points in R^{self.ambient_dim}, got dimension {coords.shape[1]}"
            )
        norms = np.linalg.norm(coords, axis=1)
        off = np.abs(norms - self.radius) > ON_MANIFOLD_RTOL * self.radius
        if off.any():
            i = int(np.argmax(off))
            raise GeometryError(
                f"point {i} has norm {norms[i]!r}, not on the {self.kind} of radius {self.radius}"
            )


def _central_angle(x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    # atan2(|x cross y|, x.y) stays accurate for tiny and near-antipodal angles
    dots = ys @ x
    if x.shape[0] == 2:
        cross = np.abs(x[0] * ys[:, 1] - x[1] * ys[:, 0])
    else:
        cross = np.linalg.norm(np.cross(ys, x), axis=1)
    return np.arctan2(cross, dots)


def _exact_distances(metric: Metric, x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if metric.kind == EUCLIDEAN:
        return np.sqrt(np.sum((ys - x) ** 2, axis=1))
    return metric.radius * _central_angle(x, ys)


def distance(metric: Metric, x, y) -> float:
    """Distance between two points under ``metric``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise GeometryError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    metric.check_points(np.vstack([x, y]))
    return float(_exact_distances(metric, x, y[None, :])[0])


@dataclass(frozen=True)
class NeighborRadii:
    """Ascending distances from one anchor to its nearest other points.

    Rank ``k`` (1-based) of ``radii[k-1]`` is the number of other points
    inside that radius, i.e. the Monte-Carlo volume up to a constant factor.
    """

    anchor: int
    radii: np.ndarray
    neighbors: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=np.float64)
        if r.ndim != 1 or r.size == 0:
            raise GeometryError("radii must be a non-empty 1-d sequence")
        if not np.isfinite(r).all() or (r < 0).any():
            raise GeometryError("radii must be finite and non-negative")
        if (np.diff(r) < 0).any():
            raise GeometryError("radii must be non-decreasing")
        object.__setattr__(self, "radii", r)

    @property
    def counts(self) -> np.ndarray:
        return np.arange(1, self.radii.size + 1)

    @property
    def duplicates(self) -> int:
        """Number of other points sitting exactly on the anchor."""
        return int(np.count_nonzero(self.radii == 0.0))

    def __len__(self):
        return self.radii.size


def _resolve_k(cloud: PointCloud, k_max) -> int:
    if cloud.p < 2:
        raise GeometryError("empty cloud")
    if k_max is None or k_max == "all":
        return cloud.p - 1
    k_max = int(k_max)
    if k_max <= 0:
        raise GeometryError("k_max must be at least 1")
    if k_max > cloud.p - 1:
        raise GeometryError(f"k_max={k_max} exceeds p-1={cloud.p - 1}")
    return k_max


def _select_row(metric, coords, i, cand, k):
    """Exact distances to candidate points, ordered by (distance, index)."""
    cand = cand[cand != i]
    d = _exact_distances(metric, coords[i], coords[cand])
    order = np.lexsort((cand, d))[:k]
    return d[order], cand[order]


def sorted_radii(cloud: PointCloud, metric: Metric, anchor: int, k_max="all") -> NeighborRadii:
    """The ``k_max`` smallest distances from ``anchor`` to the other points."""
    k = _resolve_k(cloud, k_max)
    if not 0 <= anchor < cloud.p:
        raise GeometryError(f"anchor {anchor} out of range for p={cloud.p}")
    metric.check_points(cloud.coords)
    r, nb = _select_row(metric, cloud.coords, anchor, np.arange(cloud.p), k)
    return NeighborRadii(anchor, r, nb)


def _tile_candidates(coords, sqn, rows, k, col_tile):
    """Gram-ranked best ``k + slack`` column indices for each row in ``rows``.

    Also returns the largest gram value kept per row and whether the row kept
    every column (in which case nothing could have been missed).
    """
    p = coords.shape[0]
    keep = min(p, k + 1 + _SLACK)
    x = coords[rows]
    best_d = np.empty((rows.size, 0))
    best_i = np.empty((rows.size, 0), dtype=np.int64)
    for c0 in range(0, p, col_tile):
        c1 = min(p, c0 + col_tile)
        d2 = sqn[rows, None] + sqn[None, c0:c1] - 2.0 * (x @ coords[c0:c1].T)
        np.maximum(d2, 0.0, out=d2)
        idx = np.broadcast_to(np.arange(c0, c1), d2.shape)
        best_d = np.concatenate([best_d, d2], axis=1)
        best_i = np.concatenate([best_i, idx], axis=1)
        if best_d.shape[1] > keep:
            part = np.argpartition(best_d, keep - 1, axis=1)[:, :keep]
            best_d = np.take_along_axis(best_d, part, axis=1)
            best_i = np.take_along_axis(best_i, part, axis=1)
    return best_d, best_i


def radii_matrix(
    cloud: PointCloud,
    metric: Metric,
    k_max="all",
    anchors: Optional[Sequence[int]] = None,
    *,
    row_tile: int = 256,
    col_tile: int = 4096,
    workers: int = 1,
    return_neighbors: bool = False,
):
    """Sorted neighbor radii for many anchors as an ``(n_anchors, k_max)`` matrix.

    Memory is ``O(row_tile * col_tile + n_anchors * k_max)``.  Anchors are
    processed in index order whatever order they are given in, so the output
    does not depend on that order or on ``workers``.  Changing the tile sizes
    can move a value by a unit in the last place (the Gram products are
    blocked differently) but never changes which neighbors are selected
    beyond such ties.
    """
    k = _resolve_k(cloud, k_max)
    metric.check_points(cloud.coords)
    coords = cloud.coords
    p = cloud.p
    anchors = np.arange(p) if anchors is None else np.asarray(anchors, dtype=np.int64)
    if anchors.size and (anchors.min() < 0 or anchors.max() >= p):
        raise GeometryError("anchor index out of range")
    given = anchors
    by_anchor = np.argsort(given, kind="stable")
    anchors = given[by_anchor]
    sqn = np.einsum("ij,ij->i", coords, coords)
    # worst-case rounding of the gram identity, in squared-distance units
    eps = np.finfo(np.float64).eps
    gram_tol = 8.0 * (coords.shape[1] + 2) * eps * (sqn + sqn.max()) + 1e-300

    out_r = np.empty((anchors.size, k))
    out_i = np.empty((anchors.size, k), dtype=np.int64)
    full_cols = np.arange(p)

    def work(t0):
        t1 = min(anchors.size, t0 + row_tile)
        rows = anchors[t0:t1]
        cand_d, cand_i = _tile_candidates(coords, sqn, rows, k, col_tile)
        gram_max = cand_d.max(axis=1)
        if metric.intrinsic:
            d = np.empty_like(cand_d)
            for j, i in enumerate(rows):
                d[j] = _exact_distances(metric, coords[i], coords[cand_i[j]])
        else:
            d = np.sqrt(cand_d)
            # cancellation in the gram identity: re-measure short distances
            near = cand_d < _NEAR * (sqn[rows, None] + sqn[cand_i])
            for j in np.flatnonzero(near.any(axis=1)):
                cols = np.flatnonzero(near[j])
                d[j, cols] = _exact_distances(metric, coords[rows[j]], coords[cand_i[j, cols]])
        d[cand_i == rows[:, None]] = np.inf
        # order by index, then stably by distance: ties resolve by index
        by_index = np.argsort(cand_i, axis=1, kind="stable")
        cand_i = np.take_along_axis(cand_i, by_index, axis=1)
        d = np.take_along_axis(d, by_index, axis=1)
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        r = np.take_along_axis(d, order, axis=1)
        nb = np.take_along_axis(cand_i, order, axis=1)
        if cand_i.shape[1] < p:
            kth = r[:, -1]
            if metric.intrinsic:
                kth = 2.0 * metric.radius * np.sin(np.minimum(kth / metric.radius, math.pi) / 2.0)
            # a point outside the kept set could still beat the k-th radius
            for j in np.flatnonzero(gram_max <= kth * kth + gram_tol[rows]):
                r[j], nb[j] = _select_row(metric, coords, rows[j], full_cols, k)
        out_r[t0:t1] = r
        out_i[t0:t1] = nb

    starts = range(0, anchors.size, row_tile)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for t0 in starts:
            work(t0)
    back = np.empty_like(by_anchor)
    back[by_anchor] = np.arange(by_anchor.size)
    out_r, out_i = out_r[back], out_i[back]
    if return_neighbors:
        return out_r, out_i
    return out_r


def all_sorted_radii(cloud: PointCloud, metric: Metric, k_max="all", **kwargs) -> list[NeighborRadii]:
    """One :class:`NeighborRadii` per point of ``cloud``."""
    r, nb = radii_matrix(cloud, metric, k_max, return_neighbors=True, **kwargs)
    return [NeighborRadii(i, r[i], nb[i]) for i in range(cloud.p)]


def ball_volume_euclidean(d: int, r: float) -> float:
    """Volume of the Euclidean ``d``-ball of radius ``r``."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d}")
    if r < 0:
        raise ValueError(f"radius must be non-negative, got {r}")
    if r == 0:
        return 0.0
    log_v = 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0) + d * math.log(r)
    return math.exp(log_v)
