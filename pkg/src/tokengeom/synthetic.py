"""Spaces of known geometry for validating the estimators.

Circle (R^2), sphere (R^3), flat disk (R^2) and a stratified space in R^3
made of a unit circle, a unit disk and a small solid ball::

    disk    : x^2 + y^2 <= 1, z = 0
    circle  : radius 1 in the xz-plane, centred at (2, 0, 0); it touches the
              disk only at the junction (1, 0, 0)
    ball    : radius 1/2 centred on the disk's boundary point (-1, 0, 0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_geometry import CIRCLE_ARCLENGTH, EUCLIDEAN, SPHERE_GREATCIRCLE, Metric, PointCloud

CIRCLE, SPHERE, DISK, STRATIFIED = "circle", "sphere", "disk", "stratified"
KINDS = (CIRCLE, SPHERE, DISK, STRATIFIED)

STRATUM_CIRCLE, STRATUM_DISK, STRATUM_BALL = "circle", "disk", "ball"
STRATUM_DIMENSION = {STRATUM_CIRCLE: 1, STRATUM_DISK: 2, STRATUM_BALL: 3}
JUNCTION = np.array([1.0, 0.0, 0.0])
CIRCLE_CENTER = np.array([2.0, 0.0, 0.0])
BALL_CENTER = np.array([-1.0, 0.0, 0.0])
BALL_RADIUS = 0.5


@dataclass(frozen=True)
class ManifoldSpec:
    """A synthetic space plus the metric used to measure it.

    For the stratified kind ``strata`` gives per-stratum point counts
    ``(circle, disk, ball)``; otherwise ``sample_count`` points are drawn.
    """

    kind: str
    radius: float = 1.0
    metric: Optional[Metric] = None
    sample_count: int = 2000
    seed: int = 0
    strata: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.metric is None:
            object.__setattr__(self, "metric", Metric.euclidean())
        if self.kind == STRATIFIED:
            counts = self.strata or _split_counts(self.sample_count)
            if min(counts) < 1:
                raise ValueError("every stratum needs at least one point")
            object.__setattr__(self, "strata", tuple(int(c) for c in counts))
            object.__setattr__(self, "sample_count", sum(self.strata))
        if self.sample_count < 10:
            raise ValueError("sample_count must be at least 10")
        m = self.metric
        if m.kind == CIRCLE_ARCLENGTH and (self.kind != CIRCLE or m.radius != self.radius):
            raise ValueError("circle-arclength metric only applies to a circle of the same radius")
        if m.kind == SPHERE_GREATCIRCLE and (self.kind != SPHERE or m.radius != self.radius):
            raise ValueError("sphere-greatcircle metric only applies to a sphere of the same radius")

    @property
    def metric_name(self) -> str:
        return "euclidean" if self.metric.kind == EUCLIDEAN else "arclength"

    def total_volume(self) -> float:
        return total_volume(self.kind, self.radius)


def _split_counts(total: int):
    # 1 : 3 : 6 for circle : disk : ball
    c = max(1, total // 10)
    d = max(1, 3 * total // 10)
    return c, d, max(1, total - c - d)


def _unit_directions(rng, n, dim):
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample(spec: ManifoldSpec) -> PointCloud:
    """Uniform samples from ``spec``; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    R, n = spec.radius, spec.sample_count
    if spec.kind == CIRCLE:
        t = rng.uniform(0.0, 2.0 * math.pi, n)
        return PointCloud(R * np.column_stack([np.cos(t), np.sin(t)]))
    if spec.kind == SPHERE:
        return PointCloud(R * _unit_directions(rng, n, 3))
    if spec.kind == DISK:
        rho = R * np.sqrt(rng.uniform(0.0, 1.0, n))
        t = rng.uniform(0.0, 2.0 * math.pi, n)
        return PointCloud(np.column_stack([rho * np.cos(t), rho * np.sin(t)]))
    return _sample_stratified(rng, spec.strata)


def _sample_stratified(rng, counts):
    nc, nd, nb = counts
    t = rng.uniform(0.0, 2.0 * math.pi, nc)
    # cos(t) = 1 puts the point on the junction
    circle = np.column_stack([CIRCLE_CENTER[0] - np.cos(t), np.zeros(nc), np.sin(t)])
    rho = np.sqrt(rng.uniform(0.0, 1.0, nd))
    t = rng.uniform(0.0, 2.0 * math.pi, nd)
    disk = np.column_stack([rho * np.cos(t), rho * np.sin(t), np.zeros(nd)])
    rad = BALL_RADIUS * rng.uniform(0.0, 1.0, nb) ** (1.0 / 3.0)
    ball = BALL_CENTER + rad[:, None] * _unit_directions(rng, nb, 3)
    labels = [STRATUM_CIRCLE] * nc + [STRATUM_DISK] * nd + [STRATUM_BALL] * nb
    return PointCloud(np.vstack([circle, disk, ball]), labels)


def chord_length(R: float, r_arc: float) -> float:
    """Straight-line length of the chord under an arc of length ``r_arc``."""
    if not 0.0 <= r_arc <= math.pi * R * (1 + 1e-12):
        raise ValueError(f"arclength {r_arc} outside [0, pi R] for R={R}")
    # sqrt(2) R sqrt(1 - cos t) written as 2 R sin(t / 2): no cancellation at small t
    return 2.0 * R * math.sin(min(r_arc / R, math.pi) / 2.0)


def total_volume(kind: str, R: float) -> float:
    if kind == CIRCLE:
        return 2.0 * math.pi * R
    if kind == SPHERE:
        return 4.0 * math.pi * R * R
    if kind == DISK:
        return math.pi * R * R
    raise ValueError(f"no single total volume for kind {kind!r}")


def true_volume(kind: str, metric: str, R: float, r: float) -> float:
    """Exact volume of a ball of radius ``r`` centred on the space.

    ``metric`` is ``"arclength"`` or ``"euclidean"``.  For the disk the
    centre is assumed at least ``r`` away from the boundary.
    """
    if r < 0:
        raise ValueError("radius must be non-negative")
    if kind == CIRCLE:
        if metric == "arclength":
            if r > math.pi * R:
                raise ValueError("arclength radius beyond pi R")
            return 2.0 * r
        if metric == "euclidean":
            if r > 2.0 * R:
                raise ValueError("chord longer than the diameter")
            return 2.0 * R * math.acos(1.0 - r * r / (2.0 * R * R))
    elif kind == SPHERE:
        if metric == "arclength":
            if r > math.pi * R:
                raise ValueError("arclength radius beyond pi R")
            return 2.0 * math.pi * R * R * (1.0 - math.cos(r / R))
        if metric == "euclidean":
            if r > 2.0 * R:
                raise ValueError("chord longer than the diameter")
            return math.pi * r * r
    elif kind == DISK:
        if metric == "euclidean":
            if r > R:
                raise ValueError("ball leaves the disk")
            return math.pi * r * r
    raise ValueError(f"unsupported kind/metric pair {kind}/{metric}")


_TRUE = {
    (CIRCLE, "arclength"): (1, 2.0, 0.0),
    (CIRCLE, "euclidean"): (1, 2.0, -0.75),
    (SPHERE, "arclength"): (2, math.pi, 2.0),
    (SPHERE, "euclidean"): (2, math.pi, 0.0),
    (DISK, "euclidean"): (2, math.pi, 0.0),
}


def true_parameters(kind: str, metric: str, R: float = 1.0):
    """``(dimension, scaling, ricci)`` of a homogeneous example.

    Ricci for the sphere with arclength is ``2 / R^2``; the circle seen
    through chords behaves like curvature ``-3 / (4 R^2)``.
    """
    try:
        n, K, ric = _TRUE[(kind, metric)]
    except KeyError:
        raise ValueError(f"unsupported kind/metric pair {kind}/{metric}") from None
    return n, K, ric / (R * R)


def distance_to_boundary(spec: ManifoldSpec, coords) -> np.ndarray:
    """Distance from disk points to the disk's rim."""
    if spec.kind != DISK:
        raise ValueError("only the disk has a boundary")
    return spec.radius - np.linalg.norm(np.asarray(coords), axis=1)


def stratified_interior(cloud: PointCloud, margin: float = 0.3, ball_core: float = 0.25) -> np.ndarray:
    """Mask of points well inside their own stratum.

    Circle and disk points must be ``margin`` away from the junction, disk
    points also away from the rim and the ball; ball points must lie within
    ``ball_core`` of the ball's centre.
    """
    x = cloud.coords
    labels = np.asarray(cloud.labels)
    dj = np.linalg.norm(x - JUNCTION, axis=1)
    db = np.linalg.norm(x - BALL_CENTER, axis=1)
    rho = np.linalg.norm(x[:, :2], axis=1)
    circle = (labels == STRATUM_CIRCLE) & (dj > margin)
    disk = (labels == STRATUM_DISK) & (dj > margin) & (rho < 1.0 - margin) & (db > BALL_RADIUS + margin)
    ball = (labels == STRATUM_BALL) & (db < ball_core)
    return circle | disk | ball
