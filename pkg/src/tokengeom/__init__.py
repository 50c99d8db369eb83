"""Local geometry of token embeddings: dimension, volume scaling and Ricci
curvature estimated from nearest-neighbor volume growth."""

from .core_geometry import (
    Metric,
    NeighborRadii,
    PointCloud,
    all_sorted_radii,
    ball_volume_euclidean,
    distance,
    radii_matrix,
    sorted_radii,
)
from .curve_analysis import concavity_sign, detect_gaps, detect_knees, diagnose
from .estimators import (
    AnalysisReport,
    Band,
    GeometryEstimate,
    VolumeCurve,
    analyze_cloud,
    analyze_curve,
    analyze_point,
    build_curve,
    debias_scaling,
    estimate_ricci,
    fit_dimension_scaling,
)
from .stats import ks_two_sample, quartiles
from .synthetic import ManifoldSpec, sample

__version__ = "0.1.0"
