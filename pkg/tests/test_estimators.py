import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokengeom import estimators as est
from tokengeom import synthetic as syn
from tokengeom.core_geometry import Metric, NeighborRadii, PointCloud
from tokengeom.estimators import (
    Band,
    EstimationError,
    VolumeCurve,
    analyze_cloud,
    analyze_point,
    build_curve,
    debias_scaling,
    estimate_ricci,
    fit_dimension_scaling,
)


def full_band(curve):
    return Band(1, len(curve))


def normal_equations(x, y):
    """Independent OLS: solve (X'X) b = X'y, then the textbook intercept SE."""
    X = np.column_stack([np.ones_like(x), x])
    xtx = X.T @ X
    b = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ b
    s2 = resid @ resid / (x.size - 2)
    cov = s2 * np.linalg.inv(xtx)
    return b[1], b[0], math.sqrt(cov[0, 0])


def cov_var(x, y):
    xm, ym = x.mean(), y.mean()
    slope = np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2)
    return slope, ym - slope * xm


def ricci_direct(log_r, log_v, n, K):
    total = 0.0
    for lr, lv in zip(log_r, log_v):
        r = math.exp(lr)
        total += 6.0 * (n + 2.0) / (r * r) * (math.log(K) + n * lr - lv)
    return total / len(log_r)


def volume_law(n, K, ric, r):
    """log v with the curvature correction and no higher-order terms."""
    return math.log(K) + n * np.log(r) - ric / (6.0 * (n + 2.0)) * r**2


def radii_for_law(n, K, k_max):
    # v(r_k) = k exactly: r_k = (k / K)^(1/n)
    k = np.arange(1, k_max + 1)
    return NeighborRadii(0, (k / K) ** (1.0 / n))


# -- Band / curves --------------------------------------------------------------


def test_band_validation_and_default():
    with pytest.raises(EstimationError):
        Band(0, 5)
    with pytest.raises(EstimationError):
        Band(5, 5)
    assert Band.default(2001) == Band(50, 1000)
    assert Band.default(101) == Band(10, 100)
    assert Band.default(5000, k_lo=10) == Band(10, 1000)


def test_build_curve_examples():
    c = build_curve(NeighborRadii(0, np.array([1.0, math.e, math.e**2])))
    np.testing.assert_allclose(c.pairs, [(0, 0), (1, math.log(2)), (2, math.log(3))], atol=1e-15)


def test_build_curve_ties_and_zeros():
    c = build_curve(NeighborRadii(3, np.array([0.0, 2.0, 2.0, 5.0])))
    assert c.log_r[0] == c.log_r[1] == math.log(2.0)
    np.testing.assert_array_equal(c.ranks, [2, 3, 4])
    np.testing.assert_allclose(c.log_v, np.log([2, 3, 4]))
    assert c.anchor == 3
    with pytest.raises(EstimationError):
        build_curve(NeighborRadii(0, np.zeros(4)))


def test_build_curve_log_offset():
    c = build_curve(NeighborRadii(0, np.array([1.0, 2.0])), log_offset=0.5)
    np.testing.assert_allclose(c.log_v, [0.5, math.log(2) + 0.5])


# -- regression -----------------------------------------------------------------


def test_fit_noiseless_line():
    x = np.linspace(-3, 0, 40)
    c = VolumeCurve.from_arrays(x, math.log(math.pi) + 2 * x)
    n, logK, sigma = fit_dimension_scaling(c, full_band(c))
    assert n == pytest.approx(2.0, abs=1e-12)
    assert logK == pytest.approx(math.log(math.pi), abs=1e-12)
    assert sigma < 1e-12


def test_fit_constant_gives_zero_dimension():
    x = np.linspace(0.0, 1.0, 20)
    c = VolumeCurve.from_arrays(x, np.full(20, 4.0))
    n, logK, _ = fit_dimension_scaling(c, full_band(c))
    assert n == pytest.approx(0.0, abs=1e-12)
    assert logK == pytest.approx(4.0)


def test_fit_matches_normal_equations():
    rng = np.random.default_rng(11)
    x = np.sort(rng.uniform(-2, 1, 50))
    y = 0.3 + 1.7 * x + rng.normal(0, 0.05, 50)
    c = VolumeCurve.from_arrays(x, y)
    got = fit_dimension_scaling(c, full_band(c))
    np.testing.assert_allclose(got, normal_equations(x, y), rtol=0, atol=1e-10)


def test_fit_uses_band_rows_only():
    x = np.linspace(-2, 2, 30)
    y = np.where(np.arange(30) < 10, 5 * x, 2 * x)  # ranks 1..10 follow another law
    c = VolumeCurve.from_arrays(x, y)
    n, _, _ = fit_dimension_scaling(c, Band(11, 30))
    assert n == pytest.approx(2.0, abs=1e-12)


def test_fit_errors():
    c = VolumeCurve.from_arrays([0.0, 0.0, 0.0, 0.0], [0.0, 0.1, 0.2, 0.3])
    with pytest.raises(EstimationError):
        fit_dimension_scaling(c, full_band(c))
    c = VolumeCurve.from_arrays([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    with pytest.raises(EstimationError):
        fit_dimension_scaling(c, Band(2, 3))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_fit_equals_cov_var(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(5, 200))
    x = np.sort(rng.uniform(-5, 2, m))
    y = rng.normal(0, 1) + rng.uniform(0, 5) * x + rng.normal(0, rng.uniform(0, 0.5), m)
    c = VolumeCurve.from_arrays(x, y)
    n, logK, _ = fit_dimension_scaling(c, full_band(c))
    slope, icept = cov_var(x, y)
    assert abs(n - slope) <= 1e-10 * max(1.0, abs(slope))
    assert abs(logK - icept) <= 1e-10 * max(1.0, abs(icept))


# -- debiasing and curvature ------------------------------------------------------------


def test_debias_examples():
    assert debias_scaling(math.log(2.0), 0.0) == pytest.approx(2.0, rel=1e-15)
    assert debias_scaling(0.0, 1.0) == pytest.approx(math.exp(0.5), rel=1e-15)
    with pytest.raises(EstimationError):
        debias_scaling(0.0, -1.0)
    assert debias_scaling(800.0, 0.0) == math.inf


def test_debias_recovers_k_from_noiseless_line():
    x = np.linspace(-4, -1, 60)
    c = VolumeCurve.from_arrays(x, math.log(math.pi) + 2 * x)
    n, logK, sigma = fit_dimension_scaling(c, full_band(c))
    assert debias_scaling(logK, sigma) == pytest.approx(math.pi, abs=1e-9)


def test_ricci_flat_law_is_zero():
    r = np.linspace(0.05, 0.5, 100)
    c = VolumeCurve.from_arrays(np.log(r), volume_law(2, math.pi, 0.0, r))
    assert abs(estimate_ricci(c, full_band(c), 2.0, math.pi)) < 1e-6


def test_ricci_quadratic_law_exact():
    r = np.linspace(0.05, 0.5, 100)
    c = VolumeCurve.from_arrays(np.log(r), volume_law(2, math.pi, 2.0, r))
    assert estimate_ricci(c, full_band(c), 2.0, math.pi) == pytest.approx(2.0, rel=1e-6)


def test_ricci_sphere_area_law_within_five_percent():
    # geodesic ball on the unit sphere: v = 2 pi (1 - cos r), Ric = 2
    r = np.linspace(0.05, 0.5, 100)
    c = VolumeCurve.from_arrays(np.log(r), np.log(2 * math.pi * (1 - np.cos(r))))
    assert estimate_ricci(c, full_band(c), 2.0, math.pi) == pytest.approx(2.0, rel=0.05)


def test_ricci_matches_direct_reimplementation():
    rng = np.random.default_rng(12)
    for _ in range(100):
        m = int(rng.integers(5, 80))
        x = np.sort(rng.uniform(-4, 0, m))
        y = rng.normal() + rng.uniform(0.5, 4) * x + rng.normal(0, 0.1, m)
        c = VolumeCurve.from_arrays(x, y)
        n, K = rng.uniform(0.5, 4), math.exp(rng.normal())
        band = Band(1, m)
        got = estimate_ricci(c, band, n, K)
        ref = ricci_direct(x, y, n, K)
        assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))


def test_ricci_errors():
    c = VolumeCurve.from_arrays([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    with pytest.raises(EstimationError):
        estimate_ricci(c, Band(5, 9), 1.0, 1.0)
    with pytest.raises(EstimationError):
        estimate_ricci(c, Band(1, 3), float("nan"), 1.0)


# -- per-point pipeline -----------------------------------------------------------------


def test_analyze_point_noiseless_power_law():
    for method in est.METHODS:
        e = analyze_point(radii_for_law(2, math.pi, 400), Band(10, 400), method=method)
        assert e.n_hat == pytest.approx(2.0, abs=1e-9)
        assert e.K_prime == pytest.approx(math.pi, abs=1e-9)
        assert abs(e.ric_hat) < 1e-6
        assert e.flags == []


def test_analyze_point_recovers_quadratic_law_exactly():
    r = np.linspace(0.05, 0.5, 300)
    v = np.exp(volume_law(2, math.pi, 2.0, r))
    # express it as radii-by-rank: the same curve, ranks renamed
    c = VolumeCurve.from_arrays(np.log(r), np.log(v))
    n, logK, sigma, cq = est._corrected_fit(c.log_r, c.log_v)
    assert n == pytest.approx(2.0, rel=1e-9)
    assert math.exp(logK) == pytest.approx(math.pi, rel=1e-9)
    assert sigma < 1e-9
    assert 6 * (n + 2) * cq == pytest.approx(2.0, rel=1e-6)


def test_corrected_fit_consistent_with_curvature_mean():
    cloud = syn.sample(syn.ManifoldSpec("sphere", 1.0, Metric.sphere(1.0), 1500, seed=3))
    rep = analyze_cloud(cloud, Metric.sphere(1.0), anchors=range(0, 1500, 50))
    from tokengeom.core_geometry import sorted_radii

    for e in rep.estimates:
        if est.FLAG_SINGULAR in e.flags:
            continue
        c = build_curve(sorted_radii(cloud, Metric.sphere(1.0), e.anchor, e.band.k_hi))
        assert estimate_ricci(c, e.band, e.n_hat, e.K_prime) == pytest.approx(e.ric_hat, rel=1e-8, abs=1e-8)


def test_plain_method_is_single_pass_composition():
    rng = np.random.default_rng(13)
    cloud = PointCloud(rng.normal(size=(400, 3)))
    rep = analyze_cloud(cloud, Metric.euclidean(), Band(10, 200), method="plain", anchors=[0, 7, 99])
    from tokengeom.core_geometry import sorted_radii

    for e in rep.estimates:
        c = build_curve(sorted_radii(cloud, Metric.euclidean(), e.anchor, 200))
        n, logK, sigma = fit_dimension_scaling(c, Band(10, 200))
        K = debias_scaling(logK, sigma)
        assert (e.n_hat, e.logK_hat, e.sigma) == pytest.approx((n, logK, sigma), rel=1e-12)
        assert e.ric_hat == pytest.approx(estimate_ricci(c, Band(10, 200), n, K), rel=1e-12)


def test_singular_anchors_fall_back_to_plain(monkeypatch):
    radii = NeighborRadii(0, np.sort(np.random.default_rng(14).uniform(0.1, 1.0, 300)))
    plain = analyze_point(radii, Band(10, 300), method="plain")
    monkeypatch.setattr(est, "_SINGULAR_TOL", 10.0)
    e = analyze_point(radii, Band(10, 300))
    assert est.FLAG_SINGULAR in e.flags
    assert (e.n_hat, e.K_prime, e.ric_hat) == (plain.n_hat, plain.K_prime, plain.ric_hat)


def test_analyze_point_all_tied_is_degenerate():
    radii = NeighborRadii(0, np.r_[np.full(50, 1.0), np.linspace(2, 3, 50)])
    e = analyze_point(radii, Band(5, 40))
    assert e.degenerate and e.n_hat == 0.0 and math.isnan(e.ric_hat)
    assert e.usable_rows == 36


def test_analyze_point_reports_duplicates():
    radii = NeighborRadii(0, np.r_[0.0, 0.0, np.linspace(0.1, 1, 100)])
    e = analyze_point(radii, Band(5, 100))
    assert e.duplicates == 2 and est.FLAG_DUPLICATES in e.flags


def test_unknown_method():
    with pytest.raises(EstimationError):
        analyze_point(radii_for_law(1, 2, 20), Band(2, 20), method="magic")


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 4.0), st.floats(0.1, 10.0), st.floats(1e-3, 1e3))
def test_property_scale_covariance(n, K, scale):
    radii = radii_for_law(n, K, 300)
    band = Band(10, 300)
    a = analyze_point(radii, band, method="plain")
    b = analyze_point(NeighborRadii(0, radii.radii * scale), band, method="plain")
    assert b.n_hat == pytest.approx(a.n_hat, abs=1e-9)
    assert b.logK_hat - a.logK_hat == pytest.approx(-a.n_hat * math.log(scale), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(est.METHODS))
def test_property_k_prime_identity(seed, method):
    rng = np.random.default_rng(seed)
    radii = NeighborRadii(0, np.sort(rng.exponential(1.0, 200)))
    e = analyze_point(radii, Band(5, 200), method=method)
    if not e.degenerate:
        assert e.K_prime == math.exp(e.logK_hat) * math.exp(e.sigma**2 / 2)


# -- whole clouds ----------------------------------------------------------------------


def test_two_point_cloud_is_degenerate():
    rep = analyze_cloud(PointCloud([[0.0, 0.0], [1.0, 1.0]]), Metric.euclidean())
    assert len(rep.estimates) == 2
    assert all(e.degenerate for e in rep.estimates)


def test_band_above_k_max_rejected():
    cloud = PointCloud(np.random.default_rng(0).normal(size=(50, 2)))
    with pytest.raises(EstimationError):
        analyze_cloud(cloud, Metric.euclidean(), Band(5, 40), k_max=30)


def test_analyze_cloud_invariant_to_workers_and_order():
    rng = np.random.default_rng(15)
    cloud = PointCloud(rng.normal(size=(600, 5)))
    anchors = rng.choice(600, 120, replace=False)
    a = analyze_cloud(cloud, Metric.euclidean(), Band(10, 100), anchors=anchors)
    perm = rng.permutation(120)
    b = analyze_cloud(cloud, Metric.euclidean(), Band(10, 100), anchors=anchors[perm], workers=3)
    for j, e in zip(perm, b.estimates):
        assert e.as_dict() == a.estimates[j].as_dict() or (
            e.degenerate and a.estimates[j].degenerate)


def test_analyze_cloud_report_has_cohort_quartiles():
    rng = np.random.default_rng(16)
    cloud = PointCloud(rng.normal(size=(300, 2)), labels=[str(i % 7) if i % 2 else "w" for i in range(300)])
    from tokengeom.stats import cohort_masks

    rep = analyze_cloud(cloud, Metric.euclidean(), Band(10, 100), cohorts=cohort_masks(cloud.labels))
    assert set(rep.cohorts) == {"numeric", "non-numeric"}
    s = rep.cohorts["numeric"]["n_hat"]
    assert s.q1 <= s.q2 <= s.q3 and s.count == 150
    assert rep.ks[0]["field"] == "n_hat"
    assert rep.tokens == list(cloud.labels)


def test_circle_dimension_iqr_contains_one():
    spec = syn.ManifoldSpec("circle", 1.0, Metric.circle(1.0), 2000, seed=0)
    cloud = syn.sample(spec)
    rep = analyze_cloud(cloud, spec.metric, anchors=range(0, 2000, 4))
    q = np.quantile(rep.column("n_hat"), [0.25, 0.75])
    assert q[0] <= 1.0 <= q[1]


def test_circle_euclidean_median_ricci_negative():
    spec = syn.ManifoldSpec("circle", 1.0, Metric.euclidean(), 2000, seed=1)
    rep = analyze_cloud(syn.sample(spec), spec.metric, anchors=range(0, 2000, 4))
    assert np.median(rep.column("ric_hat")) < 0


def test_disk_interior_scaling_near_pi():
    spec = syn.ManifoldSpec("disk", 0.5, Metric.euclidean(), 5000, seed=2)
    cloud = syn.sample(spec)
    inner = np.flatnonzero(syn.distance_to_boundary(spec, cloud.coords) > 0.25)
    log_m = math.log(spec.total_volume() / (cloud.p - 1))
    rep = analyze_cloud(cloud, spec.metric, Band(20, 200), anchors=inner, log_offset=log_m)
    assert np.median(rep.column("K_prime")) == pytest.approx(math.pi, rel=0.2)
