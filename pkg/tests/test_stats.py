import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from tokengeom.stats import (
    classify_token,
    cohort_masks,
    ks_two_sample,
    kolmogorov_q,
    quartiles,
    summarize,
)


def test_quartile_examples():
    assert quartiles([1, 2, 3, 4, 5]) == (2.0, 3.0, 4.0)
    assert quartiles([7.5]) == (7.5, 7.5, 7.5)
    assert quartiles([1, 2, 3, 4]) == (1.75, 2.5, 3.25)


def test_quartiles_uniform_sample():
    x = np.random.default_rng(0).uniform(0, 1, 1000)
    np.testing.assert_allclose(quartiles(x), (0.25, 0.5, 0.75), atol=0.05)


def test_quartile_errors():
    with pytest.raises(ValueError):
        quartiles([])
    with pytest.raises(ValueError):
        quartiles([1.0, float("nan")])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
def test_property_quartiles_ordered(xs):
    q1, q2, q3 = quartiles(xs)
    assert min(xs) <= q1 <= q2 <= q3 <= max(xs)


def test_ks_identical_and_disjoint():
    a = np.arange(1000) / 1000
    assert ks_two_sample(a, a) == (0.0, 1.0)
    d, p = ks_two_sample(a, a + 10)
    assert d == 1.0 and p < 1e-100


def test_ks_errors():
    with pytest.raises(ValueError):
        ks_two_sample([], [1.0])


def test_kolmogorov_q_known_values():
    assert kolmogorov_q(0.0) == 1.0
    # scipy's Kolmogorov survival function as an independent reference
    for lam in (0.3, 0.5, 1.0, 1.36, 2.0):
        assert kolmogorov_q(lam) == pytest.approx(sps.kstwobign.sf(lam), rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_ks_statistic_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1, int(rng.integers(1, 300)))
    b = rng.normal(rng.uniform(-1, 1), 1, int(rng.integers(1, 300)))
    d, p = ks_two_sample(a, b)
    ref = sps.ks_2samp(a, b, method="asymp")
    assert d == pytest.approx(ref.statistic, abs=1e-12)
    ne = a.size * b.size / (a.size + b.size)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    assert p == pytest.approx(max(sps.kstwobign.sf(lam), np.finfo(float).tiny), rel=1e-8, abs=1e-12)
    assert 0.0 < p <= 1.0


def test_ks_separates_shifted_samples():
    rng = np.random.default_rng(3)
    _, p = ks_two_sample(rng.normal(0, 1, 2000), rng.normal(0.3, 1, 500))
    assert p < 1e-3


def test_token_classes():
    assert classify_token("42") == "numeric"
    assert classify_token(" 1999") == "numeric"
    assert classify_token("x7") == "numeric"
    assert classify_token("٣") == "numeric"  # Arabic-Indic digit three
    assert classify_token("hello") == "non-numeric"
    assert classify_token(" the") == "non-numeric"
    assert classify_token("") == "non-numeric"
    m = cohort_masks(["a", "1", "b2", "c"])
    np.testing.assert_array_equal(m["numeric"], [False, True, True, False])
    np.testing.assert_array_equal(m["non-numeric"], [True, False, False, True])


def test_summarize_skips_non_finite():
    s = summarize("x", [1.0, 2.0, float("nan"), 3.0])
    assert (s.count, s.q1, s.q2, s.q3) == (3, 1.5, 2.0, 2.5)
    empty = summarize("y", [float("nan")])
    assert empty.count == 0 and math.isnan(empty.q2)
