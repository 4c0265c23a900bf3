import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbconvex.geometry import Ellipsoid, Sphere
from lbconvex.geometry_checks import random_boundary_points
from lbconvex.regularity import (
    MIN_POINTS,
    RegularityConfig,
    _exponent_report,
    _fd_gradient,
    _ratio_report,
    bounded_ratios,
    fit_power_law,
    ladder_points,
)


@settings(max_examples=30, deadline=None)
@given(p=st.floats(-2.0, 2.0), C=st.floats(0.1, 10.0))
def test_fit_power_law_exact_data(p, C):
    x = np.geomspace(1.0, 100.0, 10)
    C_fit, p_fit, (lo, hi) = fit_power_law(x, C * x**p)
    assert p_fit == pytest.approx(p, abs=1e-9)
    assert C_fit == pytest.approx(C, rel=1e-9)
    assert hi - lo < 1e-6


def test_fit_power_law_interval_covers_truth_under_noise():
    rng = np.random.default_rng(0)
    x = np.geomspace(1.0, 50.0, 40)
    hits = 0
    for _ in range(200):
        y = 2.0 * x**0.7 * np.exp(0.05 * rng.normal(size=x.size))
        _, _, (lo, hi) = fit_power_law(x, y)
        hits += lo <= 0.7 <= hi
    assert 0.9 <= hits / 200 <= 0.99


def test_fit_power_law_groups_share_slope():
    x = np.tile(np.geomspace(1, 10, 5), 3)
    groups = np.repeat([0, 1, 2], 5)
    y = np.array([1.0, 5.0, 0.2])[groups] * x**1.3
    C, p, _ = fit_power_law(x, y, groups)
    assert p == pytest.approx(1.3)
    assert C == pytest.approx(1.0)  # geometric mean of 1, 5 and 0.2


def test_bounded_ratios():
    assert bounded_ratios([1, 2, 3, 4, 5], 10)
    assert not bounded_ratios([1, 1, 1, 1, 100], 10)
    assert not bounded_ratios([1, 2, np.inf], 10)
    assert not bounded_ratios([0, 0, 0], 10)


def test_ratio_report_inconclusive_below_min_points():
    cfg = RegularityConfig()
    s = np.geomspace(1e-3, 0.1, MIN_POINTS - 1)
    r = _ratio_report("x", s, s, s, cfg)
    assert r.status == "inconclusive" and r.passed
    s = np.geomspace(1e-3, 0.1, MIN_POINTS)
    r = _ratio_report("x", s, 2 * s, s, cfg)
    assert r.status == "pass" and r.fitted_exponent == pytest.approx(1.0)
    assert len(list(r.rows())) == MIN_POINTS


def test_exponent_report_against_bound():
    cfg = RegularityConfig()
    d = np.tile([0.2, 0.1, 0.05, 0.025], 3)
    groups = np.repeat([0, 1, 2], 4)
    x = 1 + 1 / d
    stable = np.ones(d.size, bool)
    assert _exponent_report("a", d, x**1.0, groups, 1.5, cfg, stable).status == "pass"
    assert _exponent_report("b", d, x**2.0, groups, 1.5, cfg, stable).status == "fail"
    few = _exponent_report("c", d, x**1.0, groups, 1.5, cfg, d > 0.05)
    assert few.status == "inconclusive"
    flat = _exponent_report("d", d, np.full(d.size, 1e-9), groups, 1.5, cfg, stable, null_floor=1e-6)
    assert flat.status == "pass" and flat.fitted_exponent == 0.0
    assert set(flat.verdict()) >= {"check", "exponent", "ci_low", "ci_high", "status", "pass"}


@pytest.mark.parametrize("domain", [Sphere(), Ellipsoid()], ids=lambda d: d.name)
def test_ladder_points_sit_at_requested_distance(domain, rng):
    base = random_boundary_points(domain, rng, 3)
    X, d, grp = ladder_points(domain, base, (0.2, 0.1, 0.05))
    assert X.shape == (9, 3) and list(grp) == [0, 0, 0, 1, 1, 1, 2, 2, 2]
    # the normal line is a shortest path for small d on smooth convex domains
    assert np.allclose(d, np.tile([0.2, 0.1, 0.05], 3), atol=1e-6)


def test_fd_gradient_of_linear_map():
    a = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]])
    g = _fd_gradient(lambda P: P @ a.T, np.array([[0.1, 0.2, 0.3]]), 1e-3)
    assert np.allclose(g[0], np.abs(a).sum(axis=1))


def test_interior_gradient_of_constant_temperature_solution_is_flat(sphere_solution):
    from lbconvex.regularity import probe_interior_gradient

    cfg = RegularityConfig(n_base=2)
    rx = probe_interior_gradient(sphere_solution.domain, sphere_solution.result, cfg)[0]
    assert rx.passed
    assert math.isfinite(rx.fitted_exponent) and rx.fitted_exponent < 0.5
