import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbconvex.geometry import Ellipsoid, Sphere
from lbconvex.velocity import LEBEDEV_ORDERS, VelocityGrid, hemisphere_rule, tangent_frame
from lbconvex.volume import VolumeMesh, star_shells


@pytest.mark.parametrize("n_radial, rel", [(8, 1e-3), (12, 1e-5), (16, 1e-8), (24, 1e-13)])
def test_gaussian_mass_converges(n_radial, rel):
    assert VelocityGrid(n_radial).gaussian_mass() == pytest.approx(np.pi**1.5, rel=rel)


def test_grid_layout_is_speed_major():
    g = VelocityGrid()
    assert g.size == 12 * 26
    assert np.allclose(g.node_speeds, np.linalg.norm(g.nodes, axis=1))
    assert np.all(np.diff(g.speeds) > 0) and g.speeds[0] > 0 and g.speeds[-1] < g.zeta_max


@pytest.mark.parametrize("kw", [dict(n_radial=1), dict(angular_order=4), dict(zeta_max=0.0), dict(grazing_cutoff=0.0)])
def test_grid_validation(kw):
    with pytest.raises(ValueError):
        VelocityGrid(**kw)


def test_with_zeta_max_keeps_nodes():
    g = VelocityGrid()
    g8 = g.with_zeta_max(8.0)
    assert g8.zeta_max == 8.0
    assert np.allclose(g8.nodes[: g.size], g.nodes)
    assert g8.gaussian_mass() == pytest.approx(g.gaussian_mass(), rel=1e-12)
    assert g.with_zeta_max(5.0).n_radial == g.n_radial


def test_refined_doubles_radial_nodes():
    r = VelocityGrid().refined()
    assert r.n_radial == 24 and r.angular_order in LEBEDEV_ORDERS and r.angular_order >= 15


@settings(max_examples=25, deadline=None)
@given(c=st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_interpolation_exact_for_low_degree(c):
    g = VelocityGrid()
    f = lambda z: (c[0] + c[1] * z[:, 0] + c[2] * z[:, 1] * z[:, 2] + c[3] * np.sum(z * z, axis=1)) * np.exp(-0.5 * np.sum(z * z, axis=1))
    z = np.random.default_rng(0).normal(size=(20, 3))
    fine = g.refined()
    coarse_err = np.abs(g.interpolate(f(g.nodes), z) - f(z)).max()
    fine_err = np.abs(fine.interpolate(f(fine.nodes), z) - f(z)).max()
    assert coarse_err < 1e-2 and fine_err < 1e-6


def test_interpolation_truncates_beyond_zeta_max():
    g = VelocityGrid()
    assert g.interpolation_matrix(np.array([[7.0, 0, 0]])).sum() == 0.0


def test_hemisphere_rule_integrates_cosine():
    n = np.array([0.3, -0.2, 0.9])
    dirs, w = hemisphere_rule(n)
    n = n / np.linalg.norm(n)
    assert w.sum() == pytest.approx(2 * np.pi)
    assert w @ (dirs @ n) == pytest.approx(np.pi)
    assert np.all(dirs @ n > 0)


def test_tangent_frame_is_orthonormal():
    n = np.array([0.0, 0.6, 0.8])
    e1, e2 = tangent_frame(n)
    M = np.stack([e1, e2, n])
    assert np.allclose(M @ M.T, np.eye(3))
    assert np.linalg.det(M) == pytest.approx(1.0)


@pytest.mark.parametrize("domain", [Sphere(), Ellipsoid()], ids=lambda d: d.name)
def test_star_shells_inside_domain(domain):
    v = star_shells(domain)
    assert 550 <= len(v) <= 650
    assert np.all(domain.F(v.nodes) < 0)


def test_shepard_weights_partition_of_unity_and_node_hits():
    v = star_shells(Sphere())
    idx, w = v.weights(v.nodes[:10])
    assert np.allclose(w[:, 0], 1.0) and np.all(idx[:, 0] == np.arange(10))
    pts = np.random.default_rng(1).uniform(-0.5, 0.5, (50, 3))
    idx, w = v.weights(pts)
    assert np.allclose(w.sum(axis=1), 1.0) and np.all(w >= 0)


def test_shepard_interpolant_reproduces_constants_and_is_continuous():
    v = star_shells(Sphere())
    vals = np.sin(v.nodes[:, 0]) + v.nodes[:, 2]
    assert np.allclose(v.interpolate(np.ones(len(v)), np.zeros((3, 3))), 1.0)
    x = np.array([0.31, -0.12, 0.4])
    h = np.logspace(-4, -9, 6)
    jumps = [abs(v.interpolate(vals, (x + t)[None]) - v.interpolate(vals, x[None]))[0] for t in h]
    assert jumps[-1] < 1e-6


def test_tie_breaking_falls_back_to_averages():
    cube = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    v = VolumeMesh(cube)
    _, w = v.weights(np.full((1, 3), 0.5))
    assert np.allclose(w, 0.25)
