import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbconvex.boundary_flux import (
    B_T,
    B_T_surface_form,
    B_psi_matrix,
    B_psi_surface_form,
    B_psi_velocity_form,
    BoundaryTemperature,
    D_f_velocity_form,
    D_f_volume_form,
    DivergenceError,
    FluxOperator,
    WallFlux,
    _Df_from,
    psi_moment,
    surface_interpolator,
)
from lbconvex.collision import EquilibriumSource, sqrt_maxwellian
from lbconvex.geometry import Ellipsoid, Sphere
from lbconvex.geometry_checks import random_boundary_points
from lbconvex.suites import random_quadratic, synthetic_field
from lbconvex.volume import star_shells


def test_temperature_kinds_and_gradient():
    T = BoundaryTemperature(1.0, (0.1, 0.0, -0.2), 0.5, (0.0, 0.0, 1.0), 0.4)
    x = np.array([[0.3, -0.1, 0.8]])
    h = 1e-6
    fd = np.array([(T(x + h * e) - T(x - h * e))[0] / (2 * h) for e in np.eye(3)])
    assert np.allclose(T.gradient(x)[0], fd, atol=1e-7)
    assert BoundaryTemperature.constant(0.05).is_constant
    assert not BoundaryTemperature.linear(1.0, (0.1, 0, 0)).is_constant
    assert BoundaryTemperature.linear(1.0, (0.1, 0, 0))(np.array([2.0, 5.0, 5.0])) == pytest.approx(1.2)


def test_temperature_validation():
    with pytest.raises(ValueError):
        BoundaryTemperature(width=0.0)
    with pytest.raises(ValueError):
        BoundaryTemperature(slope=(1.0, 2.0))


def test_wall_flux_validation_and_mean():
    mesh = Sphere().mesh(8)
    assert WallFlux.constant(mesh, 0.3).mean == pytest.approx(0.3)
    with pytest.raises(ValueError):
        WallFlux(mesh, np.zeros(3))
    with pytest.raises(ValueError):
        WallFlux(mesh, np.full(len(mesh), np.nan))


@pytest.mark.parametrize("domain", [Sphere(), Ellipsoid()], ids=lambda d: d.name)
def test_surface_interpolator_constants_and_linear_convergence(domain, rng):
    p = random_boundary_points(domain, rng, 40)
    a = np.array([0.3, -0.2, 0.5])
    errs = []
    for level in (16, 32):
        mesh = domain.mesh(level)
        idx, w = surface_interpolator(mesh).weights(p, domain.normal(p))
        assert np.allclose(w.sum(axis=-1), 1.0)
        errs.append(np.abs(np.sum((mesh.nodes @ a)[idx] * w, axis=-1) - p @ a).max())
    assert errs[0] < 2e-2 and errs[1] < 0.75 * errs[0]


def test_psi_moment_of_equilibria(grid):
    S = Sphere()
    x = np.array([0.0, 0.0, 1.0])
    assert psi_moment(S, grid, sqrt_maxwellian, x) == pytest.approx(1.0, rel=1e-5)
    energy = lambda z: (np.sum(z * z, axis=1) - 2) * sqrt_maxwellian(z)
    assert abs(psi_moment(S, grid, energy, x)) < 1e-4


def test_no_damping_makes_B_psi_neutral(grid, model):
    S = Sphere()
    free = model.scaled(0.0)
    P = random_boundary_points(S, np.random.default_rng(0), 3)
    assert np.allclose(B_psi_velocity_form(S, grid, free, 1.0, P), 1.0, atol=1e-5)
    assert FluxOperator(S, grid, free, S.mesh(8)).neutral
    assert not FluxOperator(S, grid, model, S.mesh(8)).neutral


@pytest.mark.parametrize("domain", [Sphere(), Ellipsoid()], ids=lambda d: d.name)
def test_B_psi_velocity_and_surface_forms(domain, grid, model, rng):
    P = random_boundary_points(domain, rng, 3)
    v = B_psi_velocity_form(domain, grid, model, 1.0, P, 16, 32)
    s = np.array([B_psi_surface_form(domain, model, 1.0, p) for p in P])
    assert np.all((v > 0) & (v < 1))
    assert np.allclose(v, s, rtol=1e-3)
    mesh = domain.mesh(16)
    psi = WallFlux(mesh, random_quadratic(mesh.nodes, rng))
    x = P[0]
    assert B_psi_velocity_form(domain, grid, model, psi, x, 16, 32) == pytest.approx(B_psi_surface_form(domain, model, psi, x), rel=1e-2)


def test_B_T_forms_agree(grid, model, rng):
    S = Sphere()
    T = BoundaryTemperature.linear(1.0, (0.1, 0.0, 0.0))
    x = random_boundary_points(S, rng, 1)[0]
    assert B_T(S, grid, model, T, x) == pytest.approx(B_T_surface_form(S, model, T, x), rel=2e-2, abs=1e-4)


def test_B_psi_matrix_rows_are_constant_response(grid, model):
    S = Sphere()
    mesh = S.mesh(8)
    B = B_psi_matrix(S, grid, model, mesh)
    assert np.allclose(B.sum(axis=1), B_psi_velocity_form(S, grid, model, 1.0, mesh.nodes), rtol=1e-8)


@pytest.mark.parametrize("domain", [Sphere(), Ellipsoid()], ids=lambda d: d.name)
def test_D_f_velocity_and_volume_forms(domain, grid, model, rng):
    source = synthetic_field(star_shells(domain), grid, model)
    P = random_boundary_points(domain, rng, 2)
    v = D_f_velocity_form(domain, grid, model, source, P)
    w = np.array([D_f_volume_form(domain, grid, model, source, p) for p in P])
    assert np.allclose(v, w, rtol=1e-2)


def test_dense_D_f_map_matches_ray_quadrature(grid, model):
    S = Sphere()
    op = FluxOperator(S, grid, model, S.mesh(8))
    source = synthetic_field(star_shells(S), grid, model)
    direct = _Df_from(op.hs, model, grid, source, op.n_r)
    assert np.allclose(op.D_f(source), direct, rtol=1e-5)


def test_flux_solve_fixed_point(grid, model):
    S = Sphere()
    op = FluxOperator(S, grid, model, S.mesh(8))
    rhs = op.B_T(BoundaryTemperature.linear(1.0, (0.1, 0, 0))) + op.D_f(EquilibriumSource(model, 0.2))
    psi, its = op.solve(rhs, anchor=0.0)
    resid = psi.values - (rhs + op.B @ psi.values)
    assert np.ptp(resid) < 1e-10  # equal up to the anchored constant
    assert psi.mean == pytest.approx(0.0, abs=1e-12)


def test_flux_solve_reports_divergence(grid, model):
    S = Sphere()
    op = FluxOperator(S, grid, model, S.mesh(8))
    op.B = 2.0 * np.eye(len(op.mesh))
    with pytest.raises(DivergenceError) as e:
        op.solve(np.ones(len(op.mesh)), anchor=None, max_iters=100)
    assert len(e.value.history) > 1


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0.1, 2.0))
def test_B_psi_linear_in_psi(c):
    from lbconvex.collision import KineticModel
    from lbconvex.velocity import VelocityGrid

    S, g, m = Sphere(), VelocityGrid(8, 5), KineticModel()
    x = np.array([0.0, 0.6, 0.8])
    assert B_psi_velocity_form(S, g, m, c, x) == pytest.approx(c * B_psi_velocity_form(S, g, m, 1.0, x), rel=1e-12)
