import numpy as np
import pytest

from lbconvex.boundary_flux import BoundaryTemperature, DivergenceError, WallFlux
from lbconvex.collision import EquilibriumSource, KineticModel
from lbconvex.geometry import Ellipsoid, Sphere
from lbconvex.geometry_checks import random_boundary_points, random_interior_points
from lbconvex.transport import (
    DistributionField,
    G_velocity_form,
    G_volume_form,
    boundary_value,
    decompose_I_II_III,
    evaluate_f,
    picard_solve,
    rhs_at_nodes,
)
from lbconvex.velocity import VelocityGrid
from lbconvex.volume import star_shells


def test_equilibrium_field(grid, model):
    vol = star_shells(Sphere())
    f = DistributionField.equilibrium(vol, grid, model, 0.2, 0.05)
    s2 = grid.node_speeds**2
    expected = (0.2 + 0.05 * (s2 - 2)) * np.pi**-0.75 * np.exp(-0.5 * s2)
    assert np.allclose(f.values, expected[None, :])
    assert np.allclose(f.Kf, (expected * 0 + f.Kf[0])[None, :])
    assert np.allclose(f.at(np.array([[0.1, 0.2, 0.3]]), grid.nodes[:3]), expected[:3])


@pytest.mark.parametrize("domain", [Sphere(), Ellipsoid()], ids=lambda d: d.name)
def test_equilibrium_is_a_fixed_point(domain, grid, model, rng):
    c, t0 = 0.1, 0.05
    mesh = domain.mesh(8)
    psi = WallFlux.constant(mesh, c)
    src = EquilibriumSource(model, c, t0)
    X = random_interior_points(domain, rng, 20)
    Z = rng.normal(size=(20, 3))
    out = evaluate_f(domain, grid, model, psi, BoundaryTemperature.constant(t0), src, X, Z)
    assert np.allclose(out, src.f(Z), atol=1e-7)


def test_no_collisions_transports_the_boundary_value(grid):
    S = Sphere()
    free = KineticModel().scaled(0.0)
    T = BoundaryTemperature.linear(1.0, (0.2, 0, 0))
    x, z = np.array([0.1, 0.2, 0.0]), np.array([0.5, -1.0, 0.3])
    psi = WallFlux.constant(S.mesh(8), 0.3)
    assert evaluate_f(S, grid, free, psi, T, None, x, z) == pytest.approx(boundary_value(S, psi, T, S.exit_ray(x, z).exit_point, z))


def test_rhs_at_boundary_returns_boundary_value_for_incoming(grid, model):
    S = Sphere()
    p = np.array([[0.0, 0.0, 1.0]])
    mesh = S.mesh(8)
    psi = WallFlux.constant(mesh, 0.2)
    T = BoundaryTemperature.constant(0.05)
    fld = DistributionField.equilibrium(star_shells(S), grid, model, 0.2, 0.05)
    vals, graze = rhs_at_nodes(S, grid, model, psi, T, fld, p)
    incoming = grid.nodes[:, 2] < -1e-3
    assert np.allclose(vals[0, incoming], fld.values[0, incoming], atol=1e-10)
    assert graze.shape == vals.shape


def test_picard_divergence_carries_history(model):
    S = Sphere()
    g = VelocityGrid(6, 5)
    with pytest.raises(DivergenceError) as e:
        picard_solve(S, g, model, star_shells(S, 4, 5), S.mesh(8), 0.05, max_iters=3, n_probes=0)
    assert len(e.value.history) == 3 and len(e.value.steps) == 3


def test_plain_picard_steps_equal_residuals(model):
    S = Sphere()
    g = VelocityGrid(6, 5)
    r = picard_solve(S, g, model, star_shells(S, 4, 5), S.mesh(8), 0.05, tol=1e-4, anderson=0, n_probes=0)
    assert r.converged and np.allclose(r.steps, r.updates)
    assert r.contraction < 1


def test_sphere_solution_exact(sphere_solution):
    r = sphere_solution.result
    exact = DistributionField.equilibrium(sphere_solution.volume, sphere_solution.grid, sphere_solution.model, 0.0, 0.05)
    assert np.max(np.abs(r.field.values - exact.values)) / np.max(np.abs(exact.values)) < 5e-3
    assert np.ptp(r.psi.values) < 1e-4


def test_decomposition_sums_to_rhs(ellipsoid_solution, rng):
    s = ellipsoid_solution
    r = s.result
    X = random_interior_points(s.domain, rng, 5)
    Z = rng.normal(size=(5, 3))
    dec = np.array([sum(decompose_I_II_III(s.domain, s.grid, s.model, r.psi, r.T, r.field, x, z)) for x, z in zip(X, Z)])
    ref = evaluate_f(s.domain, s.grid, s.model, r.psi, r.T, r.field, X, Z)
    assert np.max(np.abs(dec - ref)) / np.max(np.abs(ref)) < 2e-2


def test_G_velocity_and_volume_forms_interior(grid, model):
    S = Sphere()
    src = EquilibriumSource(model, 1.0)
    fld = DistributionField.equilibrium(star_shells(S), grid, model, 1.0, 0.0)
    x, z = np.array([0.1, -0.2, 0.05]), np.array([0.6, 0.2, -0.4])
    v = G_velocity_form(S, grid, model, fld, x, z)
    w = G_volume_form(S, grid, model, src, x, z)
    assert v == pytest.approx(w, rel=2e-2)


def test_II_against_nested_quadrature(grid, model):
    """psi = 1, T = 0, f = 0: II = int_0^tau e^{-nu s} int k(zeta, z) M^(1/2)(z) e^{-nu(|z|) tau(y, z)} dz ds."""
    from scipy.integrate import quad

    from lbconvex.collision import apply_K_centered, collision_frequency, sqrt_maxwellian

    S = Sphere()
    psi = WallFlux.constant(S.mesh(16), 1.0)
    for x, z in [(np.array([0.2, -0.1, 0.3]), np.array([0.8, 0.4, -0.3])), (np.array([0.0, 0.5, 0.0]), np.array([-0.2, 1.5, 0.6]))]:
        s = np.linalg.norm(z)
        nu = float(collision_frequency(model, s))
        tau = S.chord(x, z / s) / s

        def boundary_part(Zs, y):
            sp = np.linalg.norm(Zs, axis=1)
            L = S.chord(np.broadcast_to(y, Zs.shape), Zs / sp[:, None])
            return sqrt_maxwellian(Zs) * np.exp(-collision_frequency(model, sp) * L / sp)

        inner = lambda t: np.exp(-nu * t) * apply_K_centered(model, lambda Zs: boundary_part(Zs, x - t * z), z)
        oracle, _ = quad(inner, 0.0, tau, epsrel=1e-6, limit=100)
        _, II, _ = decompose_I_II_III(S, grid, model, psi, 0.0, None, x, z)
        assert II == pytest.approx(oracle, rel=2e-2)
        _, II_fine, _ = decompose_I_II_III(S, VelocityGrid(24, 11), model, psi, 0.0, None, x, z, n_s=64)
        assert II_fine == pytest.approx(oracle, rel=2e-3)


def test_contraction_grows_with_collision_rate():
    """More collisions per transit (optically thicker domain) slow plain Picard."""
    S = Sphere()
    g, vol, mesh = VelocityGrid(6, 5), star_shells(S, 4, 5), S.mesh(8)
    T = BoundaryTemperature.linear(1.0, (0.1, 0, 0))
    rates = [
        picard_solve(S, g, KineticModel().scaled(nu), vol, mesh, T, tol=1e-5, anderson=0, n_probes=0).contraction
        for nu in (0.25, 0.5, 1.0)
    ]
    assert np.all(np.diff(rates) > 0) and rates[-1] < 1
