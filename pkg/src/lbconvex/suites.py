"""The verification suites behind the command line, as plain functions of a RunConfig.

Each suite returns result objects; writing files is left to the caller.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .boundary_flux import (
    B_psi_surface_form,
    B_psi_velocity_form,
    D_f_velocity_form,
    D_f_volume_form,
    WallFlux,
)
from .collision import (
    apply_K_nodal,
    weighted_decay_check,
    weighted_kernel_integral,
    collision_frequency,
    collision_matrix,
    kernel,
    kernel_bound_ratios,
    kernel_gradient_bound_ratios,
    kernel_velocity_gradient,
    sqrt_maxwellian,
)
from .geometry_checks import random_boundary_points, random_interior_points, run_geometry_suite
from .report import CheckTable
from .transport import (
    DistributionField,
    III_volume_form,
    decompose_I_II_III,
    evaluate_f,
    node_residual,
    picard_solve,
)

WEIGHTED_INTEGRAL_PARAMS = (0.5, 0.25, 0.25)  # epsilon, a1, a2
WEIGHTED_INTEGRAL_SPEEDS = (0.0, 1.0, 2.0, 4.0, 8.0)
# hemisphere rule (n_mu, n_phi) for the velocity side of the B_psi identity checks;
# the solver default (8, 16) loses ~1e-3 on long ellipsoid chords
FORM_CHECK_RULE = (16, 32)
INVARIANT_NAMES = ("sqrtM", "zeta1_sqrtM", "zeta2_sqrtM", "zeta3_sqrtM", "energy_sqrtM")


# -- collision ----------------------------------------------------------------------
@dataclass
class CollisionRow:
    check_name: str
    parameter: str
    value: float
    bound: float
    passed: bool

    def row(self):
        return [self.check_name, self.parameter, _num(self.value), _num(self.bound), int(self.passed)]


COLLISION_COLUMNS = ["check_name", "parameter", "value", "bound", "pass"]


def _num(v):
    v = float(v)
    return v if not math.isfinite(v) else float(f"{v:.12g}")


def invariance_errors(model, grid):
    """max |K g - nu g| / max |nu g| at the grid nodes for the five collision invariants."""
    K = collision_matrix(model, grid)
    Z = grid.nodes
    s = np.linalg.norm(Z, axis=1)
    sq = sqrt_maxwellian(Z)
    nu = collision_frequency(model, s)
    out = {}
    for name, g in zip(INVARIANT_NAMES, (sq, Z[:, 0] * sq, Z[:, 1] * sq, Z[:, 2] * sq, s * s * sq)):
        out[name] = float(np.max(np.abs(K @ g - nu * g)) / np.max(np.abs(nu * g)))
    return out


def weighted_integral_at_rest(epsilon, a1, a2):
    """Closed form at eta = 0: 4 pi int r^(eps-1) e^{-(a1+a2) r^2} dr."""
    return 2 * np.pi * gamma_fn(epsilon / 2) * (a1 + a2) ** (-epsilon / 2)


def _random_velocity_pairs(rng, n, scale=2.0):
    a = rng.standard_normal((n, 3)) * scale / np.sqrt(3)
    b = rng.standard_normal((n, 3)) * scale / np.sqrt(3)
    return a, b


def collision_suite(cfg, tol=1e-2, improvement=2.0, spread=5.0):
    model, grid = cfg.build_model(), cfg.build_grid()
    rng = np.random.default_rng(cfg.run.seed)
    rows = []
    coarse, fine = invariance_errors(model, grid), invariance_errors(model, grid.refined())
    for name in INVARIANT_NAMES:
        rows.append(CollisionRow("collision_invariance", f"{name}@default", coarse[name], tol, coarse[name] <= tol))
        rows.append(CollisionRow("collision_invariance", f"{name}@refined", fine[name], tol, fine[name] <= tol))
        gain = coarse[name] / max(fine[name], 1e-300)
        rows.append(CollisionRow("collision_invariance_refinement", name, gain, improvement, gain >= improvement))
    eps, a1, a2 = WEIGHTED_INTEGRAL_PARAMS
    table = weighted_decay_check(eps, a1, a2, WEIGHTED_INTEGRAL_SPEEDS)
    lo = min(v for _, v in table)
    for s, v in table:
        rows.append(CollisionRow("weighted_integral_decay", f"eta={s:g}", v, spread * lo, v <= spread * lo))
    exact = weighted_integral_at_rest(eps, a1, a2)
    err = abs(weighted_kernel_integral(eps, a1, a2, 0.0) - exact) / exact
    rows.append(CollisionRow("weighted_integral_at_rest", "eta=0", err, 1e-8, err <= 1e-8))
    nu0 = float(collision_frequency(model, 0.0))
    exact = 2 * np.pi * model.beta0 * model.nu_scale
    err = abs(nu0 - exact) / exact
    rows.append(CollisionRow("nu_at_zero_closed_form", "speed=0", err, 1e-10, err <= 1e-10))
    sweep = np.linspace(0.0, grid.zeta_max, 121)
    q = collision_frequency(model, sweep) / (1 + sweep)
    rows.append(CollisionRow("nu_linear_growth", "nu1/nu0", q.max() / q.min(), math.inf, bool(q.min() > 0)))
    a, b = _random_velocity_pairs(rng, 100)
    asym = np.max(np.abs(kernel(model, a, b) - kernel(model, b, a)) / np.abs(kernel(model, a, b)))
    rows.append(CollisionRow("kernel_symmetry", "pairs=100", asym, 1e-12, asym <= 1e-12))
    h = 1e-5
    fd = np.stack([(kernel(model, a + h * e, b) - kernel(model, a - h * e, b)) / (2 * h) for e in np.eye(3)], axis=-1)
    an = kernel_velocity_gradient(model, a, b)
    gerr = np.max(np.linalg.norm(fd - an, axis=1) / np.linalg.norm(an, axis=1))
    rows.append(CollisionRow("kernel_gradient_fd", "pairs=100", gerr, 1e-5, gerr <= 1e-5))
    a, b = _random_velocity_pairs(rng, 2000, scale=3.0)
    c1 = np.max(kernel_bound_ratios(model, a, b))
    c2 = np.max(kernel_gradient_bound_ratios(model, a, b))
    rows.append(CollisionRow("kernel_envelope", "C1", c1, math.inf, bool(np.isfinite(c1))))
    rows.append(CollisionRow("kernel_gradient_envelope", "C2", c2, math.inf, bool(np.isfinite(c2))))
    zero = np.max(np.abs(apply_K_nodal(model, grid, np.zeros(grid.size), grid.nodes[:5])))
    rows.append(CollisionRow("K_of_zero", "nodes=5", zero, 0.0, zero == 0.0))
    return rows


def collision_verdicts(rows):
    out = {}
    for r in rows:
        out[r.check_name] = out.get(r.check_name, True) and bool(r.passed)
    return out


# -- geometry -------------------------------------------------------------------------
def geometry_suite(cfg):
    domain = cfg.build_domain()
    rng = np.random.default_rng(cfg.run.seed)
    return run_geometry_suite(domain, rng, cfg.verify.samples, tuple(cfg.verify.potential_distances))


# -- cross-form identities ----------------------------------------------------------
def synthetic_field(volume, grid, model):
    """A smooth, spatially varying field used to compare integral forms."""
    X, Z = volume.nodes, grid.nodes
    s2 = np.sum(Z * Z, axis=1)
    space = 1 + 0.3 * X[:, 0:1] - 0.2 * X[:, 1:2] ** 2
    vel = (1 + 0.2 * Z[:, 2] + 0.1 * (s2 - 1.5)) * sqrt_maxwellian(Z)
    return DistributionField(volume, grid, model, space * vel[None, :])


def random_quadratic(points, rng, amplitude=0.3):
    """1 + a random quadratic polynomial in the coordinates, sampled at `points`."""
    Y = np.asarray(points, dtype=float)
    basis = np.column_stack([Y, Y * Y, Y[:, 0] * Y[:, 1], Y[:, 1] * Y[:, 2], Y[:, 0] * Y[:, 2]])
    return 1.0 + basis @ rng.uniform(-amplitude, amplitude, basis.shape[1])


def _relative_table(name, domain, a, b, rtol, norm="pointwise"):
    """lhs = |a - b| / |b| per sample (or / max|b| for norm="max")."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.abs(b) if norm == "pointwise" else np.full(len(b), np.max(np.abs(b)))
    err = np.abs(a - b) / scale
    return CheckTable(name, domain, err, np.full(len(err), rtol), err <= rtol)


def flux_forms_suite(cfg):
    domain, model, grid = cfg.build_domain(), cfg.build_model(), cfg.build_grid()
    mesh = cfg.build_mesh(domain)
    rng = np.random.default_rng(cfg.run.seed)
    v = cfg.verify
    P = random_boundary_points(domain, rng, v.flux_points)
    tables = []
    a = B_psi_velocity_form(domain, grid, model, 1.0, P, *FORM_CHECK_RULE)
    b = np.array([B_psi_surface_form(domain, model, 1.0, p) for p in P])
    tables.append(_relative_table("B_psi_forms_constant", domain.name, a, b, 1e-3))
    smooth, rough = [], []
    for _ in range(v.random_psi):
        x = random_boundary_points(domain, rng, 1)[0]
        for values, out in ((random_quadratic(mesh.nodes, rng), smooth), (rng.uniform(0.5, 1.5, len(mesh)), rough)):
            psi = WallFlux(mesh, values)
            out.append((B_psi_velocity_form(domain, grid, model, psi, x, *FORM_CHECK_RULE), B_psi_surface_form(domain, model, psi, x)))
    if smooth:
        a, b = np.array(smooth).T
        tables.append(_relative_table("B_psi_forms_random", domain.name, a, b, 1e-2))
        a, b = np.array(rough).T
        t = _relative_table("B_psi_forms_node_noise", domain.name, a, b, 1e-2)
        t.advisory = True
        tables.append(t)
    volume = cfg.build_volume(domain)
    source = synthetic_field(volume, grid, model)
    a = D_f_velocity_form(domain, grid, model, source, P)
    b = np.array([D_f_volume_form(domain, grid, model, source, p) for p in P])
    tables.append(_relative_table("D_f_forms", domain.name, a, b, 1e-2))
    X = random_interior_points(domain, rng, v.volume_form_probes)
    Z = rng.standard_normal((len(X), 3))
    Z *= (rng.uniform(0.5, 2.5, len(X)) / np.linalg.norm(Z, axis=1))[:, None]
    psi0 = WallFlux.constant(mesh, 0.0)
    a = [decompose_I_II_III(domain, grid, model, psi0, 0.0, source, x, z)[2] for x, z in zip(X, Z)]
    b = [III_volume_form(domain, grid, model, source, x, z) for x, z in zip(X, Z)]
    tables.append(_relative_table("III_forms", domain.name, a, b, 2e-2, norm="max"))
    return tables


# -- solve -----------------------------------------------------------------------------
@dataclass
class SolveOutcome:
    result: object
    domain: object
    checks: list
    convergence: dict
    timings: dict = field(default_factory=dict)


def exact_constant_T(volume, grid, model, T, anchor):
    """(anchor + t0 (|zeta|^2 - 2)) M^(1/2): the solution for a constant wall temperature t0."""
    return DistributionField.equilibrium(volume, grid, model, anchor, T.t0)


def geometric_decay(updates, tol):
    """True when the residual falls to tol with a median contraction below 1."""
    u = np.asarray(updates)
    if len(u) < 3:
        return bool(len(u) and u[-1] < tol)
    r = u[1:] / u[:-1]
    return bool(u[-1] < tol and np.median(r[len(r) // 3 :]) < 1.0)


def solve(cfg, decomposition=True):
    """Run picard_solve and the checks on its output. DivergenceError propagates."""
    t0 = time.perf_counter()
    domain, model, grid = cfg.build_domain(), cfg.build_model(), cfg.build_grid()
    volume, mesh, T = cfg.build_volume(domain), cfg.build_mesh(domain), cfg.build_temperature()
    s = cfg.solver
    timings = {"build": time.perf_counter() - t0}
    res = picard_solve(
        domain, grid, model, volume, mesh, T,
        tol=s.tol, max_iters=s.max_iters, anchor=s.anchor, anderson=s.anderson,
        n_probes=s.n_probes, seed=cfg.run.seed,
    )
    timings["solve"] = time.perf_counter() - t0 - timings["build"]
    rng = np.random.default_rng(cfg.run.seed)
    node_res = node_residual(domain, grid, model, res.psi, T, res.field, rng, 100)
    checks = [
        CheckTable("picard_converged", domain.name, [res.updates[-1]], [s.tol], [res.converged]),
        CheckTable("node_residual", domain.name, [node_res], [10 * s.tol], [node_res <= 10 * s.tol], advisory=True),
    ]
    if s.anderson == 0:
        ok = geometric_decay(res.updates, s.tol)
        checks.append(CheckTable("geometric_residual_decay", domain.name, [res.contraction], [1.0], [ok]))
    conv = {
        "converged": bool(res.converged),
        "iterations": len(res.updates),
        "final_update": _num(res.updates[-1]),
        "contraction": _num(res.contraction),
        "probe_residual": _num(res.probe_residual),
        "node_residual": _num(node_res),
        "anchored_mass": _num(res.psi.mean),
        "flux_iterations": int(sum(res.flux_iterations)),
    }
    if T.is_constant:
        exact = exact_constant_T(volume, grid, model, T, s.anchor).values
        scale = np.max(np.abs(exact))
        err = float(np.max(np.abs(res.field.values - exact)) / scale)
        psi_spread = float(np.ptp(res.psi.values) / scale)
        checks.append(CheckTable("exact_solution_error", domain.name, [err], [0.05], [err <= 0.05]))
        checks.append(CheckTable("wall_flux_constant", domain.name, [psi_spread], [0.05], [psi_spread <= 0.05]))
        conv["exact_solution_error"] = _num(err)
        conv["wall_flux_spread"] = _num(psi_spread)
    if decomposition and cfg.verify.decomposition_probes:
        t1 = time.perf_counter()
        checks.append(decomposition_check(domain, res, cfg.verify.decomposition_probes, cfg.run.seed))
        timings["decomposition"] = time.perf_counter() - t1
    timings["total"] = time.perf_counter() - t0
    return SolveOutcome(res, domain, checks, conv, timings)


def decomposition_probes(domain, grid, psi, T, field_, n, seed):
    """n random interior points with non-grazing velocities of speed 0.2 to 3."""
    rng = np.random.default_rng(seed + 7)
    X, Z = [], []
    while len(X) < n:
        x = random_interior_points(domain, rng, 1)[0]
        z = rng.standard_normal(3)
        z *= rng.uniform(0.2, 3.0) / np.linalg.norm(z)
        hit = domain.exit_ray(x, z)
        if hit.normal_component >= grid.grazing_cutoff:
            X.append(x)
            Z.append(z)
    return np.array(X), np.array(Z)


def decomposition_check(domain, res, n, seed, rtol=0.02):
    """I + II + III against the right-hand side at random probes, relative to the largest |f| probed."""
    fld = res.field
    grid, model = fld.grid, fld.model
    X, Z = decomposition_probes(domain, grid, res.psi, res.T, fld, n, seed)
    dec = np.array([sum(decompose_I_II_III(domain, grid, model, res.psi, res.T, fld, x, z)) for x, z in zip(X, Z)])
    ref = evaluate_f(domain, grid, model, res.psi, res.T, fld, X, Z)
    return _relative_table("decomposition_identity", domain.name, dec, ref, rtol, norm="max")


# -- regularity ----------------------------------------------------------------------------
def regularity_suite(cfg, outcome, include=("interior", "I", "II_H", "moduli")):
    """All probe reports on a solved configuration, in a fixed order."""
    from .regularity import probe_I_derivative, probe_II_and_H, probe_interior_gradient, probe_moduli

    rc = cfg.regularity()
    res, domain = outcome.result, outcome.domain
    fld = res.field
    reports = []
    if "interior" in include:
        reports += probe_interior_gradient(domain, res, rc)
    if "I" in include:
        reports += probe_I_derivative(domain, fld.grid, fld.model, res.psi, res.T, rc)
    if "II_H" in include:
        reports += probe_II_and_H(domain, fld.grid, fld.model, res.psi, res.T, rc, h_slack=cfg.probe.h_exponent_slack)
    if "moduli" in include:
        reports += probe_moduli(domain, res, rc)
    return reports
