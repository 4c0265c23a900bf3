"""Numerical checks of the geometric inequalities used by the regularity theory.

Each check returns a :class:`~lbconvex.report.CheckTable`.  Samplers take a
numpy Generator so that every sweep is reproducible from a seed.
"""
from __future__ import annotations

import numpy as np

from .geometry import ConvexDomain
from .report import CheckTable
from .velocity import tangent_frame


class ResolutionError(ValueError):
    pass


# -- samplers ---------------------------------------------------------------
def random_directions(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_boundary_points(domain, rng, n):
    return domain.radial_point(random_directions(rng, n))


def random_interior_points(domain, rng, n, shrink=0.98):
    """Points c + u (Y - c) with Y on the boundary and u^3 uniform on (0, shrink^3)."""
    Y = random_boundary_points(domain, rng, n)
    u = shrink * rng.uniform(0, 1, n) ** (1 / 3)
    return domain.center + u[:, None] * (Y - domain.center)


def random_tangent(domain, rng, p, length):
    """Tangent vectors at boundary points p with the given lengths."""
    n = domain.normal(p)
    v = rng.normal(size=p.shape)
    v -= np.sum(v * n, axis=-1, keepdims=True) * n
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return v * np.asarray(length)[..., None]


# -- the log-divergent boundary potential ----------------------------------------
def boundary_potential(domain, x, mesh=None, n_gl=8, n_phi=48):
    """Integral of |x - y|^-2 dA(y) over the boundary.

    Without a mesh, one is built about the nearest boundary point with
    polar panels graded from a quarter of the distance.
    """
    x = np.asarray(x, dtype=float)
    Y = domain.closest_point(x)[0]
    d = float(np.linalg.norm(Y - x))
    if mesh is None:
        axis = Y - domain.center
        rho = np.linalg.norm(axis)
        mesh = domain.mesh(n_gl, n_phi=n_phi, pole=axis / rho, focus=d / (4 * rho))
    else:
        near = np.linalg.norm(mesh.nodes - Y, axis=1)
        idx = np.argsort(near)[:2]
        spacing = float(np.linalg.norm(mesh.nodes[idx[0]] - mesh.nodes[idx[1]]))
        if near[idx[0]] > d / 4 or spacing > d / 4:
            raise ResolutionError(f"mesh spacing near x is {spacing:.3g}; need < d_x/4 = {d / 4:.3g}")
    r2 = np.sum((mesh.nodes - x) ** 2, axis=1)
    return float(mesh.weights @ (1.0 / r2)), d


def sphere_potential(a, radius=1.0):
    """Closed form of the potential for a point at distance a from the centre."""
    if a == 0:
        return 4 * np.pi
    R = radius
    return 2 * np.pi * R / a * np.log((R + a) / (R - a))


def check_log_potential(domain, x_samples, mesh=None, spread_limit=10.0):
    vals, ds = zip(*(boundary_potential(domain, x, mesh) for x in x_samples))
    vals, ds = np.array(vals), np.array(ds)
    rhs = np.abs(np.log(ds)) + 1
    ratio = vals / rhs
    ok = ratio <= spread_limit * ratio.min()
    return CheckTable("log_potential_bound", domain.name, vals, rhs, ok, info={"d": ds})


def check_sphere_potential(domain, distances=(0.1,), rtol=0.01):
    """Quadrature potential against the closed form on a sphere; lhs is the relative error."""
    R = domain.radius
    errs = []
    for x in normal_offset_points(domain, distances):
        v, d = boundary_potential(domain, x)
        exact = sphere_potential(R - d, R)
        errs.append(abs(v - exact) / exact)
    errs = np.array(errs)
    return CheckTable("sphere_potential_closed_form", domain.name, errs, np.full(len(errs), rtol), errs <= rtol)


def normal_offset_points(domain, distances, direction=(0.3, -0.4, 0.866)):
    """Points at the given boundary distances along the inward normal."""
    w = np.asarray(direction, dtype=float)
    Y = domain.radial_point((w / np.linalg.norm(w))[None])[0]
    n = domain.normal(Y)
    return [Y - d * n for d in distances]


# -- exponential map inequality ---------------------------------------------
def expmap_samples(domain, rng, n):
    r1 = domain.geodesic_radius
    p0 = random_boundary_points(domain, rng, n)
    t = r1 * rng.uniform(0, 1, n)
    s = r1 * rng.uniform(0, 1, n) * (1 - 1e-9)
    x = p0 - t[:, None] * domain.normal(p0)
    v = random_tangent(domain, rng, p0, s)
    return list(zip(p0, x, v))


def check_expmap_inequality(domain, samples):
    lhs, rhs = [], []
    for p0, x, v in samples:
        e = domain.exp_map(p0, v)
        lhs.append(np.sum((x - p0) ** 2) + 0.5 * np.sum(v * v))
        rhs.append(np.sum((e - x) ** 2))
    lhs, rhs = np.array(lhs), np.array(rhs)
    return CheckTable("expmap_inequality", domain.name, lhs, rhs, lhs <= rhs * (1 + 1e-12) + 1e-15)


# -- tangency estimates -------------------------------------------------------
def geodesic_pairs(domain, rng, n, min_fraction=1e-3):
    """(x, y, unit tangent at x toward y) with y = Exp_x(v), |v| <= r1."""
    r1 = domain.geodesic_radius
    x = random_boundary_points(domain, rng, n)
    s = r1 * np.exp(rng.uniform(np.log(min_fraction), 0, n)) * (1 - 1e-9)
    v = random_tangent(domain, rng, x, s)
    y = np.array([domain.exp_map(a, b) for a, b in zip(x, v)])
    return x, y, v / s[:, None]


def tangency_ratios(domain, x, y, u):
    d = y - x
    r = np.linalg.norm(d, axis=-1)
    nx, ny = domain.normal(x), domain.normal(y)
    return (
        np.abs(np.sum(nx * d, axis=-1)) / r**2,
        np.abs(np.sum(ny * d, axis=-1)) / r**2,
        np.abs(np.sum(ny * u, axis=-1)) / r,
    )


def check_tangency(domain, pairs):
    x, y, u = pairs
    C = 4 * domain.max_curvature
    tables = []
    for label, ratio in zip(("normal_x", "normal_y", "normal_y_tangent"), tangency_ratios(domain, x, y, u)):
        rhs = np.full_like(ratio, C)
        tables.append(CheckTable(f"tangency_{label}", domain.name, ratio, rhs, ratio <= rhs))
    return tables


# -- square-root distance bounds ---------------------------------------------
def sqrt_bound_samples(domain, rng, n, near_fraction=0.7):
    """(x on the boundary, y interior) with d_y <= R2.

    Most x are taken near the projection Y of y so both sides of the
    tangent plane are exercised at small separations.
    """
    R0 = domain.inner_radius
    Y = random_boundary_points(domain, rng, n)
    d = R0 * np.exp(rng.uniform(np.log(1e-4), 0, n)) * (1 - 1e-9)
    y = Y - d[:, None] * domain.normal(Y)
    x = random_boundary_points(domain, rng, n)
    near = rng.uniform(size=n) < near_fraction
    if near.any():
        r1 = domain.geodesic_radius
        s = r1 * rng.uniform(0, 1, near.sum()) * (1 - 1e-9)
        v = random_tangent(domain, rng, Y[near], s)
        x[near] = [domain.exp_map(a, b) for a, b in zip(Y[near], v)]
    return list(zip(x, y))


def _sqrt_side(domain, samples):
    """True where x lies on the outer side of the tangent plane at the projection of y."""
    x = np.array([s[0] for s in samples])
    y = np.array([s[1] for s in samples])
    return np.sum(domain.normal(domain.closest_point(y)) * (x - y), axis=1) >= 0


def balanced_sqrt_samples(domain, rng, n):
    """sqrt_bound_samples drawn in batches until each side of the tangent plane has n."""
    above, below = [], []
    while len(above) < n or len(below) < n:
        batch = sqrt_bound_samples(domain, rng, n)
        side = _sqrt_side(domain, batch)
        above += [b for b, s in zip(batch, side) if s]
        below += [b for b, s in zip(batch, side) if not s]
    return above[:n] + below[:n]


def check_sqrt_bounds(domain, samples):
    R0 = domain.inner_radius
    c_above = np.sqrt(2 * domain.outer_radius)
    c_below = np.sqrt(domain.inner_radius)
    x = np.array([s[0] for s in samples])
    y = np.array([s[1] for s in samples])
    Y = domain.closest_point(y)
    d = np.linalg.norm(Y - y, axis=1)
    keep = d <= R0
    side = np.sum(domain.normal(Y) * (x - y), axis=1) >= 0
    r = np.linalg.norm(x - y, axis=1)
    above = keep & side
    below = keep & ~side
    tables = [
        CheckTable("sqrt_upper", domain.name, r[above], c_above * np.sqrt(d[above]), r[above] <= c_above * np.sqrt(d[above]) * (1 + 1e-12)),
        CheckTable("sqrt_lower", domain.name, c_below * np.sqrt(d[below]), r[below], c_below * np.sqrt(d[below]) <= r[below] * (1 + 1e-12)),
    ]
    for t in tables:
        t.skipped = int((~keep).sum())
    return tables


# -- chord distance ----------------------------------------------------------
def chord_samples(domain, rng, n):
    x = random_interior_points(domain, rng, n)
    zeta = random_directions(rng, n) * rng.uniform(0.2, 4.0, n)[:, None]
    frac = rng.uniform(0, 1, n)
    return x, zeta, frac


def check_chord_distance(domain, samples):
    """d_z >= (d_x / R) |z - X| for z = x - t zeta on the segment to the exit point X."""
    x, zeta, frac = samples
    speed = np.linalg.norm(zeta, axis=1)
    l, X, _ = domain.trace(x, zeta / speed[:, None])
    t = frac * l / speed
    z = x - t[:, None] * zeta
    dz = domain.boundary_distance(z)
    dx = domain.boundary_distance(x)
    rhs = dx / domain.diameter * np.linalg.norm(z - X, axis=1)
    return CheckTable("chord_distance", domain.name, rhs, dz, rhs <= dz * (1 + 1e-10) + 1e-14)


# -- derivatives of the exit time and exit point ------------------------------
def ray_samples(domain, rng, n):
    x = random_interior_points(domain, rng, n, shrink=0.95)
    zeta = random_directions(rng, n) * rng.uniform(0.2, 4.0, n)[:, None]
    return x, zeta


def _exit(domain, x, zeta):
    speed = np.linalg.norm(zeta, axis=-1)
    l, p, N = domain.trace(x, zeta / speed[..., None])
    return l / speed, p, N


def exit_derivatives(domain, x, zeta, h=1e-6):
    """Central differences of tau_- and p in x and zeta.

    Returns (tau, N, dtau_dx, dp_dx, dtau_dz, dp_dz) with the derivative
    arrays of shape (m, 3) for tau and (m, 3, 3) for p (last axis = variable).
    """
    tau, _, N = _exit(domain, x, zeta)
    m = len(x)
    dtx, dpx = np.empty((m, 3)), np.empty((m, 3, 3))
    dtz, dpz = np.empty((m, 3)), np.empty((m, 3, 3))
    for i, e in enumerate(np.eye(3)):
        tp, pp, _ = _exit(domain, x + h * e, zeta)
        tm, pm, _ = _exit(domain, x - h * e, zeta)
        dtx[:, i] = (tp - tm) / (2 * h)
        dpx[:, :, i] = (pp - pm) / (2 * h)
        tp, pp, _ = _exit(domain, x, zeta + h * e)
        tm, pm, _ = _exit(domain, x, zeta - h * e)
        dtz[:, i] = (tp - tm) / (2 * h)
        dpz[:, :, i] = (pp - pm) / (2 * h)
    return tau, N, dtx, dpx, dtz, dpz


def check_ray_derivative_bounds(domain, samples, grazing_cutoff=1e-3, slack=1.05):
    """Exit-time and exit-point derivative bounds.

    The zeta-derivative of p is tested against tau (1 + 1/N), the bound
    that follows from differentiating p = x - tau zeta; the weaker-looking
    form tau (1 + 1/(N |zeta|)) is reported as an advisory table.
    """
    x, zeta = samples
    tau, N, dtx, dpx, dtz, dpz = exit_derivatives(domain, x, zeta)
    keep = N >= grazing_cutoff
    skipped = int((~keep).sum())
    x, zeta, tau, N = x[keep], zeta[keep], tau[keep], N[keep]
    dtx, dpx, dtz, dpz = dtx[keep], dpx[keep], dtz[keep], dpz[keep]
    speed = np.linalg.norm(zeta, axis=1)
    dx = domain.boundary_distance(x)

    def table(name, lhs, rhs, advisory=False):
        return CheckTable(name, domain.name, lhs, rhs, lhs <= slack * rhs, skipped, advisory)

    return [
        table("dtau_dx", np.abs(dtx).max(axis=1), 2 / (N * speed)),
        table("dp_dx", np.linalg.norm(dpx, axis=1).max(axis=1), 1 / N),
        table("tau_lower", dx / (N * speed), tau),
        table("dtau_dzeta", np.abs(dtz).max(axis=1), tau / (N * speed)),
        table("dp_dzeta", np.linalg.norm(dpz, axis=1).max(axis=1), tau * (1 + 1 / N)),
        table("dp_dzeta_inverse_speed_form", np.linalg.norm(dpz, axis=1).max(axis=1), tau * (1 + 1 / (N * speed)), advisory=True),
    ]


# -- exit points of nearby rays ------------------------------------------------
def check_exit_point_difference(domain, rng, n, grazing_cutoff=1e-3):
    """|X - Y| <= |x - y| / N(x) and ||x - X| - |y - Y|| <= 2 |x - y| / N(x).

    Pairs are ordered so that x has the shorter backward chord.
    """
    x = random_interior_points(domain, rng, n)
    y = random_interior_points(domain, rng, n)
    w = random_directions(rng, n)
    lx, X, Nx = domain.trace(x, w)
    ly, Y, Ny = domain.trace(y, w)
    swap = lx > ly
    x[swap], y[swap] = y[swap].copy(), x[swap].copy()
    X[swap], Y[swap] = Y[swap].copy(), X[swap].copy()
    lx[swap], ly[swap] = ly[swap].copy(), lx[swap].copy()
    Nx = np.where(swap, Ny, Nx)
    keep = Nx >= grazing_cutoff
    sep = np.linalg.norm(x - y, axis=1)[keep]
    a = np.linalg.norm(X - Y, axis=1)[keep]
    b = np.abs(lx - ly)[keep]
    N = Nx[keep]
    skipped = int((~keep).sum())
    return [
        CheckTable("exit_point_difference", domain.name, a, sep / N, a <= sep / N * (1 + 1e-9), skipped),
        CheckTable("chord_length_difference", domain.name, b, 2 * sep / N, b <= 2 * sep / N * (1 + 1e-9), skipped),
    ]


def run_geometry_suite(domain, rng, n=500, distances=(0.2, 0.1, 0.05, 0.02, 0.01)):
    tables = [check_log_potential(domain, normal_offset_points(domain, distances))]
    if domain.name == "sphere":
        tables.append(check_sphere_potential(domain))
    tables.append(check_expmap_inequality(domain, expmap_samples(domain, rng, n)))
    tables += check_tangency(domain, geodesic_pairs(domain, rng, n))
    tables += check_sqrt_bounds(domain, balanced_sqrt_samples(domain, rng, n))
    tables.append(check_chord_distance(domain, chord_samples(domain, rng, n)))
    tables += check_ray_derivative_bounds(domain, ray_samples(domain, rng, n))
    tables += check_exit_point_difference(domain, rng, n)
    return tables
