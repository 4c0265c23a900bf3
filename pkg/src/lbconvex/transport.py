"""Picard iteration of the integral form of the stationary equation

    f(x, z) = f(p, z) e^{-nu tau} + int_0^tau e^{-nu s} K(f)(x - s z, z) ds,

with the diffuse-reflection boundary value f(p, z) = (psi(p) + T(p)(|z|^2 - 2)) M^(1/2).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .boundary_flux import (
    DivergenceError,
    FluxOperator,
    WallFlux,
    _as_boundary_function,
    _as_temperature,
)
from .geometry import graded_panels
from .collision import apply_K_nodal, collision_frequency, collision_matrix, kernel, sqrt_maxwellian
from .velocity import lagrange_matrix, tangent_frame

N_CHARACTERISTIC = 16


def _panels(n):
    """Edges on [0, 1] clustered at both ends (cosine map) and panel midpoints."""
    e = 0.5 * (1 - np.cos(np.pi * np.arange(n + 1) / n))
    return e, 0.5 * (e[1:] + e[:-1])


def _exp_panel_weights(edges_r, rate):
    """int over each r-panel of e^{-rate r} dr (rate broadcast against edges[..., :1])."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ex = np.exp(-edges_r * rate)
        safe = np.where(rate > 0, rate, 1.0)
        return np.where(rate > 0, (ex[..., :-1] - ex[..., 1:]) / safe, np.diff(edges_r, axis=-1))


def _split(zetas):
    zetas = np.asarray(zetas, dtype=float)
    s = np.linalg.norm(zetas, axis=-1)
    if np.any(s == 0):
        raise ValueError("zero velocity has no characteristic")
    return s, zetas / s[..., None]


# -- the sampled distribution ---------------------------------------------------
@dataclass
class DistributionField:
    """f on volume nodes x velocity nodes, with K(f) cached.

    Off-node values use inverse-distance weights in space and the grid's
    interpolation in velocity.
    """

    volume: object
    grid: object
    model: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.volume), self.grid.size):
            raise ValueError("values must have shape (volume nodes, velocity nodes)")

    @classmethod
    def zeros(cls, volume, grid, model):
        return cls(volume, grid, model, np.zeros((len(volume), grid.size)))

    @classmethod
    def equilibrium(cls, volume, grid, model, a=1.0, b=0.0):
        """(a + b(|z|^2 - 2)) M^(1/2) at every node."""
        s2 = grid.node_speeds**2
        row = (a + b * (s2 - 2)) * sqrt_maxwellian(grid.nodes)
        return cls(volume, grid, model, np.tile(row, (len(volume), 1)))

    @cached_property
    def Kf(self):
        return self.values @ collision_matrix(self.model, self.grid).T

    @property
    def max_norm(self):
        return float(np.max(np.abs(self.values)))

    def at(self, points, zetas):
        """f at arbitrary (point, velocity) pairs."""
        return self._interp(self.values, points, zetas)

    def Kf_at(self, points, zetas):
        return self._interp(self.Kf, points, zetas)

    def _interp(self, table, points, zetas):
        points = np.atleast_2d(points)
        zetas = np.atleast_2d(zetas)
        idx, w = self.volume.weights(points)
        V = self.grid.interpolation_matrix(zetas)  # (P, size)
        rows = table[idx]  # (P, k, size)
        return np.einsum("pk,pkv,pv->p", w, rows, V)

    def on_ray(self, points, dirs, speeds):
        """K(f)(points, speeds * dirs) for points (W, R, 3), dirs (W, 3), speeds (q,) or (W, q)."""
        points = np.asarray(points, dtype=float)
        dirs = np.asarray(dirs, dtype=float)
        single = dirs.ndim == 1
        if single:
            points, dirs = points[None], dirs[None]
            speeds = np.asarray(speeds)[None] if np.ndim(speeds) > 1 else speeds
        g = self.grid
        A = g.angular_matrix(dirs)  # (W, na)
        K3 = self.Kf.reshape(len(self.volume), g.n_radial, g.n_angular)
        Kd = np.einsum("xak,wk->wxa", K3, A)  # (W, X, nr)
        idx, w = self.volume.weights(points)  # (W, R, k)
        rows = Kd[np.arange(len(dirs))[:, None, None], idx]  # (W, R, k, nr)
        radial = np.einsum("wrk,wrka->wra", w, rows)
        speeds = np.asarray(speeds, dtype=float)
        if speeds.ndim == 1:
            if speeds.shape == g.speeds.shape and np.array_equal(speeds, g.speeds):
                out = radial
            else:
                R = g.radial_matrix(speeds)
                R[speeds >= g.zeta_max] = 0.0
                out = radial @ R.T
        else:
            flat = speeds.ravel()
            R = g.radial_matrix(flat)
            R[flat >= g.zeta_max] = 0.0
            R = R.reshape(speeds.shape + (g.n_radial,))
            out = np.einsum("wra,wqa->wrq", radial, R)
        return out[0] if single else out


# -- boundary value and the characteristic integral -------------------------------
def boundary_value(domain, psi, T, x, zeta):
    """(psi(x) + T(x)(|zeta|^2 - 2)) M^(1/2)(zeta) for incoming zeta (zeta . n(x) < 0)."""
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    n = domain.normal(x)
    if np.any(np.sum(zeta * n, axis=-1) >= 0):
        raise ValueError("boundary values are prescribed for incoming velocities only")
    psi_v = _as_boundary_function(psi)(np.atleast_2d(x), np.atleast_2d(n))
    s2 = np.sum(zeta * zeta, axis=-1)
    out = (psi_v + _as_temperature(T)(np.atleast_2d(x)) * (s2 - 2)) * sqrt_maxwellian(zeta)
    return float(out[0]) if out.size == 1 else out


def _boundary_term(domain, model, psi, T, X, Z):
    """I(x, zeta) = f(p, zeta) e^{-nu tau} for arrays X, Z of shape (P, 3)."""
    s, w = _split(Z)
    L, p, N = domain.trace(X, w)
    nu = collision_frequency(model, s)
    psi_p = _as_boundary_function(psi)(p, domain.normal(p))
    Tp = _as_temperature(T)(p)
    return (psi_p + Tp * (s * s - 2)) * sqrt_maxwellian(Z) * np.exp(-nu * L / s), L, N


def _characteristic(domain, model, source, X, Z, L=None, n_s=N_CHARACTERISTIC):
    """int_0^tau e^{-nu s} K(f)(x - s zeta, zeta) ds on graded panels, exponential fitted."""
    s, w = _split(Z)
    if L is None:
        L = domain.chord(X, w)
    nu = collision_frequency(model, s)
    edges, mids = _panels(n_s)
    wts = _exp_panel_weights(L[:, None] * edges, (nu / s)[:, None]) / s[:, None]  # (P, n_s)
    pts = X[:, None, :] - (L[:, None] * mids)[..., None] * w[:, None, :]
    Kf = source.on_ray(pts, w, s[:, None])[..., 0]  # (P, n_s)
    return np.sum(wts * Kf, axis=-1)


def evaluate_f(domain, grid, model, psi, T, f_prev, x, zeta, n_s=N_CHARACTERISTIC, grazing_cutoff=None):
    """Right-hand side of the integral equation at (x, zeta).

    Rays with N below the grazing cutoff keep only the boundary term; use
    `domain.exit_ray` or `rhs_at_nodes` to see which pairs are flagged.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Z = np.atleast_2d(np.asarray(zeta, dtype=float))
    X, Z = np.broadcast_arrays(X, Z)
    X, Z = X.copy(), Z.copy()
    I, L, N = _boundary_term(domain, model, psi, T, X, Z)
    cutoff = grid.grazing_cutoff if grazing_cutoff is None else grazing_cutoff
    grazing = N < cutoff
    coll = np.zeros(len(X)) if f_prev is None else _characteristic(domain, model, f_prev, X, Z, L, n_s)
    out = I + np.where(grazing, 0.0, coll)
    if np.ndim(x) == 1 and np.ndim(zeta) == 1:
        return float(out[0])
    return out


# -- the nodal sweep -------------------------------------------------------------------
class NodalRays:
    """Backward rays from points X along every grid velocity, with the
    quadrature of int_0^tau e^{-nu s} K(f)(x - s zeta, zeta) ds reduced to a
    fixed gather from nodal K(f) (inverse-distance weights in space, exact
    nodes in velocity)."""

    def __init__(self, domain, grid, model, volume, X, n_s=N_CHARACTERISTIC):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        nx, nv = len(X), grid.size
        s = grid.node_speeds
        w = grid.nodes / s[:, None]
        nu = collision_frequency(model, s)
        L, p, N = domain.trace(np.repeat(X, nv, axis=0), np.tile(w, (nx, 1)))
        L = L.reshape(nx, nv)
        self.exit_points = p.reshape(nx, nv, 3)
        self.grazing = (N < grid.grazing_cutoff).reshape(nx, nv)
        self.attenuation = np.exp(-L * (nu / s))
        edges, mids = _panels(n_s)
        pw = _exp_panel_weights(L[..., None] * edges, (nu / s)[None, :, None]) / s[None, :, None]
        pw[self.grazing] = 0.0
        pts = X[:, None, None, :] - (L[..., None] * mids)[..., None] * w[None, :, None, :]
        vidx, vw = volume.weights(pts)  # (nx, nv, n_s, k)
        self.flat = (vidx * nv + np.arange(nv)[None, :, None, None]).astype(np.int64)
        self.vol_w = vw * pw[..., None]
        self.shape = (nx, nv)

    def collision_part(self, Kf):
        return np.einsum("xvsk,xvsk->xv", np.asarray(Kf).ravel()[self.flat], self.vol_w)


class SweepPlan(NodalRays):
    """Geometry of the field sweep over all (volume node, velocity node) pairs,
    computed once, including the wall-flux interpolation at the exit points."""

    def __init__(self, domain, grid, model, volume, mesh, n_s=N_CHARACTERISTIC):
        from .boundary_flux import surface_interpolator

        super().__init__(domain, grid, model, volume, volume.nodes, n_s)
        self.sqrtM = sqrt_maxwellian(grid.nodes)
        self.energy = grid.node_speeds**2 - 2
        p = self.exit_points.reshape(-1, 3)
        idx, wt = surface_interpolator(mesh).weights(p, domain.normal(p))
        self.psi_idx = idx.reshape(self.shape + (-1,))
        self.psi_w = wt.reshape(self.shape + (-1,))

    def boundary_part(self, psi_values, T_exit):
        psi_p = np.sum(psi_values[self.psi_idx] * self.psi_w, axis=-1)
        return (psi_p + T_exit * self.energy) * self.sqrtM * self.attenuation


@dataclass
class PicardResult:
    field: DistributionField
    psi: WallFlux
    updates: list
    flux_iterations: list
    probe_residual: float
    converged: bool
    timings: dict = field(default_factory=dict)
    T: object = None
    steps: list = field(default_factory=list)

    @property
    def contraction(self):
        """Median ratio of successive update norms over the geometric phase."""
        u = np.asarray(self.updates)
        if len(u) < 3:
            return float("nan")
        r = u[1:] / u[:-1]
        return float(np.median(r[len(r) // 3 :]))


def picard_solve(
    domain,
    grid,
    model,
    volume,
    mesh,
    T,
    tol=1e-6,
    max_iters=400,
    anchor=0.0,
    anderson=5,
    n_probes=100,
    seed=0,
    initial=None,
):
    """Alternate field sweeps with wall-flux solves until the max-norm update < tol.

    The mass mode (c M^(1/2), psi = c) is neutral for the continuous problem;
    after each sweep the area-mean of psi is reset to `anchor` and the same
    constant times M^(1/2) is added to f.  `anderson` > 0 mixes the last
    iterates (Anderson acceleration); 0 gives the plain Picard sequence.
    """
    t0 = time.perf_counter()
    op = FluxOperator(domain, grid, model, mesh)
    plan = SweepPlan(domain, grid, model, volume, mesh)
    T = _as_temperature(T)
    bt = op.B_T(T)
    T_exit = T(plan.exit_points)
    timings = {"setup": time.perf_counter() - t0}
    w_area = mesh.weights / mesh.weights.sum()
    f = DistributionField.zeros(volume, grid, model) if initial is None else initial
    sqrtM = plan.sqrtM
    Kmat = collision_matrix(model, grid)

    def step(values):
        fld = DistributionField(volume, grid, model, values)
        rhs = bt + op.D_f(fld)
        psi, its = op.solve(rhs)
        shift = anchor - w_area @ psi.values
        psi_v = psi.values + shift
        new = plan.boundary_part(psi_v, T_exit) + plan.collision_part(fld.Kf)
        new += shift * (1 - plan.attenuation) * sqrtM  # complete the shift of the mass mode
        return new, psi_v, its

    x = f.values
    updates, flux_its, steps = [], [], []
    X_hist, G_hist = [], []
    converged = False
    t1 = time.perf_counter()
    for it in range(max_iters):
        gx, psi_v, its = step(x)
        flux_its.append(its)
        r = gx - x
        upd = float(np.max(np.abs(r)))
        updates.append(upd)
        if not np.isfinite(upd) or (it > 10 and upd > 1e6 * max(updates[0], 1e-300)):
            steps.append(upd)
            raise DivergenceError("Picard iteration diverged", updates, steps)
        if upd < tol:
            steps.append(upd)
            x = gx
            converged = True
            break
        x_old = x
        if anderson:
            X_hist.append(x.ravel().copy())
            G_hist.append(gx.ravel().copy())
            X_hist, G_hist = X_hist[-(anderson + 1) :], G_hist[-(anderson + 1) :]
            if len(X_hist) > 1:
                R = np.array(G_hist) - np.array(X_hist)  # (m, n)
                dR = np.diff(R, axis=0)
                dG = np.diff(np.array(G_hist), axis=0)
                gamma, *_ = np.linalg.lstsq(dR.T, R[-1], rcond=None)
                x = (G_hist[-1] - gamma @ dG).reshape(x.shape)
                steps.append(float(np.max(np.abs(x - x_old))))
                continue
        x = gx
        steps.append(float(np.max(np.abs(x - x_old))))
    timings["iterate"] = time.perf_counter() - t1
    fld = DistributionField(volume, grid, model, x)
    psi = WallFlux(mesh, psi_v)
    if not converged:
        raise DivergenceError(f"no convergence in {max_iters} iterations", updates, steps)
    res = probe_residual(domain, grid, model, psi, T, fld, np.random.default_rng(seed), n_probes)
    timings["total"] = time.perf_counter() - t0
    return PicardResult(fld, psi, updates, flux_its, res, converged, timings, T, steps)


def probe_residual(domain, grid, model, psi, T, field_, rng, n=100):
    """max |f - RHS| at random interior points and random velocity nodes.

    f at an off-node point is the inverse-distance interpolant, so this
    measures interpolation error plus the fixed-point residual.
    """
    from .geometry_checks import random_interior_points

    if n == 0:
        return float("nan")
    X = random_interior_points(domain, rng, n)
    Z = grid.nodes[rng.integers(0, grid.size, n)]
    lhs = field_.at(X, Z)
    rhs = evaluate_f(domain, grid, model, psi, T, field_, X, Z)
    return float(np.max(np.abs(lhs - rhs)))


def node_residual(domain, grid, model, psi, T, field_, rng, n=100):
    """max |f - RHS| at volume nodes and velocity nodes (pure fixed-point residual)."""
    i = rng.integers(0, len(field_.volume), n)
    j = rng.integers(0, grid.size, n)
    rhs = evaluate_f(domain, grid, model, psi, T, field_, field_.volume.nodes[i], grid.nodes[j])
    return float(np.max(np.abs(field_.values[i, j] - rhs)))


# -- the twice-iterated decomposition ------------------------------------------------
def _collision_part_nodes(domain, model, grid, field_, Y, n_s=N_CHARACTERISTIC):
    """D(y, z_m) = int_0^tau' e^{-nu' t} K(f)(y - t z_m, z_m) dt at all velocity nodes."""
    return NodalRays(domain, grid, model, field_.volume, Y, n_s).collision_part(field_.Kf)


def _boundary_part_nodes(domain, model, grid, psi, T, Y):
    Yr = np.repeat(Y, grid.size, axis=0)
    Zr = np.tile(grid.nodes, (len(Y), 1))
    I, _, _ = _boundary_term(domain, model, psi, T, Yr, Zr)
    return I.reshape(len(Y), grid.size)


def H_eval(domain, grid, model, psi, T, x, zeta):
    """H(x, zeta) = int k(zeta, z') I(x, z') dz', I the damped boundary term."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    I = _boundary_part_nodes(domain, model, grid, psi, T, X)
    out = np.array([apply_K_nodal(model, grid, I[i], np.atleast_2d(zeta))[0] for i in range(len(X))])
    return float(out[0]) if np.ndim(x) == 1 else out


def G_velocity_form(domain, grid, model, field_, x, zeta):
    """G(x, zeta) = int k(zeta, z') D(x, z') dz' with D the collision part of f."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    D = _collision_part_nodes(domain, model, grid, field_, X)
    out = np.array([apply_K_nodal(model, grid, D[i], np.atleast_2d(zeta))[0] for i in range(len(X))])
    return float(out[0]) if np.ndim(x) == 1 else out


def decompose_I_II_III(domain, grid, model, psi, T, field_, x, zeta, n_s=N_CHARACTERISTIC):
    """(I, II, III) with II = int e^{-nu s} H ds and III = int e^{-nu s} G ds along the ray."""
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    I, L, N = _boundary_term(domain, model, psi, T, x[None], zeta[None])
    s = float(np.linalg.norm(zeta))
    w = zeta / s
    nu = float(collision_frequency(model, s))
    edges, mids = _panels(n_s)
    wts = _exp_panel_weights(L[0] * edges, nu / s) / s
    Y = x - (L[0] * mids)[:, None] * w
    Ib = _boundary_part_nodes(domain, model, grid, psi, T, Y)
    D = _collision_part_nodes(domain, model, grid, field_, Y) if field_ is not None else np.zeros_like(Ib)
    KI = apply_K_nodal(model, grid, Ib, zeta[None])[:, 0]
    KD = apply_K_nodal(model, grid, D, zeta[None])[:, 0]
    return float(I[0]), float(wts @ KI), float(wts @ KD)


def G_volume_form(domain, grid, model, source, x0, zeta, n_gl=6, n_phi=24, theta_focus=2e-3, rho_focus=2e-3, r_focus=1e-4):
    """int_0^inf int_Omega k(zeta, rho w) e^{-nu(rho)|x0-y|/rho} K(f)(y, rho w) rho |x0 - y|^-2 dy drho,

    w = (x0 - y)/|x0 - y|.  In spherical coordinates about x0 the 1/|x0-y|^2
    cancels against dy; directions use a polar rule about zeta graded toward
    w = zeta/|zeta|, and the rho integral is split at rho = zeta . w where the
    kernel singularity sits.
    """
    x0 = np.asarray(x0, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    sz = float(np.linalg.norm(zeta))
    ez = zeta / sz
    e1, e2 = tangent_frame(ez)
    th, wth = graded_panels(0.0, np.pi, theta_focus, n_gl)
    ph = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    ct, st = np.cos(th), np.sin(th)
    dirs = (ct[:, None, None] * ez + (st[:, None] * np.cos(ph))[..., None] * e1 + (st[:, None] * np.sin(ph))[..., None] * e2).reshape(-1, 3)
    wdir = np.repeat(wth * st * 2 * np.pi / n_phi, n_phi)
    zmax = grid.zeta_max
    # rho nodes per polar angle, split at the closest approach rho* = |zeta| cos(theta)
    rho_rows, wrho_rows = [], []
    for c in ct:
        rs = sz * c
        if 0 < rs < zmax:
            a, wa = graded_panels(0.0, rs, rho_focus * zmax, n_gl)
            b, wb = graded_panels(0.0, zmax - rs, rho_focus * zmax, n_gl)
            nodes = np.concatenate([rs - a[::-1], rs + b])
            wts = np.concatenate([wa[::-1], wb])
        else:
            nodes, wts = graded_panels(0.0, zmax, rho_focus * zmax, n_gl)
        rho_rows.append((nodes, wts))
    q = max(len(r[0]) for r in rho_rows)
    rho = np.full((len(th), q), 0.5 * zmax)
    wrho = np.zeros((len(th), q))
    for i, (nodes, wts) in enumerate(rho_rows):
        rho[i, : len(nodes)] = nodes
        wrho[i, : len(nodes)] = wts
    rho = np.repeat(rho, n_phi, axis=0)
    wrho = np.repeat(wrho, n_phi, axis=0)  # (W, q)
    L = domain.chord(np.broadcast_to(x0, dirs.shape), dirs)
    t, wt = graded_panels(0.0, 1.0, r_focus, n_gl)
    r = L[:, None] * t  # (W, R)
    wr = L[:, None] * wt
    pts = x0 - r[..., None] * dirs[:, None, :]
    Kf = source.on_ray(pts, dirs, rho)  # (W, R, q)
    nu = collision_frequency(model, rho)
    att = np.exp(-r[:, :, None] * (nu / rho)[:, None, :])  # (W, R, q)
    zs = rho[..., None] * dirs[:, None, :]  # (W, q, 3)
    k = kernel(model, np.broadcast_to(zeta, zs.shape), zs)  # (W, q)
    return float(np.einsum("w,wr,wrq,wrq,wq,wq->", wdir, wr, att, Kf, k * rho, wrho))


def III_volume_form(domain, grid, model, source, x, zeta, n_s=N_CHARACTERISTIC, **kw):
    """int_0^tau e^{-nu s} G(x - s zeta, zeta) ds with G from the volume form."""
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    s = float(np.linalg.norm(zeta))
    w = zeta / s
    L = float(domain.chord(x, w))
    nu = float(collision_frequency(model, s))
    edges, mids = _panels(n_s)
    wts = _exp_panel_weights(L * edges, nu / s) / s
    return float(sum(wk * G_volume_form(domain, grid, model, source, x - L * m * w, zeta, **kw) for wk, m in zip(wts, mids)))


def rhs_at_nodes(domain, grid, model, psi, T, field_, X, n_s=N_CHARACTERISTIC):
    """Right-hand side of the integral equation at points X for every velocity node.

    Returns (values (P, size), grazing mask (P, size)); grazing pairs carry
    the boundary term only.  X may lie on the boundary, where incoming
    velocities return the boundary value itself.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rays = NodalRays(domain, grid, model, field_.volume, X, n_s)
    return _boundary_part_nodes(domain, model, grid, psi, T, X) + rays.collision_part(field_.Kf), rays.grazing
