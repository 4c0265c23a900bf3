"""Diffuse-reflection wall flux psi = B_T + B_psi[psi] + D_f[f].

Velocity integrals over the outgoing half space {zeta . n(x) > 0} use the
grid's Gauss speeds times a hemisphere rule aligned with n(x).  Collision
sources K(f) are passed as objects with an ``on_ray(points, dirs, speeds)``
method returning K(f)(points, speeds * dirs); see
:class:`~lbconvex.collision.EquilibriumSource` and
:class:`~lbconvex.transport.DistributionField`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.interpolate import CubicSpline

from .collision import collision_frequency, maxwellian, sqrt_maxwellian
from .geometry import graded_panels
from .velocity import hemisphere_rule, tangent_frame

TWO_SQRT_PI = 2.0 * np.sqrt(np.pi)


class DivergenceError(RuntimeError):
    """Raised by the iterative solvers; `history` holds the residual norms so far
    and `steps` the norms of the successive updates (same length, when known)."""

    def __init__(self, message, history, steps=None):
        super().__init__(message)
        self.history = list(history)
        self.steps = list(history if steps is None else steps)


# -- boundary data -----------------------------------------------------------
@dataclass(frozen=True)
class BoundaryTemperature:
    """T(x) = t0 + slope . x + amplitude exp(-|x - center|^2 / width^2)."""

    t0: float = 0.0
    slope: tuple = (0.0, 0.0, 0.0)
    amplitude: float = 0.0
    center: tuple = (0.0, 0.0, 0.0)
    width: float = 0.5

    def __post_init__(self):
        if len(self.slope) != 3 or len(self.center) != 3:
            raise ValueError("slope and center need three components")
        if self.width <= 0:
            raise ValueError("bump width must be positive")

    @classmethod
    def constant(cls, t0):
        return cls(t0=float(t0))

    @classmethod
    def linear(cls, t0, slope):
        return cls(t0=float(t0), slope=tuple(map(float, slope)))

    @property
    def is_constant(self):
        return not any(self.slope) and self.amplitude == 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.t0 + x @ np.asarray(self.slope)
        if self.amplitude:
            r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
            out = out + self.amplitude * np.exp(-r2 / self.width**2)
        return out

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.broadcast_to(np.asarray(self.slope, dtype=float), x.shape).copy()
        if self.amplitude:
            d = x - np.asarray(self.center)
            e = np.exp(-np.sum(d * d, axis=-1) / self.width**2)
            g -= (2 * self.amplitude / self.width**2) * e[..., None] * d
        return g

    def tangential_gradient(self, domain, x):
        g = self.gradient(x)
        n = domain.normal(x)
        return g - np.sum(g * n, axis=-1, keepdims=True) * n


# -- interpolation on the boundary -----------------------------------------------
def _frames(normals):
    n = np.asarray(normals, dtype=float)
    helper = np.where(np.abs(n[..., :1]) < 0.9, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    return e1, np.cross(n, e1)


@dataclass(frozen=True)
class SurfaceInterpolator:
    """Weighted local linear fit over the k nearest mesh nodes.

    Reproduces constants and tangent-linear data exactly; a query that
    coincides with a node returns that node's value.
    """

    mesh: object
    k: int = 6
    tree: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        from scipy.spatial import cKDTree

        object.__setattr__(self, "tree", cKDTree(self.mesh.nodes))

    def weights(self, points, normals):
        points = np.asarray(points, dtype=float)
        shape = points.shape[:-1]
        q = points.reshape(-1, 3)
        nq = np.asarray(normals, dtype=float).reshape(-1, 3)
        d, idx = self.tree.query(q, k=self.k)
        e1, e2 = _frames(nq)
        rel = self.mesh.nodes[idx] - q[:, None, :]
        A = np.stack([np.ones(d.shape), np.einsum("pkc,pc->pk", rel, e1), np.einsum("pkc,pc->pk", rel, e2)], axis=-1)
        h2 = np.maximum(d[:, -1:] ** 2, 1e-300)
        W = 1.0 / (d**2 + 1e-3 * h2)
        G = np.einsum("pk,pki,pkj->pij", W, A, A)
        G += 1e-12 * np.trace(G, axis1=1, axis2=2)[:, None, None] * np.eye(3)
        c = np.linalg.solve(G, np.broadcast_to([1.0, 0.0, 0.0], (len(q), 3))[..., None])[..., 0]
        w = W * np.einsum("pki,pi->pk", A, c)
        hit = d[:, 0] < 1e-12
        w[hit] = 0.0
        w[hit, 0] = 1.0
        return idx.reshape(shape + (self.k,)), w.reshape(shape + (self.k,))


_interpolators = {}


def surface_interpolator(mesh):
    key = id(mesh)
    hit = _interpolators.get(key)
    if hit is None or hit[0] is not mesh:
        hit = (mesh, SurfaceInterpolator(mesh))
        _interpolators[key] = hit
    return hit[1]


@dataclass(frozen=True)
class WallFlux:
    mesh: object
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.mesh),):
            raise ValueError("one flux value per mesh node required")
        if not np.all(np.isfinite(v)):
            raise ValueError("flux values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, mesh, c):
        return cls(mesh, np.full(len(mesh), float(c)))

    @property
    def mean(self):
        """Area-weighted mean, the anchored quantity of the neutral mode."""
        return float(self.mesh.weights @ self.values / self.mesh.weights.sum())

    def at(self, points, normals):
        idx, w = surface_interpolator(self.mesh).weights(points, normals)
        return np.sum(self.values[idx] * w, axis=-1)


def _as_boundary_function(psi):
    """psi as a callable (points, normals) -> values."""
    if isinstance(psi, WallFlux):
        return psi.at
    if callable(psi):
        return lambda p, n: np.asarray(psi(p), dtype=float)
    c = float(psi)
    return lambda p, n: np.full(np.shape(p)[:-1], c)


def _as_temperature(T):
    if callable(T):
        return T
    return BoundaryTemperature.constant(float(T))


# -- half-space geometry --------------------------------------------------------
@dataclass(frozen=True)
class HalfSpace:
    """Exit data of the backward rays from boundary points along outgoing directions."""

    points: np.ndarray  # (B, 3)
    normals: np.ndarray  # (B, 3)
    dirs: np.ndarray  # (B, h, 3)
    dir_weights: np.ndarray  # (h,)
    mu: np.ndarray  # (h,)  dirs . normal
    chord: np.ndarray  # (B, h)
    exits: np.ndarray  # (B, h, 3)
    exit_normals: np.ndarray  # (B, h, 3)


def half_space(domain, points, n_mu=8, n_phi=16):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    normals = domain.normal(points)
    ref, wd = hemisphere_rule([0.0, 0.0, 1.0], n_mu, n_phi)
    e1, e2 = _frames(normals)
    dirs = ref[None, :, 2:3] * normals[:, None, :] + ref[None, :, 0:1] * e1[:, None, :] + ref[None, :, 1:2] * e2[:, None, :]
    L = domain.chord(points[:, None, :], dirs)
    P = points[:, None, :] - L[..., None] * dirs
    return HalfSpace(points, normals, dirs, wd, ref[:, 2].copy(), L, P, domain.normal(P))


def _speed_factors(model, grid):
    s = grid.speeds
    return s, grid.radial_weights, collision_frequency(model, s)


def _attenuation(model, grid, chord):
    """exp(-nu(s_a) L / s_a) with speeds on the last axis."""
    s, _, nu = _speed_factors(model, grid)
    return np.exp(-np.asarray(chord)[..., None] * (nu / s))


def psi_moment(domain, grid, f, x, n_mu=8, n_phi=16):
    """2 sqrt(pi) int_{zeta.n > 0} f(x, zeta) |zeta.n| M^(1/2) dzeta.

    `f` is a callable on (m, 3) velocity arrays, or an object with an
    ``outgoing(x, zetas)`` method (a DistributionField).
    """
    x = np.asarray(x, dtype=float)
    n = domain.normal(x)
    dirs, wd = hemisphere_rule(n, n_mu, n_phi)
    s, wr = grid.speeds, grid.radial_weights
    zetas = (s[:, None, None] * dirs[None]).reshape(-1, 3)
    vals = f.outgoing(x, zetas) if hasattr(f, "outgoing") else f(zetas)
    vals = np.asarray(vals, dtype=float).reshape(len(s), len(wd))
    mu = dirs @ n
    w = wr[:, None] * wd[None, :] * s[:, None] * mu[None, :] * sqrt_maxwellian(zetas).reshape(len(s), -1)
    return float(TWO_SQRT_PI * np.sum(w * vals))


# -- B_T and B_psi, velocity forms ---------------------------------------------
def _BT_from(hs, model, grid, T):
    s, wr, _ = _speed_factors(model, grid)
    att = _attenuation(model, grid, hs.chord)  # (B, h, a)
    Ms = maxwellian(np.stack([s, 0 * s, 0 * s], axis=1))
    radial = wr * s * Ms * (s * s - 2)  # (a,)
    Tp = _as_temperature(T)(hs.exits)  # (B, h)
    return TWO_SQRT_PI * np.einsum("bh,h,bha,a->b", Tp, hs.dir_weights * hs.mu, att, radial)


def _Bpsi_coefficients(hs, model, grid):
    s, wr, _ = _speed_factors(model, grid)
    att = _attenuation(model, grid, hs.chord)
    Ms = maxwellian(np.stack([s, 0 * s, 0 * s], axis=1))
    return TWO_SQRT_PI * (hs.dir_weights * hs.mu)[None, :] * (att @ (wr * s * Ms))  # (B, h)


def B_T(domain, grid, model, T, x, n_mu=8, n_phi=16):
    hs = half_space(domain, x, n_mu, n_phi)
    out = _BT_from(hs, model, grid, T)
    return float(out[0]) if np.ndim(x) == 1 else out


def B_psi_velocity_form(domain, grid, model, psi, x, n_mu=8, n_phi=16):
    hs = half_space(domain, x, n_mu, n_phi)
    c = _Bpsi_coefficients(hs, model, grid)
    vals = _as_boundary_function(psi)(hs.exits, hs.exit_normals)
    out = np.sum(c * vals, axis=-1)
    return float(out[0]) if np.ndim(x) == 1 else out


def B_psi_matrix(domain, grid, model, mesh, n_mu=8, n_phi=16):
    """Dense map from mesh values of psi to B_psi at the mesh nodes."""
    hs = half_space(domain, mesh.nodes, n_mu, n_phi)
    c = _Bpsi_coefficients(hs, model, grid)
    idx, w = surface_interpolator(mesh).weights(hs.exits, hs.exit_normals)
    B = np.zeros((len(mesh), len(mesh)))
    rows = np.broadcast_to(np.arange(len(mesh))[:, None, None], idx.shape)
    np.add.at(B, (rows.ravel(), idx.ravel()), (c[..., None] * w).ravel())
    return B


# -- B_psi and B_T, surface forms ---------------------------------------------------
@lru_cache(maxsize=32)
def surface_weight(model, moment="psi", d_max=8.0):
    """Spline of g(d) = int_0^inf e^{-z^2} e^{-d nu(z)/z} z^3 q(z) dz.

    q = 1 for the psi form and q = z^2 - 2 for the temperature form.
    """
    z, wz = graded_panels(0.0, 9.0, 1e-4, 24)
    nu = collision_frequency(model, z)
    q = np.ones_like(z) if moment == "psi" else z * z - 2
    base = np.exp(-z * z) * z**3 * q * wz
    d = np.unique(np.concatenate([[0.0], np.geomspace(1e-6, 0.05, 120), np.linspace(0.05, d_max, 600)]))
    g = np.exp(-np.outer(d, nu / z)) @ base
    return CubicSpline(d, g)


def _surface_kernel(domain, model, x, nx, nodes, normals, moment):
    """(2/pi) g(d)/d^4 [(x-y).n(x)] |(x-y).n(y)| per node; the y -> x limit uses the curvatures at x."""
    g = surface_weight(model, moment, d_max=max(8.0, 1.01 * domain.diameter))
    r = x - nodes
    d = np.linalg.norm(r, axis=-1)
    near = d < 1e-9
    ds = np.where(near, 1.0, d)
    val = g(ds) / ds**4 * (r @ nx) * np.abs(np.sum(r * normals, axis=-1))
    if near.any():
        k1, k2 = domain.principal_curvatures(x)
        val = np.where(near, float(g(0.0)) * (3 * k1 * k1 + 2 * k1 * k2 + 3 * k2 * k2) / 32, val)
    return 2 / np.pi * val


def pole_mesh(domain, x, n_gl=8, n_phi=32, focus=1e-3):
    """Boundary rule with its pole at the boundary point x, polar panels graded from `focus`."""
    axis = np.asarray(x, dtype=float) - domain.center
    return domain.mesh(n_gl, n_phi=n_phi, pole=axis / np.linalg.norm(axis), focus=focus)


def _surface_form(domain, model, values, x, mesh, moment):
    x = np.asarray(x, dtype=float)
    nx = domain.normal(x)
    ker = _surface_kernel(domain, model, x, nx, mesh.nodes, mesh.normals, moment)
    return float(mesh.weights @ (ker * values))


def B_psi_surface_form(domain, model, psi, x, mesh=None):
    """(2/pi) int int psi(y) e^{-l^2|x-y|^2} e^{-nu(l|x-y|)/l} [(x-y).n(x)] |(x-y).n(y)| l^3 dA dl.

    The l-integral is the tabulated g(|x - y|) / |x - y|^4.  With no mesh,
    a rule with its pole at x is built and psi is interpolated onto it.
    """
    if mesh is None:
        mesh = pole_mesh(domain, x)
    if isinstance(psi, WallFlux) and psi.mesh is mesh:
        vals = psi.values
    else:
        vals = _as_boundary_function(psi)(mesh.nodes, mesh.normals)
    return _surface_form(domain, model, vals, x, mesh, "psi")


def B_T_surface_form(domain, model, T, x, mesh=None):
    if mesh is None:
        mesh = pole_mesh(domain, x)
    return _surface_form(domain, model, _as_temperature(T)(mesh.nodes), x, mesh, "temperature")


# -- D_f --------------------------------------------------------------------------
def _chebyshev_panels(n):
    """Panel edges on [0, 1] clustered at both ends, and midpoints."""
    e = 0.5 * (1 - np.cos(np.pi * np.arange(n + 1) / n))
    return e, 0.5 * (e[1:] + e[:-1])


def _Df_from(hs, model, grid, source, n_r=12):
    """Velocity form: for speed s_a the s-integral over [0, L/s_a] is taken on
    shared distance panels r = s s_a with exactly integrated exponentials."""
    s, wr, nu = _speed_factors(model, grid)
    edges, mids = _chebyshev_panels(n_r)
    L = hs.chord  # (B, h)
    lam = nu / s  # decay per unit distance, (a,)
    re = L[..., None] * edges  # (B, h, n_r+1)
    # int_{panel} e^{-nu s} ds with s = r / s_a
    ex = np.exp(-re[..., None] * lam)  # (B, h, n_r+1, a)
    with np.errstate(divide="ignore", invalid="ignore"):
        pw = np.where(nu > 0, (ex[..., :-1, :] - ex[..., 1:, :]) / np.where(nu > 0, nu, 1.0), np.diff(re, axis=-1)[..., None] / s)
    pts = hs.points[:, None, None, :] - (L[..., None] * mids)[..., None] * hs.dirs[:, :, None, :]  # (B, h, r, 3)
    Ms = sqrt_maxwellian(np.stack([s, 0 * s, 0 * s], axis=1))
    out = np.zeros(len(L))
    for b in range(len(L)):
        Kf = source.on_ray(pts[b], hs.dirs[b], s)  # (h, r, a)
        out[b] = np.einsum("hra,hra,a,h->", Kf, pw[b], wr * s * Ms, hs.dir_weights * hs.mu)
    return TWO_SQRT_PI * out


def D_f_velocity_form(domain, grid, model, source, x, n_mu=8, n_phi=16, n_r=12):
    """2 sqrt(pi) int_{zeta.n>0} int_0^tau e^{-nu s} K(f)(x - s zeta, zeta) M^(1/2) |zeta.n| ds dzeta."""
    hs = half_space(domain, x, n_mu, n_phi)
    out = _Df_from(hs, model, grid, source, n_r)
    return float(out[0]) if np.ndim(x) == 1 else out


def D_f_volume_form(domain, grid, model, source, x, n_mu=12, n_phi=24, n_gl=6, first_shell=1e-4):
    """2 pi^(-1/4) int_0^inf int_Omega e^{-nu(rho)|x-y|/rho} K(f)(y, rho w) [w.n(x)] e^{-rho^2/2} rho^2 |x-y|^-2 dy drho,

    w = (x - y)/|x - y|.  Volume nodes sit on shells |x - y| = r about x
    whose thickness grows in proportion to r (geometric panels from
    `first_shell` times the chord), so the 1/|x - y|^2 weight is absorbed by
    dy = r^2 dr dw; the rho integral uses the grid speeds.
    """
    x = np.asarray(x, dtype=float)
    hs = half_space(domain, x, n_mu, n_phi)
    s, wr, nu = _speed_factors(model, grid)
    total = 0.0
    for j in range(len(hs.mu)):
        L = hs.chord[0, j]
        t, wt = graded_panels(0.0, 1.0, first_shell, n_gl)
        r, wrr = L * t, L * wt
        pts = x - r[:, None] * hs.dirs[0, j]
        Kf = source.on_ray(pts[None], hs.dirs[0, j][None], s)[0]  # (r, a)
        kern = np.exp(-np.outer(r, nu / s)) * np.exp(-0.5 * s * s)  # (r, a)
        total += hs.dir_weights[j] * hs.mu[j] * np.einsum("ra,ra,r,a->", Kf, kern, wrr, wr)
    return float(2 * np.pi ** (-0.25) * total)


# -- the flux fixed point -----------------------------------------------------------
@dataclass
class FluxOperator:
    """Precomputed B_T, B_psi and D_f maps on the nodes of a boundary mesh."""

    domain: object
    grid: object
    model: object
    mesh: object
    n_mu: int = 8
    n_phi: int = 16
    n_r: int = 12

    def __post_init__(self):
        self.hs = half_space(self.domain, self.mesh.nodes, self.n_mu, self.n_phi)
        self.B = B_psi_matrix(self.domain, self.grid, self.model, self.mesh, self.n_mu, self.n_phi)

    @property
    def neutral(self):
        """True when constants are (numerically) fixed by B_psi: no damping.

        The half-space rule reproduces the unit moment to a few 1e-6.
        """
        return bool(np.max(np.abs(self.B.sum(axis=1) - 1.0)) < 1e-4)

    def B_T(self, T):
        return _BT_from(self.hs, self.model, self.grid, T)

    def D_f(self, source):
        vol = getattr(source, "volume", None)
        if vol is not None and getattr(source, "grid", None) is self.grid:
            return (self.volume_map(vol) @ source.Kf.ravel().astype(np.float32)).astype(float)
        return _Df_from(self.hs, self.model, self.grid, source, self.n_r)

    def volume_map(self, volume):
        """Dense (mesh nodes, volume nodes * velocity nodes) matrix taking nodal
        K(f) to D_f; the same quadrature as :func:`_Df_from`, assembled once."""
        cached = getattr(self, "_volume_map", None)
        if cached is not None and cached[0] is volume:
            return cached[1]
        from scipy import sparse

        hs, grid = self.hs, self.grid
        s, wr, nu = _speed_factors(self.model, grid)
        edges, mids = _chebyshev_panels(self.n_r)
        Ms = sqrt_maxwellian(np.stack([s, 0 * s, 0 * s], axis=1))
        radial = TWO_SQRT_PI * wr * s * Ms
        nx, nv = len(volume), grid.size
        out = np.zeros((len(hs.points), nx * nv), dtype=np.float32)
        for b in range(len(hs.points)):
            L = hs.chord[b]  # (h,)
            ex = np.exp(-(L[:, None] * edges)[..., None] * (nu / s))  # (h, r+1, a)
            pw = (ex[:, :-1] - ex[:, 1:]) / nu if np.all(nu > 0) else np.diff(L[:, None] * edges, axis=-1)[..., None] / s
            coef = pw * radial * (hs.dir_weights * hs.mu)[:, None, None]  # (h, r, a)
            pts = hs.points[b] - (L[:, None] * mids)[..., None] * hs.dirs[b][:, None, :]
            idx, w = volume.weights(pts)  # (h, r, k)
            A = grid.angular_matrix(hs.dirs[b])  # (h, na)
            V = np.einsum("hrk,hra,hj->hrkaj", w, coef, A).reshape(idx.size, nv)
            S = sparse.csr_matrix((np.ones(idx.size), (idx.ravel(), np.arange(idx.size))), shape=(nx, idx.size))
            out[b] = (S @ V).ravel()
        self._volume_map = (volume, out)
        return out

    def solve(self, rhs, psi0=None, tol=1e-12, max_iters=2000, anchor=None):
        """Jacobi iteration psi <- rhs + B psi.

        With `anchor` set (or a neutral operator) the area-weighted mean is
        reset to the anchor after every sweep.
        """
        w = self.mesh.weights / self.mesh.weights.sum()
        if anchor is None and self.neutral:
            anchor = 0.0
        psi = np.zeros(len(self.mesh)) if psi0 is None else np.array(psi0, dtype=float)
        history = []
        for it in range(1, max_iters + 1):
            new = rhs + self.B @ psi
            if anchor is not None:
                new += anchor - w @ new
            delta = float(np.max(np.abs(new - psi)))
            scale = max(1.0, float(np.max(np.abs(new))))
            history.append(delta)
            psi = new
            if delta <= tol * scale:
                return WallFlux(self.mesh, psi), it
            if not np.isfinite(delta) or delta > 1e12:
                break
        raise DivergenceError("wall flux iteration did not converge", history)


def solve_wall_flux(domain, grid, model, mesh, T, source, tol=1e-12, max_iters=2000, anchor=None, operator=None):
    """psi = B_T + B_psi[psi] + D_f[f] on the mesh nodes; returns (WallFlux, iterations)."""
    op = operator or FluxOperator(domain, grid, model, mesh)
    rhs = op.B_T(T) + (op.D_f(source) if source is not None else 0.0)
    return op.solve(rhs, tol=tol, max_iters=max_iters, anchor=anchor)


# -- regularity checks -----------------------------------------------------------
def check_Df_modulus(domain, grid, model, source, pairs, spread_limit=10.0):
    """|D_f(x0) - D_f(x1)| / (|x0 - x1| (1 + |ln|x0 - x1||)) over boundary pairs."""
    from .report import CheckTable

    x0 = np.array([p[0] for p in pairs])
    x1 = np.array([p[1] for p in pairs])
    d0 = D_f_velocity_form(domain, grid, model, source, x0)
    d1 = D_f_velocity_form(domain, grid, model, source, x1)
    sep = np.linalg.norm(x0 - x1, axis=1)
    modulus = sep * (1 + np.abs(np.log(sep)))
    diff = np.abs(d0 - d1)
    ratio = diff / modulus
    ok = ratio <= spread_limit * np.median(ratio)
    return CheckTable("Df_modulus", domain.name, diff, modulus, ok, info={"separation": sep})


def boundary_pairs(domain, rng, n, smin=1e-3, smax=0.5):
    """Boundary pairs joined by geodesics of log-uniform length in [smin, smax]."""
    from .geometry_checks import random_boundary_points, random_tangent

    x0 = random_boundary_points(domain, rng, n)
    lengths = np.exp(rng.uniform(np.log(smin), np.log(smax), n))
    r1 = domain.geodesic_radius
    out = []
    for p, length in zip(x0, lengths):
        v = random_tangent(domain, rng, p[None], np.array([1.0]))[0]
        q = p
        remaining = length
        while remaining > 0:  # chain geodesic steps within the admissible radius
            step = min(remaining, 0.99 * r1)
            q_next = domain.exp_map(q, v * step)
            n = domain.normal(q_next)
            v = (q_next - q) - np.dot(q_next - q, n) * n
            v /= np.linalg.norm(v)
            q = q_next
            remaining -= step
        out.append((p, q))
    return out


def check_grad_B_bounded(domain, quantities, points, directions, h=None, stability=0.1):
    """Tangential difference quotients of boundary functionals.

    `quantities` maps a name to a vectorised callable on boundary points.
    For each, max |q(x + h v) - q(x)| / h is formed for h, h/2, h/4 (the
    displaced points re-projected to the boundary); the check passes when
    successive maxima agree to `stability`.
    """
    from .report import CheckTable

    h = h or 1e-3 * domain.diameter
    points = np.atleast_2d(points)
    directions = np.atleast_2d(directions)
    tables = []
    for name, q in quantities.items():
        base = np.asarray(q(points))
        quot = []
        for hk in (h, h / 2, h / 4):
            moved = domain.project_to_surface(points + hk * directions)
            dist = np.linalg.norm(moved - points, axis=1)
            quot.append(np.max(np.abs(np.asarray(q(moved)) - base) / dist))
        quot = np.array(quot)
        scale = max(quot.max(), 1e-12)
        ok = np.abs(np.diff(quot)) <= stability * scale + 1e-10
        tables.append(CheckTable(f"grad_{name}", domain.name, quot[1:], quot[:-1], ok, info={"quotients": quot}))
    return tables
