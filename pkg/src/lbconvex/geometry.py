"""Strictly convex C^2 domains given as sublevel sets {F < 0}.

All point arguments are arrays of shape (..., 3) unless stated otherwise.
Rays run backward: the exit point of (x, zeta) is x - tau zeta.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre

from .velocity import tangent_frame

SURFACE_TOL = 1e-10


class DomainError(ValueError):
    """Point outside the closed domain."""


@dataclass(frozen=True)
class RayHit:
    tau_minus: float
    exit_point: np.ndarray
    normal_component: float


@dataclass(frozen=True)
class BoundaryMesh:
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    pole: np.ndarray

    def __len__(self):
        return len(self.weights)

    @property
    def area(self):
        return float(self.weights.sum())


def graded_panels(a, b, h0, n_gl):
    """Gauss nodes on [a, b] with panels [a, a+h0, a+2h0, a+4h0, ...]."""
    edges = [a]
    h = h0
    while edges[-1] + h < b:
        edges.append(edges[-1] + h)
        h *= 2
    if b - edges[-1] < 0.5 * h / 2 and len(edges) > 1:
        edges[-1] = b
    else:
        edges.append(b)
    t, w = legendre.leggauss(n_gl)
    e = np.asarray(edges)
    lo, hi = e[:-1, None], e[1:, None]
    x = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
    return x.ravel(), (0.5 * (hi - lo) * w).ravel()


class ConvexDomain:
    """Base class; subclasses provide F, gradient and hessian (vectorised)."""

    name = "convex"
    center = np.zeros(3)

    # -- implicit function -------------------------------------------------
    def F(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def params(self):
        return {}

    def inside(self, x):
        return self.F(x) < 0

    def normal(self, y):
        g = self.gradient(y)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def shape_operator(self, y):
        """P H P / |grad F| on the tangent plane (3x3, kernel along n)."""
        g = self.gradient(y)
        gn = np.linalg.norm(g, axis=-1)
        n = g / gn[..., None]
        P = np.eye(3) - n[..., :, None] * n[..., None, :]
        return P @ self.hessian(y) @ P / gn[..., None, None]

    def principal_curvatures(self, y):
        ev = np.linalg.eigvalsh(self.shape_operator(y))
        return ev[..., 1:]

    # -- rays --------------------------------------------------------------
    def chord(self, x, dirs):
        """Distance l >= 0 with x - l*dir on the boundary (the backward exit).

        Newton's method started beyond the far side: phi(l) = F(x - l w) is
        convex, so the iterates decrease monotonically onto the largest root.
        """
        x = np.asarray(x, dtype=float)
        w = np.asarray(dirs, dtype=float)
        x, w = np.broadcast_arrays(x, w)
        l = np.full(x.shape[:-1], 1.01 * self.diameter + 1e-9)
        for _ in range(100):
            p = x - l[..., None] * w
            phi = self.F(p)
            dphi = -np.sum(self.gradient(p) * w, axis=-1)
            step = phi / np.where(dphi > 0, dphi, np.inf)
            l = l - step
            if np.all(np.abs(step) <= 1e-15 * (1 + np.abs(l))):
                break
        return np.maximum(l, 0.0)

    def exit_ray(self, x, zeta):
        x = np.asarray(x, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        speed = np.linalg.norm(zeta)
        if speed == 0:
            raise ValueError("zero velocity has no exit point")
        if self.F(x) > SURFACE_TOL * self.scale:
            raise DomainError("point outside the closed domain")
        w = zeta / speed
        l = float(self.chord(x, w))
        p = x - l * w
        n = self.normal(p)
        return RayHit(l / speed, p, min(float(abs(n @ w)), 1.0))

    def trace(self, x, dirs):
        """Vectorised exit data for unit directions: (length, exit point, N)."""
        l = self.chord(x, dirs)
        p = np.asarray(x) - l[..., None] * np.asarray(dirs)
        N = np.minimum(np.abs(np.sum(self.normal(p) * dirs, axis=-1)), 1.0)
        return l, p, N

    # -- boundary ----------------------------------------------------------
    def radial_point(self, dirs):
        """Boundary point c + rho(w) w along unit directions w from the centre."""
        dirs = np.asarray(dirs, dtype=float)
        rho = self.chord(np.broadcast_to(self.center, dirs.shape), -dirs)
        return self.center + rho[..., None] * dirs

    def project_to_surface(self, y, iters=50):
        """Newton steps along the gradient onto {F = 0}."""
        y = np.array(y, dtype=float)
        for _ in range(iters):
            g = self.gradient(y)
            f = self.F(y)
            y = y - (f / np.sum(g * g, axis=-1))[..., None] * g
            if np.all(np.abs(f) < 1e-15 * self.scale):
                break
        return y

    def closest_point(self, x):
        """Nearest boundary point to interior x (tangential descent + KKT Newton)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        seeds = [self.project_to_surface(x + 0 * x + 1e-3 * self.gradient(x))]
        for e in np.vstack([np.eye(3), -np.eye(3)]):
            l = self.chord(x, np.broadcast_to(-e, x.shape))
            seeds.append(x + l[:, None] * e)
        seeds = np.stack(seeds)  # (s, m, 3)
        d = np.linalg.norm(seeds - x[None], axis=-1)
        y = seeds[np.argmin(d, axis=0), np.arange(len(x))]
        for _ in range(200):
            n = self.normal(y)
            r = y - x
            t = r - np.sum(r * n, axis=-1, keepdims=True) * n
            y = self.project_to_surface(y - t, iters=8)
            if np.all(np.linalg.norm(t, axis=-1) < 1e-13 * self.scale):
                break
        # KKT Newton polish: y - x + lam grad F = 0, F(y) = 0
        g = self.gradient(y)
        lam = -np.sum((y - x) * g, axis=-1) / np.sum(g * g, axis=-1)
        for _ in range(20):
            g = self.gradient(y)
            H = self.hessian(y)
            J = np.zeros(x.shape[:-1] + (4, 4))
            J[..., :3, :3] = np.eye(3) + lam[..., None, None] * H
            J[..., :3, 3] = g
            J[..., 3, :3] = g
            res = np.concatenate([y - x + lam[..., None] * g, self.F(y)[..., None]], axis=-1)
            delta = np.linalg.solve(J, -res[..., None])[..., 0]
            y = y + delta[..., :3]
            lam = lam + delta[..., 3]
            if np.all(np.abs(res) < 1e-15 * self.scale):
                break
        return y

    def boundary_distance(self, x):
        x = np.asarray(x, dtype=float)
        y = self.closest_point(x.reshape(-1, 3))
        d = np.linalg.norm(y - x.reshape(-1, 3), axis=-1)
        d = np.where(self.F(x.reshape(-1, 3)) >= 0, 0.0, d)
        return d.reshape(x.shape[:-1]) if x.ndim > 1 else float(d[0])

    # -- global constants --------------------------------------------------
    @cached_property
    def _curvature_sample(self):
        mesh = self.mesh(24)
        return self.principal_curvatures(mesh.nodes)

    @property
    def scale(self):
        return 1.0

    @cached_property
    def diameter(self):
        # every catalogue domain is centrally symmetric about self.center
        t, _ = legendre.leggauss(40)
        ph = np.linspace(0, 2 * np.pi, 81)[:-1]
        st = np.sqrt(1 - t * t)
        dirs = np.stack(
            [st[:, None] * np.cos(ph), st[:, None] * np.sin(ph), np.broadcast_to(t[:, None], (40, 80))],
            axis=-1,
        ).reshape(-1, 3)
        rho = np.linalg.norm(self._radial_unbounded(dirs) - self.center, axis=-1)
        return 2.0 * float(rho.max())

    def _radial_unbounded(self, dirs):
        # radial bisection that does not need the diameter
        lo = np.zeros(len(dirs))
        hi = np.ones(len(dirs))
        while True:
            out = self.F(self.center + hi[:, None] * dirs) >= 0
            if out.all():
                break
            hi = np.where(out, hi, 2 * hi)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            out = self.F(self.center + mid[:, None] * dirs) >= 0
            hi = np.where(out, mid, hi)
            lo = np.where(out, lo, mid)
        return self.center + hi[:, None] * dirs

    @property
    def max_curvature(self):
        return float(self._curvature_sample.max())

    @property
    def inner_radius(self):
        """R2: every boundary point has a tangent ball of this radius inside."""
        return 1.0 / self.max_curvature

    @property
    def outer_radius(self):
        """R3: every boundary point has a tangent ball of this radius containing the domain."""
        return 1.0 / float(self._curvature_sample.min())

    @property
    def geodesic_radius(self):
        """r1 = min(r0, 1/(4b)) with r0 proxied by pi * R2 / 2."""
        return min(np.pi * self.inner_radius / 2, 1.0 / (4 * self.max_curvature))

    # -- surface geodesics -------------------------------------------------
    def exp_map(self, p0, v, step=None):
        """Endpoint of the surface geodesic from p0 with initial velocity v.

        Arclength RK4 on y'' = -II(y', y') n with re-projection each step.
        """
        p0 = np.asarray(p0, dtype=float)
        v = np.asarray(v, dtype=float)
        r1 = self.geodesic_radius
        length = float(np.linalg.norm(v))
        if length > r1 * (1 + 1e-12):
            raise ValueError(f"|v| = {length:g} exceeds the geodesic radius r1 = {r1:g}")
        n0 = self.normal(p0)
        if abs(v @ n0) > 1e-10 * max(length, 1.0):
            raise ValueError("v is not tangent at p0")
        if length == 0:
            return p0.copy()
        h_max = step if step is not None else r1 / 128
        nsteps = max(1, int(np.ceil(length / h_max)))
        h = length / nsteps
        y, t = p0.copy(), v / length

        def acc(y, t):
            g = self.gradient(y)
            gn = np.linalg.norm(g)
            return -(t @ self.hessian(y) @ t) / gn * (g / gn)

        for _ in range(nsteps):
            k1y, k1t = t, acc(y, t)
            k2y, k2t = t + 0.5 * h * k1t, acc(y + 0.5 * h * k1y, t + 0.5 * h * k1t)
            k3y, k3t = t + 0.5 * h * k2t, acc(y + 0.5 * h * k2y, t + 0.5 * h * k2t)
            k4y, k4t = t + h * k3t, acc(y + h * k3y, t + h * k3t)
            y = y + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
            t = t + h / 6 * (k1t + 2 * k2t + 2 * k3t + k4t)
            y = self.project_to_surface(y, iters=5)
            n = self.normal(y)
            t = t - (t @ n) * n
            t /= np.linalg.norm(t)
        return y

    # -- surface quadrature ------------------------------------------------
    def mesh(self, n_theta=32, n_phi=None, pole=(0.0, 0.0, 1.0), focus=None):
        """Gauss-Legendre(cos theta) x trapezoid(phi) rule about `pole`.

        dA = rho^2 / (n . w) dw for the star-shaped parametrisation y = c + rho(w) w.
        With `focus` (an angle), polar angles are instead graded geometrically
        from `focus` up to pi, n_theta Gauss points per panel, which resolves
        integrands concentrated at the pole.
        """
        n_phi = n_phi or 2 * n_theta
        pole = np.asarray(pole, dtype=float)
        pole = pole / np.linalg.norm(pole)
        e1, e2 = tangent_frame(pole)
        if focus is None:
            t, wt = legendre.leggauss(n_theta)
        else:
            th, wth = graded_panels(0.0, np.pi, focus, n_theta)
            t, wt = np.cos(th), wth * np.sin(th)
        ph = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
        st = np.sqrt(1 - t * t)
        dirs = (
            t[:, None, None] * pole
            + (st[:, None] * np.cos(ph))[..., None] * e1
            + (st[:, None] * np.sin(ph))[..., None] * e2
        ).reshape(-1, 3)
        dw = (wt[:, None] * np.full(n_phi, 2 * np.pi / n_phi)).reshape(-1)
        y = self.radial_point(dirs)
        n = self.normal(y)
        rho = np.linalg.norm(y - self.center, axis=-1)
        w = dw * rho**2 / np.sum(n * dirs, axis=-1)
        return BoundaryMesh(y, n, w, pole)


class Sphere(ConvexDomain):
    name = "sphere"

    def __init__(self, radius=1.0, center=(0.0, 0.0, 0.0)):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)

    def params(self):
        return {"radius": self.radius, "center": self.center.tolist()}

    @property
    def scale(self):
        return 1.0

    def F(self, x):
        d = np.asarray(x) - self.center
        return (np.sum(d * d, axis=-1) - self.radius**2) / self.radius**2

    def gradient(self, x):
        return 2 * (np.asarray(x) - self.center) / self.radius**2

    def hessian(self, x):
        x = np.asarray(x)
        return np.broadcast_to(2 * np.eye(3) / self.radius**2, x.shape[:-1] + (3, 3)).copy()

    @cached_property
    def diameter(self):
        return 2 * self.radius

    def chord(self, x, dirs):
        x, w = np.broadcast_arrays(np.asarray(x, dtype=float) - self.center, np.asarray(dirs, dtype=float))
        a = np.sum(w * w, axis=-1)
        b = np.sum(x * w, axis=-1)
        c = np.sum(x * x, axis=-1) - self.radius**2
        return np.maximum((b + np.sqrt(np.maximum(b * b - a * c, 0.0))) / a, 0.0)

    def closest_point(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = x - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        u = np.where(r > 0, d / np.where(r > 0, r, 1.0), [0.0, 0.0, 1.0])
        return self.center + self.radius * u

    @property
    def max_curvature(self):
        return 1.0 / self.radius

    @property
    def inner_radius(self):
        return self.radius

    @property
    def outer_radius(self):
        return self.radius


class Ellipsoid(ConvexDomain):
    name = "ellipsoid"

    def __init__(self, axes=(1.0, 1.5, 2.0), center=(0.0, 0.0, 0.0)):
        self.axes = np.asarray(axes, dtype=float)
        if self.axes.shape != (3,) or np.any(self.axes <= 0):
            raise ValueError("ellipsoid needs three positive semi-axes")
        self.center = np.asarray(center, dtype=float)

    def params(self):
        return {"axes": self.axes.tolist(), "center": self.center.tolist()}

    def F(self, x):
        u = (np.asarray(x) - self.center) / self.axes
        return np.sum(u * u, axis=-1) - 1.0

    def gradient(self, x):
        return 2 * (np.asarray(x) - self.center) / self.axes**2

    def hessian(self, x):
        x = np.asarray(x)
        return np.broadcast_to(np.diag(2 / self.axes**2), x.shape[:-1] + (3, 3)).copy()

    @cached_property
    def diameter(self):
        return 2 * float(self.axes.max())

    def chord(self, x, dirs):
        x, w = np.broadcast_arrays(np.asarray(x, dtype=float) - self.center, np.asarray(dirs, dtype=float))
        xt = x / self.axes
        wt = w / self.axes
        a = np.sum(wt * wt, axis=-1)
        b = np.sum(xt * wt, axis=-1)
        c = np.sum(xt * xt, axis=-1) - 1.0
        disc = np.sqrt(np.maximum(b * b - a * c, 0.0))
        # stable root of a l^2 - 2 b l + c = 0
        big = np.where(b >= 0, (b + disc) / a, -c / np.where(disc - b > 0, disc - b, np.inf))
        return np.maximum(big, 0.0)

    @cached_property
    def _curvature_sample(self):
        a = self.axes
        mesh = self.mesh(24)
        k = self.principal_curvatures(mesh.nodes)
        # extremes are attained at the axis vertices
        verts = np.diag(a)
        return np.concatenate([k.ravel(), self.principal_curvatures(verts).ravel()])

    def closest_point(self, x):
        """Root of sum a_i^2 x_i^2 / (a_i^2 + t)^2 = 1 on (-a_min^2, 0]."""
        x = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        a2 = self.axes**2
        # a tiny offset keeps the degenerate (on-axis) case on the right branch
        xx = np.where(np.abs(x) < 1e-300, 1e-300, x)
        lo = np.full(len(x), -a2.min())
        hi = np.zeros(len(x))
        outside = np.sum(x * x / a2, axis=-1) >= 1.0
        hi = np.where(outside, np.sum(x * x, axis=-1) ** 0.5 * self.axes.max(), hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            g = np.sum(a2 * xx * xx / (a2 + mid[:, None]) ** 2, axis=-1) - 1.0
            lo = np.where(g > 0, mid, lo)
            hi = np.where(g > 0, hi, mid)
        t = 0.5 * (lo + hi)
        y = a2 * x / (a2 + t[:, None])
        y = self.project_to_surface(y + self.center)
        # the on-axis degenerate case can leave a better point elsewhere
        generic = ConvexDomain.closest_point(self, x + self.center)
        better = np.linalg.norm(generic - (x + self.center), axis=-1) < np.linalg.norm(y - (x + self.center), axis=-1) - 1e-13
        return np.where(better[:, None], generic, y)


class QuarticEllipsoid(ConvexDomain):
    """{ sum u_i^2 + kappa sum u_i^4 < 1 + kappa }, u = (x - c) / axes.

    A smooth, strictly convex, box-ward perturbation of the ellipsoid.
    """

    name = "quartic"

    def __init__(self, axes=(1.0, 1.0, 1.0), kappa=0.5, center=(0.0, 0.0, 0.0)):
        self.axes = np.asarray(axes, dtype=float)
        self.kappa = float(kappa)
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        self.center = np.asarray(center, dtype=float)

    def params(self):
        return {"axes": self.axes.tolist(), "kappa": self.kappa, "center": self.center.tolist()}

    def F(self, x):
        u = (np.asarray(x) - self.center) / self.axes
        u2 = u * u
        return (np.sum(u2, axis=-1) + self.kappa * np.sum(u2 * u2, axis=-1)) / (1 + self.kappa) - 1.0

    def gradient(self, x):
        u = (np.asarray(x) - self.center) / self.axes
        return (2 * u + 4 * self.kappa * u**3) / self.axes / (1 + self.kappa)

    def hessian(self, x):
        u = (np.asarray(x) - self.center) / self.axes
        d = (2 + 12 * self.kappa * u * u) / self.axes**2 / (1 + self.kappa)
        return d[..., :, None] * np.eye(3)


def make_domain(name, **params):
    name = name.lower()
    if name == "sphere":
        return Sphere(**params)
    if name == "ellipsoid":
        return Ellipsoid(**params)
    if name in ("quartic", "superquadric"):
        return QuarticEllipsoid(**params)
    raise ValueError(f"unknown domain {name!r}")
