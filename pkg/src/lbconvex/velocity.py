"""Velocity-space discretisation.

The grid is a product of Gauss-Legendre speeds on (0, zeta_max) and a
Lebedev rule on the unit sphere.  Nodal data are read through two linear
maps: Lagrange interpolation in speed and spherical-harmonic projection
(hyperinterpolation) in direction.  Everything that needs velocity values
off the nodes goes through :meth:`VelocityGrid.interpolation_matrix`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre
from scipy.integrate import lebedev_rule

LEBEDEV_ORDERS = (3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29, 31, 35, 41, 47)


def legendre_table(x, lmax):
    """P_0..P_lmax at x, stacked on a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((lmax + 1,) + x.shape)
    out[0] = 1.0
    if lmax >= 1:
        out[1] = x
    for l in range(1, lmax):
        out[l + 1] = ((2 * l + 1) * x * out[l] - l * out[l - 1]) / (l + 1)
    return out


def lagrange_matrix(nodes, x):
    """Values of the Lagrange cardinal polynomials on `nodes` at points `x`.

    Barycentric form; shape (len(x), len(nodes)).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    bw = 1.0 / diff.prod(axis=1)
    d = x[:, None] - nodes[None, :]
    exact = d == 0.0
    d[exact] = 1.0
    terms = bw[None, :] / d
    out = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    if rows.any():
        out[rows] = exact[rows].astype(float)
    return out


def hemisphere_rule(normal, n_mu=8, n_phi=16):
    """Directions and weights on {w : w.normal > 0}.

    Gauss-Legendre in mu = w.normal on (0, 1), trapezoid in azimuth.  The
    weights sum to 2*pi and integrate mu exactly (sum w*mu = pi).
    """
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    e1, e2 = tangent_frame(normal)
    t, wt = legendre.leggauss(n_mu)
    mu = 0.5 * (t + 1.0)
    wmu = 0.5 * wt
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    sin = np.sqrt(1.0 - mu**2)
    dirs = (
        mu[:, None, None] * normal
        + (sin[:, None] * np.cos(phi)[None, :])[..., None] * e1
        + (sin[:, None] * np.sin(phi)[None, :])[..., None] * e2
    ).reshape(-1, 3)
    weights = (wmu[:, None] * np.full(n_phi, 2 * np.pi / n_phi)[None, :]).reshape(-1)
    return dirs, weights


def tangent_frame(normal):
    """Two unit vectors completing `normal` to a right-handed frame."""
    n = np.asarray(normal, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


@dataclass(frozen=True)
class VelocityGrid:
    """Truncated product quadrature on |zeta| < zeta_max.

    Nodes are ordered speed-major: node index = a * n_angular + k.
    """

    n_radial: int = 12
    angular_order: int = 7
    zeta_max: float = 6.0
    grazing_cutoff: float = 1e-3
    core: tuple = None
    speeds: np.ndarray = field(init=False, repr=False, compare=False)
    directions: np.ndarray = field(init=False, repr=False, compare=False)
    angular_weights: np.ndarray = field(init=False, repr=False, compare=False)
    radial_weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_radial < 2:
            raise ValueError("n_radial must be >= 2")
        if self.angular_order not in LEBEDEV_ORDERS:
            raise ValueError(f"angular_order must be one of {LEBEDEV_ORDERS}")
        if self.zeta_max <= 0:
            raise ValueError("zeta_max must be positive")
        if self.grazing_cutoff <= 0:
            raise ValueError("grazing_cutoff must be positive")
        if self.core is None:
            panels = [(0.0, self.zeta_max, self.n_radial)]
        else:
            n_core, core_max = int(self.core[0]), float(self.core[1])
            if not (0 < n_core < self.n_radial and 0 < core_max < self.zeta_max):
                raise ValueError("core must be (n < n_radial, speed < zeta_max)")
            panels = [(0.0, core_max, n_core), (core_max, self.zeta_max, self.n_radial - n_core)]
        speeds, wr = [], []
        for a, b, n in panels:
            t, wt = legendre.leggauss(n)
            speeds.append(a + 0.5 * (b - a) * (t + 1.0))
            wr.append(0.5 * (b - a) * wt)
        speeds = np.concatenate(speeds)
        wr = np.concatenate(wr) * speeds**2
        x, w = lebedev_rule(self.angular_order)
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "radial_weights", wr)
        object.__setattr__(self, "directions", np.ascontiguousarray(x.T))
        object.__setattr__(self, "angular_weights", w)

    @property
    def n_angular(self):
        return len(self.angular_weights)

    @property
    def size(self):
        return self.n_radial * self.n_angular

    @property
    def degree(self):
        """Highest harmonic degree kept by the angular projection."""
        return self.angular_order // 2

    @cached_property
    def nodes(self):
        return (self.speeds[:, None, None] * self.directions[None]).reshape(-1, 3)

    @cached_property
    def weights(self):
        return (self.radial_weights[:, None] * self.angular_weights[None]).reshape(-1)

    @cached_property
    def node_speeds(self):
        return np.repeat(self.speeds, self.n_angular)

    def refined(self):
        """Grid with twice the speeds and roughly half the angular spacing."""
        order = next(o for o in LEBEDEV_ORDERS if o >= 2 * self.angular_order + 1)
        return VelocityGrid(2 * self.n_radial, order, self.zeta_max, self.grazing_cutoff)

    def with_zeta_max(self, zeta_max, n_tail=None):
        """Grid truncated at `zeta_max` that keeps every current node.

        The speeds beyond the present truncation get their own Gauss panel of
        `n_tail` nodes (default: the current density), so two grids differ
        only in the velocity tail.  Lowering zeta_max re-grids from scratch.
        """
        if zeta_max <= self.zeta_max or self.core is not None:
            return VelocityGrid(self.n_radial, self.angular_order, zeta_max, self.grazing_cutoff)
        if n_tail is None:
            n_tail = max(2, int(np.ceil(self.n_radial * (zeta_max - self.zeta_max) / self.zeta_max)))
        return VelocityGrid(
            self.n_radial + n_tail, self.angular_order, zeta_max, self.grazing_cutoff, core=(self.n_radial, self.zeta_max)
        )

    # -- interpolation -------------------------------------------------
    def angular_matrix(self, dirs):
        """Projection weights: g(dir) ~= angular_matrix(dir) @ g(directions)."""
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        cos = np.clip(dirs @ self.directions.T, -1.0, 1.0)
        P = legendre_table(cos, self.degree)
        coef = (2 * np.arange(self.degree + 1) + 1) / (4 * np.pi)
        return np.tensordot(coef, P, axes=1) * self.angular_weights[None, :]

    def radial_matrix(self, speeds):
        return lagrange_matrix(self.speeds, speeds)

    def interpolation_matrix(self, zetas):
        """Dense (m, size) matrix mapping nodal values to values at `zetas`.

        Points with |zeta| >= zeta_max map to zero (truncation).
        """
        zetas = np.atleast_2d(np.asarray(zetas, dtype=float))
        s = np.linalg.norm(zetas, axis=1)
        dirs = np.where(s[:, None] > 0, zetas / np.where(s > 0, s, 1.0)[:, None], [0.0, 0.0, 1.0])
        A = self.angular_matrix(dirs)
        R = self.radial_matrix(s)
        R[s >= self.zeta_max] = 0.0
        # the speed-0 limit keeps only the isotropic part
        at0 = s == 0
        if at0.any():
            A[at0] = self.angular_weights / (4 * np.pi)
        return (R[:, :, None] * A[:, None, :]).reshape(len(zetas), -1)

    def interpolate(self, values, zetas):
        """Interpolate nodal `values` (..., size) to velocities `zetas` (m, 3)."""
        return np.asarray(values) @ self.interpolation_matrix(zetas).T

    def integrate(self, values):
        return np.asarray(values) @ self.weights

    def gaussian_mass(self):
        """Sum of weights * exp(-|zeta|^2); pi**1.5 up to truncation and rounding."""
        return float(self.weights @ np.exp(-self.node_speeds**2))
