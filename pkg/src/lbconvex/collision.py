"""Hard-sphere linearised collision operator L = -nu f + K f.

Units: M(zeta) = pi^-1.5 exp(-|zeta|^2).  With beta(theta) = cos(theta) sin(theta)
the kernel constants that make K(sqrt M) = nu sqrt M exact are c1 = beta0 and
c2 = 2 beta0; see :func:`KineticModel.hard_sphere`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy import integrate, special

from .velocity import VelocityGrid, lagrange_matrix, legendre_table


class SingularityError(ValueError):
    """Kernel evaluated at coincident velocities."""


@dataclass(frozen=True)
class KineticModel:
    gamma: float = 1.0
    beta0: float = 0.5
    kernel_constants: tuple = (0.5, 1.0)
    nu_scale: float = 1.0

    def __post_init__(self):
        if self.gamma != 1.0:
            raise ValueError("only the hard-sphere model (gamma = 1) is supported")
        c1, c2 = self.kernel_constants
        if self.beta0 <= 0 or c1 <= 0 or c2 <= 0:
            raise ValueError("beta0 and kernel constants must be positive")
        if self.nu_scale < 0:
            raise ValueError("nu_scale must be non-negative")
        object.__setattr__(self, "kernel_constants", (float(c1), float(c2)))

    @classmethod
    def hard_sphere(cls, beta0=0.5, nu_scale=1.0):
        return cls(1.0, beta0, (beta0, 2.0 * beta0), nu_scale)

    def scaled(self, nu_scale):
        return KineticModel(self.gamma, self.beta0, self.kernel_constants, nu_scale)


def maxwellian(zeta):
    zeta = np.asarray(zeta, dtype=float)
    return np.pi**-1.5 * np.exp(-np.sum(zeta * zeta, axis=-1))


def sqrt_maxwellian(zeta):
    zeta = np.asarray(zeta, dtype=float)
    return np.pi**-0.75 * np.exp(-0.5 * np.sum(zeta * zeta, axis=-1))


def _nu_unscaled(s):
    s = np.asarray(s, dtype=float)
    small = s < 1e-4
    ss = np.where(small, 1.0, s)
    big = np.pi**1.5 * (np.exp(-ss * ss) / np.sqrt(np.pi) + (ss + 0.5 / ss) * special.erf(ss))
    # series about 0: 2 pi (1 + s^2/3 - s^4/30 + ...)
    series = 2 * np.pi * (1 + s * s / 3 - s**4 / 30)
    return np.where(small, series, big)


def collision_frequency(model, speed):
    """nu(|zeta|) = nu_scale * beta0 * int exp(-|eta|^2) |eta - zeta| d eta (closed form)."""
    speed = np.asarray(speed, dtype=float)
    if np.any(speed < 0):
        raise ValueError("speed must be non-negative")
    return model.nu_scale * model.beta0 * _nu_unscaled(speed)


def collision_frequency_radial(model, speed):
    """Same integral by 1-D radial quadrature (angular average done exactly)."""
    if speed < 0:
        raise ValueError("speed must be non-negative")
    s = float(speed)

    def mean_distance(r):
        if s == 0.0:
            return r
        if r == 0.0:
            return s
        return ((r + s) ** 3 - abs(r - s) ** 3) / (6 * r * s)

    val, _ = integrate.quad(
        lambda r: 4 * np.pi * r * r * np.exp(-r * r) * mean_distance(r),
        0, np.inf, points=None, limit=200,
    )
    return model.nu_scale * model.beta0 * val


def collision_frequency_derivative(model, speed):
    """d nu / d|zeta|."""
    s = np.asarray(speed, dtype=float)
    small = s < 1e-4
    ss = np.where(small, 1.0, s)
    big = np.pi**1.5 * (1 - 0.5 / ss**2) * special.erf(ss) + np.pi * np.exp(-ss * ss) / ss
    series = 2 * np.pi * (2 * s / 3 - 4 * s**3 / 30)
    return model.nu_scale * model.beta0 * np.where(small, series, big)


def _kernel_parts(zeta, zeta_star):
    zeta = np.asarray(zeta, dtype=float)
    zeta_star = np.asarray(zeta_star, dtype=float)
    d = zeta - zeta_star
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0.0):
        raise SingularityError("kernel is singular at zeta == zeta_star")
    a = np.sum(zeta * zeta, axis=-1)
    b = np.sum(zeta_star * zeta_star, axis=-1)
    return d, r, a, b


def kernel(model, zeta, zeta_star):
    """k(zeta, zeta*) = c2 |d|^-1 exp(-|d|^2/4 - (|z|^2-|z*|^2)^2/(4|d|^2)) - c1 |d| exp(-(|z|^2+|z*|^2)/2)."""
    c1, c2 = model.kernel_constants
    _, r, a, b = _kernel_parts(zeta, zeta_star)
    q = (a - b) ** 2 / (r * r)
    k2 = c2 / r * np.exp(-0.25 * r * r - 0.25 * q)
    k1 = c1 * r * np.exp(-0.5 * (a + b))
    return model.nu_scale * (k2 - k1)


def kernel_velocity_gradient(model, zeta, zeta_star):
    """Analytic gradient of :func:`kernel` in its first argument; shape (..., 3)."""
    c1, c2 = model.kernel_constants
    zeta = np.asarray(zeta, dtype=float)
    d, r, a, b = _kernel_parts(zeta, zeta_star)
    r2 = r * r
    q = (a - b) ** 2 / r2
    rhat = d / r[..., None]
    e2 = np.exp(-0.25 * r2 - 0.25 * q)
    # grad of the k2 exponent: -d/2 - (a-b) zeta / r^2 + (a-b)^2 d / (2 r^4)
    gexp = (
        -0.5 * d
        - ((a - b) / r2)[..., None] * zeta
        + (0.5 * (a - b) ** 2 / (r2 * r2))[..., None] * d
    )
    gk2 = c2 * e2[..., None] * (-rhat / r2[..., None] + gexp / r[..., None])
    e1 = np.exp(-0.5 * (a + b))
    gk1 = c1 * e1[..., None] * (rhat - r[..., None] * zeta)
    return model.nu_scale * (gk2 - gk1)


# -- product integration on a VelocityGrid ---------------------------------

def _centered_rule(s, zeta_max, n_mu, n_r):
    """Nodes (mu, r) and weights for the ball |zeta*| < zeta_max in coordinates
    zeta* = s e_z + r w, mu = w . e_z; the azimuth is integrated out (2 pi)."""
    t, wt = legendre.leggauss(n_mu)
    u, wu = legendre.leggauss(n_r)
    mu = t
    rmax = -s * mu + np.sqrt(np.maximum(s * s * mu * mu + zeta_max**2 - s * s, 0.0))
    r = 0.5 * (u[None, :] + 1.0) * rmax[:, None]
    w = 2 * np.pi * wt[:, None] * 0.5 * wu[None, :] * rmax[:, None]
    return np.broadcast_to(mu[:, None], r.shape), r, w


def _kernel_r2(model, s, mu, r):
    """k(s e_z, s e_z + r w) * r^2 written so that the 1/r singularity cancels."""
    c1, c2 = model.kernel_constants
    rho2 = s * s + r * r + 2 * s * r * mu
    k2 = c2 * r * np.exp(-0.25 * r * r - 0.25 * (2 * s * mu + r) ** 2)
    k1 = c1 * r**3 * np.exp(-0.5 * (s * s + rho2))
    return model.nu_scale * (k2 - k1), np.sqrt(np.maximum(rho2, 0.0))


def harmonic_blocks(model, grid, speeds, n_mu=None, n_r=None):
    """h[i, l, a] = K(L_a(|.|) P_l(e_z . hat)) evaluated at speeds[i] * e_z.

    K commutes with rotations, so these blocks determine K on the grid's
    interpolation space exactly.
    """
    n_mu = n_mu or max(64, 4 * grid.n_radial)
    n_r = n_r or max(64, 4 * grid.n_radial)
    speeds = np.atleast_1d(np.asarray(speeds, dtype=float))
    out = np.empty((len(speeds), grid.degree + 1, grid.n_radial))
    for i, s in enumerate(speeds):
        mu, r, w = _centered_rule(s, grid.zeta_max, n_mu, n_r)
        kr2, rho = _kernel_r2(model, s, mu, r)
        cos = np.where(rho > 0, (s + r * mu) / np.where(rho > 0, rho, 1.0), 1.0)
        lag = lagrange_matrix(grid.speeds, rho.ravel())  # (npts, n_radial)
        P = legendre_table(cos.ravel(), grid.degree)  # (L+1, npts)
        kw = (kr2 * w).ravel()
        out[i] = (P * kw[None, :]) @ lag
    return out


@lru_cache(maxsize=16)
def collision_matrix(model, grid):
    """Dense K on nodal values: (K f)(nodes) = collision_matrix @ f(nodes)."""
    h = harmonic_blocks(model, grid, grid.speeds)  # (nr, L+1, nr)
    cos = np.clip(grid.directions @ grid.directions.T, -1.0, 1.0)
    P = legendre_table(cos, grid.degree)  # (L+1, na, na)
    coef = (2 * np.arange(grid.degree + 1) + 1) / (4 * np.pi)
    A = coef[:, None, None] * P * grid.angular_weights[None, None, :]
    K = np.einsum("ila,ljk->ijak", h, A)
    n = grid.size
    K = K.reshape(n, n)
    K.setflags(write=False)
    return K


def apply_K_nodal(model, grid, fvals, zetas):
    """K f at arbitrary velocities from nodal values `fvals` (..., size)."""
    zetas = np.atleast_2d(np.asarray(zetas, dtype=float))
    fvals = np.asarray(fvals, dtype=float)
    s = np.linalg.norm(zetas, axis=1)
    dirs = np.where(s[:, None] > 0, zetas / np.where(s > 0, s, 1.0)[:, None], [0.0, 0.0, 1.0])
    h = harmonic_blocks(model, grid, s)  # (m, L+1, nr)
    cos = np.clip(dirs @ grid.directions.T, -1.0, 1.0)
    P = legendre_table(cos, grid.degree)  # (L+1, m, na)
    coef = (2 * np.arange(grid.degree + 1) + 1) / (4 * np.pi)
    A = coef[:, None, None] * P * grid.angular_weights[None, None, :]
    A[1:, s == 0, :] = 0.0
    F = fvals.reshape(fvals.shape[:-1] + (grid.n_radial, grid.n_angular))
    return np.einsum("mla,lmk,...ak->...m", h, A, F)


def apply_K(model, grid, f_slice, zeta):
    """Quadrature value of int k(zeta, z*) f(z*) dz* using f at the grid nodes.

    The singularity at z* = zeta is integrated exactly: the nodal data are
    expanded in the grid's interpolation basis and the kernel is integrated
    against each basis function in coordinates centred on zeta.
    """
    fvals = np.asarray(f_slice(grid.nodes), dtype=float)
    out = apply_K_nodal(model, grid, fvals, zeta)
    return float(out[0]) if np.ndim(zeta) == 1 else out


def apply_K_centered(model, f, zeta, zeta_max=6.0, n_mu=24, n_phi=16, n_r=24):
    """int k(zeta, z*) f(z*) dz* for a callable f evaluated off-grid.

    Spherical coordinates centred on zeta with the polar axis along zeta;
    r^2 dr cancels the |zeta - z*|^-1 singularity.  `f` receives an (m, 3)
    array of velocities, all with |z*| < zeta_max.
    """
    zeta = np.asarray(zeta, dtype=float)
    s = float(np.linalg.norm(zeta))
    ez = zeta / s if s > 0 else np.array([0.0, 0.0, 1.0])
    from .velocity import tangent_frame

    e1, e2 = tangent_frame(ez)
    t, wt = legendre.leggauss(n_mu)
    u, wu = legendre.leggauss(n_r)
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    mu = t[:, None]
    sin = np.sqrt(1 - mu * mu)
    w3 = (
        mu[..., None] * ez
        + (sin * np.cos(phi)[None, :])[..., None] * e1
        + (sin * np.sin(phi)[None, :])[..., None] * e2
    )  # (n_mu, n_phi, 3)
    rmax = -s * t + np.sqrt(np.maximum(s * s * t * t + zeta_max**2 - s * s, 0.0))
    r = 0.5 * (u[None, :] + 1.0) * rmax[:, None]  # (n_mu, n_r)
    kr2, _ = _kernel_r2(model, s, t[:, None], r)
    w = wt[:, None] * 0.5 * wu[None, :] * rmax[:, None] * (2 * np.pi / n_phi)
    pts = zeta + r[:, None, :, None] * w3[:, :, None, :]  # (n_mu, n_phi, n_r, 3)
    vals = np.asarray(f(pts.reshape(-1, 3)), dtype=float).reshape(n_mu, n_phi, n_r)
    return float(np.einsum("mpr,mr->", vals, kr2 * w))


# -- bound checks ----------------------------------------------------------

def _gaussian_envelope(zeta, zeta_star, delta):
    _, r, a, b = _kernel_parts(zeta, zeta_star)
    return r, np.exp(-0.25 * (1 - delta) * (r * r + (a - b) ** 2 / (r * r)))


def kernel_bound_ratios(model, zeta, zeta_star, delta=0.5):
    """|k| / (|d|^-1 * envelope); the sup over a sweep is the fitted C1."""
    r, env = _gaussian_envelope(zeta, zeta_star, delta)
    return np.abs(kernel(model, zeta, zeta_star)) / (env / r)


def kernel_gradient_bound_ratios(model, zeta, zeta_star, delta=0.5):
    """|grad k| / ((1+|zeta|) |d|^-2 * envelope); the sup is the fitted C2."""
    r, env = _gaussian_envelope(zeta, zeta_star, delta)
    g = np.linalg.norm(kernel_velocity_gradient(model, zeta, zeta_star), axis=-1)
    s = np.linalg.norm(np.asarray(zeta, dtype=float), axis=-1)
    return g / ((1 + s) / (r * r) * env)


def weighted_kernel_integral(epsilon, a1, a2, eta_speed, n_mu=96, n_u=96):
    """int |eta - z|^-(3-eps) exp(-a1|eta-z|^2 - a2 (|eta|^2-|z|^2)^2/|eta-z|^2) dz.

    Centred at eta; r = u^(1/eps) removes the r^(eps-1) singularity.
    """
    if epsilon <= 0 or a1 <= 0 or a2 <= 0:
        raise ValueError("epsilon, a1, a2 must be positive")
    s = float(eta_speed)
    rmax = np.sqrt(60.0 / a1)
    umax = rmax**epsilon
    t, wt = legendre.leggauss(n_mu)
    # split u at the Gaussian peak scale to keep the rule accurate for small eps
    total = 0.0
    edges = np.unique(np.clip(np.array([0.0, 1.0, 2.0, 4.0, rmax]) ** epsilon, 0, umax))
    uu, wu = legendre.leggauss(n_u)
    for lo, hi in zip(edges[:-1], edges[1:]):
        u = lo + 0.5 * (uu + 1) * (hi - lo)
        r = u ** (1.0 / epsilon)
        g = np.exp(-a1 * r[None, :] ** 2 - a2 * (2 * s * t[:, None] + r[None, :]) ** 2)
        total += 2 * np.pi / epsilon * np.einsum("m,u,mu->", wt, 0.5 * (hi - lo) * wu, g)
    return total


def weighted_decay_check(epsilon, a1, a2, eta_speeds):
    """Rows (speed, integral * (1 + speed)); boundedness is the claim."""
    return [(float(s), weighted_kernel_integral(epsilon, a1, a2, s) * (1 + s)) for s in eta_speeds]


class EquilibriumSource:
    """K(f) for the space-independent f = (a + b(|zeta|^2 - 2)) M^(1/2).

    Both terms are collision invariants, so K(f) = nu f exactly.
    """

    def __init__(self, model, a=1.0, b=0.0):
        self.model, self.a, self.b = model, float(a), float(b)

    def f(self, zetas):
        s2 = np.sum(np.asarray(zetas) ** 2, axis=-1)
        return (self.a + self.b * (s2 - 2)) * sqrt_maxwellian(zetas)

    def radial(self, speeds):
        s = np.asarray(speeds, dtype=float)
        return collision_frequency(self.model, s) * (self.a + self.b * (s * s - 2)) * np.pi**-0.75 * np.exp(-0.5 * s * s)

    def on_ray(self, points, dirs, speeds):
        """K(f)(points, speeds * dirs): points (..., r, 3), speeds (q,) or (..., q)."""
        points = np.asarray(points)
        speeds = np.asarray(speeds, dtype=float)
        vals = self.radial(speeds)
        if speeds.ndim > 1:
            vals = vals[..., None, :]
        return np.broadcast_to(vals, points.shape[:-1] + (speeds.shape[-1],))

    def at(self, points, zetas):
        s = np.linalg.norm(np.asarray(zetas, dtype=float), axis=-1)
        return np.broadcast_to(self.radial(s), np.broadcast_shapes(np.shape(points)[:-1], s.shape))
