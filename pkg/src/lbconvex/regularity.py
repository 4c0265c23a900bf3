"""Finite-difference derivatives, moduli of continuity and exponent fits.

Every estimate is up to an unknown constant, so the checks are of two kinds:
ratio sweeps (measured / modulus stays within `ratio_slack` of its median)
and exponent fits (measured ~ C (1 + 1/d_x)^p on log-log data, passing when
the upper 95% confidence bound on p stays below the admitted exponent).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .boundary_flux import D_f_velocity_form, _as_boundary_function, _as_temperature
from .collision import _kernel_r2, collision_frequency, collision_matrix, sqrt_maxwellian
from .transport import (
    _boundary_part_nodes,
    _boundary_term,
    decompose_I_II_III,
    NodalRays,
    rhs_at_nodes,
)
from .velocity import tangent_frame

LADDER = (0.2, 0.1, 0.05, 0.025)
SPEED_BINS = ((0.1, 0.5), (0.5, 2.0), (2.0, 6.0))
MIN_POINTS = 8


@dataclass
class RegularityConfig:
    epsilon: float = 0.05
    epsilon_prime: float = 0.05
    exponent_slack: float = 0.2
    ratio_slack: float = 10.0
    ladder: tuple = LADDER
    speed_min: float = 0.5
    n_base: int = 4
    n_pairs: int = 3
    separations: tuple = tuple(np.geomspace(1e-3, 0.3, 10))
    stability: float = 0.1
    noise: float = 1e-5
    decay: float = 0.4
    seed: int = 0


@dataclass
class ModulusReport:
    """One estimate checked over a sweep.

    samples: (separation or d_x, measured, bound, ratio) rows.  status is
    "pass", "fail" or "inconclusive"; advisory reports never fail a run.
    """

    check_name: str
    samples: list
    fitted_constant: float
    fitted_exponent: float
    passed: bool
    status: str
    exponent_ci: tuple = (math.nan, math.nan)
    exponent_bound: float = math.nan
    advisory: bool = False
    notes: list = field(default_factory=list)

    def rows(self):
        for i, (sep, m, b, r) in enumerate(self.samples):
            yield [self.check_name, i, _g(sep), _g(m), _g(b), _g(r)]

    def verdict(self):
        return {
            "check": self.check_name,
            "exponent": _g(self.fitted_exponent),
            "ci_low": _g(self.exponent_ci[0]),
            "ci_high": _g(self.exponent_ci[1]),
            "exponent_bound": _g(self.exponent_bound),
            "constant": _g(self.fitted_constant),
            "samples": len(self.samples),
            "status": self.status,
            "advisory": self.advisory,
            "pass": bool(self.passed),
            "notes": list(self.notes),
        }


REPORT_COLUMNS = ["check", "sample_id", "separation", "measured", "bound", "ratio"]


def _g(v):
    v = float(v)
    return v if not math.isfinite(v) else float(f"{v:.10g}")


# -- fitting -----------------------------------------------------------------
def fit_power_law(x, y, groups=None, level=0.95):
    """log y = c_g + p log x by least squares; returns (C, p, (lo, hi)).

    With `groups`, each group gets its own intercept and C is the geometric
    mean of the group constants.  The interval is Student-t on the slope.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = np.zeros(len(x), dtype=int) if groups is None else np.asarray(groups)
    labels, g = np.unique(groups, return_inverse=True)
    A = np.column_stack([np.log(x)] + [(g == k).astype(float) for k in range(len(labels))])
    b = np.log(y)
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    dof = len(b) - A.shape[1]
    p = float(coef[0])
    if dof <= 0:
        return float(np.exp(np.mean(coef[1:]))), p, (math.nan, math.nan)
    resid = b - A @ coef
    s2 = resid @ resid / dof
    cov = s2 * np.linalg.pinv(A.T @ A)
    half = stats.t.ppf(0.5 + level / 2, dof) * math.sqrt(max(cov[0, 0], 0.0))
    return float(np.exp(np.mean(coef[1:]))), p, (p - half, p + half)


def bounded_ratios(ratios, slack):
    r = np.asarray(ratios, dtype=float)
    med = float(np.median(r))
    return bool(med > 0 and np.all(np.isfinite(r)) and r.max() <= slack * med)


def _ratio_report(name, seps, measured, bounds, cfg, noise_floor=0.0, advisory=False):
    seps, measured, bounds = (np.asarray(v, dtype=float) for v in (seps, measured, bounds))
    valid = np.isfinite(measured) & (bounds > 0) & (measured > noise_floor)
    ratios = np.where(bounds > 0, measured / np.where(bounds > 0, bounds, 1.0), np.inf)
    samples = [tuple(map(float, row)) for row in zip(seps, measured, bounds, ratios)]
    notes = []
    if valid.sum() >= 2:
        C, p, ci = fit_power_law(seps[valid], measured[valid])
    else:
        C, p, ci = math.nan, math.nan, (math.nan, math.nan)
    if valid.sum() < MIN_POINTS:
        notes.append(f"{int(valid.sum())} valid pairs (< {MIN_POINTS})")
        return ModulusReport(name, samples, C, p, True, "inconclusive", ci, advisory=advisory, notes=notes)
    ok = bounded_ratios(ratios[valid], cfg.ratio_slack)
    r = ratios[valid]
    notes.append(f"max/median ratio {r.max() / np.median(r):.3g}")
    return ModulusReport(name, samples, C, p, ok, "pass" if ok else "fail", ci, advisory=advisory, notes=notes)


def _exponent_report(name, d, measured, groups, bound_exp, cfg, stable, advisory_mask=None, null_floor=None):
    """Fit measured ~ C (1 + 1/d)^p over stable, non-advisory rungs."""
    d, measured = np.asarray(d, dtype=float), np.asarray(measured, dtype=float)
    stable = np.asarray(stable, dtype=bool)
    adv = np.zeros(len(d), bool) if advisory_mask is None else np.asarray(advisory_mask, bool)
    x = 1.0 + 1.0 / d
    samples = [(float(a), float(m), float(b), float(m / b) if b > 0 else math.inf) for a, m, b in zip(d, measured, x**bound_exp)]
    notes = []
    if (~stable).any():
        notes.append("unresolved under h-refinement, dropped: d_x = " + ", ".join(f"{v:g}" for v in sorted(set(d[~stable]))))
    if null_floor is not None and np.all(measured <= null_floor):
        notes.append("all derivatives below the finite-difference noise floor: exponent 0")
        return ModulusReport(name, samples, 0.0, 0.0, True, "pass", (0.0, 0.0), bound_exp, notes=notes)
    use = stable & ~adv & (measured > 0)
    if use.sum() < MIN_POINTS:
        notes.append(f"{int(use.sum())} resolved points (< {MIN_POINTS})")
        C, p, ci = fit_power_law(x[use], measured[use], groups[use]) if use.sum() > 2 else (math.nan, math.nan, (math.nan, math.nan))
        return ModulusReport(name, samples, C, p, True, "inconclusive", ci, bound_exp, notes=notes)
    C, p, ci = fit_power_law(x[use], measured[use], groups[use])
    ok = bool(ci[1] <= bound_exp)
    return ModulusReport(name, samples, C, p, ok, "pass" if ok else "fail", ci, bound_exp, notes=notes)


# -- sampling -------------------------------------------------------------------
def ladder_points(domain, base_points, ladder=LADDER):
    """x = p - d n(p) for each base point p and rung d; returns (X, d_x, group)."""
    base = np.atleast_2d(base_points)
    n = domain.normal(base)
    X, D, grp = [], [], []
    for i, (p, ni) in enumerate(zip(base, n)):
        for d in ladder:
            X.append(p - d * ni)
            D.append(d)
            grp.append(i)
    X = np.array(X)
    return X, domain.boundary_distance(X), np.array(grp)


def _base_points(domain, cfg, n=None):
    from .geometry_checks import random_boundary_points

    return random_boundary_points(domain, np.random.default_rng(cfg.seed), n or cfg.n_base)


def _fd_gradient(func, X, h):
    """sum_i |d/dx_i func| by central differences; func maps (P, 3) -> (P, m)."""
    X = np.atleast_2d(X)
    P = len(X)
    E = np.eye(3)
    pts = np.concatenate([X[:, None, :] + h * E[None], X[:, None, :] - h * E[None]], axis=1).reshape(-1, 3)
    vals = func(pts)
    vals = vals.reshape(P, 6, *vals.shape[1:])
    return np.sum(np.abs(vals[:, :3] - vals[:, 3:]), axis=1) / (2 * h)


def _sup_with_refinement(func, X, d, stability, mask=None):
    """(sup at step d/10, sup at step d/20, stable flag) per point."""
    g1 = np.array([_fd_gradient(func, x[None], dx / 10)[0] for x, dx in zip(X, d)])
    g2 = np.array([_fd_gradient(func, x[None], dx / 20)[0] for x, dx in zip(X, d)])
    if mask is not None:
        g1, g2 = np.where(mask, g1, 0.0), np.where(mask, g2, 0.0)
    s1, s2 = g1.max(axis=-1), g2.max(axis=-1)
    stable = np.abs(s1 - s2) <= stability * np.maximum(s2, 1e-300)
    return s1, s2, stable


# -- interior gradient of the solution ------------------------------------------
def probe_interior_gradient(domain, solution, cfg=None, T=None, base_points=None, zeta_samples=24):
    """sup over velocity nodes with |zeta| >= speed_min of |grad_x f| + |grad_zeta f|.

    Returns reports for the x-derivatives and for x plus zeta derivatives
    (resolved rungs except the finest), and an advisory x-derivative fit
    that includes the finest rung.
    """
    cfg = cfg or RegularityConfig()
    field_, psi = solution.field, solution.psi
    grid, model = field_.grid, field_.model
    T = _as_temperature(T if T is not None else solution.T)
    base = _base_points(domain, cfg) if base_points is None else base_points
    X, d, grp = ladder_points(domain, base, cfg.ladder)
    speeds = grid.node_speeds
    keep = speeds >= cfg.speed_min

    def fx(P):
        v, graze = rhs_at_nodes(domain, grid, model, psi, T, field_, P)
        return np.where(graze | ~keep, 0.0, v)

    sx1, sx2, stable = _sup_with_refinement(fx, X, d, cfg.stability)
    # velocity derivatives on a fixed subset of nodes
    sel = np.flatnonzero(keep)[:: max(1, int(keep.sum()) // zeta_samples)]
    Zs = grid.nodes[sel]
    from .transport import evaluate_f

    sz = []
    for x, dx in zip(X, d):
        hz = 1e-3
        tot = np.zeros(len(Zs))
        for e in np.eye(3):
            fp = evaluate_f(domain, grid, model, psi, T, field_, np.broadcast_to(x, Zs.shape), Zs + hz * e)
            fm = evaluate_f(domain, grid, model, psi, T, field_, np.broadcast_to(x, Zs.shape), Zs - hz * e)
            tot += np.abs(fp - fm) / (2 * hz)
        sz.append(tot.max())
    measured = sx1 + np.array(sz)
    finest = d <= min(cfg.ladder) * 1.05
    bound = 4.0 / 3.0 + cfg.epsilon + cfg.exponent_slack
    null = cfg.noise / (np.asarray(d) / 10)
    rx = _exponent_report("interior_gradient_x", d, sx1, grp, bound, cfg, stable, finest, null_floor=null)
    rx.notes.append(f"all nodes with |zeta| >= {cfg.speed_min:g}")
    rs = _exponent_report("interior_gradient_x_zeta", d, measured, grp, bound, cfg, stable, finest)
    rs.notes.append(f"zeta-derivatives on {len(sel)} nodes")
    adv = _exponent_report("interior_gradient_x_all_rungs", d, sx1, grp, bound, cfg, stable, null_floor=null)
    adv.advisory = True
    return [rx, rs, adv]


# -- I, H and II ---------------------------------------------------------------
def probe_I_derivative(domain, grid, model, psi, T, cfg=None, base_points=None):
    """|grad_x I| d_x e^{a|zeta|^2/2} along the ladder and the N-weighted pair form."""
    cfg = cfg or RegularityConfig()
    base = _base_points(domain, cfg) if base_points is None else base_points
    X, d, grp = ladder_points(domain, base, cfg.ladder)
    speeds = grid.node_speeds
    weight = np.exp(0.5 * cfg.decay * speeds**2)
    keep = speeds >= cfg.speed_min

    def fI(P):
        return _boundary_part_nodes(domain, model, grid, psi, T, P) * weight

    s1, s2, stable = _sup_with_refinement(fI, X, d, cfg.stability, keep)
    ladder = _ratio_report("I_gradient_dx", d[stable], s1[stable], 1.0 / d[stable], cfg)
    # pairs: (IwithN) at random non-grazing velocities
    rng = np.random.default_rng(cfg.seed + 1)
    seps, meas, bnds = [], [], []
    eps = cfg.epsilon
    for x0 in X[d >= 0.1]:
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        z = rng.standard_normal(3)
        z *= rng.uniform(0.5, 3.0) / np.linalg.norm(z)
        for s in cfg.separations:
            x1 = x0 + s * u
            if not np.all(domain.inside(x1[None])):
                continue
            P = np.stack([x0, x1])
            I, _, N = _boundary_term(domain, model, psi, T, P, np.stack([z, z]))
            sz = np.linalg.norm(z)
            b = sum(s ** (1 - eps) / n + s / (n * sz) for n in N) * np.exp(-cfg.decay * sz * sz)
            seps.append(s)
            meas.append(abs(I[0] - I[1]))
            bnds.append(b)
    pairs = _ratio_report("I_pair_N_weighted", seps, meas, bnds, cfg, noise_floor=1e-14)
    return [ladder, pairs]


def H_nodes(domain, grid, model, psi, T, X):
    """H(x, zeta_m) = (K I(x, .))(zeta_m) at every velocity node."""
    I = _boundary_part_nodes(domain, model, grid, psi, T, np.atleast_2d(X))
    return I @ collision_matrix(model, grid).T


def II_nodes(domain, grid, model, psi, T, X, sel, n_s=16):
    """II(x, zeta_m) = int_0^tau e^{-nu s} H(x - s zeta_m, zeta_m) ds for nodes `sel`."""
    from .transport import _exp_panel_weights, _panels

    X = np.atleast_2d(X)
    Kmat = collision_matrix(model, grid)
    z = grid.nodes[sel]
    s = np.linalg.norm(z, axis=1)
    w = z / s[:, None]
    nu = collision_frequency(model, s)
    edges, mids = _panels(n_s)
    out = np.empty((len(X), len(sel)))
    for i, x in enumerate(X):
        L = domain.chord(np.broadcast_to(x, w.shape), w)
        wts = _exp_panel_weights(L[:, None] * edges, (nu / s)[:, None]) / s[:, None]
        Y = x - (L[:, None] * mids)[..., None] * w[:, None, :]
        I = _boundary_part_nodes(domain, model, grid, psi, T, Y.reshape(-1, 3)).reshape(len(sel), n_s, -1)
        H = np.einsum("qnv,qv->qn", I, Kmat[sel])
        out[i] = np.sum(wts * H, axis=1)
    return out


def probe_II_and_H(domain, grid, model, psi, T, cfg=None, base_points=None, h_slack=0.15, zeta_samples=24):
    """Exponent fits for sup|grad_x H|, sup|grad_x II| and the (1 + 1/|zeta|)-weighted II."""
    cfg = cfg or RegularityConfig()
    base = _base_points(domain, cfg) if base_points is None else base_points
    X, d, grp = ladder_points(domain, base, cfg.ladder)
    keep = grid.node_speeds >= cfg.speed_min
    finest = d <= min(cfg.ladder) * 1.05
    sH1, _, stH = _sup_with_refinement(lambda P: H_nodes(domain, grid, model, psi, T, P), X, d, cfg.stability, keep)
    rH = _exponent_report("H_gradient", d, sH1, grp, 1.0 / 3.0 + h_slack, cfg, stH, null_floor=np.full(len(d), 1e-12))
    sel = np.flatnonzero(keep)[:: max(1, int(keep.sum()) // zeta_samples)]
    g1 = np.array([_fd_gradient(lambda P: II_nodes(domain, grid, model, psi, T, P, sel), x[None], dx / 10)[0] for x, dx in zip(X, d)])
    g2 = np.array([_fd_gradient(lambda P: II_nodes(domain, grid, model, psi, T, P, sel), x[None], dx / 20)[0] for x, dx in zip(X, d)])
    zfac = 1.0 + 1.0 / grid.node_speeds[sel]
    out = [rH]
    for name, scale, p in (("II_gradient", 1.0, 4.0 / 3.0), ("II_gradient_speed_weighted", zfac, 1.0 / 3.0)):
        a, b = (g1 / scale).max(axis=1), (g2 / scale).max(axis=1)
        st = np.abs(a - b) <= cfg.stability * np.maximum(b, 1e-300)
        out.append(
            _exponent_report(name, d, a, grp, p + cfg.epsilon_prime + cfg.exponent_slack, cfg, st, finest, null_floor=np.full(len(d), 1e-12))
        )
    return out


# -- moduli of continuity ----------------------------------------------------------
def _interior_pairs(domain, cfg, rng, n_pairs=None, shrink=0.5):
    from .geometry_checks import random_interior_points

    base = random_interior_points(domain, rng, n_pairs or cfg.n_pairs, shrink=shrink)
    out = []
    for x0 in base:
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        for s in cfg.separations:
            x1 = x0 + s * u
            if np.all(domain.inside(x1[None])):
                out.append((x0, x1, s))
    return out


def _boundary_pairs_geodesic(domain, cfg, rng, n_base):
    """Boundary pairs at the configured geodesic separations from random base points."""
    from .geometry_checks import random_boundary_points, random_tangent

    r1 = domain.geodesic_radius
    out = []
    for p in random_boundary_points(domain, rng, n_base):
        v = random_tangent(domain, rng, p[None], np.array([1.0]))[0]
        for s in cfg.separations:
            q, direction, left = p, v, s
            while left > 1e-15:
                step = min(left, 0.99 * r1)
                q_next = domain.exp_map(q, direction * step)
                n = domain.normal(q_next)
                direction = (q_next - q) - np.dot(q_next - q, n) * n
                direction /= np.linalg.norm(direction)
                q, left = q_next, left - step
            out.append((p, q, float(np.linalg.norm(q - p))))
    return out


def probe_Df_modulus(domain, solution, cfg, rng):
    field_ = solution.field
    pairs = _boundary_pairs_geodesic(domain, cfg, rng, max(1, cfg.n_pairs // 2))
    x0 = np.array([p[0] for p in pairs])
    x1 = np.array([p[1] for p in pairs])
    d0 = D_f_velocity_form(domain, field_.grid, field_.model, field_, x0)
    d1 = D_f_velocity_form(domain, field_.grid, field_.model, field_, x1)
    sep = np.array([p[2] for p in pairs])
    return _ratio_report("Df_modulus", sep, np.abs(d0 - d1), sep * (1 + np.abs(np.log(sep))), cfg, noise_floor=1e-13)


def _G_nodes(domain, field_, X):
    grid, model = field_.grid, field_.model
    D = NodalRays(domain, grid, model, field_.volume, X).collision_part(field_.Kf)
    return D @ collision_matrix(model, grid).T


def probe_G_modulus(domain, solution, cfg, rng):
    field_ = solution.field
    keep = field_.grid.node_speeds >= cfg.speed_min
    pairs = _interior_pairs(domain, cfg, rng)
    G0 = _G_nodes(domain, field_, np.array([p[0] for p in pairs]))
    G1 = _G_nodes(domain, field_, np.array([p[1] for p in pairs]))
    sep = np.array([p[2] for p in pairs])
    meas = np.abs(G0 - G1)[:, keep].max(axis=1)
    return _ratio_report("G_modulus", sep, meas, sep * (1 + np.abs(np.log(sep))), cfg, noise_floor=1e-13)


def probe_III_modulus(domain, solution, cfg, rng, n_zeta=2):
    field_, psi = solution.field, solution.psi
    grid, model = field_.grid, field_.model
    pairs = _interior_pairs(domain, cfg, rng, n_pairs=max(1, cfg.n_pairs - 1), shrink=0.9)
    Z = rng.standard_normal((n_zeta, 3))
    Z *= (rng.uniform(0.5, 2.5, n_zeta) / np.linalg.norm(Z, axis=1))[:, None]
    seps, meas, bnds = [], [], []
    eps = cfg.epsilon
    for x0, x1, s in pairs:
        dxy = float(min(domain.boundary_distance(x0[None])[0], domain.boundary_distance(x1[None])[0]))
        diff = max(
            abs(decompose_I_II_III(domain, grid, model, psi, solution.T, field_, x0, z)[2] - decompose_I_II_III(domain, grid, model, psi, solution.T, field_, x1, z)[2])
            for z in Z
        )
        seps.append(s)
        meas.append(diff)
        bnds.append((1 + 1 / dxy) * s ** (1 - eps))
    return _ratio_report("III_holder", seps, meas, bnds, cfg, noise_floor=1e-13)


def abs_kernel_integral(model, g, zeta, zeta_max=6.0, n_mu=24, n_phi=16, n_r=24):
    """int |k(zeta, z)| g(z) dz with the rule of apply_K_centered."""
    zeta = np.asarray(zeta, dtype=float)
    s = float(np.linalg.norm(zeta))
    ez = zeta / s
    e1, e2 = tangent_frame(ez)
    t, wt = np.polynomial.legendre.leggauss(n_mu)
    u, wu = np.polynomial.legendre.leggauss(n_r)
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    sin = np.sqrt(1 - t * t)[:, None]
    w3 = t[:, None, None] * ez + (sin * np.cos(phi))[..., None] * e1 + (sin * np.sin(phi))[..., None] * e2
    rmax = -s * t + np.sqrt(np.maximum(s * s * t * t + zeta_max**2 - s * s, 0.0))
    r = 0.5 * (u[None, :] + 1.0) * rmax[:, None]
    kr2, _ = _kernel_r2(model, s, t[:, None], r)
    w = wt[:, None] * 0.5 * wu[None, :] * rmax[:, None] * (2 * np.pi / n_phi)
    pts = zeta + r[:, None, :, None] * w3[:, :, None, :]
    vals = np.asarray(g(pts.reshape(-1, 3)), dtype=float).reshape(n_mu, n_phi, n_r)
    return float(np.einsum("mpr,mr->", vals, np.abs(kr2) * w))


def probe_kdI_modulus(domain, solution, cfg, rng):
    """int |k(zeta, z')| |I(x, z') - I(y, z')| dz' against (1 + 1/d)^(1/3) (|ln d| + 1) |x - y|^(1-eps)."""
    field_, psi = solution.field, solution.psi
    model = field_.model
    T = solution.T
    pairs = _interior_pairs(domain, cfg, rng, n_pairs=max(1, cfg.n_pairs - 1), shrink=0.9)
    z = rng.standard_normal(3)
    z *= 1.0 / np.linalg.norm(z)
    seps, meas, bnds = [], [], []
    for x0, x1, s in pairs:
        def g(Z, x0=x0, x1=x1):
            a, _, _ = _boundary_term(domain, model, psi, T, np.broadcast_to(x0, Z.shape).copy(), Z)
            b, _, _ = _boundary_term(domain, model, psi, T, np.broadcast_to(x1, Z.shape).copy(), Z)
            return np.abs(a - b)

        dxy = float(min(domain.boundary_distance(x0[None])[0], domain.boundary_distance(x1[None])[0]))
        seps.append(s)
        meas.append(abs_kernel_integral(model, g, z, field_.grid.zeta_max))
        bnds.append((1 + 1 / dxy) ** (1 / 3) * (abs(np.log(dxy)) + 1) * s ** (1 - cfg.epsilon))
    return _ratio_report("kI_holder", seps, meas, bnds, cfg, noise_floor=1e-13)


def probe_boundary_holder(domain, solution, cfg, rng):
    """|f(x, zeta) - f(y, zeta)| / ((1 + 1/|zeta|) |x - y|^((1-eps)/2)), x on the boundary, y = x - s n(x).

    One report per speed bin; velocities are the grid nodes in the bin.
    """
    field_, psi = solution.field, solution.psi
    grid, model = field_.grid, field_.model
    base = _base_points(domain, cfg, max(1, cfg.n_pairs))
    n = domain.normal(base)
    fx, gx = rhs_at_nodes(domain, grid, model, psi, solution.T, field_, base)
    speeds = grid.node_speeds
    reports = []
    rows = []
    for b, (p, nb) in enumerate(zip(base, n)):
        Y = p - np.outer(cfg.separations, nb)
        fy, gy = rhs_at_nodes(domain, grid, model, psi, solution.T, field_, Y)
        rows.append((fy, gy, fx[b], gx[b]))
    for lo, hi in SPEED_BINS:
        in_bin = (speeds >= lo) & (speeds < hi if hi < 6.0 else speeds <= hi)
        seps, meas, bnds = [], [], []
        for fy, gy, f0, g0 in rows:
            for j, s in enumerate(cfg.separations):
                ok = in_bin & ~gy[j] & ~g0
                if not ok.any():
                    continue
                r = np.abs(fy[j] - f0)[ok] / (1 + 1 / speeds[ok])
                seps.append(s)
                meas.append(r.max())
                bnds.append(s ** (0.5 * (1 - cfg.epsilon)))
        rep = _ratio_report(f"boundary_holder_speed_{lo:g}_{hi:g}", seps, meas, bnds, cfg, noise_floor=1e-13)
        if not in_bin.any():
            rep.notes.append("no velocity nodes in this speed bin")
        reports.append(rep)
    return reports


def probe_G_derivative(domain, solution, cfg, base_points=None):
    """|grad_x G| against ||f|| (1 + |ln delta|) + M delta^sigma with delta = d_x / 2.

    M and sigma = 1 - eps come from measured sup_zeta |f(x) - f(y)| / |x - y|^sigma
    over y on a small sphere of radius delta about x.
    """
    field_, psi = solution.field, solution.psi
    grid, model = field_.grid, field_.model
    base = _base_points(domain, cfg) if base_points is None else base_points
    X, d, grp = ladder_points(domain, base, cfg.ladder)
    keep = grid.node_speeds >= cfg.speed_min
    g1 = np.array([_fd_gradient(lambda P: _G_nodes(domain, field_, P), x[None], dx / 10)[0] for x, dx in zip(X, d)])
    meas = g1[:, keep].max(axis=1)
    fnorm = field_.max_norm
    sigma = 1 - cfg.epsilon
    bnds = []
    E = np.vstack([np.eye(3), -np.eye(3)])
    for x, dx in zip(X, d):
        delta = dx / 2
        f0, _ = rhs_at_nodes(domain, grid, model, psi, solution.T, field_, x[None])
        fy, _ = rhs_at_nodes(domain, grid, model, psi, solution.T, field_, x + delta * E)
        M = np.abs(fy - f0).max() / delta**sigma
        bnds.append(fnorm * (1 + abs(np.log(delta))) + M * delta**sigma)
    return _ratio_report("G_derivative", d, meas, bnds, cfg, noise_floor=1e-13)


def probe_moduli(domain, solution, cfg=None):
    """One report per modulus estimate on a converged solution."""
    cfg = cfg or RegularityConfig()
    rng = np.random.default_rng(cfg.seed + 2)
    out = [probe_Df_modulus(domain, solution, cfg, rng), probe_G_modulus(domain, solution, cfg, rng)]
    out.append(probe_III_modulus(domain, solution, cfg, rng))
    out.append(probe_kdI_modulus(domain, solution, cfg, rng))
    out.extend(probe_boundary_holder(domain, solution, cfg, rng))
    out.append(probe_G_derivative(domain, solution, cfg))
    return out
