"""Geodesics and metric primitives on cone models.

Strategy: the constant-rate half-plane has closed-form geodesics (circular
arcs after the substitution y = e^{-at}/a, which maps the chart isometrically
onto the hyperbolic half-plane of curvature -a^2).  Diagonal models reduce to
that oracle whenever the displacement is vertical, single-axis, or all rates
coincide.  Everything else goes through a collocation BVP solve of the
warped-product geodesic equations, seeded with a half-plane guess.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_bvp

from .models import ConeModel, Point, WARPED, flow


class GeodesicError(RuntimeError):
    def __init__(self, msg, residual=math.inf):
        super().__init__(msg)
        self.residual = residual


@dataclass
class GeodesicPath:
    """Sampled unit-speed geodesic with height bookkeeping."""

    u: np.ndarray          # (m, dim_u)
    t: np.ndarray          # (m,)
    s: np.ndarray          # (m,) arclength
    b_prime: np.ndarray    # (m,) db/ds
    total_length: float
    endpoints: tuple
    solver_residual: float

    @property
    def b(self) -> np.ndarray:
        return self.t

    @property
    def n_samples(self) -> int:
        return len(self.s)

    def point(self, i: int) -> Point:
        return Point(self.u[i], self.t[i])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            dim = self.u.shape[1]
            w.writerow(["s"] + [f"u{i}" for i in range(dim)] + ["t", "b", "b_prime"])
            for k in range(self.n_samples):
                w.writerow([self.s[k], *self.u[k], self.t[k], self.t[k],
                            self.b_prime[k]])


# -- half-plane closed forms ----------------------------------------------


def halfplane_distance(a, u1, t1, u2, t2):
    """Distance in dt^2 + e^{2at} du^2; vectorized over numpy inputs."""
    u1, t1, u2, t2 = map(np.asarray, (u1, t1, u2, t2))
    y1 = np.exp(-a * t1) / a
    y2 = np.exp(-a * t2) / a
    arg = 1.0 + ((u1 - u2) ** 2 + (y1 - y2) ** 2) / (2.0 * y1 * y2)
    return np.arccosh(np.maximum(arg, 1.0)) / a


def _halfplane_path(a, u1, t1, u2, t2, n_samples):
    """Sample the unit-speed half-plane geodesic in chart coordinates."""
    y1 = math.exp(-a * t1) / a
    y2 = math.exp(-a * t2) / a
    if abs(u2 - u1) < 1e-14 * (1.0 + abs(u1)):
        # vertical flowline
        L = abs(t2 - t1)
        s = np.linspace(0.0, L, n_samples)
        sgn = 1.0 if t2 >= t1 else -1.0
        t = t1 + sgn * s
        u = np.full_like(s, u1)
        bp = np.full_like(s, sgn)
        return u, t, s, bp, L
    c = (u1 * u1 + y1 * y1 - u2 * u2 - y2 * y2) / (2.0 * (u1 - u2))
    r = math.hypot(u1 - c, y1)
    th1 = math.atan2(y1, u1 - c)
    th2 = math.atan2(y2, u2 - c)
    q1 = math.tan(0.5 * th1)
    q2 = math.tan(0.5 * th2)
    L = abs(math.log(q2 / q1)) / a
    sgn = 1.0 if q2 > q1 else -1.0
    s = np.linspace(0.0, L, n_samples)
    q = q1 * np.exp(sgn * a * s)
    th = 2.0 * np.arctan(q)
    y = r * np.sin(th)
    u = c + r * np.cos(th)
    t = -np.log(a * y) / a
    bp = -sgn * np.cos(th)
    return u, t, s, bp, L


def _halfplane_connect(model, rate, x, y, chord, n_samples):
    """Closed-form connect along a fixed unstable chord direction."""
    du = y.u_arr - x.u_arr
    delta = float(np.dot(du, chord))
    us, ts, s, bp, L = _halfplane_path(rate, 0.0, x.t, delta, y.t, n_samples)
    u = x.u_arr[None, :] + np.outer(us, chord)
    return GeodesicPath(u=u, t=ts, s=s, b_prime=bp, total_length=L,
                        endpoints=(x, y), solver_residual=0.0)


def _closed_form_axis(model: ConeModel, x: Point, y: Point):
    """Return (rate, chord) when the pair reduces to the half-plane oracle."""
    du = y.u_arr - x.u_arr
    nz = np.flatnonzero(np.abs(du) > 1e-14)
    if model.kind == WARPED:
        return None
    rates = np.asarray(model.rates)
    if len(nz) == 0:
        return rates[0], np.eye(model.dim_u)[0]
    if len(nz) == 1:
        e = np.zeros(model.dim_u)
        e[nz[0]] = 1.0 if du[nz[0]] >= 0 else -1.0
        return rates[nz[0]], e
    if np.allclose(rates, rates[0]):
        e = du / np.linalg.norm(du)
        return rates[0], e
    return None


# -- numeric BVP for warped / mixed-axis diagonal -------------------------


def _warp_eval(model: ConeModel, u, t):
    """phi, dphi/dt, dphi/du0 as (dim_u, m) arrays; u is (dim_u, m).

    Heights are clipped: intermediate Newton iterates of the BVP solver can
    wander far enough to overflow exp, and the clip keeps the residuals
    finite without affecting converged solutions.
    """
    t = np.clip(np.asarray(t, dtype=float), -60.0, 60.0)
    if model.kind == WARPED:
        su = np.sin(model.frequency * u[0])
        cu = np.cos(model.frequency * u[0])
        p = np.tanh(t)
        pd = 1.0 / np.cosh(t) ** 2
        ph = np.exp(model.base_rate * t + model.epsilon * su * p)
        pht = (model.base_rate + model.epsilon * su * pd) * ph
        phu = model.epsilon * model.frequency * cu * p * ph
        return ph[None, :], pht[None, :], phu[None, :]
    r = np.asarray(model.rates)[:, None]
    ph = np.exp(r * t[None, :])
    return ph, r * ph, np.zeros_like(ph)


def _bvp_connect(model: ConeModel, x: Point, y: Point, tol, n_samples,
                 guess_rate=None):
    n = model.dim_u
    du = y.u_arr - x.u_arr
    dnorm = np.linalg.norm(du)
    chord = du / dnorm if dnorm > 0 else np.eye(n)[0]
    rates_to_try = ([guess_rate] if guess_rate else
                    [math.sqrt(model.a * model.A), model.a, model.A])

    best_exc = None
    for rate in rates_to_try:
        us, ts, s, _, L = _halfplane_path(rate, 0.0, x.t, dnorm, y.t, 33)
        sigma = s / max(L, 1e-12)
        q0 = np.zeros((2 * n + 2, len(sigma)))
        q0[0] = ts
        for i in range(n):
            q0[1 + i] = x.u[i] + us * chord[i]
        q0[1 + n, :-1] = np.diff(ts) / np.maximum(np.diff(sigma), 1e-12)
        q0[1 + n, -1] = q0[1 + n, -2]
        for i in range(n):
            q0[2 + n + i, :-1] = np.diff(q0[1 + i]) / np.maximum(np.diff(sigma), 1e-12)
            q0[2 + n + i, -1] = q0[2 + n + i, -2]

        def rhs(sg, q):
            t = q[0]
            uu = q[1:1 + n]
            th = q[1 + n]
            w = q[2 + n:]
            ph, pht, phu = _warp_eval(model, uu, t)
            dq = np.empty_like(q)
            dq[0] = th
            dq[1:1 + n] = w
            dq[1 + n] = np.sum(ph * pht * w**2, axis=0)
            force = np.sum(ph * phu * w**2, axis=0)
            for i in range(n):
                cross = pht[i] * th + phu[i] * w[0] * (1 if model.kind == WARPED else 0)
                dq[2 + n + i] = (force * (1 if i == 0 else 0)
                                 - 2.0 * ph[i] * cross * w[i]) / ph[i] ** 2
            return dq

        def bc(qa, qb):
            res = np.empty(2 * n + 2)
            res[0] = qa[0] - x.t
            res[1:1 + n] = qa[1:1 + n] - x.u_arr
            res[1 + n] = qb[0] - y.t
            res[2 + n:] = qb[1:1 + n] - y.u_arr
            return res

        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                sol = solve_bvp(rhs, bc, sigma, q0, tol=min(tol, 1e-8),
                                max_nodes=40000)
        except Exception as exc:  # singular Jacobian etc.
            best_exc = exc
            continue
        if sol.status != 0:
            best_exc = GeodesicError(f"BVP did not converge: {sol.message}",
                                     residual=float(np.max(sol.rms_residuals)))
            continue
        sg = np.linspace(0.0, 1.0, n_samples)
        q = sol.sol(sg)
        t = q[0]
        uu = q[1:1 + n]
        th = q[1 + n]
        w = q[2 + n:]
        ph, _, _ = _warp_eval(model, uu, t)
        speed = np.sqrt(th**2 + np.sum((ph * w) ** 2, axis=0))
        s_arc = np.concatenate([[0.0], np.cumsum(
            0.5 * (speed[1:] + speed[:-1]) * np.diff(sg))])
        L_tot = float(s_arc[-1])
        bp = th / np.maximum(speed, 1e-300)
        miss = (abs(t[-1] - y.t) + model.metric_speed(y.u_arr, y.t,
                                                      uu[:, -1] - y.u_arr, 0.0)
                + abs(t[0] - x.t) + model.metric_speed(x.u_arr, x.t,
                                                       uu[:, 0] - x.u_arr, 0.0))
        return GeodesicPath(u=uu.T.copy(), t=t, s=s_arc, b_prime=bp,
                            total_length=L_tot, endpoints=(x, y),
                            solver_residual=float(miss))
    if isinstance(best_exc, GeodesicError):
        raise best_exc
    raise GeodesicError(f"BVP solver failed: {best_exc}")


# -- public operations ----------------------------------------------------


def geodesic_connect(model: ConeModel, x: Point, y: Point, tol: float = 1e-8,
                     n_samples: int = 257) -> GeodesicPath:
    if x.u == y.u and x.t == y.t:
        raise GeodesicError("degenerate input: x == y")
    if np.allclose(x.u_arr, y.u_arr, atol=1e-14):
        # flowlines are geodesics in every warped-product model
        return _halfplane_connect(model, model.a, x, y,
                                  np.eye(model.dim_u)[0], n_samples)
    cf = _closed_form_axis(model, x, y)
    if cf is not None:
        rate, chord = cf
        return _halfplane_connect(model, rate, x, y, chord, n_samples)
    return _bvp_connect(model, x, y, tol, n_samples)


def distance(model: ConeModel, x: Point, y: Point, tol: float = 1e-8) -> float:
    if x.u == y.u and x.t == y.t:
        return 0.0
    if np.allclose(x.u_arr, y.u_arr, atol=1e-14):
        return abs(y.t - x.t)
    cf = _closed_form_axis(model, x, y)
    if cf is not None:
        rate, chord = cf
        delta = float(np.dot(y.u_arr - x.u_arr, chord))
        return float(halfplane_distance(rate, 0.0, x.t, delta, y.t))
    return _bvp_connect(model, x, y, tol, 65).total_length


_LEAF_QUAD = np.polynomial.legendre.leggauss(48)


def leaf_distance(model: ConeModel, x: Point, y: Point) -> float:
    """Distance inside the leaf {t = b(x)}: straight-chord length."""
    if abs(x.t - y.t) > 1e-9:
        raise ValueError(f"points on different leaves: t = {x.t} vs {y.t}")
    return float(leaf_distance_at(model, x, y, 0.0))


def leaf_distance_at(model: ConeModel, x: Point, y: Point, tau):
    """Leaf distance between f^tau x and f^tau y; vectorized over tau."""
    tau = np.asarray(tau, dtype=float)
    du = y.u_arr - x.u_arr
    if model.is_homogeneous:
        r = np.asarray(model.rates)
        ph2 = np.exp(2.0 * np.multiply.outer(tau, r) + 2.0 * x.t * r)
        return np.sqrt(np.sum(ph2 * du**2, axis=-1))
    # warped: straight-chord quadrature at each height
    nodes, weights = _LEAF_QUAD
    uu = x.u_arr[0] + 0.5 * (nodes + 1.0) * du[0]
    su = np.sin(model.frequency * uu)
    t = x.t + tau
    p = np.tanh(t)
    ph = np.exp(model.base_rate * t[..., None]
                + model.epsilon * np.multiply.outer(p, su))
    integral = 0.5 * abs(du[0]) * np.sum(ph * weights, axis=-1)
    return integral


def project(model: ConeModel, x: Point, y: Point) -> Point:
    """Flow y to the leaf of x: same u, height b(x)."""
    return Point(y.u, x.t)


def height_profile(path: GeodesicPath, a: float = None, tol_fd: float = 1e-3):
    """Central-difference height derivatives along a path.

    Returns a dict with arrays s, b, b1, b2 and, when the rate a is given,
    the margins of b'' against a*(1-b'^2) and against a*sqrt(1-b'^2).
    """
    if path.n_samples < 64:
        raise ValueError("need at least 64 samples for finite differences")
    s, b = path.s, path.b
    h = s[1] - s[0]
    b1 = np.gradient(b, s, edge_order=2)
    b2 = np.empty_like(b)
    b2[1:-1] = (b[2:] - 2.0 * b[1:-1] + b[:-2]) / h**2
    b2[0] = b2[1]
    b2[-1] = b2[-2]
    out = {"s": s, "b": b, "b1": b1, "b2": b2}
    if a is not None:
        quad = a * (1.0 - np.clip(b1, -1, 1) ** 2)
        sqrtb = a * np.sqrt(np.clip(1.0 - b1**2, 0.0, None))
        out["quad_margin"] = b2 - quad
        out["sqrt_margin"] = b2 - sqrtb
        inner = slice(2, -2)  # endpoint stencils are one-sided, skip them
        out["violations"] = int(np.sum(out["quad_margin"][inner] < -tol_fd))
    return out


def busemann_check(model: ConeModel, ray_start: Point, x: Point,
                   horizon: float = 10.0) -> float:
    """Tail defect of d(gamma(n), x) - n against b(x) - b(gamma(0)).

    The height difference is the limit of d(gamma(n), x) - n as the ray
    descends; the defect is reported at the horizon after checking that it
    shrinks along the way.
    """
    if horizon < 10:
        raise ValueError("horizon must be >= 10")
    target = x.t - ray_start.t
    defects = []
    for n in range(1, int(horizon) + 1):
        g = flow(model, ray_start, -float(n))
        d = distance(model, g, x)
        defects.append(abs((d - n) - target))
    if defects[-1] > defects[0] + 1e-9:
        raise GeodesicError(f"Busemann defect grew along the ray: {defects}")
    return defects[-1]


# -- mesh shortest-path oracle --------------------------------------------


def mesh_distance_bounds(model: ConeModel, x: Point, y: Point,
                         n: int = 512, pad: float = 1.5):
    """Two-sided distance bounds from Dijkstra on a dense chart graph.

    The graph distance over-estimates the continuum distance (paths are
    restricted to 16 edge directions); dividing by the worst angular secant
    for that stencil, times the within-edge metric drift, gives a lower
    bound.  Oracle only, never used on the main path.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra

    if model.dim_u != 1:
        raise ValueError("mesh oracle implemented for dim_u = 1 only")
    u_lo = min(x.u[0], y.u[0]) - pad
    u_hi = max(x.u[0], y.u[0]) + pad
    t_hi = max(x.t, y.t) + pad
    # geodesics dip below the endpoints; bound the dip via the half-plane
    # apex estimate (semicircle radius ~ half the chord in (u, y) coords)
    ab = model.a
    y1 = math.exp(-ab * x.t) / ab
    y2 = math.exp(-ab * y.t) / ab
    r_est = 0.5 * math.hypot(x.u[0] - y.u[0], y1 - y2) + max(y1, y2)
    t_dip = -math.log(ab * r_est) / ab if ab * r_est > 0 else 0.0
    t_lo = min(x.t, y.t, t_dip) - pad
    us = np.linspace(u_lo, u_hi, n)
    ts = np.linspace(t_lo, t_hi, n)
    hu = us[1] - us[0]
    ht = ts[1] - ts[0]
    uu, tt = np.meshgrid(us, ts, indexing="ij")

    offsets = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)]
    rows, cols, vals = [], [], []
    idx = np.arange(n * n).reshape(n, n)
    for di, dj in offsets:
        i0 = slice(0, n - di)
        i1 = slice(di, n)
        j0 = slice(max(0, -dj), min(n, n - dj))
        j1 = slice(max(0, dj), min(n, n + dj))
        src = idx[i0, j0].ravel()
        dst = idx[i1, j1].ravel()
        um = 0.5 * (uu[i0, j0] + uu[i1, j1]).ravel()
        tm = 0.5 * (tt[i0, j0] + tt[i1, j1]).ravel()
        if model.kind == WARPED:
            p = np.tanh(tm)
            ph = np.exp(model.base_rate * tm
                        + model.epsilon * np.sin(model.frequency * um) * p)
        else:
            ph = np.exp(model.rates[0] * tm)
        w = np.sqrt((dj * ht) ** 2 + (ph * di * hu) ** 2)
        rows.append(src)
        cols.append(dst)
        vals.append(w)
    g = coo_matrix((np.concatenate(vals),
                    (np.concatenate(rows), np.concatenate(cols))),
                   shape=(n * n, n * n))

    def nearest(p):
        i = int(round((p.u[0] - u_lo) / hu))
        j = int(round((p.t - t_lo) / ht))
        return idx[i, j], math.hypot(p.u[0] - us[i], p.t - ts[j])

    si, snap_x = nearest(x)
    ti, snap_y = nearest(y)
    dist = dijkstra(g, directed=False, indices=si)[ti]
    # snap error at the endpoints, measured generously in the local metric
    phmax = float(np.exp(model.A * max(abs(t_lo), abs(t_hi))))
    snap = (snap_x + snap_y) * (1.0 + phmax)
    upper = dist + snap
    secant = 1.0 / math.cos(math.radians(13.29))  # worst gap of the stencil
    drift = math.exp((model.A + model.epsilon * model.frequency)
                     * 2.0 * math.hypot(hu, ht))
    lower = dist / (secant * drift) - snap
    return max(lower, 0.0), upper
