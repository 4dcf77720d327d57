"""Conformal uniformization: density kappa = e^{-ab}, distance d_b, boundary.

Rescaling the cone metric by e^{-ab} makes every ascending ray finite
(length e^{-ab}/a), so the boundary sits at t = +infinity and is labeled by
the unstable coordinate of the ray.  For constant-rate models the rescaled
metric is flat: (u, e^{-at}/a) are Euclidean coordinates, which provides the
exact oracle used throughout the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import ConeModel, Point, WARPED, flow
from .geometry import GeodesicPath, geodesic_connect, distance

ORACLE = "Oracle"
GEODESIC_FAMILY = "GeodesicFamily"
MESH_DIJKSTRA = "MeshDijkstra"


def kappa(model: ConeModel, x) -> float:
    t = x.t if isinstance(x, Point) else float(x)
    return math.exp(-model.a * t)


def has_flat_oracle(model: ConeModel) -> bool:
    """True when d_b is exactly Euclidean in (u, e^{-at}/a) coordinates."""
    return model.is_homogeneous and np.allclose(model.rates, model.rates[0])


def flat_coords(model: ConeModel, x: Point) -> np.ndarray:
    a = model.a
    return np.concatenate([x.u_arr, [math.exp(-a * x.t) / a]])


@dataclass(frozen=True)
class UniformizedDistance:
    value: float
    method: str
    bounds: tuple


def length_b(model: ConeModel, path: GeodesicPath) -> float:
    """kappa-weighted length of a sampled path."""
    k = np.exp(-model.a * path.t)
    return float(np.trapezoid(k, path.s))


def d_b(model: ConeModel, x: Point, y: Point, method: str = None,
        n_samples: int = 513) -> UniformizedDistance:
    if method is None:
        method = ORACLE if has_flat_oracle(model) else GEODESIC_FAMILY
    if method == ORACLE:
        if not has_flat_oracle(model):
            raise ValueError("no flat oracle for this model")
        v = float(np.linalg.norm(flat_coords(model, x) - flat_coords(model, y)))
        return UniformizedDistance(value=v, method=ORACLE, bounds=(v, v))
    if method == GEODESIC_FAMILY:
        if x.u == y.u and x.t == y.t:
            return UniformizedDistance(0.0, GEODESIC_FAMILY, (0.0, 0.0))
        path = geodesic_connect(model, x, y, n_samples=n_samples)
        v = length_b(model, path)
        # F(z) = e^{-ab(z)}/a has |grad F| = kappa, so F is 1-Lipschitz for
        # d_b: the height gap gives a rigorous lower bound
        lo = abs(math.exp(-model.a * x.t) - math.exp(-model.a * y.t)) / model.a
        return UniformizedDistance(value=v, method=GEODESIC_FAMILY,
                                   bounds=(lo, v))
    if method == MESH_DIJKSTRA:
        lo, up = _mesh_d_b_bounds(model, x, y)
        return UniformizedDistance(value=0.5 * (lo + up), method=MESH_DIJKSTRA,
                                   bounds=(lo, up))
    raise ValueError(f"unknown method {method!r}")


def _mesh_d_b_bounds(model: ConeModel, x: Point, y: Point, n: int = 512,
                     pad: float = 1.0, t_cap: float = 14.0):
    """Dijkstra bounds for d_b on the kappa-rescaled chart metric."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra

    if model.dim_u != 1:
        raise ValueError("mesh implemented for dim_u = 1 only")
    u_lo = min(x.u[0], y.u[0]) - pad
    u_hi = max(x.u[0], y.u[0]) + pad
    t_lo = min(x.t, y.t) - pad
    t_hi = max(x.t, y.t) + t_cap
    us = np.linspace(u_lo, u_hi, n)
    ts = np.linspace(t_lo, t_hi, n)
    hu, ht = us[1] - us[0], ts[1] - ts[0]
    uu, tt = np.meshgrid(us, ts, indexing="ij")
    offsets = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)]
    rows, cols, vals = [], [], []
    idx = np.arange(n * n).reshape(n, n)
    for di, dj in offsets:
        i0, i1 = slice(0, n - di), slice(di, n)
        j0 = slice(max(0, -dj), min(n, n - dj))
        j1 = slice(max(0, dj), min(n, n + dj))
        src, dst = idx[i0, j0].ravel(), idx[i1, j1].ravel()
        um = 0.5 * (uu[i0, j0] + uu[i1, j1]).ravel()
        tm = 0.5 * (tt[i0, j0] + tt[i1, j1]).ravel()
        if model.kind == WARPED:
            p = np.tanh(tm)
            ph = np.exp(model.base_rate * tm
                        + model.epsilon * np.sin(model.frequency * um) * p)
        else:
            ph = np.exp(model.rates[0] * tm)
        k = np.exp(-model.a * tm)
        w = k * np.sqrt((dj * ht) ** 2 + (ph * di * hu) ** 2)
        rows.append(src); cols.append(dst); vals.append(w)
    g = coo_matrix((np.concatenate(vals),
                    (np.concatenate(rows), np.concatenate(cols))),
                   shape=(n * n, n * n))

    def nearest(p):
        i = int(round((p.u[0] - u_lo) / hu))
        j = int(round((p.t - t_lo) / ht))
        return idx[i, j]

    dist = dijkstra(g, directed=False, indices=nearest(x))[nearest(y)]
    secant = 1.0 / math.cos(math.radians(13.29))
    drift = math.exp((2.0 * model.A + model.epsilon * model.frequency)
                     * 2.0 * math.hypot(hu, ht))
    return dist / (secant * drift), dist


# -- boundary -------------------------------------------------------------


def boundary_distance(model: ConeModel, x: Point) -> float:
    """Length of the ascending vertical ray: integral of kappa = e^{-ab}/a.

    kappa depends only on the height, so the ray integral is closed form for
    every model kind.
    """
    return math.exp(-model.a * x.t) / model.a


def boundary_point(model: ConeModel, x: Point) -> tuple:
    """Leaf coordinate labeling the endpoint of the ascending ray (Psi)."""
    return x.u


def boundary_bilipschitz_check(model: ConeModel, x: Point, sample_pairs,
                               heights=(5.0, 10.0, 15.0),
                               cauchy_tol: float = 1e-3) -> dict:
    """Worst ratio of the boundary d_b to e^{-ab(x)} rho_x over pairs.

    Boundary distances are computed as limits of d_b at truncation heights,
    with a Cauchy check on the successive increments.
    """
    from .hamenstadt import rho

    worst = 1.0
    flagged = 0
    for w, z in sample_pairs:
        vals = []
        for hgt in heights:
            fw = Point(w.u, x.t + hgt)
            fz = Point(z.u, x.t + hgt)
            vals.append(d_b(model, fw, fz).value)
        if abs(vals[-1] - vals[-2]) > cauchy_tol:
            flagged += 1
        lim = vals[-1]
        ref = math.exp(-model.a * x.t) * rho(model, w, z).value
        if lim > 0 and ref > 0:
            worst = max(worst, lim / ref, ref / lim)
    return {"K": worst, "flagged": flagged, "n_pairs": len(list(sample_pairs))}


# -- cone regions ----------------------------------------------------------


@dataclass(frozen=True)
class ConeRegion:
    """Union of flowed rho-balls over an apex: C(x, r) truncated to (t_min, T]."""

    apex: Point
    radius: float
    t_min: float = 0.0
    truncation: float = math.inf

    def to_dict(self):
        return {"apex_u": list(self.apex.u), "apex_t": self.apex.t,
                "radius": self.radius, "t_min": self.t_min,
                "truncation": None if math.isinf(self.truncation) else self.truncation}


def cone_contains(model: ConeModel, region: ConeRegion, p: Point,
                  closed: bool = True) -> bool:
    from .hamenstadt import rho

    dt = p.t - region.apex.t
    if closed:
        if not (region.t_min <= dt <= region.truncation):
            return False
    else:
        if not (region.t_min < dt <= region.truncation):
            return False
    proj = Point(p.u, region.apex.t)
    r = rho(model, region.apex, proj).value
    return r <= region.radius if closed else r < region.radius


def cone_ball_inclusions(model: ConeModel, x: Point, r: float,
                         n_samples: int = 4000, seed: int = 0) -> dict:
    """Measure the cone/ball sandwich around the boundary point below x.

    Searches small grids for the smallest (L*, t*) with
    C(f^{t*}x, 1/L*) inside B_b(xbar, r) inside C(f^{-t*}x, L*), and the
    smallest C* with the ambient-ball sandwich
    B(x, r e^{ab(x)}/C*) inside B_b(x, r) inside B(x, C* r e^{ab(x)}).
    """
    if not has_flat_oracle(model):
        raise ValueError("inclusion search needs the flat d_b oracle")
    rng = np.random.default_rng(seed)
    a = model.a
    dim = model.dim_u + 1

    def sample_ball(center_flat, radius, count):
        out = []
        while len(out) < count:
            cand = rng.uniform(-radius, radius, size=(4 * count, dim))
            cand = cand[np.linalg.norm(cand, axis=1) < radius] + center_flat
            cand = cand[cand[:, -1] > 0]
            out.extend(cand[: count - len(out)])
        return [Point(c[:-1], -np.log(a * c[-1]) / a) for c in out]

    # boundary-centered ball below x
    xbar_flat = np.concatenate([x.u_arr, [0.0]])
    ball_pts = sample_ball(xbar_flat, r, n_samples // 2)

    def cone_pts(apex: Point, s, count):
        # cones of constant-rate models are cylinders in flat coordinates:
        # u within s*e^{-a b(apex)} of the apex, 0 < y < e^{-a b(apex)}/a
        w = s * math.exp(-a * apex.t)
        y_top = math.exp(-a * apex.t) / a
        uoff = rng.uniform(-w, w, size=(4 * count, model.dim_u))
        uoff = uoff[np.linalg.norm(uoff, axis=1) < w][:count]
        ys = rng.uniform(0, y_top, size=len(uoff))
        return [Point(apex.u_arr + uo, -math.log(a * y) / a)
                for uo, y in zip(uoff, ys)]

    t_grid = [0.25 * k for k in range(1, 17)]
    L_grid = [1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0]
    found = None
    for t_star in t_grid:
        for L in L_grid:
            inner_apex = flow(model, x, t_star)
            outer = ConeRegion(flow(model, x, -t_star), L)
            inner_ok = all(
                np.linalg.norm(flat_coords(model, p) - xbar_flat) <= r
                for p in cone_pts(inner_apex, 1.0 / L, n_samples // 8))
            outer_ok = inner_ok and all(
                cone_contains(model, outer, p) for p in ball_pts)
            if inner_ok and outer_ok:
                found = (L, t_star)
                break
        if found:
            break

    # ambient-ball sandwich around the interior center x, r <= d_b(x)/2
    r_small = min(r, 0.5 * boundary_distance(model, x))
    scale = r_small * math.exp(a * x.t)
    ctr_flat = flat_coords(model, x)
    small_pts = sample_ball(ctr_flat, r_small, n_samples // 4)
    # sphere samples: the nearest ambient distance over the d_b-sphere gives
    # the largest ambient ball that fits inside B_b(x, r_small)
    sphere = rng.normal(size=(n_samples // 4, dim))
    sphere = sphere / np.linalg.norm(sphere, axis=1, keepdims=True) * r_small
    sphere = sphere + ctr_flat
    sphere = sphere[sphere[:, -1] > 0]
    sphere_pts = [Point(c[:-1], -np.log(a * c[-1]) / a) for c in sphere]
    out_need = max(distance(model, x, p) for p in small_pts)
    in_have = min(distance(model, x, p) for p in sphere_pts)
    C_grid = [1.1, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0]
    c_found = next((C for C in C_grid
                    if out_need <= C * scale and in_have >= scale / C), None)
    return {"L_star": found[0] if found else None,
            "t_star": found[1] if found else None,
            "C_star": c_found, "r": r, "r_interior": r_small,
            "n_samples": n_samples}


def subwhitney_center(model: ConeModel, x, r: float) -> Point:
    """Center z on the vertical ray with d_b(z) comparable to r.

    x may be an interior Point or a boundary leaf coordinate (tuple).  z0 is
    the ray point with boundary_distance(z0) = r; if it is within 2r/3 of x
    in the rescaled metric it is used directly, otherwise the point at
    rescaled distance r/3 from x toward z0 is returned.
    """
    a = model.a
    t0 = -math.log(a * r) / a
    if not isinstance(x, Point):
        return Point(x, t0)  # boundary center: the lemma's first case
    u = x.u
    ell = abs(math.exp(-a * x.t) - math.exp(-a * t0)) / a
    if ell <= 2.0 * r / 3.0:
        return Point(u, t0)
    sgn = 1.0 if t0 >= x.t else -1.0
    target = math.exp(-a * x.t) - sgn * a * r / 3.0
    return Point(u, -math.log(target) / a)


def uniform_curve_check(model: ConeModel, path: GeodesicPath) -> float:
    """Smallest L with the cigar and length-vs-distance conditions."""
    k = np.exp(-model.a * path.t)
    seg = 0.5 * (k[1:] + k[:-1]) * np.diff(path.s)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    dist_to_bdry = k / model.a
    with np.errstate(divide="ignore"):
        cigar = np.minimum(cum, total - cum) / dist_to_bdry
    L1 = float(np.max(cigar))
    x, y = path.endpoints
    dxy = d_b(model, x, y).value
    L2 = total / dxy if dxy > 0 else math.inf
    return max(L1, L2, 1.0)
