"""Rescaled volumes mu_sigma, separated-set counting, entropy, G(sigma),
renormalized boundary measures, and Margulis-measure checks.

The workhorse fact: on a constant-rate model the rho-ball of radius r about
(u0, t0) is an exact ellipse in the leaf, with semiaxes e^{-a_i t0} r^{a_i/a}.
Cone regions are therefore cylinders over ellipses and every mass integral
splits into (section area) x (height integral), both closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import ConeModel, Point, SuspensionModel, flow, make_halfplane
from .uniformize import ConeRegion

CLOSED_FORM = "ClosedForm"
QUADRATURE = "Quadrature"
MONTE_CARLO = "MonteCarlo"


class DivergentMass(ArithmeticError):
    """Raised when a mass integral diverges instead of returning a number."""


@dataclass(frozen=True)
class MeasureEstimate:
    value: float
    abs_error: float
    method: str
    n_evals: int


def unit_ball_volume(d: int) -> float:
    return {1: 2.0, 2: math.pi}[d]


def ellipse_semiaxes(model: ConeModel, t0: float, r: float) -> np.ndarray:
    """Semiaxes of the rho-ball of radius r on the leaf at height t0."""
    rates = np.asarray(model.rates)
    return np.exp(-rates * t0) * r ** (rates / model.a)


def entropy_rate(model) -> float:
    """Sum of the expansion rates (the volume growth exponent).

    Warped models have no exact closed form; the base rate is the leading
    exponent of their leaf growth and is used as the working value.
    """
    if isinstance(model, SuspensionModel):
        return model.h
    if not model.is_homogeneous:
        return float(model.base_rate)
    return float(np.sum(model.rates))


# -- mu_sigma on cone regions ---------------------------------------------


def mu_sigma_region(model: ConeModel, region: ConeRegion,
                    sigma: float) -> MeasureEstimate:
    """Mass of e^{-sigma t} dvol on a truncated cone region."""
    t0 = region.apex.t
    T = region.truncation
    if model.is_homogeneous:
        h = entropy_rate(model)
        axes = ellipse_semiaxes(model, t0, region.radius)
        section = unit_ball_volume(model.dim_u) * float(np.prod(axes))
        if math.isinf(T):
            if sigma <= h:
                raise DivergentMass(
                    f"sigma={sigma} at or below the growth rate h={h}")
            integral = math.exp((h - sigma) * (t0 + region.t_min)) / (sigma - h)
        elif abs(sigma - h) < 1e-14:
            integral = math.exp((h - sigma) * t0) * (T - region.t_min)
        else:
            v = sigma - h
            integral = (math.exp(-v * (t0 + region.t_min))
                        - math.exp(-v * (t0 + T))) / v
        return MeasureEstimate(value=section * integral, abs_error=0.0,
                               method=CLOSED_FORM, n_evals=0)
    return _mu_sigma_warped(model, region, sigma)


def _section_halfwidth(model: ConeModel, apex: Point, r: float) -> float:
    """u-halfwidth of the rho-ball of radius r about a 1-D warped apex."""
    from .hamenstadt import rho

    lo = r ** (model.A / model.a) * math.exp(-model.A * apex.t) * 0.5
    hi = r ** (model.a / model.A) * math.exp(-model.a * apex.t) * 2.0
    f = lambda w: rho(model, apex, Point((apex.u[0] + w,), apex.t)).value - r
    while f(hi) < 0:
        hi *= 2.0
    while f(lo) > 0:
        lo *= 0.5
    from scipy.optimize import brentq
    return brentq(f, lo, hi, xtol=1e-10)


def _mu_sigma_warped(model: ConeModel, region: ConeRegion,
                     sigma: float) -> MeasureEstimate:
    if model.dim_u != 1:
        raise NotImplementedError("warped quadrature implemented for dim_u=1")
    t0 = region.apex.t
    T = region.truncation
    if math.isinf(T):
        if sigma <= model.a:
            raise DivergentMass("integrand grows at least like e^{(a-sigma)t}")
        T = max(40.0, 60.0 / max(sigma - model.A, 0.25))
    w = _section_halfwidth(model, region.apex, region.radius)
    us = region.apex.u[0] + np.linspace(-w, w, 257)
    ts = t0 + np.linspace(region.t_min, T, 513)
    uu, tt = np.meshgrid(us, ts, indexing="ij")
    integrand = np.exp(-sigma * tt) * model.phi(uu.ravel(), tt.ravel())[0].reshape(uu.shape)
    val = np.trapezoid(np.trapezoid(integrand, ts, axis=1), us)
    coarse = np.trapezoid(np.trapezoid(integrand[::2, ::2], ts[::2], axis=1), us[::2])
    tail = 0.0
    if math.isinf(region.truncation) and sigma > model.A:
        top = np.trapezoid(integrand[:, -1], us)
        tail = top / (sigma - model.A)
    return MeasureEstimate(value=float(val + tail),
                           abs_error=float(abs(val - coarse)) + tail,
                           method=QUADRATURE, n_evals=integrand.size)


# -- separated sets on leaves ---------------------------------------------


@dataclass(frozen=True)
class NetResult:
    center: Point
    ball_radius: float
    separation: float
    points: tuple
    count: int
    points_omitted: bool = False


def separated_count(model, x: Point, s: float, l: float = 0.0,
                    points_cap: int = 20000) -> NetResult:
    """Maximal e^{-as}-separated subset of the rho-ball of radius e^{-al}.

    Counts are exact lattice/stepping constructions; point lists are kept
    only while the cardinality stays below points_cap.
    """
    if isinstance(model, SuspensionModel):
        model = make_halfplane(model.h)
    if s < l:
        raise ValueError("separation scale must not exceed the ball scale")
    t0 = x.t
    rates = np.asarray(model.rates)
    if not model.is_homogeneous:
        return _separated_warped(model, x, s, l, points_cap)

    E = np.exp(-rates * (t0 + l))  # ellipse semiaxes of the ball
    delta = np.exp(-rates * (t0 + s))  # per-axis grid steps, e^{-as}-separated
    if model.dim_u == 1:
        n = int(math.floor(2.0 * E[0] / delta[0] + 1e-9)) + 1
        pts = ()
        omitted = n > points_cap
        if not omitted:
            us = x.u_arr[0] - E[0] + delta[0] * np.arange(n)
            pts = tuple((float(u),) for u in us)
        return NetResult(center=x, ball_radius=math.exp(-model.a * l),
                         separation=math.exp(-model.a * s), points=pts,
                         count=n, points_omitted=omitted)
    # 2-D: lattice points of the per-axis grid inside the ellipse
    m_max = int(math.floor(E[0] / delta[0] + 1e-9))
    ms = np.arange(-m_max, m_max + 1)
    frac = np.clip(1.0 - (ms * delta[0] / E[0]) ** 2, 0.0, None)
    rows = np.floor(E[1] * np.sqrt(frac) / delta[1] + 1e-9).astype(np.int64)
    n = int(np.sum(2 * rows + 1))
    pts = ()
    omitted = n > points_cap
    if not omitted:
        pts = tuple((float(x.u_arr[0] + m * delta[0]),
                     float(x.u_arr[1] + k * delta[1]))
                    for m, r in zip(ms, rows) for k in range(-r, r + 1))
    return NetResult(center=x, ball_radius=math.exp(-model.a * l),
                     separation=math.exp(-model.a * s), points=pts,
                     count=n, points_omitted=omitted)


def _separated_warped(model: ConeModel, x: Point, s, l, points_cap):
    """Greedy interval stepping with rho evaluated numerically."""
    from .hamenstadt import rho

    r_ball = math.exp(-model.a * l)
    sep = math.exp(-model.a * s)
    w = _section_halfwidth(model, x, r_ball)
    us = [x.u[0] - w]
    from scipy.optimize import brentq
    while True:
        u_prev = us[-1]
        g = lambda u: rho(model, Point((u_prev,), x.t),
                          Point((u,), x.t)).value - sep
        hi = x.u[0] + w
        if g(hi) < 0:
            break
        u_next = brentq(g, u_prev + 1e-12, hi, xtol=1e-10)
        us.append(u_next)
        if len(us) > 10 ** 6:
            raise RuntimeError("net grew past 10^6 points")
    return NetResult(center=x, ball_radius=r_ball, separation=sep,
                     points=tuple((float(u),) for u in us), count=len(us))


def net_audit(model: ConeModel, net: NetResult, grid_factor: int = 4) -> dict:
    """Brute-force separation and maximality audit of a stored net."""
    from .hamenstadt import rho

    if net.points_omitted or not net.points:
        raise ValueError("audit needs the stored point list")
    t0 = net.center.t
    rates = np.asarray(model.rates)
    P = np.asarray(net.points)
    if model.is_homogeneous:
        # leaf distance at the separation scale; >= 1 iff rho >= separation
        tau_s = -math.log(net.separation) / model.a
        scale = np.exp(rates * (t0 + tau_s))
        Q = P * scale
        D2 = np.sum((Q[:, None, :] - Q[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(D2, np.inf)
        sep_ok = bool(D2.min() >= 1.0 - 1e-9)
        # audit grid of the ball
        E = np.exp(-rates * (t0 - math.log(net.ball_radius) / model.a))
        axes = [np.linspace(-E[i], E[i], 2 * grid_factor * 10 + 1)
                for i in range(model.dim_u)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.dim_u)
        inside = np.sum((mesh / E) ** 2, axis=1) <= 1.0
        G = (mesh[inside] + net.center.u_arr) * scale
        dmin = np.sqrt(np.min(np.sum((G[:, None, :] - Q[None, :, :]) ** 2,
                                     axis=-1), axis=1))
        max_ok = bool(dmin.max() < 1.0 + 1e-9)
        return {"separation_ok": sep_ok, "maximality_ok": max_ok,
                "n_audit": int(inside.sum())}
    # warped 1-D: direct rho checks on a fine grid
    sep_ok = True
    for i in range(len(P)):
        for j in range(i + 1, len(P)):
            r = rho(model, Point(tuple(P[i]), t0), Point(tuple(P[j]), t0)).value
            if r < net.separation * (1 - 1e-6):
                sep_ok = False
    w = _section_halfwidth(model, net.center, net.ball_radius)
    grid = np.linspace(net.center.u[0] - w, net.center.u[0] + w,
                       grid_factor * 50 + 1)
    worst = 0.0
    for u in grid:
        dmin = min(rho(model, Point((u,), t0), Point(tuple(p), t0)).value
                   for p in net.points)
        worst = max(worst, dmin)
    return {"separation_ok": sep_ok,
            "maximality_ok": bool(worst < net.separation * (1 + 1e-6)),
            "n_audit": len(grid)}


# -- entropy and the Laplace transform ------------------------------------


def entropy_estimate(model, s_max: int = 8, samples=None, x: Point = None):
    """Regression slope of log V_s with submultiplicativity bookkeeping."""
    if s_max < 6:
        raise ValueError("need s_max >= 6")
    if x is None:
        dim = 1 if isinstance(model, SuspensionModel) else model.dim_u
        x = Point((0.0,) * dim, 0.0)
    ss = np.arange(1, s_max + 1, dtype=float)
    V = np.array([separated_count(model, x, s, 0.0, points_cap=0).count
                  for s in ss], dtype=float)
    if np.any(np.diff(V) < 0):
        raise RuntimeError("V_s decreased; net construction is broken")
    logV = np.log(V)
    h_est = float(np.polyfit(ss, logV, 1)[0])
    dim_u = 1 if isinstance(model, SuspensionModel) else model.dim_u
    slack_factor = 2.0 ** dim_u
    submult_viol = []
    for i, s in enumerate(ss):
        for j, t in enumerate(ss):
            if s + t <= s_max:
                k = int(s + t) - 1
                if V[k] > V[i] * V[j] * slack_factor:
                    submult_viol.append((s, t))
    fekete_slack = (dim_u + 1) * math.log(2.0)
    fekete_ok = bool(np.all(h_est >= logV / ss - fekete_slack / ss)
                     and np.all(h_est <= logV / ss + fekete_slack / ss))
    report = {"s": ss.tolist(), "V": V.tolist(),
              "submult_ok": not submult_viol,
              "submult_violations": submult_viol,
              "slack_factor": slack_factor,
              "fekete_ok": fekete_ok, "fekete_slack": fekete_slack}
    return h_est, report


class GEstimate(float):
    """Laplace-transform value carrying its tail bound and growth rate."""

    def __new__(cls, value, tail_error, h_est, mode):
        obj = super().__new__(cls, value)
        obj.tail_error = tail_error
        obj.h_est = h_est
        obj.mode = mode
        return obj


def laplace_G(model, sigma: float, s_max: float = 40.0,
              mode: str = "envelope") -> GEstimate:
    """Integral of e^{-sigma t} V_t, trapezoid to s_max plus an analytic tail.

    The envelope mode integrates the smooth count model C e^{ht} + 1 (the
    integer counts oscillate inside this band); the measured mode integrates
    the integer counts themselves and is a lower bracket.
    """
    x = Point((0.0,) * (1 if isinstance(model, SuspensionModel)
                        else model.dim_u), 0.0)
    if isinstance(model, SuspensionModel) or model.is_homogeneous:
        h = entropy_rate(model)
        dim = 1 if isinstance(model, SuspensionModel) else model.dim_u
        C = unit_ball_volume(dim)
    else:
        # greedy warped nets get expensive past s = 6; the fit is stable there
        ss = np.arange(1, 7, dtype=float)
        counts = np.array([separated_count(model, x, s).count for s in ss])
        slope, icept = np.polyfit(ss, np.log(counts), 1)
        h, C = float(slope), float(math.exp(icept))
    if sigma <= h:
        raise DivergentMass(f"sigma={sigma} at or below h={h}")
    ts = np.linspace(0.0, s_max, 4001)
    if mode == "envelope":
        Vt = C * np.exp(h * ts) + 1.0
    elif mode == "measured":
        if isinstance(model, SuspensionModel) or model.is_homogeneous:
            Vt = np.array([separated_count(model, x, t).count for t in ts[::8]])
            ts = ts[::8]
        else:
            Vt = None
            raise NotImplementedError("measured mode needs closed-form counts")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    val = float(np.trapezoid(np.exp(-sigma * ts) * Vt, ts))
    tail = (C * math.exp((h - sigma) * s_max) / (sigma - h)
            + math.exp(-sigma * s_max) / sigma)
    return GEstimate(val + tail, tail_error=tail, h_est=h, mode=mode)


def crit_ratio(model: ConeModel, x: Point, sigma: float,
               l: float = 0.0) -> float:
    """mu_sigma of the cone over the e^{-al}-ball, against e^{-sigma b - hl} G."""
    h = entropy_rate(model)
    region = ConeRegion(apex=x, radius=math.exp(-model.a * l))
    num = mu_sigma_region(model, region, sigma).value
    G = laplace_G(model, sigma)
    return num / (math.exp(-sigma * x.t - h * l) * float(G))


# -- renormalized boundary measures ---------------------------------------


@dataclass(frozen=True)
class RenormalizedMeasure:
    sigma: float
    l: float
    apex: Point
    partition: tuple  # (cell center u, cell halfwidths) pairs
    masses: tuple
    model: ConeModel = field(repr=False, default=None)

    def total(self) -> float:
        return float(sum(self.masses))

    def interior_mass_below_T(self, T: float) -> float:
        h = entropy_rate(self.model)
        return self.total() * (1.0 - math.exp(-(self.sigma - h) * T))

    def masses_above(self, T: float):
        h = entropy_rate(self.model)
        return tuple(m * math.exp(-(self.sigma - h) * T) for m in self.masses)


def ps_renormalize(model: ConeModel, x: Point, sigma: float, l: float = 0.0,
                   boundary_partition_scale: float = 0.25) -> RenormalizedMeasure:
    """Masses of the renormalized measure over a partition of the leaf ball.

    Total mass is pinned to e^{sigma l}; cell masses are the cone masses over
    each partition cell of the radius-e^{-al} ball, scaled to that total.
    """
    if abs(x.t) > 1e-9:
        raise ValueError("renormalization is set up at height b(x) = 0")
    if sigma <= entropy_rate(model):
        raise DivergentMass("sigma must exceed the growth rate")
    p = boundary_partition_scale
    total = math.exp(sigma * l)
    if model.dim_u == 1:
        if model.is_homogeneous:
            E0 = math.exp(-model.rates[0] * l)
            hw0 = p ** (model.rates[0] / model.a)
        else:
            E0 = _section_halfwidth(model, x, math.exp(-model.a * l))
            hw0 = _section_halfwidth(model, x, p)
        m = max(1, int(round(E0 / hw0)))
        edges = np.linspace(x.u_arr[0] - E0, x.u_arr[0] + E0, m + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        if model.is_homogeneous:
            weights = np.full(m, 1.0 / m)
        else:
            weights = _warped_cell_weights(model, x, sigma, edges)
        partition = tuple(((float(c),), (float(E0 / m),)) for c in centers)
        masses = tuple(total * w for w in weights)
        return RenormalizedMeasure(sigma=sigma, l=l, apex=x,
                                   partition=partition, masses=masses,
                                   model=model)
    # 2-D: per-axis grid over the ellipse, weights = cell/ellipse area overlap
    rates = np.asarray(model.rates)
    E = np.exp(-rates * l)
    halfw = p ** (rates / model.a)
    m0 = max(1, int(round(E[0] / halfw[0])))
    m1 = max(1, int(round(E[1] / halfw[1])))
    e0 = np.linspace(-E[0], E[0], m0 + 1)
    e1 = np.linspace(-E[1], E[1], m1 + 1)
    cells, areas = [], []
    for i in range(m0):
        for j in range(m1):
            area = _cell_ellipse_area(e0[i], e0[i + 1], e1[j], e1[j + 1], E)
            if area <= 0:
                continue
            cells.append(((float(x.u_arr[0] + 0.5 * (e0[i] + e0[i + 1])),
                           float(x.u_arr[1] + 0.5 * (e1[j] + e1[j + 1]))),
                          (float(0.5 * (e0[i + 1] - e0[i])),
                           float(0.5 * (e1[j + 1] - e1[j])))))
            areas.append(area)
    areas = np.asarray(areas)
    weights = areas / areas.sum()
    return RenormalizedMeasure(sigma=sigma, l=l, apex=x, partition=tuple(cells),
                               masses=tuple(total * w for w in weights),
                               model=model)


def _cell_ellipse_area(x0, x1, y0, y1, E, n=64):
    xs = np.linspace(x0, x1, n)
    half = E[1] * np.sqrt(np.clip(1.0 - (xs / E[0]) ** 2, 0.0, None))
    width = np.clip(np.minimum(y1, half) - np.maximum(y0, -half), 0.0, None)
    return float(np.trapezoid(width, xs))


def _warped_cell_weights(model, x, sigma, edges):
    T = max(40.0, 60.0 / max(sigma - model.A, 0.25))
    masses = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        us = np.linspace(lo, hi, 65)
        ts = x.t + np.linspace(0.0, T, 513)
        uu, tt = np.meshgrid(us, ts, indexing="ij")
        f = np.exp(-sigma * tt) * model.phi(uu.ravel(), tt.ravel())[0].reshape(uu.shape)
        masses.append(float(np.trapezoid(np.trapezoid(f, ts, axis=1), us)))
    masses = np.asarray(masses)
    return masses / masses.sum()


def ahlfors_check(model: ConeModel, boundary_measure: RenormalizedMeasure,
                  radii=(1.0, 0.5, 0.25, 0.125), n_centers: int = 20,
                  seed: int = 0) -> dict:
    """mass(B_rho(c, r)) / r^{h/a} over random centers; flags truncated balls."""
    rm = boundary_measure
    if not model.is_homogeneous:
        raise NotImplementedError("regularity check uses the closed-form "
                                  "ellipse masses of constant-rate models")
    rng = np.random.default_rng(seed)
    rates = np.asarray(model.rates)
    h = entropy_rate(model)
    E = np.exp(-rates * rm.l)
    total = rm.total()
    ellipse_area = unit_ball_volume(model.dim_u) * float(np.prod(E))
    ratios, flagged = [], 0
    for _ in range(n_centers):
        c = rng.uniform(-0.5, 0.5, size=model.dim_u) * E
        for r in radii:
            axes = r ** (rates / model.a)
            if np.any(np.abs(c) + axes > E):
                flagged += 1
                continue
            mass = total * unit_ball_volume(model.dim_u) * float(np.prod(axes)) / ellipse_area
            ratios.append(mass / r ** (h / model.a))
    ratios = np.asarray(ratios)
    return {"ratios": ratios.tolist(), "K": float(ratios.max() / ratios.min())
            if len(ratios) else math.inf,
            "flagged": flagged, "n_ok": len(ratios)}


# -- Margulis measures -----------------------------------------------------


def margulis_mass(model: ConeModel, box, nu_density: float = 1.0) -> float:
    """m(box) with dm = e^{ht} dt dnu, nu = (recorded multiple of) Lebesgue."""
    h = entropy_rate(model)
    (t_lo, t_hi) = box[-1]
    u_len = 1.0
    for lo, hi in box[:-1]:
        u_len *= hi - lo
    return nu_density * u_len * (math.exp(h * t_hi) - math.exp(h * t_lo)) / h


def margulis_checks(model: ConeModel, box, t: float,
                    nu_density: float = 1.0) -> dict:
    """Flow scaling and integration-order consistency for the box measure."""
    h = entropy_rate(model)
    m = margulis_mass(model, box, nu_density)
    # forward order: flow-time integral of the boundary-slice masses
    ts = np.linspace(box[-1][0], box[-1][1], 20001)
    u_len = 1.0
    for lo, hi in box[:-1]:
        u_len *= hi - lo
    m_forward = float(np.trapezoid(np.exp(h * ts) * nu_density * u_len, ts))
    # flipped order: per boundary point, the e^{ht} dt integral is closed form
    fiber = (math.exp(h * box[-1][1]) - math.exp(h * box[-1][0])) / h
    m_flip = nu_density * u_len * fiber
    moved_box = list(box[:-1]) + [(box[-1][0] + t, box[-1][1] + t)]
    m_moved = margulis_mass(model, moved_box, nu_density)
    scaling_err = abs(m_moved - math.exp(h * t) * m) / (math.exp(h * t) * m)
    return {"m": m, "m_forward": m_forward, "m_flip": m_flip,
            "flip_discrepancy": abs(m_flip - m_forward) / m,
            "scaling_rel_err": scaling_err, "t": t,
            "nu_density": nu_density}


def holonomy_invariance_check(susp: SuspensionModel, box, x, y,
                              kind: str = "s") -> dict:
    """Compare cu-box masses across the explicit stable/cs holonomies.

    box = ((xi_u lo, xi_u hi), (t lo, t hi)) on the cu-leaf of x; the image
    box is obtained by pushing the corners through the linear holonomy.
    """
    h = susp.h
    (ulo, uhi), (tlo, thi) = box

    def mass(b):
        (a0, a1), (b0, b1) = b
        return (a1 - a0) * (math.exp(h * b1) - math.exp(h * b0)) / h

    m_src = mass(box)
    if kind == "s":
        c0 = susp.holonomy_s(x, y, (ulo, x[1], tlo))
        c1 = susp.holonomy_s(x, y, (uhi, x[1], thi))
        img = ((c0[0], c1[0]), (c0[2], c1[2]))
        m_img = mass(img)
        return {"kind": "s", "m_src": m_src, "m_img": m_img,
                "rel_discrepancy": abs(m_img - m_src) / m_src}
    if kind == "cs":
        from .hamenstadt import bilipschitz_estimate
        # extend the leaf holonomy to the cu-box by flowing: the image of
        # (u, t) is (u, t + dt) with dt the height shift of the target leaf
        c0 = susp.holonomy_cs(x, y, (ulo, x[1], x[2]))
        dt = c0[2] - x[2]
        img = ((c0[0], susp.holonomy_cs(x, y, (uhi, x[1], x[2]))[0]),
               (tlo + dt, thi + dt))
        m_img = mass(img)
        R = susp.d_cs(x, y)
        K = bilipschitz_estimate(susp, max(R, 1e-6))
        band = K ** (h / susp.h + 1.0)
        ratio = m_img / m_src
        return {"kind": "cs", "m_src": m_src, "m_img": m_img, "ratio": ratio,
                "K_R": K, "band": band,
                "within_band": bool(1.0 / band - 1e-12 <= ratio <= band + 1e-12)}
    raise ValueError(f"unknown holonomy kind {kind!r}")
