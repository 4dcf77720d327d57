"""Hamenstadt metric rho_x on unstable leaves, and suspension holonomies.

rho_x(y, z) = exp(-a t*) where t* is the flow time at which the leaf
distance between the orbits of y and z reaches 1.  Leaf distances grow
strictly monotonically at rates between a and A, so t* is found by closed
form on homogeneous axes and by bracketed root-finding otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .models import ConeModel, Point, SuspensionModel, flow
from .geometry import leaf_distance, leaf_distance_at


@dataclass(frozen=True)
class RhoEvaluation:
    value: float
    t_star: float
    iterations: int
    tol: float


def rho(model: ConeModel, x: Point, y: Point, tol: float = None) -> RhoEvaluation:
    """Evaluate rho_x(x, y) for y on the leaf of x."""
    if abs(x.t - y.t) > 1e-9:
        raise ValueError("rho needs points on a common leaf")
    if tol is None:
        tol = 1e-9 if model.is_homogeneous else 1e-6
    du = y.u_arr - x.u_arr
    if not np.any(du):
        return RhoEvaluation(value=0.0, t_star=math.inf, iterations=0, tol=tol)

    a = model.a
    if model.is_homogeneous:
        rates = np.asarray(model.rates)
        nz = np.flatnonzero(np.abs(du) > 0)
        if len(nz) == 1 or np.allclose(rates, rates[0]):
            ri = rates[nz[0]]
            d0 = float(leaf_distance(model, x, y))
            t_star = -math.log(d0) / ri
            return RhoEvaluation(value=math.exp(-a * t_star), t_star=t_star,
                                 iterations=0, tol=0.0)

    d0 = float(leaf_distance(model, x, y))
    if abs(d0 - 1.0) < 1e-15:
        return RhoEvaluation(value=1.0, t_star=0.0, iterations=0, tol=tol)
    # bracket from the rate sandwich d0 e^{a tau} <= d(tau) <= d0 e^{A tau}
    logd = math.log(d0)
    lo = min(-logd / model.a, -logd / model.A) - 1.0
    hi = max(-logd / model.a, -logd / model.A) + 1.0
    evals = [0]

    def g(tau):
        evals[0] += 1
        return math.log(float(leaf_distance_at(model, x, y, tau)))

    t_star = brentq(g, lo, hi, xtol=tol, rtol=8.9e-16)
    return RhoEvaluation(value=math.exp(-a * t_star), t_star=t_star,
                         iterations=evals[0], tol=tol)


def scaling_check(model: ConeModel, x: Point, y: Point, t: float) -> float:
    """Relative defect of rho_{f^t x}(f^t x, f^t y) against e^{at} rho_x(x,y)."""
    base = rho(model, x, y)
    moved = rho(model, flow(model, x, t), flow(model, y, t))
    expected = math.exp(model.a * t) * base.value
    if expected == 0.0:
        return abs(moved.value)
    return abs(moved.value - expected) / expected


def comparison_check(model: ConeModel, x: Point, y: Point) -> dict:
    """Check rho against the leaf distance envelopes.

    Same-leaf pairs: d_u <= rho <= d_u^{a/A} when d_u <= 1 and the reversed
    envelope when d_u >= 1.  Off-leaf pairs: the projected value satisfies
    rho_x(x, P_x y) <= max{e^{Ad} d, e^{ad} d^{a/A}}.
    """
    from .geometry import distance, project

    expo = model.a / model.A
    slack = 1e-9
    if abs(x.t - y.t) <= 1e-9:
        d_u = float(leaf_distance(model, x, y))
        r = rho(model, x, y).value
        if d_u <= 1.0:
            lo, hi = d_u, d_u**expo
        else:
            lo, hi = d_u**expo, d_u
        ok = lo - slack <= r <= hi + slack
        return {"case": "leaf", "d_u": d_u, "rho": r, "lower": lo,
                "upper": hi, "ok": bool(ok)}
    d = distance(model, x, y)
    py = project(model, x, y)
    r = rho(model, x, py).value if py.u != x.u else 0.0
    bound = max(math.exp(model.A * d) * d, math.exp(model.a * d) * d**expo)
    return {"case": "projection", "d": d, "rho": r, "upper": bound,
            "ok": bool(r <= bound + slack)}


# -- suspension holonomies -------------------------------------------------


def suspension_rho(susp: SuspensionModel, p, q) -> float:
    """rho on an unstable leaf of the suspension cover (exact: lam^t |dxi|)."""
    if abs(p[2] - q[2]) > 1e-12 or abs(p[1] - q[1]) > 1e-12:
        raise ValueError("points must share an unstable leaf")
    return susp.d_u(p, q)


def holonomy_cs(susp: SuspensionModel, x, y, z):
    """cs-holonomy W^u(x) -> W^u(y); y on the cs-leaf of x."""
    if abs(y[0] - x[0]) > 1e-12:
        raise ValueError("y must lie on the center-stable leaf of x")
    return susp.holonomy_cs(x, y, z)


def bilipschitz_estimate(susp: SuspensionModel, R: float, n: int = 200,
                         seed: int = 0) -> float:
    """Worst rho-distortion of cs-holonomies across cs-distance <= R.

    The holonomy is the identity in the unstable eigencoordinate, so the
    distortion is exactly lam^{dt} for a height shift dt; sampling target
    leaves within cs-distance R measures the worst constant K_R.
    """
    rng = np.random.default_rng(seed)
    a = math.log(susp.lam)
    worst = 1.0
    for _ in range(n):
        x = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5))
        # target on the cs-leaf of x within distance R
        dt = rng.uniform(-R, R)
        rem = math.sqrt(max(R * R - dt * dt, 0.0)) * rng.uniform(0, 1)
        # pick dxi_s so the cs-distance stays <= R (chord underestimates, so
        # verify with the exact leaf metric and shrink if needed)
        dxi = rem * susp.lam ** x[2] * rng.choice([-1.0, 1.0])
        y = (x[0], x[1] + dxi, x[2] + dt)
        while susp.d_cs(x, y) > R:
            dxi *= 0.5
            y = (x[0], x[1] + dxi, x[2] + dt)
        z = (x[0] + rng.uniform(-1, 1), x[1], x[2])
        w = (x[0] + rng.uniform(-1, 1), x[1], x[2])
        if z[0] == w[0]:
            continue
        hz = susp.holonomy_cs(x, y, z)
        hw = susp.holonomy_cs(x, y, w)
        num = susp.d_u(hz, hw)
        den = susp.d_u(z, w)
        ratio = max(num / den, den / num)
        worst = max(worst, ratio)
    return worst
