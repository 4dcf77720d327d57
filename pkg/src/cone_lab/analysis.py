"""Metric-measure analysis on the uniformized cone: doubling of mu_sigma,
the (1,1)-Poincare inequality with dilation 1, and the blow-up at the
critical exponent.

Everything here runs on models with the flat d_b oracle (constant rate,
1-D leaf), where d_b-balls are Euclidean disks in (u, y) = (u, e^{-at}/a)
and mu_sigma has the explicit density y^{(sigma-h)/a - 1} du dy up to a
constant.  The constant cancels from every ratio reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import ConeModel, Point
from .uniformize import has_flat_oracle, boundary_distance
from .measures import entropy_rate, laplace_G, unit_ball_volume, DivergentMass


@dataclass(frozen=True)
class DoublingReport:
    sigma: float
    worst_ratio: float
    n_balls: int
    radius_range: tuple
    center_classes: dict
    cone_upper_K: float


def _require_oracle(model: ConeModel):
    if not (has_flat_oracle(model) and model.dim_u == 1):
        raise ValueError("analysis battery needs the flat d_b oracle "
                         "(constant rate, 1-D leaf)")


def _weight_exponent(model: ConeModel, sigma: float) -> float:
    # e^{-sigma t} e^{ht} du dt = const * y^{(sigma-h)/a - 1} du dy
    h = entropy_rate(model)
    return (sigma - h) / model.a - 1.0


def mu_sigma_flat_ball(model: ConeModel, center, r: float, sigma: float,
                       n: int = 241, y_min: float = 0.0):
    """Quadrature mass of a d_b ball (Euclidean disk in (u, y), y > 0)."""
    p = _weight_exponent(model, sigma)
    u0, y0 = center
    us = np.linspace(u0 - r, u0 + r, n)
    lo = max(y0 - r, 0.0, y_min)
    hi = y0 + r
    if hi <= lo:
        return 0.0, 0.0
    ys = np.linspace(lo, hi, n)
    # midpoint grid avoids the integrable y=0 edge for p > -1
    uu = 0.5 * (us[1:] + us[:-1])[:, None]
    yy = 0.5 * (ys[1:] + ys[:-1])[None, :]
    mask = (uu - u0) ** 2 + (yy - y0) ** 2 <= r * r
    du, dy = us[1] - us[0], ys[1] - ys[0]
    f = np.where(mask, yy ** p, 0.0)
    val = float(f.sum() * du * dy)
    coarse = float(f[::2, ::2].sum() * 4 * du * dy)
    return val, abs(val - coarse)


def _stratified_centers(rng, r, n_each):
    """Centers near the boundary, at comparable height, and deep interior."""
    out = []
    for _ in range(n_each):
        u = rng.uniform(-2, 2)
        out.append(("boundary", (u, 0.0)))
        out.append(("intermediate", (rng.uniform(-2, 2), r * rng.uniform(0.8, 1.5))))
        out.append(("subwhitney", (rng.uniform(-2, 2), r * rng.uniform(4.0, 8.0))))
    return out


def doubling_check(model: ConeModel, sigma: float, n_balls: int = 30,
                   radii=(0.5, 0.25, 0.125), seed: int = 0) -> DoublingReport:
    """Worst mu_sigma(2B)/mu_sigma(B) over stratified d_b balls.

    Also measures the smallest K in the cone-over-ball upper bound
    mu_sigma(C(x, L')) <= K e^{-sigma b(x)} mu(B(x, 1)), whose growth as
    sigma decreases toward h tracks G(sigma).
    """
    _require_oracle(model)
    h = entropy_rate(model)
    if sigma <= h:
        raise DivergentMass(f"sigma={sigma} at or below h={h}")
    rng = np.random.default_rng(seed)
    worst = 1.0
    classes = {}
    n_each = max(1, n_balls // (3 * len(radii)))
    for r in radii:
        for cls, c in _stratified_centers(rng, r, n_each):
            m1, _ = mu_sigma_flat_ball(model, c, r, sigma)
            m2, _ = mu_sigma_flat_ball(model, c, 2 * r, sigma)
            ratio = m2 / m1
            worst = max(worst, ratio)
            classes[cls] = max(classes.get(cls, 1.0), ratio)
    K = _cone_upper_constant(model, sigma)
    return DoublingReport(sigma=sigma, worst_ratio=worst,
                          n_balls=3 * n_each * len(radii),
                          radius_range=(min(radii), max(radii)),
                          center_classes=classes, cone_upper_K=K)


def _ambient_unit_ball_volume(model: ConeModel) -> float:
    """Riemannian volume of a unit ball, by quadrature (height-covariant)."""
    from .geometry import halfplane_distance
    a = model.rates[0]
    us = np.linspace(-1.5 / math.exp(0.0), 1.5, 401)
    ts = np.linspace(-1.5, 1.5, 401)
    uu, tt = np.meshgrid(us, ts, indexing="ij")
    d = halfplane_distance(a, uu, tt, np.zeros_like(uu), np.zeros_like(tt))
    h = entropy_rate(model)
    f = np.where(d <= 1.0, np.exp(h * tt), 0.0)
    return float(f.sum() * (us[1] - us[0]) * (ts[1] - ts[0]))


def _cone_upper_constant(model: ConeModel, sigma: float,
                         L_prime: float = 2.0) -> float:
    h = entropy_rate(model)
    cone_mass = (unit_ball_volume(model.dim_u) * L_prime ** (h / model.a)
                 / (sigma - h))  # at b(x) = 0; covariance removes the height
    return cone_mass / _ambient_unit_ball_volume(model)


# -- Poincare inequality ----------------------------------------------------


def default_test_functions():
    """(name, f, upper gradient) triples in flat (u, y) coordinates.

    d_b is Euclidean in these coordinates, so the Euclidean gradient modulus
    is an exact upper gradient; nothing is estimated numerically.
    """
    def coord(u, y):
        return u

    def coord_g(u, y):
        return np.ones_like(u)

    def radial(u, y):
        return np.hypot(u - 0.3, y - 0.2)

    def radial_g(u, y):
        return np.ones_like(u)

    w = 0.35

    def bump(u, y):
        return np.clip(1.0 - np.hypot(u, y - 0.3) / w, 0.0, 1.0)

    def bump_g(u, y):
        r = np.hypot(u, y - 0.3)
        return np.where(r < w, 1.0 / w, 0.0)

    return [("coordinate", coord, coord_g),
            ("radial", radial, radial_g),
            ("bump", bump, bump_g)]


def poincare_check(model: ConeModel, sigma: float, test_functions=None,
                   n_balls: int = 18, seed: int = 0) -> dict:
    """Worst quotient of mean oscillation against diam * mean upper gradient.

    The inequality is tested with dilation 1: both integrals run over the
    same ball.  Balls whose quadrature error exceeds 10% of either side are
    excluded and counted.
    """
    _require_oracle(model)
    h = entropy_rate(model)
    if sigma <= h:
        raise DivergentMass(f"sigma={sigma} at or below h={h}")
    if test_functions is None:
        test_functions = default_test_functions()
    rng = np.random.default_rng(seed)
    p = _weight_exponent(model, sigma)
    worst = 0.0
    excluded = 0
    per_class = {}
    n_each = max(1, n_balls // 3)
    for r in (0.5, 0.25):
        for cls, (u0, y0) in _stratified_centers(rng, r, n_each):
            n = 241
            us = np.linspace(u0 - r, u0 + r, n)
            ys = np.linspace(max(y0 - r, 0.0), y0 + r, n)
            uu = 0.5 * (us[1:] + us[:-1])[:, None]
            yy = 0.5 * (ys[1:] + ys[:-1])[None, :]
            mask = (uu - u0) ** 2 + (yy - y0) ** 2 <= r * r
            wgt = np.where(mask, yy ** p, 0.0)
            area = wgt.sum()
            if area == 0:
                excluded += 1
                continue
            for name, f, g in test_functions:
                fv = f(uu, yy)
                gv = g(uu, yy)
                f_mean = (fv * wgt).sum() / area
                osc = (np.abs(fv - f_mean) * wgt).sum() / area
                grad = (gv * wgt).sum() / area
                # quadrature reliability: compare against the coarse grid
                osc_c = (np.abs(fv - f_mean) * wgt)[::2, ::2].sum() / max(
                    wgt[::2, ::2].sum(), 1e-300)
                if osc > 1e-12 and abs(osc - osc_c) > 0.1 * osc:
                    excluded += 1
                    continue
                rhs = 2.0 * r * grad
                if rhs == 0:
                    continue
                q = osc / rhs
                worst = max(worst, q)
                per_class[cls] = max(per_class.get(cls, 0.0), q)
    return {"C_PI": worst, "sigma": sigma, "excluded": excluded,
            "per_class": per_class, "dilation": 1.0}


# -- critical exponent failure ----------------------------------------------


def critical_failure_demo(model: ConeModel, boundary_point, r: float,
                          truncations=(1.0, 2.0, 4.0, 8.0),
                          sigma: float = None) -> dict:
    """Truncated masses of a boundary ball at the critical exponent.

    At sigma = h the mass below height T grows linearly in T; at any
    sigma > h it converges.  Returns the growth table for both.
    """
    _require_oracle(model)
    h = entropy_rate(model)
    sigma = h if sigma is None else sigma
    a = model.a
    u0 = boundary_point[0] if isinstance(boundary_point, tuple) else float(boundary_point)
    rows = []
    for T in truncations:
        y_min = math.exp(-a * T) / a  # height cutoff t <= T in flat coords
        # log-spaced strip integration handles the y^{-1}-type density
        ys = np.geomspace(y_min, r, 4001)
        half = np.sqrt(np.clip(r * r - ys ** 2, 0.0, None))
        p_exp = _weight_exponent(model, sigma)
        mass = float(np.trapezoid(2.0 * half * ys ** p_exp, ys))
        rows.append({"T": T, "mass": mass})
    masses = [row["mass"] for row in rows]
    ratios = [masses[i + 1] / masses[i] for i in range(len(masses) - 1)]
    return {"sigma": sigma, "h": h, "center": u0, "r": r, "table": rows,
            "doubling_ratios": ratios,
            "mass_over_T": [row["mass"] / row["T"] for row in rows]}
