"""Explicit expanding-cone models.

Every model lives in a single global chart (u, t) with the warped-product
metric dt^2 + sum_i phi_i(u,t)^2 du_i^2.  The height function is b(u,t) = t
and the flow is vertical translation, so b(f^s x) = b(x) + s holds exactly.
The expansion rates a <= A bound d/dt log phi_i on the chart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

HALFPLANE = "halfplane"
DIAGONAL = "diagonal"
WARPED = "warped"
SUSPENSION_COVER = "suspension_cover"

CHART_BOX = (-10.0, 10.0)
CHART_GRID = 201


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    """A chart point: unstable coordinate(s) u and height t = b."""

    u: tuple
    t: float

    def __init__(self, u, t):
        if np.isscalar(u):
            u = (float(u),)
        else:
            u = tuple(float(c) for c in u)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "t", float(t))

    @property
    def u_arr(self) -> np.ndarray:
        return np.asarray(self.u, dtype=float)

    @property
    def b(self) -> float:
        return self.t


def _smooth_profile(t):
    """Bounded-slope height profile for the warped perturbation.

    tanh(t) agrees with 1 - e^{-t} to first order at t = 0, tends to 1 as
    t -> +inf, and has derivative sech^2(t) in (0, 1] on the whole chart,
    which keeps d/dt log phi pinned inside [base - eps, base + eps].  The
    naive profile 1 - e^{-t} has unbounded slope below t = 0 and would break
    the rate invariant on any two-sided chart.
    """
    return np.tanh(t)


def _smooth_profile_d1(t):
    return 1.0 / np.cosh(t) ** 2


def _smooth_profile_d2(t):
    c = np.cosh(t)
    return -2.0 * np.tanh(t) / c**2


@dataclass(frozen=True)
class ConeModel:
    kind: str
    dim_u: int
    a: float
    A: float
    rates: tuple = ()
    epsilon: float = 0.0
    frequency: float = 0.0
    base_rate: float = 0.0

    # -- warp functions ---------------------------------------------------

    def phi(self, u, t):
        """Per-axis warp factors phi_i(u, t); broadcasts over array t."""
        t = np.asarray(t, dtype=float)
        if self.kind == WARPED:
            u0 = np.asarray(u, dtype=float).reshape(-1)[0]
            val = np.exp(self.base_rate * t
                         + self.epsilon * math.sin(self.frequency * u0)
                         * _smooth_profile(t))
            return val[np.newaxis, ...] if t.ndim else np.array([val])
        r = np.asarray(self.rates, dtype=float)
        out = np.exp(np.multiply.outer(r, t))
        return out

    def dphi_dt(self, u, t):
        t = np.asarray(t, dtype=float)
        if self.kind == WARPED:
            u0 = np.asarray(u, dtype=float).reshape(-1)[0]
            rate = (self.base_rate
                    + self.epsilon * math.sin(self.frequency * u0)
                    * _smooth_profile_d1(t))
            return rate * self.phi(u, t)
        r = np.asarray(self.rates, dtype=float)
        return np.exp(np.multiply.outer(r, t)) * r[(...,) + (np.newaxis,) * t.ndim]

    def dphi_du(self, u, t):
        """d phi / du (only the warped model has u-dependence; axis 0 only)."""
        t = np.asarray(t, dtype=float)
        if self.kind == WARPED:
            u0 = np.asarray(u, dtype=float).reshape(-1)[0]
            fac = (self.epsilon * self.frequency * math.cos(self.frequency * u0)
                   * _smooth_profile(t))
            return fac * self.phi(u, t)
        return np.zeros_like(self.phi(u, t))

    def d2phi_dt2(self, u, t):
        t = np.asarray(t, dtype=float)
        if self.kind != WARPED:
            r = np.asarray(self.rates, dtype=float)
            return np.exp(np.multiply.outer(r, t)) * (r**2)[(...,) + (np.newaxis,) * t.ndim]
        u0 = np.asarray(u, dtype=float).reshape(-1)[0]
        s = self.epsilon * math.sin(self.frequency * u0)
        rate = self.base_rate + s * _smooth_profile_d1(t)
        return (rate**2 + s * _smooth_profile_d2(t)) * self.phi(u, t)

    def rate_of(self, u, t):
        """d/dt log phi_i at (u, t), one value per axis."""
        return self.dphi_dt(u, t) / self.phi(u, t)

    # -- basic dynamics ---------------------------------------------------

    @property
    def is_homogeneous(self) -> bool:
        """True when phi is independent of u (closed forms available)."""
        return self.kind != WARPED

    def metric_speed(self, u, t, du, dt):
        """Length of a tangent vector (du, dt) at (u, t)."""
        ph = self.phi(u, t)
        du = np.asarray(du, dtype=float)
        return float(np.sqrt(dt * dt + np.sum((ph.reshape(-1) * du.reshape(-1)) ** 2)))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "a": self.a, "A": self.A}
        if self.kind in (DIAGONAL, HALFPLANE, SUSPENSION_COVER):
            d["rates"] = list(self.rates)
        if self.kind == WARPED:
            d["epsilon"] = self.epsilon
            d["frequency"] = self.frequency
            d["base_rate"] = self.base_rate
        return d


def make_halfplane(a: float) -> ConeModel:
    """Constant-rate model dt^2 + e^{2at} du^2: curvature -a^2 oracle."""
    if a <= 0:
        raise ModelError(f"rate a must be positive, got {a}")
    return ConeModel(kind=HALFPLANE, dim_u=1, a=float(a), A=float(a),
                     rates=(float(a),))


def make_diagonal(rates) -> ConeModel:
    if np.isscalar(rates):
        rates = (rates,)
    rates = tuple(float(r) for r in rates)
    if not rates:
        raise ModelError("rate vector must be non-empty")
    if any(r <= 0 for r in rates):
        raise ModelError(f"all rates must be positive, got {rates}")
    return ConeModel(kind=DIAGONAL, dim_u=len(rates), a=min(rates),
                     A=max(rates), rates=rates)


def make_warped(epsilon: float, frequency: float, base_rate: float,
                grid_n: int = CHART_GRID, box=CHART_BOX) -> ConeModel:
    """Perturbed single-axis cone phi = exp(base_rate*t + eps*sin(freq*u)*p(t)).

    The realized rates (a, A) are measured by extremizing d/dt log phi over
    the verification grid, never assumed from the parameters.
    """
    if epsilon < 0 or frequency <= 0 or base_rate <= 0:
        raise ModelError("need epsilon >= 0, frequency > 0, base_rate > 0")
    if epsilon == 0.0:
        return make_halfplane(base_rate)
    us = np.linspace(box[0], box[1], grid_n)
    ts = np.linspace(box[0], box[1], grid_n)
    # d/dt log phi = base + eps*sin(freq*u)*p'(t); extremize over the grid
    su = np.sin(frequency * us)[:, None]
    pd = _smooth_profile_d1(ts)[None, :]
    rate_grid = base_rate + epsilon * su * pd
    a = float(rate_grid.min())
    A = float(rate_grid.max())
    if a <= 0:
        raise ModelError(
            f"rate invariant violated: min d/dt log phi = {a:.4f} <= 0 on grid")
    return ConeModel(kind=WARPED, dim_u=1, a=a, A=A,
                     epsilon=float(epsilon), frequency=float(frequency),
                     base_rate=float(base_rate))


def flow(model: ConeModel, x: Point, s: float) -> Point:
    return Point(x.u, x.t + s)


def dflow_factor(model: ConeModel, x: Point, axis: int, s: float) -> float:
    num = model.phi(x.u_arr, x.t + s)[axis]
    den = model.phi(x.u_arr, x.t)[axis]
    return float(num / den)


# -- suspension of a hyperbolic toral automorphism ------------------------


@dataclass(frozen=True)
class SuspensionModel:
    """Suspension of a hyperbolic 2x2 integer matrix, unit roof.

    Points on the cover are triples (xi_u, xi_s, t) in eigencoordinates,
    treated as an orthonormal frame.  The flow is t-translation; the deck
    transformation identifies (xi_u, xi_s, t+1) with
    (lam*xi_u, xi_s/lam_s_abs, t) where lam is the unstable eigenvalue.
    All foliations and holonomies are exact linear maps.
    """

    matrix: tuple
    lam: float
    lam_s: float
    e_u: tuple
    e_s: tuple
    period: float
    cover: ConeModel = field(compare=False)

    @property
    def h(self) -> float:
        """Topological entropy of the suspension flow: log lam."""
        return math.log(self.lam)

    def to_dict(self) -> dict:
        return {"kind": "suspension", "matrix": [list(r) for r in self.matrix]}

    # eigencoordinate conversions for torus vectors
    def to_eigen(self, p) -> np.ndarray:
        E = np.column_stack([self.e_u, self.e_s])
        return np.linalg.solve(E, np.asarray(p, dtype=float))

    def from_eigen(self, xi) -> np.ndarray:
        E = np.column_stack([self.e_u, self.e_s])
        return E @ np.asarray(xi, dtype=float)

    # -- flow and deck maps on the cover (xi_u, xi_s, t) ------------------

    def flow_cover(self, p, s):
        xi_u, xi_s, t = p
        return (xi_u, xi_s, t + s)

    def deck(self, p):
        xi_u, xi_s, t = p
        return (self.lam * xi_u, xi_s * self.lam_s, t - self.period)

    def project(self, p):
        """Quotient representative with t in [0, period)."""
        xi_u, xi_s, t = p
        while t >= self.period:
            xi_u, xi_s, t = self.deck((xi_u, xi_s, t))
        while t < 0:
            xi_u = xi_u / self.lam
            xi_s = xi_s / self.lam_s
            t = t + self.period
        return (xi_u, xi_s, t)

    def flow_suspension(self, p, s):
        """Flow on the quotient: project after translating the cover point."""
        return self.project(self.flow_cover(p, s))

    # -- leaf metrics ------------------------------------------------------

    def d_u(self, p, q):
        """Unstable leaf distance (same xi_s and t)."""
        _, _, t = p
        return self.lam**t * abs(q[0] - p[0])

    def d_s(self, p, q):
        """Stable leaf distance at a common height (same xi_u and t)."""
        _, _, t = p
        return self.lam ** (-t) * abs(q[1] - p[1])

    def d_cs(self, p, q):
        """Distance inside a center-stable leaf (same xi_u).

        The cs-leaf carries dt^2 + lam^{-2t} dxi_s^2, which is the standard
        expanding half-plane with rate log(lam) after t -> -t.
        """
        from .geometry import halfplane_distance
        a = math.log(self.lam)
        return float(halfplane_distance(a, p[1], -p[2], q[1], -q[2]))

    # -- holonomies (exact linear maps between leaves) ---------------------

    def holonomy_s(self, x, y, z):
        """Slide z in W^cu(x) along stable leaves onto W^cu(y).

        y must be on the stable leaf of x (same xi_u, t); the map keeps
        (xi_u, t) and replaces xi_s.
        """
        return (z[0], y[1], z[2])

    def holonomy_cs(self, x, y, z):
        """Slide z in W^u(x) along center-stable leaves onto W^u(y).

        y must be on the cs-leaf of x (same xi_u); the map keeps xi_u and
        adopts the (xi_s, t) of the target leaf.
        """
        return (z[0], y[1], y[2])

    def holonomy_u(self, x, y, z):
        """Slide z in W^cs(x) along unstable leaves onto W^cs(y)."""
        return (y[0], z[1], z[2])


def make_suspension(matrix=((2, 1), (1, 1))) -> SuspensionModel:
    M = np.asarray(matrix, dtype=float)
    if M.shape != (2, 2) or not np.allclose(M, np.round(M)):
        raise ModelError("matrix must be 2x2 integer")
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if abs(abs(det) - 1.0) > 1e-12:
        raise ModelError(f"matrix must be unimodular, |det| = {abs(det)}")
    evals, evecs = np.linalg.eig(M)
    if np.iscomplexobj(evals) and np.abs(evals.imag).max() > 1e-12:
        raise ModelError("matrix is not hyperbolic (complex eigenvalues)")
    evals = evals.real
    evecs = evecs.real
    order = np.argsort(-np.abs(evals))
    lam = float(np.abs(evals[order[0]]))
    if lam <= 1.0 + 1e-12:
        raise ModelError(f"matrix is not hyperbolic (|lambda| = {lam})")
    e_u = evecs[:, order[0]] / np.linalg.norm(evecs[:, order[0]])
    e_s = evecs[:, order[1]] / np.linalg.norm(evecs[:, order[1]])
    lam_s = float(evals[order[1]])
    a = math.log(lam)
    cover = ConeModel(kind=SUSPENSION_COVER, dim_u=1, a=a, A=a, rates=(a,))
    return SuspensionModel(matrix=tuple(tuple(int(v) for v in row) for row in np.round(M).astype(int)),
                           lam=lam, lam_s=lam_s,
                           e_u=tuple(e_u), e_s=tuple(e_s),
                           period=1.0, cover=cover)


# -- adapted (time-averaged) metric ---------------------------------------


@dataclass
class AdaptedMetric:
    T: float
    a_star: float
    A_star: float
    norm: Callable
    report: dict


def adapt_metric(raw_rates, cocycle, s_max: float = 6.0, n_vectors: int = 16,
                 n_times: int = 48, quad_n: int = 129,
                 check_tol: float = 1e-6) -> AdaptedMetric:
    """Average a linear cocycle over the window [0, T], T = (1/a) log(2C).

    The averaged norm ||v||_*^2 = integral_0^T ||M(s) v||^2 ds absorbs the
    multiplicative constant C: the expansion sandwich then holds with
    constant 1 for the measured rates (a*, A*).  The cocycle is a callable
    s -> matrix with M(s+t) = M(s) M(t).
    """
    C, a, A = raw_rates
    if C < 1 or a <= 0 or A < a:
        raise ModelError(f"invalid raw rates (C, a, A) = {raw_rates}")
    T = math.log(2.0 * C) / a
    dim = np.asarray(cocycle(0.0)).shape[0]

    # precondition: the raw sandwich C^{-1} e^{as} <= ||M(s)v||/||v|| <= C e^{As}
    rng = np.random.default_rng(7)
    vecs = rng.normal(size=(n_vectors, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    s_grid = np.linspace(0.0, s_max, n_times + 1)[1:]
    slack = 1e-9
    for s in s_grid:
        M = np.asarray(cocycle(s), dtype=float)
        g = np.linalg.norm(vecs @ M.T, axis=1)
        lo = math.exp(a * s) / C
        hi = C * math.exp(A * s)
        if g.min() < lo * (1 - slack) - slack or g.max() > hi * (1 + slack) + slack:
            raise ModelError(
                f"cocycle violates the raw expansion sandwich at s={s:.3f}: "
                f"range [{g.min():.4g}, {g.max():.4g}] vs [{lo:.4g}, {hi:.4g}]")

    quad_s, quad_w = np.polynomial.legendre.leggauss(quad_n)
    quad_s = 0.5 * T * (quad_s + 1.0)
    quad_w = 0.5 * T * quad_w

    def norm_star(v, s=0.0):
        v = np.asarray(v, dtype=float)
        acc = 0.0
        for tau, w in zip(quad_s, quad_w):
            M = np.asarray(cocycle(tau + s), dtype=float)
            acc += w * float(np.dot(M @ v, M @ v))
        return math.sqrt(acc)

    ratios = np.empty((len(s_grid), n_vectors))
    for i, s in enumerate(s_grid):
        for j, v in enumerate(vecs):
            ratios[i, j] = math.log(norm_star(v, s) / norm_star(v)) / s
    a_star = float(ratios.min())
    A_star = float(ratios.max())

    # constant-free sandwich with the measured rates, by construction up to
    # roundoff; assert it anyway so a quadrature bug cannot slip through
    worst = 0.0
    for i, s in enumerate(s_grid):
        lo = math.exp(a_star * s) * (1 - check_tol)
        hi = math.exp(A_star * s) * (1 + check_tol)
        for j, v in enumerate(vecs):
            r = math.exp(ratios[i, j] * s)
            if r < lo or r > hi:
                worst = max(worst, abs(r - max(min(r, hi), lo)))
    if worst > 0:
        raise ModelError(f"adapted sandwich verification failed, excess {worst}")

    return AdaptedMetric(T=T, a_star=a_star, A_star=A_star, norm=norm_star,
                         report={"C": C, "a": a, "A": A, "T": T,
                                 "n_vectors": n_vectors, "n_times": n_times})


# -- serialization ---------------------------------------------------------


def model_from_dict(spec: dict):
    kind = spec.get("kind")
    if kind == HALFPLANE:
        return make_halfplane(spec["a"])
    if kind == DIAGONAL:
        return make_diagonal(spec["rates"])
    if kind == WARPED:
        return make_warped(spec["epsilon"], spec["frequency"], spec["base_rate"])
    if kind == "suspension":
        return make_suspension(spec["matrix"])
    raise ModelError(f"unknown model kind {kind!r}")
