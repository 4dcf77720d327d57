import math

import numpy as np
import pytest

from cone_lab.models import Point, make_diagonal, make_halfplane, \
    make_suspension, make_warped
from cone_lab.hamenstadt import (bilipschitz_estimate, comparison_check,
                                 holonomy_cs, rho, scaling_check,
                                 suspension_rho)

HP = make_halfplane(1.0)
DIAG = make_diagonal((1.0, 2.0))
WARP = make_warped(0.1, 1.0, 1.0)
CAT = make_suspension([[2, 1], [1, 1]])


def test_rho_halfplane_is_leaf_distance():
    # at rate 1 the separation time for |du| = 1/2 is log 2, so rho = 1/2
    ev = rho(HP, Point((0.0,), 0.0), Point((0.5,), 0.0))
    assert ev.value == pytest.approx(0.5, abs=1e-12)
    assert ev.t_star == pytest.approx(math.log(2.0))


def test_rho_fast_axis():
    # du = 1/4 on the rate-2 axis separates at t* = log(4)/2 = log(2)
    ev = rho(DIAG, Point((0.0, 0.0), 0.0), Point((0.0, 0.25), 0.0))
    assert ev.t_star == pytest.approx(math.log(2.0))
    assert ev.value == pytest.approx(0.5)


def test_rho_same_point():
    ev = rho(HP, Point((1.0,), 0.0), Point((1.0,), 0.0))
    assert ev.value == 0.0 and math.isinf(ev.t_star)


def test_rho_needs_common_leaf():
    with pytest.raises(ValueError):
        rho(HP, Point((0.0,), 0.0), Point((1.0,), 0.5))


def test_conformal_scaling():
    pairs = [((0.0,), (0.7,)), ((2.0,), (-1.3,))]
    for u1, u2 in pairs:
        for t in (-1.5, 0.5, 2.0):
            d = scaling_check(HP, Point(u1, 0.0), Point(u2, 0.0), t)
            assert d < 1e-10


def test_conformal_scaling_warped():
    d = scaling_check(WARP, Point((0.0,), 0.0), Point((0.8,), 0.0), 1.0)
    assert d < 1e-5


def test_comparison_envelopes_attained_on_extreme_axes():
    # slow axis, d_u = 4 > 1: rho hits the upper envelope d_u
    slow = comparison_check(DIAG, Point((0.0, 0.0), 0.0), Point((4.0, 0.0), 0.0))
    assert slow["ok"]
    assert slow["rho"] == pytest.approx(slow["upper"], rel=1e-9)
    # fast axis, d_u = 1/4 < 1: rho hits the upper envelope d_u^{a/A}
    fast = comparison_check(DIAG, Point((0.0, 0.0), 0.0), Point((0.0, 0.25), 0.0))
    assert fast["ok"]
    assert fast["rho"] == pytest.approx(fast["upper"], rel=1e-9)


def test_comparison_envelopes_random_leaf_pairs():
    rng = np.random.default_rng(3)
    for _ in range(50):
        u = tuple(rng.uniform(-3, 3, size=2))
        v = tuple(rng.uniform(-3, 3, size=2))
        if u == v:
            continue
        rep = comparison_check(DIAG, Point(u, 0.0), Point(v, 0.0))
        assert rep["ok"], rep


def test_off_leaf_projection_comparison():
    rep = comparison_check(HP, Point((0.0,), 0.0), Point((1.0,), 0.8))
    assert rep["case"] == "projection"
    assert rep["ok"]


def test_suspension_rho_exact():
    p = (0.0, 0.3, 0.5)
    q = (0.2, 0.3, 0.5)
    assert suspension_rho(CAT, p, q) == pytest.approx(CAT.lam**0.5 * 0.2)


def test_holonomy_cs_needs_cs_leaf():
    with pytest.raises(ValueError):
        holonomy_cs(CAT, (0.0, 0.0, 0.0), (0.5, 0.1, 0.0), (0.2, 0.0, 0.0))


def test_cs_holonomy_distortion_decreases_with_range():
    Ks = [bilipschitz_estimate(CAT, R, n=150, seed=0)
          for R in (1.0, 0.5, 0.25, 0.125)]
    assert all(k > 1.0 for k in Ks)
    assert Ks == sorted(Ks, reverse=True)
    # frozen from the exact distortion lam^{dt}: worst dt approaches R
    assert Ks[0] == pytest.approx(2.61, abs=0.15)
    assert Ks[-1] == pytest.approx(1.13, abs=0.05)
