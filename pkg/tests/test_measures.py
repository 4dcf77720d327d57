import math

import numpy as np
import pytest

from cone_lab.models import Point, make_diagonal, make_halfplane, \
    make_suspension, make_warped
from cone_lab.uniformize import ConeRegion
from cone_lab.measures import (DivergentMass, ahlfors_check, crit_ratio,
                               entropy_estimate, entropy_rate,
                               holonomy_invariance_check, laplace_G,
                               margulis_checks, margulis_mass, mu_sigma_region,
                               net_audit, ps_renormalize, separated_count,
                               unit_ball_volume)

HP = make_halfplane(1.0)
DIAG = make_diagonal((1.0, 2.0))
WARP = make_warped(0.1, 1.0, 1.0)
CAT = make_suspension([[2, 1], [1, 1]])
ORIGIN1 = Point((0.0,), 0.0)
ORIGIN2 = Point((0.0, 0.0), 0.0)


# -- cone masses -----------------------------------------------------------


def test_full_cone_mass_closed_form():
    est = mu_sigma_region(HP, ConeRegion(apex=ORIGIN1, radius=1.0), 2.0)
    assert est.value == pytest.approx(2.0, abs=1e-12)
    assert est.abs_error == 0.0


def test_divergence_at_and_below_h():
    region = ConeRegion(apex=ORIGIN1, radius=1.0)
    for sigma in (1.0, 0.5):
        with pytest.raises(DivergentMass):
            mu_sigma_region(HP, region, sigma)


def test_truncated_critical_mass_linear_blowup():
    # at sigma = h the truncated mass is section * T, so it doubles with T
    m1 = mu_sigma_region(HP, ConeRegion(apex=ORIGIN1, radius=1.0,
                                        truncation=1.0), 1.0).value
    m2 = mu_sigma_region(HP, ConeRegion(apex=ORIGIN1, radius=1.0,
                                        truncation=2.0), 1.0).value
    assert m1 == pytest.approx(2.0, abs=1e-12)
    assert m2 / m1 == pytest.approx(2.0, abs=1e-12)


def test_warped_mass_near_halfplane_for_small_epsilon():
    tiny = make_warped(1e-3, 1.0, 1.0)
    est = mu_sigma_region(tiny, ConeRegion(apex=ORIGIN1, radius=1.0), 2.0)
    assert est.value == pytest.approx(2.0, rel=0.02)
    assert est.abs_error < 0.05


# -- separated nets --------------------------------------------------------


def test_unit_net_count_and_points():
    net = separated_count(HP, ORIGIN1, 0.0, 0.0)
    assert net.count == 3
    assert net.points == ((-1.0,), (0.0,), (1.0,))


def test_scale_relation_exact():
    # pushing the center back by t while growing both scales by t is a
    # bijection of nets, so the counts agree exactly
    for t in (0.5, 1.0, 2.5):
        base = separated_count(DIAG, ORIGIN2, 3.0, 1.0)
        moved = separated_count(DIAG, Point((0.0, 0.0), -t), 3.0 + t, 1.0 + t)
        assert moved.count == base.count


def test_separation_scale_ordering_enforced():
    with pytest.raises(ValueError):
        separated_count(HP, ORIGIN1, 1.0, l=2.0)


def test_net_audit_homogeneous():
    for model, x in ((HP, ORIGIN1), (DIAG, ORIGIN2)):
        net = separated_count(model, x, 2.0, 0.0)
        audit = net_audit(model, net)
        assert audit["separation_ok"]
        assert audit["maximality_ok"]


def test_net_audit_warped():
    net = separated_count(WARP, ORIGIN1, 2.0, 0.0)
    audit = net_audit(WARP, net)
    assert audit["separation_ok"]
    assert audit["maximality_ok"]


def test_points_omitted_past_cap():
    net = separated_count(DIAG, ORIGIN2, 4.0, 0.0, points_cap=10)
    assert net.points_omitted
    assert net.points == ()
    assert net.count > 10


def test_2d_count_against_area():
    # lattice count at scale s should track the ellipse area over the cell
    # area within the standard boundary slack
    net = separated_count(DIAG, ORIGIN2, 3.0, 0.0)
    expected = math.pi * math.exp(3.0 * 3.0)  # area / (delta1 delta2)
    assert 0.25 * expected < net.count < 4.0 * expected


# -- entropy ---------------------------------------------------------------


def test_entropy_halfplane():
    h, rep = entropy_estimate(HP)
    assert h == pytest.approx(1.0, abs=0.05)
    assert rep["submult_ok"] and rep["fekete_ok"]


def test_entropy_diagonal():
    h, rep = entropy_estimate(DIAG)
    assert h == pytest.approx(3.0, abs=0.05)
    assert rep["submult_ok"]


def test_entropy_suspension_matches_eigenvalue():
    h, rep = entropy_estimate(CAT)
    assert abs(h - math.log(CAT.lam)) <= 0.05
    assert rep["fekete_ok"]


def test_entropy_needs_enough_scales():
    with pytest.raises(ValueError):
        entropy_estimate(HP, s_max=4)


# -- Laplace transform and critical ratio ----------------------------------


def test_laplace_value_and_tail():
    G = laplace_G(HP, 2.0)
    # envelope count 2 e^t + 1: integral is 2/(sigma-1) + 1/sigma = 2.5
    assert float(G) == pytest.approx(2.5, abs=1e-3)
    assert G.tail_error < 1e-6
    assert G.h_est == pytest.approx(1.0)


def test_laplace_monotone_decreasing():
    vals = [float(laplace_G(HP, s)) for s in (1.5, 2.0, 3.0, 4.0)]
    assert vals == sorted(vals, reverse=True)


def test_laplace_divergence():
    with pytest.raises(DivergentMass):
        laplace_G(HP, 1.0)


def test_laplace_divergence_slope():
    # G(h + v) ~ C/v near the critical exponent: slope of log G vs -log v
    vs = np.array([1.0, 0.5, 0.25, 0.125])
    Gs = np.array([float(laplace_G(HP, 1.0 + v)) for v in vs])
    slope = np.polyfit(-np.log(vs), np.log(Gs), 1)[0]
    assert 0.9 <= slope <= 1.1


def test_crit_ratio_value_and_invariance():
    r0 = crit_ratio(HP, ORIGIN1, 2.0)
    assert r0 == pytest.approx(0.8, abs=2e-3)
    # exact invariance under moving the apex along the flow and shrinking
    for t, l in ((1.0, 0.0), (-2.0, 0.0), (0.0, 1.5), (0.7, 2.0)):
        r = crit_ratio(HP, Point((0.0,), t), 2.0, l=l)
        assert r == pytest.approx(r0, rel=1e-12)


def test_crit_ratio_sigma_band():
    ratios = [crit_ratio(HP, ORIGIN1, s) for s in (1.25, 1.5, 2.0, 3.0, 5.0)]
    band = max(ratios) / min(ratios)
    assert band < 2.0


# -- renormalized boundary measures ----------------------------------------


def test_renormalized_total_and_cells():
    rm = ps_renormalize(HP, ORIGIN1, 2.0)
    assert rm.total() == pytest.approx(1.0, abs=1e-12)
    assert len(rm.masses) == 4
    assert all(m == pytest.approx(0.25) for m in rm.masses)


def test_renormalized_total_scales_with_l():
    rm = ps_renormalize(HP, ORIGIN1, 2.0, l=1.0)
    assert rm.total() == pytest.approx(math.exp(2.0), rel=1e-12)


def test_interior_truncation_split_invariant():
    rm = ps_renormalize(HP, ORIGIN1, 2.0, l=0.5)
    for T in (0.5, 1.0, 3.0):
        total = sum(rm.masses_above(T)) + rm.interior_mass_below_T(T)
        assert total == pytest.approx(rm.total(), rel=1e-12)


def test_interior_mass_formula():
    rm = ps_renormalize(HP, ORIGIN1, 2.0)
    assert rm.interior_mass_below_T(1.0) == pytest.approx(1.0 - math.exp(-1.0))


def test_renormalized_warped_sigma_stability():
    coarse = ps_renormalize(WARP, ORIGIN1, 2.0)
    fine = ps_renormalize(WARP, ORIGIN1, 1.9)
    w0 = np.array(coarse.masses) / coarse.total()
    w1 = np.array(fine.masses) / fine.total()
    assert np.max(np.abs(w0 - w1)) < 0.05


def test_renormalize_requires_zero_height():
    with pytest.raises(ValueError):
        ps_renormalize(HP, Point((0.0,), 1.0), 2.0)
    with pytest.raises(DivergentMass):
        ps_renormalize(HP, ORIGIN1, 0.5)


def test_ahlfors_regularity_halfplane():
    rm = ps_renormalize(HP, ORIGIN1, 2.0)
    rep = ahlfors_check(HP, rm, radii=(0.5, 0.25, 0.125), n_centers=10)
    assert rep["n_ok"] > 0
    assert rep["K"] == pytest.approx(1.0, abs=1e-9)
    ratios = np.asarray(rep["ratios"])
    assert np.allclose(ratios, 1.0)


def test_ahlfors_rejects_warped():
    rm = ps_renormalize(WARP, ORIGIN1, 2.0)
    with pytest.raises(NotImplementedError):
        ahlfors_check(WARP, rm)


# -- box measures ----------------------------------------------------------


def test_margulis_unit_box_mass():
    assert margulis_mass(HP, [(0.0, 1.0), (0.0, 1.0)]) == pytest.approx(
        math.e - 1.0, abs=1e-12)


def test_margulis_consistency_and_scaling():
    rep = margulis_checks(HP, [(0.0, 1.0), (0.0, 1.0)], t=1.5)
    assert rep["flip_discrepancy"] < 1e-8
    assert rep["scaling_rel_err"] < 1e-12
    rep0 = margulis_checks(HP, [(0.0, 2.0), (-1.0, 0.5)], t=0.0)
    assert rep0["scaling_rel_err"] < 1e-12


def test_stable_holonomy_preserves_mass():
    x = (0.1, 0.2, 0.0)
    y = (0.1, 0.5, 0.0)  # stable leaf of x
    rep = holonomy_invariance_check(CAT, ((0.0, 0.5), (0.0, 0.3)), x, y,
                                    kind="s")
    assert rep["rel_discrepancy"] < 1e-12


def test_cs_holonomy_quasi_invariance():
    x = (0.1, 0.2, 0.0)
    y = (0.1, 0.45, 0.2)  # cs leaf of x, shifted by dt = 0.2
    rep = holonomy_invariance_check(CAT, ((0.0, 0.5), (0.0, 0.3)), x, y,
                                    kind="cs")
    assert rep["ratio"] == pytest.approx(math.exp(CAT.h * 0.2), rel=1e-9)
    assert rep["within_band"]


def test_cs_holonomy_identity_case():
    x = (0.1, 0.2, 0.0)
    rep = holonomy_invariance_check(CAT, ((0.0, 0.5), (0.0, 0.3)), x, x,
                                    kind="cs")
    assert rep["ratio"] == pytest.approx(1.0, rel=1e-12)
