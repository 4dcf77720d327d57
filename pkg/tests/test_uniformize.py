import math

import numpy as np
import pytest

from cone_lab.models import Point, make_diagonal, make_halfplane, make_warped
from cone_lab.geometry import geodesic_connect
from cone_lab.uniformize import (GEODESIC_FAMILY, MESH_DIJKSTRA, ORACLE,
                                 ConeRegion, boundary_bilipschitz_check,
                                 boundary_distance, boundary_point,
                                 cone_ball_inclusions, cone_contains, d_b,
                                 flat_coords, has_flat_oracle, kappa,
                                 subwhitney_center, uniform_curve_check)

HP = make_halfplane(1.0)
DIAG12 = make_diagonal((1.0, 2.0))
WARP = make_warped(0.1, 1.0, 1.0)


def test_flat_oracle_availability():
    assert has_flat_oracle(HP)
    assert has_flat_oracle(make_diagonal((2.0, 2.0)))
    assert not has_flat_oracle(DIAG12)
    assert not has_flat_oracle(WARP)


def test_density_and_flat_coordinates():
    x = Point((1.0,), math.log(4.0))
    assert kappa(HP, x) == pytest.approx(0.25)
    assert flat_coords(HP, x) == pytest.approx([1.0, 0.25])


def test_oracle_distance_is_euclidean():
    v = d_b(HP, Point((0.0,), 0.0), Point((3.0,), 0.0))
    assert v.method == ORACLE
    assert v.value == pytest.approx(3.0, abs=1e-12)


def test_geodesic_family_upper_bounds_oracle():
    x, y = Point((0.0,), 0.0), Point((3.0,), 0.0)
    fam = d_b(HP, x, y, method=GEODESIC_FAMILY)
    # the ambient geodesic is not the d_b geodesic, so its rescaled length
    # bounds the flat value from above
    assert fam.value >= 3.0 - 1e-9
    assert fam.bounds[0] <= 3.0 <= fam.bounds[1]


def test_vertical_geodesic_family_is_exact():
    x, y = Point((0.0,), 0.0), Point((0.0,), 5.0)
    fam = d_b(HP, x, y, method=GEODESIC_FAMILY)
    assert fam.value == pytest.approx(1.0 - math.exp(-5.0), abs=1e-5)


def test_mesh_brackets_oracle():
    x, y = Point((0.0,), 0.0), Point((3.0,), 0.0)
    mesh = d_b(HP, x, y, method=MESH_DIJKSTRA)
    lo, hi = mesh.bounds
    assert lo <= 3.0 <= hi


def test_boundary_distance_closed_form():
    assert boundary_distance(HP, Point((0.0,), 0.0)) == pytest.approx(1.0)
    assert boundary_distance(HP, Point((0.0,), math.log(4.0))) == pytest.approx(0.25)
    # the ray integral only sees the height, so warped models work too
    assert boundary_distance(WARP, Point((0.0,), 0.0)) == pytest.approx(
        math.exp(0.0) / WARP.a)
    assert boundary_point(HP, Point((2.0,), 1.0)) == (2.0,)


def test_boundary_bilipschitz_identity_on_halfplane():
    pairs = [(Point((0.0,), 0.0), Point((du,), 0.0)) for du in (0.3, 1.5, 3.0)]
    rep = boundary_bilipschitz_check(HP, Point((0.0,), 0.0), pairs)
    assert rep["K"] == pytest.approx(1.0, abs=1e-6)
    assert rep["flagged"] == 0


def test_cone_membership():
    region = ConeRegion(apex=Point((0.0,), 0.0), radius=1.0)
    assert cone_contains(HP, region, Point((0.2,), 1.0))
    assert not cone_contains(HP, region, Point((0.2,), -0.5))  # below apex
    assert not cone_contains(HP, region, Point((2.0,), 0.0))   # rho too big


def test_cone_ball_inclusions_halfplane():
    res = cone_ball_inclusions(HP, Point((0.0,), 0.0), 1.0, seed=0)
    assert res["L_star"] is not None and res["L_star"] <= 4.0
    assert res["t_star"] <= math.log(4.0) + 1e-9
    assert res["C_star"] is not None and res["C_star"] <= 2.0


def test_cone_ball_inclusions_needs_oracle():
    with pytest.raises(ValueError):
        cone_ball_inclusions(DIAG12, Point((0.0, 0.0), 0.0), 1.0)


def test_subwhitney_center_boundary_case():
    z = subwhitney_center(HP, (0.0,), 0.5)
    assert boundary_distance(HP, z) == pytest.approx(0.5)


def test_subwhitney_center_interior_case():
    x = Point((0.0,), 0.0)
    z = subwhitney_center(HP, x, 0.01)
    moved = abs(math.exp(-x.t) - math.exp(-z.t))
    assert moved == pytest.approx(0.01 / 3.0, rel=1e-9)


def test_uniform_curves():
    ray = geodesic_connect(HP, Point((0.0,), 0.0), Point((0.0,), 3.0))
    assert uniform_curve_check(HP, ray) == pytest.approx(1.0, abs=1e-3)
    arc = geodesic_connect(HP, Point((-4.0,), 0.0), Point((4.0,), 0.0))
    assert uniform_curve_check(HP, arc) < 10.0
