import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gkblowup import verifier as V
from gkblowup.blowup import PotentialSpec
from gkblowup.flow import FlowConfig

SPEC = PotentialSpec(0.025, 0.2, 0.45, 0.7)
BASE, FIBER = (-1.0, 1.0), (-0.7, 0.7)
N = 8


def chart_grid(chart, counts=(3, 3, 4, 4), r_bounds=(0.0, 0.63), include_divisor=True, samples=0):
    ranges = (BASE, BASE, FIBER, FIBER) if chart == 0 else (FIBER, FIBER, BASE, BASE)
    counts = counts if chart == 0 else counts[2:] + counts[:2]
    return V.GridSpec(chart, ranges, counts, 1e-3, r_bounds, include_divisor, samples)


def blowdown_radius(chart, p):
    # chart 0 is (z, w) with x = (w, z w); chart 1 swaps the roles
    z, w = (p[:2], p[2:]) if chart == 0 else (p[2:], p[:2])
    return math.hypot(*w) * math.sqrt(1 + z @ z)


@pytest.mark.parametrize("kwargs", [
    {"chart": 2},
    {"ranges": ((0.0, 1.0),) * 3},
    {"ranges": ((1.0, 0.0),) * 4},
    {"counts": (1, 4, 4, 4)},
    {"margin": -1.0},
    {"samples": -3},
    {"r_bounds": (0.5, 0.2)},
    {"chart": "model", "include_divisor": True},
])
def test_gridspec_rejects(kwargs):
    with pytest.raises(ValueError):
        V.GridSpec(**kwargs)


def test_grid_filters():
    g = chart_grid(0, r_bounds=(0.1, 0.5), include_divisor=False, samples=40)
    pts = g.points()
    assert len(pts) > 0
    assert np.all(np.hypot(pts[:, 2], pts[:, 3]) > 1e-3)
    r = np.array([blowdown_radius(0, p) for p in pts])
    assert np.all((r > 0.1) & (r < 0.5))
    assert np.allclose(V.chart_radius(0, pts), r, atol=1e-14)


def test_grid_divisor_slice():
    g = chart_grid(1, counts=(3, 5, 4, 4))
    e = g.divisor_points()
    assert e.shape == (15, 4)
    assert np.all(e[:, :2] == 0)
    assert np.array_equal(g.points()[:15], e)


def test_grid_is_deterministic():
    g = chart_grid(0, samples=30)
    assert np.array_equal(g.points(), chart_grid(0, samples=30).points())


@given(st.integers(0, 1), st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_zone_labels(chart, coords):
    p = np.array(coords)
    r = blowdown_radius(chart, p)
    on_E = (p[2:] if chart == 0 else p[:2]).tolist() == [0.0, 0.0]
    want = "E" if on_E else "U_E" if r < SPEC.r0 else "K\\U_E" if r <= SPEC.r1 else "outside K"
    assert V.zones(SPEC, chart, p) == [want]


def test_zone_of_divisor_point():
    assert V.zones(SPEC, 0, [0.3, -0.2, 0.0, 0.0]) == ["E"]
    assert V.zones(SPEC, "model", np.zeros((2, 4))) == ["", ""]


def test_summarize_skips_nan_and_counts_errors():
    recs = [V.PointRecord(0, (0,) * 4, 0.5, 1e-9),
            V.PointRecord(0, (0,) * 4, math.nan, notes="error: LeftDomain: out"),
            V.PointRecord(1, (0,) * 4, -0.1, 3e-8)]
    s = V.summarize(recs)
    assert s["n_points"] == 3 and s["n_failed_points"] == 1
    assert s["global_min_eig"] == -0.1 and s["max_res_brane"] == 3e-8
    assert math.isnan(s["max_res_gk"])


def test_report_dict_is_json_clean():
    rep = V.ScanReport("x", {"a": np.float64(1.5)}, [], {"m": math.nan, "k": np.int64(3)}, {"ok": np.bool_(True)})
    d = rep.to_dict()
    assert d == {"name": "x", "parameters": {"a": 1.5}, "summary": {"m": None, "k": 3},
                 "criteria": {"ok": True}, "passed": True, "provenance": {}, "tables": {}}


@pytest.fixture(scope="module")
def grids():
    return [chart_grid(0, samples=120), chart_grid(1, samples=120)]


def test_time_zero_is_degenerate_on_E(structure, grids):
    rep = V.positivity_scan(structure, 0.025, 0.0, grids, n=N)
    assert not rep.criteria["positive"]
    assert rep.summary["zone_min"]["E"] <= 1e-9
    # away from E the lifted metric is already positive
    assert rep.summary["zone_min"]["U_E"] > 0 and rep.summary["zone_min"]["outside K"] > 0


def test_certified_pair_on_small_grid(structure, grids):
    rep = V.positivity_scan(structure, 0.025, -0.02, grids, FlowConfig(), n=N)
    assert rep.passed, rep.summary
    assert rep.summary["n_outside_K"] > 0
    assert rep.summary["max_third_on_TE"] <= V.THIRD_TERM_TOL
    assert set(rep.summary["zone_min"]) == set(V.ZONES)
    assert [r.zone for r in rep.records] == V.zones(SPEC, 0, grids[0].points()) + V.zones(SPEC, 1, grids[1].points())


def test_wrong_time_sign_fails(structure, grids):
    rep = V.positivity_scan(structure, 0.025, 0.02, grids, n=N)
    assert rep.summary["zone_min"]["E"] < 0
    assert rep.criteria["equals_base_outside_K"]


def test_scaling_implication(structure, grids):
    rep = V.scaling_check(structure, 0.025, -0.02, grids, n=N)
    rows = rep.tables["scaling"]
    assert [r["c"] for r in rows] == [0.025, 0.0125, 0.00625]
    assert rep.passed
    # near E the minimum is linear in c
    assert rows[1]["global_min_eig"] == pytest.approx(rows[0]["global_min_eig"] / 2, rel=0.02)


def test_parameter_search_order(structure, grids):
    rep = V.parameter_search(structure, [0.4, 0.025], [0.02, -0.02], grids, n=N)
    m = rep.tables["matrix"]
    assert [[(x["c"], x["t"]) for x in row] for row in m] == [[(0.4, 0.02), (0.4, -0.02)],
                                                               [(0.025, 0.02), (0.025, -0.02)]]
    assert rep.summary["certified"] == [0.025, -0.02]


def test_convergence_small(structure):
    inner = [chart_grid(0, r_bounds=(0.0, 0.45)), chart_grid(1, r_bounds=(0.0, 0.45))]
    outer = [chart_grid(0, r_bounds=(0.45, 0.63), include_divisor=False)]
    rep = V.convergence_study(structure, 0.025, [-0.08, -0.04, -0.02], inner, outer, n=N)
    s = rep.summary
    assert rep.criteria["closed_form_matches_autodiff"]
    assert all(e <= V.EXACT_TOL for e in s["errors"]["U_E"])
    assert all(0.4 <= r <= 0.6 for r in s["ratios"]["K\\U_E"])
    assert s["max_g_prime_outside_K"] == 0.0


def test_pullback_and_degeneracy_small(structure):
    assert V.pullback_check(structure, [chart_grid(0, include_divisor=False)]).passed
    d = V.degeneracy_check(structure, [V.GridSpec(0, (BASE, BASE, FIBER, FIBER), (3, 3, 2, 2))])
    assert d.summary["n_points"] == 9
    assert d.passed


def test_overlap_points_lie_on_overlap():
    pts = V.overlap_points(200, 3)
    mod = np.hypot(pts[:, 0], pts[:, 1])
    assert np.all((mod >= 0.5) & (mod <= 2.0))
    r = np.array([blowdown_radius(0, p) for p in pts])
    assert np.all((r > 0) & (r < 0.9))


def test_poisson_lift_small():
    rep = V.poisson_lift_check(20, seed=5)
    assert rep.passed and rep.parameters["n_points"] == 20


def test_annulus_points():
    pts = V.annulus_points(SPEC, 40, 2)
    assert [c for c, _ in pts] == [0, 1] * 20
    r = np.array([blowdown_radius(c, p) for c, p in pts])
    assert np.all((r > SPEC.r1) & (r < SPEC.r2))


def test_deformation_class_small():
    rep = V.deformation_class_check(SPEC, 10, seed=4)
    assert rep.passed and rep.summary["max_error"] <= 1e-10


def test_kernel_cache_is_by_value(structure, grids):
    a = V.positivity_scan(structure, 0.025, -0.02, grids[:1], n=N)
    V.clear_kernel_cache()
    b = V.positivity_scan(structure, 0.025, -0.02, grids[:1], n=N)
    assert a.summary["global_min_eig"] == b.summary["global_min_eig"]
