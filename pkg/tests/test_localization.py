import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uwbgate.channel import RangeErrorModel
from uwbgate.classifier import AnchorBelief
from uwbgate.localization import (
    DegenerateGeometryError,
    LocalizerState,
    asa_gate,
    graham_hull,
    localize_round,
    md_inside,
    ordered_candidates,
    outlier_filter,
    select_anchors,
    solve_tdoa,
    write_round_log,
)
from uwbgate.ranging import TdoaMeasurement, TdoaSet, simulate_dltdoa_round
from uwbgate.scenario import build_layout
from uwbgate.types import Condition

from oracles import brute_hull_vertices, cross, inside_halfplanes, non_collinear

int_points = st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12)), min_size=3, max_size=12)

# ---------------------------------------------------------------- hull


def test_square_with_center():
    h = graham_hull([(0, 0), (10, 0), (10, 10), (0, 10), (5, 5)])
    assert set(h.indices) == {0, 1, 2, 3}


def test_points_on_circle_all_vertices():
    pts = [(math.cos(a), math.sin(a)) for a in np.linspace(0, 2 * math.pi, 5, endpoint=False)]
    assert len(graham_hull(pts).indices) == 5


def test_collinear_input_rejected():
    with pytest.raises(DegenerateGeometryError):
        graham_hull([(0, 0), (1, 1), (2, 2), (3, 3)])
    with pytest.raises(DegenerateGeometryError):
        graham_hull([(0, 0), (1, 1)])


def test_hull_is_ccw_and_strictly_convex():
    rng = np.random.default_rng(0)
    v = graham_hull(rng.uniform(0, 1, (40, 2))).vertices
    n = len(v)
    assert all(cross(v[i], v[(i + 1) % n], v[(i + 2) % n]) > 0 for i in range(n))


def test_hull_matches_brute_force_on_100_random_points():
    rng = np.random.default_rng(1)
    pts = [tuple(p) for p in rng.integers(0, 50, (100, 2))]
    assert {pts[i] for i in graham_hull(pts).indices} == brute_hull_vertices(pts)


@settings(max_examples=300, deadline=None)
@given(int_points)
def test_hull_matches_brute_force(points):
    if not non_collinear(points):
        with pytest.raises(DegenerateGeometryError):
            graham_hull(points)
        return
    h = graham_hull(points)
    assert {tuple(map(int, points[i])) for i in h.indices} == brute_hull_vertices(points)


# ---------------------------------------------------------------- md_inside

SQUARE = [(0, 0), (10, 0), (10, 10), (0, 10)]


@pytest.mark.parametrize("md, expected", [((5, 5), True), ((11, 5), False), ((0, 5), True), ((0, 0), True)])
def test_md_inside_square(md, expected):
    assert md_inside(SQUARE, md) is expected


def test_md_inside_degenerate_anchors(caplog):
    assert md_inside([(0, 0), (1, 1), (2, 2), (3, 3)], (1, 0)) is False
    assert "degenerate" in caplog.text


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10), st.integers(0, 10)), min_size=4, max_size=4, unique=True),
       st.tuples(st.integers(-2, 12), st.integers(-2, 12)))
def test_md_inside_matches_halfplane_oracle(anchors, md):
    if not non_collinear(anchors):
        return
    assert md_inside(anchors, md) is inside_halfplanes(anchors, md)


# ---------------------------------------------------------------- selection

LAYOUT = build_layout()
POS = LAYOUT.anchor_positions()
INIT = LAYOUT.initiator.id


def oracle_select(probs, positions, init, md):
    order = sorted(probs, key=lambda a: (probs[a], a))
    cands = [tuple(order[i] for i in c) for c in combinations(range(len(order)), 4)
             if init in (order[i] for i in c)]
    for rank, ids in enumerate(cands):
        pts = [tuple(positions[a]) for a in ids]
        if non_collinear(pts) and inside_halfplanes(pts, tuple(md)):
            return ids, rank, True
    return cands[0], 0, False


def test_candidates_contain_initiator():
    probs = {1: 0.9, 2: 0.1, 3: 0.2, 4: 0.3, 5: 0.4, 6: 0.5}
    cands = ordered_candidates(probs, 1)
    assert len(cands) == math.comb(5, 3)
    assert all(1 in c for c in cands)


def test_all_los_takes_first_candidate():
    probs = {a: 0.05 * a for a in POS}
    sub = select_anchors(probs, POS, INIT, (6.5, 8.0))
    assert sub.selection_rank == 0 and sub.hull_satisfied
    assert set(sub.ids) == {1, 2, 3, 4}


def test_one_sided_best_anchors_advance():
    positions = {1: np.array([0.0, 0.0]), 2: np.array([0.0, 10.0]), 3: np.array([1.0, 5.0]),
                 4: np.array([2.0, 2.0]), 5: np.array([10.0, 0.0]), 6: np.array([10.0, 10.0])}
    probs = {1: 0.1, 2: 0.1, 3: 0.1, 4: 0.1, 5: 0.5, 6: 0.6}
    md = (6.0, 5.0)
    sub = select_anchors(probs, positions, 1, md)
    assert sub.selection_rank > 0 and sub.hull_satisfied
    assert (sub.ids, sub.selection_rank, sub.hull_satisfied) == oracle_select(probs, positions, 1, md)


def test_worst_initiator_still_included():
    probs = {a: 0.1 for a in POS}
    probs[INIT] = 0.99
    assert INIT in select_anchors(probs, POS, INIT, (6.5, 8.0)).ids


def test_fallback_flags_unsatisfied_hull():
    sub = select_anchors({a: 0.1 * a for a in POS}, POS, INIT, (20.0, 20.0))
    assert not sub.hull_satisfied and sub.selection_rank == 0


def test_too_few_anchors():
    with pytest.raises(ValueError):
        select_anchors({1: 0.1, 2: 0.2, 3: 0.3}, POS, 1, (1, 1))


# grid values keep the checks exact: probabilities in hundredths, positions in 1/64 m
probabilities = st.lists(st.integers(0, 100).map(lambda k: k / 100), min_size=6, max_size=6)
md_points = st.tuples(st.integers(0, 576).map(lambda k: k / 64), st.integers(0, 576).map(lambda k: k / 64))


@settings(max_examples=200, deadline=None)
@given(probabilities, md_points)
def test_selection_matches_exhaustive_oracle(p, md):
    probs = dict(zip(sorted(POS), p))
    sub = select_anchors(probs, POS, INIT, md)
    ids, rank, ok = oracle_select(probs, POS, INIT, md)
    assert sub.hull_satisfied is ok
    if ok:
        assert sub.ids == ids and sub.selection_rank == rank


@settings(max_examples=200, deadline=None)
@given(probabilities, md_points)
def test_selection_invariant_under_monotone_maps(p, md):
    probs = dict(zip(sorted(POS), p))
    a = select_anchors(probs, POS, INIT, md)
    b = select_anchors({k: math.exp(3 * v) - 7 for k, v in probs.items()}, POS, INIT, md)
    assert a == b


@pytest.mark.parametrize("decisions, active", [
    ({1: "LOS", 2: "LOS", 3: "LOS"}, False),
    ({1: "LOS", 2: "NLOS", 3: "LOS"}, True),
    ({1: "NLOS", 2: "NLOS", 3: "NLOS"}, True),
])
def test_asa_gate(decisions, active):
    assert asa_gate({k: Condition(v) for k, v in decisions.items()}) is active


# ---------------------------------------------------------------- solver

LOS_ALL = {a: Condition.LOS for a in LAYOUT.anchor_ids}


def noiseless_round(layout, md):
    return simulate_dltdoa_round(layout, md, {a: "LOS" for a in layout.anchor_ids}, RangeErrorModel.noiseless(),
                                 sync_sigma_ns=0.0)


def test_noiseless_recovery_at_standing_point():
    sol = solve_tdoa(noiseless_round(LAYOUT, (6.5, 8.0)), POS, LAYOUT.localization_zone.centroid)
    assert sol.converged
    assert np.linalg.norm(sol.position - [6.5, 8.0]) < 1e-6


def test_solution_sits_in_grid_search_minimum_cell():
    tdoa = noiseless_round(LAYOUT, (6.5, 8.0)).restrict([1, 2, 4, 5])
    ref = POS[1]
    resp = np.array([POS[m.responder_id] for m in tdoa.measurements])
    rd = np.array([m.range_diff for m in tdoa.measurements]) / 100
    g = np.arange(0.0, 9.0 + 1e-9, 0.01)
    X, Y = np.meshgrid(g, g, indexing="ij")
    P = np.stack([X, Y], axis=-1)
    model = np.linalg.norm(P[..., None, :] - resp, axis=-1) - np.linalg.norm(P - ref, axis=-1)[..., None]
    cost = ((model - rd) ** 2).sum(axis=-1)
    i, j = np.unravel_index(np.argmin(cost), cost.shape)
    sol = solve_tdoa(tdoa, POS, (4.5, 4.5)).position
    assert abs(sol[0] - g[i]) <= 0.01 and abs(sol[1] - g[j]) <= 0.01


def test_two_measurements_underdetermined():
    t = noiseless_round(LAYOUT, (6.5, 8.0))
    with pytest.raises(ValueError, match="at least 3"):
        solve_tdoa(TdoaSet(0, 1, t.measurements[:2]), POS, (4.5, 4.5))


def test_collinear_anchors_rejected():
    pos = {1: np.array([0.0, 0.0]), 2: np.array([1.0, 0.0]), 3: np.array([2.0, 0.0]), 4: np.array([3.0, 0.0])}
    t = TdoaSet(0, 1, tuple(TdoaMeasurement(a, 0.0, 0.0) for a in (2, 3, 4)))
    with pytest.raises(DegenerateGeometryError):
        solve_tdoa(t, pos, (1.0, 1.0))


def test_noiseless_recovery_random_geometries():
    rng = np.random.default_rng(7)
    done = 0
    while done < 500:
        anchors = rng.uniform(0, 10, (5, 2))
        if abs(cross(*anchors[:3])) < 5 or min(np.linalg.norm(a - b) for a, b in combinations(anchors, 2)) < 1.5:
            continue
        hull = graham_hull(anchors).vertices
        # truth strictly inside the anchor hull, start near it
        w = rng.dirichlet(np.ones(len(hull)))
        truth = w @ hull
        pos = {i + 1: a for i, a in enumerate(anchors)}
        d0 = np.linalg.norm(truth - anchors[0])
        meas = tuple(TdoaMeasurement(i + 1, 0.0, (np.linalg.norm(truth - a) - d0) * 100)
                     for i, a in enumerate(anchors) if i)
        sol = solve_tdoa(TdoaSet(0, 1, meas), pos, truth + rng.normal(0, 0.3, 2))
        assert np.linalg.norm(sol.position - truth) < 1e-6
        done += 1


# ---------------------------------------------------------------- outlier filter


def feed(points, state=None):
    state = state or LocalizerState()
    flags = []
    for p in points:
        ok, state = outlier_filter(state, p)
        flags.append(ok)
    return flags, state


def test_first_candidate_accepted():
    ok, st_ = outlier_filter(LocalizerState(), (3.0, 4.0))
    assert ok and len(st_.idb) == 1


def test_stationary_jump_rejected_then_recovered():
    pts = [(5.0, 5.0)] * 10 + [(7.0, 5.0)] + [(5.0, 5.0)] * 5
    flags, _ = feed(pts)
    assert all(flags[:10]) and not flags[10] and all(flags[11:])


def test_steady_walk_all_accepted():
    flags, _ = feed([(1.0, 0.5 + 0.7 * k) for k in range(12)])
    assert all(flags)


def test_walk_then_stop_all_accepted():
    flags, _ = feed([(6.5, 5.0 + 0.7 * k) for k in range(5)] + [(6.5, 8.0)] * 10)
    assert all(flags)


def test_buffers_evict_oldest():
    _, st_ = feed([(float(k), 0.0) for k in range(15)], LocalizerState(buffer_size=4))
    assert len(st_.dsb) == 4 and st_.dsb[0][0] == 12


def test_reject_leaves_inlier_buffer():
    _, st_ = feed([(5.0, 5.0)] * 5)
    ok, st2 = outlier_filter(st_, (9.0, 9.0))
    assert not ok
    assert [r for r, _ in st2.idb] == [r for r, _ in st_.idb]
    assert len(st2.dsb) == len(st_.dsb) + 1


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), vmax=st.floats(0.05, 1.5), n=st.integers(5, 60),
       buffer_size=st.integers(2, 12))
def test_bounded_rejection_streak(seed, vmax, n, buffer_size):
    rng = np.random.default_rng(seed)
    v = np.zeros(2)
    p = rng.uniform(0, 9, 2)
    pts = []
    for _ in range(n):
        v = v + rng.normal(0, vmax / 2, 2)
        speed = np.linalg.norm(v)
        if speed > vmax:
            v *= vmax / speed
        p = p + v
        pts.append(tuple(p))
    flags, _ = feed(pts, LocalizerState(buffer_size=buffer_size))
    streak = longest = 0
    for f in flags:
        streak = 0 if f else streak + 1
        longest = max(longest, streak)
    assert longest <= math.ceil(buffer_size / 2)


# ---------------------------------------------------------------- pipeline


def beliefs_with(nlos=()):
    b = AnchorBelief.fresh(LAYOUT.anchor_ids)
    for a in LAYOUT.anchor_ids:
        b = b.update(a, 1.0 if a in nlos else 0.0)
    for _ in range(5):
        for a in LAYOUT.anchor_ids:
            b = b.update(a, 1.0 if a in nlos else 0.0)
    return b


def test_all_los_round_uses_every_anchor():
    t = simulate_dltdoa_round(LAYOUT, (6.5, 8.0), LOS_ALL, seed=0)
    res, _ = localize_round(beliefs_with(), t, LocalizerState(), LAYOUT)
    assert not res.asa_active and res.used_ids == tuple(sorted(LAYOUT.anchor_ids))


def test_one_nlos_round_uses_four_anchors():
    conds = {**LOS_ALL, 5: Condition.NLOS}
    t = simulate_dltdoa_round(LAYOUT, (6.5, 8.0), conds, seed=0)
    state = LocalizerState(last_position=np.array([6.5, 8.0]))
    res, _ = localize_round(beliefs_with({5}), t, state, LAYOUT)
    assert res.asa_active and len(res.used_ids) == 4 and INIT in res.used_ids and 5 not in res.used_ids


def test_biased_initiator_fix_rejected():
    truth = np.array([6.5, 8.0])
    state = LocalizerState()
    for _ in range(10):
        _, state = outlier_filter(state, truth)
    biased = RangeErrorModel(0.0, 0.0, 150.0, 0.0)
    conds = {**LOS_ALL, INIT: Condition.NLOS}
    t = simulate_dltdoa_round(LAYOUT, truth, conds, biased, sync_sigma_ns=0.0)
    res, _ = localize_round(beliefs_with(), t, state, LAYOUT)
    assert np.linalg.norm(res.raw_position - truth) * 100 > state.threshold_cm
    assert not res.accepted and res.position is None


def test_modes_skip_filter_and_force_selection():
    t = simulate_dltdoa_round(LAYOUT, (6.5, 8.0), LOS_ALL, seed=1)
    legacy, _ = localize_round(beliefs_with(), t, LocalizerState(), LAYOUT, "legacy")
    asa, _ = localize_round(beliefs_with(), t, LocalizerState(), LAYOUT, "asa")
    assert legacy.accepted and len(legacy.used_ids) == 6
    assert asa.asa_active and len(asa.used_ids) == 4
    with pytest.raises(ValueError):
        localize_round(beliefs_with(), t, LocalizerState(), LAYOUT, "other")


def test_round_log(tmp_path):
    t = simulate_dltdoa_round(LAYOUT, (6.5, 8.0), LOS_ALL, seed=1)
    res, _ = localize_round(beliefs_with(), t, LocalizerState(), LAYOUT)
    write_round_log(tmp_path / "r.csv", [res], [(6.5, 8.0)])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "round_id,used_anchor_ids,x,y,accepted_flag,error_vs_truth_cm"
    assert lines[1].startswith("0,1 2 3 4 5 6,")
