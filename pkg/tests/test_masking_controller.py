import numpy as np
import pytest

from common.errors import LeakageError, MaskingError
from common.masking_controller import (
    MaskingPlan,
    audit_plan,
    build_masking_plan,
    intervals_to_index,
    plan_report,
    view,
)


def test_fig_layout_for_first_segment():
    plan = build_masking_plan(100, 4, 3, 0)
    assert plan.level1[0] == (0, 25)
    assert plan.xhat_n(1) == ((25, 100),)
    assert plan.level2[0] == (((25, 50),), ((50, 75),), ((75, 100),))


def test_remainder_is_set_difference():
    plan = build_masking_plan(100, 4, 3, 0)
    v = view(plan, 1, 2)
    expected = np.concatenate([np.arange(25, 50), np.arange(75, 100)])
    assert np.array_equal(v.remainder, expected)
    assert np.array_equal(v.xhat_nm, np.arange(50, 75))
    assert np.array_equal(v.x_n, np.arange(0, 25))


def test_single_segment_leaves_xhat_empty():
    with pytest.raises(MaskingError, match="x̂_n empty"):
        build_masking_plan(100, 1, 1, 0)


def test_tail_is_excluded_from_level_one():
    plan = build_masking_plan(120, 4, 3, 20)
    assert plan.cca_span == (100, 120)
    assert plan.level1[0][0] == 0 and plan.level1[-1][1] == 100
    for (a, b), (c, d) in zip(plan.level1, plan.level1[1:]):
        assert b == c


def test_pieces_jump_over_the_hole():
    plan = build_masking_plan(90, 3, 2, 0)
    # x_2 = [30, 60); x̂_2 = [0, 30) + [60, 90) split in two halves of 30
    assert plan.level2[1] == (((0, 30),), ((60, 90),))
    plan = build_masking_plan(90, 3, 4, 0, min_segment=2)
    assert plan.level2[1][1] == ((15, 30),)
    assert plan.level2[1][2] == ((60, 75),)


def test_straddling_piece_maps_to_two_intervals():
    plan = build_masking_plan(100, 4, 3, 0, min_segment=2)
    # x̂_2 = [0, 25) + [50, 100) has 75 positions; the second piece [25, 50) lifts to [50, 75)
    assert plan.level2[1] == (((0, 25),), ((50, 75),), ((75, 100),))
    plan = build_masking_plan(100, 4, 2, 0, min_segment=2)
    assert plan.level2[1][0] == ((0, 25), (50, 62))


def test_too_short_series_rejected():
    with pytest.raises(MaskingError, match="too short"):
        build_masking_plan(60, 3, 3, 10, min_segment=10)


def test_view_index_out_of_range():
    plan = build_masking_plan(100, 4, 3, 0)
    with pytest.raises(MaskingError, match="out of range"):
        view(plan, 5, 1)
    with pytest.raises(MaskingError, match="out of range"):
        view(plan, 1, 0)


def test_random_plans_partition_the_series():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 500:
        N = int(rng.integers(2, 6))
        M = int(rng.integers(1, 5))
        cca_len = int(rng.integers(0, 50))
        series_len = cca_len + int(rng.integers(N * M * 2, 400))
        try:
            plan = build_masking_plan(series_len, N, M, cca_len)
        except MaskingError:
            continue
        checked += 1
        assert audit_plan(plan)
        for n in range(1, N + 1):
            for m in range(1, M + 1):
                v = view(plan, n, m)
                assert not np.intersect1d(v.x_n, v.xhat_nm).size
                assert not np.intersect1d(v.x_n, v.remainder).size
                assert not np.intersect1d(v.xhat_nm, v.remainder).size
                union = np.concatenate([v.x_n, v.xhat_nm, v.remainder, v.cca])
                assert np.array_equal(np.sort(union), np.arange(series_len))


def test_audit_detects_overlapping_plan():
    plan = build_masking_plan(100, 4, 3, 0)
    broken = MaskingPlan(
        plan.series_len, plan.N, plan.M, plan.cca_span,
        ((0, 30),) + plan.level1[1:], plan.level2,
    )
    with pytest.raises(LeakageError):
        audit_plan(broken)


def test_plan_report_and_round_trip():
    plan = build_masking_plan(120, 3, 2, 30, channel_id="c0")
    report = plan_report({"c0": plan})
    assert report["c0"]["sizes"]["cca"] == 30
    assert report["c0"]["sizes"]["x_n"] == [30, 30, 30]
    assert MaskingPlan.from_dict(plan.to_dict()) == plan


def test_intervals_to_index_skips_empty():
    assert intervals_to_index([(3, 3), (5, 7)]).tolist() == [5, 6]
