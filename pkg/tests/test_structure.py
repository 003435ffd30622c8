"""Tests for policy structure checks and threshold extraction."""

import json

import numpy as np
import pytest

from offloadq.kernel import DiscountSpec, build_kernel, build_state_space, uniformization_rate
from offloadq.model import Action, derive_rates
from offloadq.simulator import baseline, tabulate_policy
from offloadq.solver import PolicyTable, ValueTable, value_iterate
from offloadq.structure import (
    ThresholdProfile,
    check_cloud_first,
    check_switch_type,
    check_urgency_monotonicity,
    check_value_inequalities,
    extract_thresholds,
    profile_leq,
    reconstruct_sm2_region,
    run_structure_checks,
)

N_MAX = 12
MARGIN = 3
CAP = N_MAX - MARGIN


@pytest.fixture(scope="module")
def space():
    return build_state_space(N_MAX)


def _table(space, name):
    return PolicyTable(actions=tabulate_policy(baseline(name), space))


def test_baselines_pass_all_policy_checks(space):
    for name in ("offload_only", "non_idling"):
        report = run_structure_checks(_table(space, name), space, margin=MARGIN)
        assert report.cloud_first.passed, name
        assert report.switch_type.passed, name
        assert report.urgency_monotone.passed, name
        assert report.thresholds_non_increasing, name
        assert report.all_passed(), name


def test_offload_only_has_no_thresholds(space):
    prof = extract_thresholds(_table(space, "offload_only"), space, margin=MARGIN)
    # slices with k = CAP hold no interior state with n0 >= 1
    assert set(prof.sm1_busy) == set(range(0, CAP))
    assert set(prof.sm1_free) == set(range(1, CAP))
    assert all(v is None for v in prof.sm1_busy.values())
    assert all(v is None for v in prof.sm1_free.values())
    assert prof.non_increasing()


def test_non_idling_thresholds_all_one(space):
    prof = extract_thresholds(_table(space, "non_idling"), space, margin=MARGIN)
    assert all(v == 1 for v in prof.sm1_busy.values())
    assert all(v == 1 for v in prof.sm1_free.values())
    # the most eager profile sits below the never-splitting one
    lazy = extract_thresholds(_table(space, "offload_only"), space, margin=MARGIN)
    assert profile_leq(prof, lazy)
    assert not profile_leq(lazy, prof)


def test_cloud_first_counterexample(space):
    acts = tabulate_policy(baseline("non_idling"), space)
    acts[space.id_of(1, 0, 0, 0)] = int(Action.IDLE)
    res = check_cloud_first(PolicyTable(actions=acts), space, margin=MARGIN)
    assert not res.passed
    assert ((1, 0, 0, 0), "idle") in res.counterexamples
    assert res.checked == 2 * CAP


def test_switch_type_counterexample(space):
    acts = tabulate_policy(baseline("non_idling"), space)
    acts[space.id_of(3, 0, 1, 1)] = int(Action.IDLE)
    res = check_switch_type(PolicyTable(actions=acts), space, margin=MARGIN)
    assert not res.passed
    pairs = {(tuple(c[0]), tuple(c[1])) for c in res.counterexamples}
    # the hole is reachable by a unit step in n0 and in n2
    assert ((2, 0, 1, 1), (3, 0, 1, 1)) in pairs
    assert ((3, 0, 1, 0), (3, 0, 1, 1)) in pairs


def test_urgency_counterexample(space):
    acts = tabulate_policy(baseline("non_idling"), space)
    acts[space.id_of(2, 0, 1, 1)] = int(Action.IDLE)
    res = check_urgency_monotonicity(PolicyTable(actions=acts), space, margin=MARGIN)
    assert not res.passed
    assert ((1, 0, 1, 1), "sm2", (2, 0, 1, 1)) in res.counterexamples


def test_threshold_extraction_matches_construction(space):
    # plant thresholds decreasing in k on both slice families
    thr = {k: max(1, 5 - k) for k in range(0, CAP)}
    acts = np.zeros(space.size, dtype=np.int8)
    for k in range(0, CAP):
        for n0 in range(thr[k], CAP - k + 1):
            acts[space.id_of(n0, 0, 1, k)] = int(Action.SM2)
            if k >= 1:
                acts[space.id_of(n0, 0, 0, k)] = int(Action.SM2)
    prof = extract_thresholds(PolicyTable(actions=acts), space, margin=MARGIN)
    assert prof.sm1_busy == thr
    assert prof.sm1_free == {k: thr[k] for k in range(1, CAP)}
    assert prof.non_increasing()


def test_threshold_none_when_top_state_does_not_split(space):
    acts = np.zeros(space.size, dtype=np.int8)
    # split region with a hole at the top of the slice: no "for all larger
    # n0" threshold exists
    for n0 in range(1, CAP):
        acts[space.id_of(n0, 0, 1, 0)] = int(Action.SM2)
    prof = extract_thresholds(PolicyTable(actions=acts), space, margin=MARGIN)
    assert prof.sm1_busy[0] is None


def test_reconstruction_round_trip(space):
    acts = tabulate_policy(baseline("non_idling"), space)
    table = PolicyTable(actions=acts)
    prof = extract_thresholds(table, space, margin=MARGIN)
    mask = reconstruct_sm2_region(prof, space, margin=MARGIN)
    # agreement on every slice the profile describes
    assigns = np.isin(acts, (int(Action.SM2), int(Action.SM1_THEN_SM2)))
    for k in range(0, CAP):
        sids = space.ids_of(np.arange(1, CAP - k + 1), 0, 1, k)
        assert (mask[sids] == assigns[sids]).all()
    for k in range(1, CAP):
        sids = space.ids_of(np.arange(1, CAP - k + 1), 0, 0, k)
        assert (mask[sids] == assigns[sids]).all()
    # nothing outside the described slices
    covered = np.zeros(space.size, dtype=bool)
    for i1, lo in ((1, 0), (0, 1)):
        for k in range(lo, CAP):
            covered[space.ids_of(np.arange(1, CAP - k + 1), 0, i1, k)] = True
    assert not mask[~covered].any()


def test_profile_leq_none_is_infinite():
    a = ThresholdProfile(sm1_busy={0: 2, 1: None}, sm1_free={1: 3})
    b = ThresholdProfile(sm1_busy={0: 2, 1: None}, sm1_free={1: None})
    assert profile_leq(a, b)
    assert not profile_leq(b, a)
    # comparison only covers shared slices
    c = ThresholdProfile(sm1_busy={7: 1}, sm1_free={})
    assert profile_leq(a, c) and profile_leq(c, a)


def test_non_increasing_with_missing_thresholds():
    assert ThresholdProfile(sm1_busy={0: None, 1: 4, 2: 4, 3: 1}, sm1_free={}).non_increasing()
    assert not ThresholdProfile(sm1_busy={0: 4, 1: None}, sm1_free={}).non_increasing()
    assert not ThresholdProfile(sm1_busy={}, sm1_free={1: 2, 2: 3}).non_increasing()


def test_value_gaps_on_synthetic_tables(space):
    disc = DiscountSpec.from_alpha(10.0, 0.99)
    flat = ValueTable(values=np.ones(space.size), discount=disc)
    gaps = check_value_inequalities(flat, space, margin=MARGIN)
    assert gaps.min_cloud_mode_gap == 0.0
    assert gaps.min_arrival_gap == 0.0

    totals = (space.n0 + space.i2 + space.i1 + space.n2).astype(float)
    per_job = ValueTable(values=totals, discount=disc)
    gaps = check_value_inequalities(per_job, space, margin=MARGIN)
    assert gaps.min_cloud_mode_gap == 0.0  # both probe states hold one job
    assert gaps.min_arrival_gap == 1.0
    assert gaps.checked > 0


def test_report_serialization_and_determinism(space):
    table = _table(space, "non_idling")
    r1 = run_structure_checks(table, space, margin=MARGIN)
    r2 = run_structure_checks(table, space, margin=MARGIN)
    assert r1.to_json() == r2.to_json()
    payload = json.loads(r1.to_json())
    assert payload["schema_version"] == 1
    assert payload["all_passed"] is True
    assert payload["thresholds"]["sm1_busy"]["0"] == 1
    text = r1.to_text()
    assert "overall" in text and "PASS" in text and "FAIL" not in text


def test_failed_report_text_lists_counterexamples(space):
    acts = tabulate_policy(baseline("non_idling"), space)
    acts[space.id_of(1, 0, 0, 0)] = int(Action.IDLE)
    report = run_structure_checks(PolicyTable(actions=acts), space, margin=MARGIN)
    assert not report.all_passed()
    text = report.to_text()
    assert "FAIL" in text
    assert "counterexample cloud_first" in text


@pytest.fixture(scope="module")
def solved(space):
    p = derive_rates(3.0, 1.0, 8.0, 0.4)
    disc = DiscountSpec.from_alpha(uniformization_rate(p), 0.99)
    kernel = build_kernel(p, space, disc)
    table, policy = value_iterate(kernel, tol=1e-10)
    return kernel, table, policy


def test_margin_screening_keeps_genuine_violations(space, solved):
    kernel, table, policy = solved
    acts = policy.actions.copy()
    # idling with the cloud free and work queued loses real value, so the
    # flip must survive the action-value screen
    acts[space.id_of(1, 0, 0, 0)] = int(Action.IDLE)
    report = run_structure_checks(
        PolicyTable(actions=acts), space, margin=MARGIN, values=table, kernel=kernel
    )
    assert not report.cloud_first.passed
    assert ((1, 0, 0, 0), "idle") in report.cloud_first.counterexamples
    assert report.decision_floor >= 1e-10


def test_margin_screening_marks_subfloor_flips_indeterminate(space, solved):
    kernel, table, policy = solved
    acts = policy.actions.copy()
    acts[space.id_of(1, 0, 0, 0)] = int(Action.IDLE)
    report = run_structure_checks(
        PolicyTable(actions=acts),
        space,
        margin=MARGIN,
        values=table,
        kernel=kernel,
        decision_floor=1e12,
    )
    # an infinite floor cannot decide anything: the flip is indeterminate,
    # not a failure
    assert report.cloud_first.passed
    assert report.cloud_first.indeterminate == 1
    assert report.decision_floor == 1e12


def test_margin_screening_requires_values(space, solved):
    kernel, _, policy = solved
    with pytest.raises(ValueError):
        run_structure_checks(policy, space, margin=MARGIN, kernel=kernel)


def test_solved_small_instance_passes_with_screening(space, solved):
    kernel, table, policy = solved
    report = run_structure_checks(policy, space, margin=MARGIN, values=table, kernel=kernel)
    assert report.all_passed()
