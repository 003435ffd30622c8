"""Value iteration, greedy extraction, and policy-evaluation oracles."""

import numpy as np
import pytest

from offloadq.kernel import DiscountSpec, build_kernel, build_state_space, uniformization_rate
from offloadq.model import Action, State, admissible_actions, derive_rates
from offloadq.solver import (
    PolicyTable,
    ValueTable,
    bellman_backup,
    evaluate_policy,
    load_checkpoint,
    save_checkpoint,
    value_iterate,
)

CONFIG_A = derive_rates(3.6, 1.0, 8.0, 0.4)


def _kernel(p=CONFIG_A, n_max=3, alpha=0.9):
    space = build_state_space(n_max)
    d = DiscountSpec.from_alpha(uniformization_rate(p), alpha)
    return build_kernel(p, space, d)


def _random_admissible_policy(kernel, rng):
    actions = np.zeros(kernel.space.size, dtype=np.int8)
    for sid in range(kernel.space.size):
        s = State(*kernel.space.state_of(sid))
        actions[sid] = int(rng.choice(admissible_actions(s)))
    return PolicyTable(actions)


def test_backup_of_zero_table():
    k = _kernel()
    table, greedy = bellman_backup(k, np.zeros(k.space.size))
    scale = k.discount.beta + k.discount.nu
    sid = k.space.id_of(1, 0, 0, 0)
    # assignments conserve jobs, so every action costs one holding unit
    assert table.values[sid] == pytest.approx(1.0 / scale, rel=1e-13)
    assert table.values[k.space.id_of(0, 0, 0, 0)] == 0.0
    assert Action(int(greedy.actions[sid])) is Action.SM1


def test_backup_tie_breaking_prefers_composite():
    k = _kernel()
    _, greedy = bellman_backup(k, np.zeros(k.space.size))
    # with a flat table all actions cost the same; ties resolve toward
    # assigning two jobs, then full offload, then split, then idling
    assert Action(int(greedy.actions[k.space.id_of(2, 0, 0, 0)])) is Action.SM1_THEN_SM2
    assert Action(int(greedy.actions[k.space.id_of(2, 1, 0, 0)])) is Action.SM1
    assert Action(int(greedy.actions[k.space.id_of(2, 0, 1, 0)])) is Action.SM2
    assert Action(int(greedy.actions[k.space.id_of(0, 0, 0, 2)])) is Action.IDLE


def test_backup_rejects_wrong_shape():
    k = _kernel()
    with pytest.raises(ValueError, match="shape"):
        bellman_backup(k, np.zeros(k.space.size + 1))


def test_contraction_property():
    k = _kernel(n_max=5, alpha=0.95)
    rng = np.random.default_rng(20240818)
    for _ in range(25):
        u = rng.uniform(0.0, 100.0, size=k.space.size)
        w = rng.uniform(0.0, 100.0, size=k.space.size)
        tu, _ = bellman_backup(k, u)
        tw, _ = bellman_backup(k, w)
        lhs = np.max(np.abs(tu.values - tw.values))
        rhs = k.discount.alpha * np.max(np.abs(u - w))
        assert lhs <= rhs + 1e-12


def test_monotone_iterates_from_zero():
    k = _kernel(n_max=4, alpha=0.95)
    values = np.zeros(k.space.size)
    for _ in range(200):
        table, _ = bellman_backup(k, values)
        assert np.all(table.values >= values - 1e-12)
        values = table.values
    assert np.all(values >= 0.0)
    assert np.all(np.isfinite(values))


def test_value_iterate_converges_geometrically():
    k = _kernel(n_max=2, alpha=0.5)
    table, policy = value_iterate(k, tol=1e-9)
    assert table.converged
    assert table.iterations < 60
    assert table.residual <= 1e-9
    assert table.error_bound <= 1e-9
    # greedy actions admissible everywhere
    policy.validate(k)


def test_value_iterate_zero_budget():
    k = _kernel()
    table, _ = value_iterate(k, tol=1e-9, max_iters=0)
    assert not table.converged
    assert table.iterations == 0
    assert np.all(table.values == 0.0)


def test_value_iterate_reports_non_convergence():
    k = _kernel(alpha=0.999)
    table, _ = value_iterate(k, tol=1e-12, max_iters=5)
    assert not table.converged
    assert table.iterations == 5
    assert np.isfinite(table.error_bound)


def test_value_iterate_rejects_bad_tolerance():
    with pytest.raises(ValueError, match="positive"):
        value_iterate(_kernel(), tol=0.0)


def test_checkpoint_resume_bit_identical(tmp_path):
    k = _kernel(n_max=4, alpha=0.99)
    straight, _ = value_iterate(k, tol=0.0 + 1e-300, max_iters=300)

    first, _ = value_iterate(k, tol=1e-300, max_iters=150)
    path = tmp_path / "resume.npz"
    save_checkpoint(str(path), first, params=k.params, n_max=k.space.n_max)
    loaded = load_checkpoint(str(path))
    assert loaded.n_max == 4
    assert loaded.params is not None and loaded.params.lam == pytest.approx(3.6)
    assert loaded.table.iterations == 150
    resumed, _ = value_iterate(k, tol=1e-300, max_iters=150, v0=loaded.table)
    assert resumed.iterations == 300
    assert np.array_equal(resumed.values, straight.values)


def test_checkpoint_stores_policy(tmp_path):
    k = _kernel(n_max=2, alpha=0.5)
    table, policy = value_iterate(k, tol=1e-9, checkpoint_path=str(tmp_path / "sol.npz"))
    loaded = load_checkpoint(str(tmp_path / "sol.npz"))
    assert loaded.policy is not None
    assert np.array_equal(loaded.policy.actions, policy.actions)
    assert np.array_equal(loaded.table.values, table.values)
    assert loaded.table.converged


def test_evaluate_policy_oracle_agreement():
    k = _kernel(n_max=3, alpha=0.9)
    rng = np.random.default_rng(7)
    for _ in range(5):
        pi = _random_admissible_policy(k, rng)
        direct = evaluate_policy(k, pi, method="direct")
        iterative = evaluate_policy(k, pi, method="iterative", tol=1e-13)
        assert np.max(np.abs(direct.values - iterative.values)) <= 1e-8


def test_evaluate_policy_matches_vi_fixed_point():
    k = _kernel(n_max=3, alpha=0.9)
    tol = 1e-12
    table, policy = value_iterate(k, tol=tol)
    direct = evaluate_policy(k, policy, method="direct")
    assert np.max(np.abs(direct.values - table.values)) <= 10.0 * tol


def test_evaluate_policy_rejects_inadmissible():
    k = _kernel()
    actions = np.zeros(k.space.size, dtype=np.int8)
    actions[k.space.id_of(0, 0, 0, 0)] = int(Action.SM1)
    with pytest.raises(ValueError, match="inadmissible"):
        evaluate_policy(k, PolicyTable(actions))


def test_evaluate_policy_direct_size_limit():
    k = _kernel(n_max=3)
    with pytest.raises(ValueError, match="refused"):
        evaluate_policy(k, _random_admissible_policy(k, np.random.default_rng(1)),
                        method="direct", direct_size_limit=10)


def test_positive_arrivals_give_positive_empty_state_value():
    k = _kernel(n_max=3, alpha=0.9)
    table, _ = value_iterate(k, tol=1e-12)
    assert table.values[k.space.id_of(0, 0, 0, 0)] > 0.0
