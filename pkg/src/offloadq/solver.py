"""Discounted value iteration and policy evaluation on the built kernel.

Sweeps are synchronous (Jacobi): each new table is computed from the
complete previous table, which keeps results independent of state order
and bit-reproducible.  Iteration starts from the all-zero table, so the
iterates increase pointwise toward the fixed point and the sup-norm
residual certifies the error bound ``alpha * residual / (1 - alpha)``.

Long runs (small ``1 - alpha``, large spaces) can be checkpointed to disk
and resumed; see :func:`save_checkpoint` for the layout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernel import N_ACTIONS, DiscountSpec, StateSpace, TransitionKernel, build_state_space
from .model import Action, ModelParams, derive_rates

# preference order used to resolve near-ties in the greedy argmin: assign
# aggressively, idle only when strictly better
TIE_EPS = 1e-10
_TIE_ORDER = (Action.SM1_THEN_SM2, Action.SM1, Action.SM2, Action.IDLE)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ValueTable:
    """Dense cost-to-go table plus convergence metadata."""

    values: np.ndarray
    discount: DiscountSpec
    iterations: int = 0
    residual: float = float("inf")
    converged: bool = False
    tol: float = float("nan")

    @property
    def error_bound(self) -> float:
        """Sup-norm distance to the fixed point implied by the last residual."""
        a = self.discount.alpha
        return a * self.residual / (1.0 - a)


@dataclass(frozen=True)
class PolicyTable:
    """One action per state id, stored as the Action integer codes."""

    actions: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int8))

    def validate(self, kernel: TransitionKernel) -> None:
        ok = kernel.admissible[self.actions, np.arange(kernel.space.size)]
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise ValueError(
                f"policy prescribes inadmissible action {Action(int(self.actions[bad]))!r} "
                f"in state {kernel.space.state_of(bad)}"
            )


def _values_of(v) -> np.ndarray:
    return v.values if isinstance(v, ValueTable) else np.asarray(v, dtype=float)


def q_table(kernel: TransitionKernel, values: np.ndarray) -> np.ndarray:
    """Action-value table of a value vector, one row per action; +inf on inadmissible pairs."""
    n = kernel.space.size
    if values.shape != (n,):
        raise ValueError(f"value table has shape {values.shape}, kernel expects ({n},)")
    return kernel.costs + kernel.discount.alpha * (kernel.probs @ values).reshape(N_ACTIONS, n)


def _greedy_of_q(kernel: TransitionKernel, q: np.ndarray, v_new: np.ndarray) -> np.ndarray:
    greedy = np.zeros(q.shape[1], dtype=np.int8)
    unset = np.ones(q.shape[1], dtype=bool)
    for a in _TIE_ORDER:
        hit = unset & kernel.admissible[int(a)] & (q[int(a)] <= v_new + TIE_EPS)
        greedy[hit] = int(a)
        unset &= ~hit
    return greedy


def bellman_backup(kernel: TransitionKernel, v) -> tuple[ValueTable, PolicyTable]:
    """One synchronous sweep of the optimality operator with greedy extraction."""
    values = _values_of(v)
    q = q_table(kernel, values)
    v_new = q.min(axis=0)
    residual = float(np.max(np.abs(v_new - values)))
    iterations = v.iterations + 1 if isinstance(v, ValueTable) else 1
    table = ValueTable(
        values=v_new,
        discount=kernel.discount,
        iterations=iterations,
        residual=residual,
        converged=False,
    )
    return table, PolicyTable(_greedy_of_q(kernel, q, v_new))


def value_iterate(
    kernel: TransitionKernel,
    tol: float = 1e-9,
    max_iters: int = 2_000_000,
    v0: ValueTable | None = None,
    checkpoint_path: str | None = None,
    checkpoint_every: int = 50_000,
    log_every: int = 0,
) -> tuple[ValueTable, PolicyTable]:
    """Iterate Bellman sweeps to a sup-norm residual of ``tol``.

    ``v0`` resumes from an earlier table (its iteration count carries
    over); the default start is the all-zero table.  Hitting ``max_iters``
    returns the last table with ``converged=False`` rather than raising.
    """
    if not tol > 0.0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    n = kernel.space.size
    if v0 is not None and v0.values.shape != (n,):
        raise ValueError(f"resume table has shape {v0.values.shape}, kernel expects ({n},)")
    values = np.zeros(n) if v0 is None else v0.values.astype(float, copy=True)
    done = 0 if v0 is None else v0.iterations
    residual = float("inf")
    converged = False
    t0 = time.monotonic()
    for k in range(max_iters):
        q = q_table(kernel, values)
        v_new = q.min(axis=0)
        residual = float(np.max(np.abs(v_new - values)))
        values = v_new
        done += 1
        if log_every and (k + 1) % log_every == 0:
            rate = done / max(time.monotonic() - t0, 1e-9)
            print(f"sweep {done}: residual {residual:.3e} ({rate:.0f} sweeps/s)")
        if checkpoint_path and checkpoint_every and (k + 1) % checkpoint_every == 0:
            save_checkpoint(
                checkpoint_path,
                ValueTable(values, kernel.discount, done, residual, False, tol),
                params=kernel.params,
                n_max=kernel.space.n_max,
            )
        if residual <= tol:
            converged = True
            break
    table = ValueTable(
        values=values,
        discount=kernel.discount,
        iterations=done,
        residual=residual,
        converged=converged,
        tol=tol,
    )
    q = q_table(kernel, values)
    policy = PolicyTable(_greedy_of_q(kernel, q, q.min(axis=0)))
    if checkpoint_path:
        save_checkpoint(checkpoint_path, table, policy, kernel.params, kernel.space.n_max)
    return table, policy


def _policy_system(kernel: TransitionKernel, pi: PolicyTable):
    n = kernel.space.size
    rows = pi.actions.astype(np.int64) * n + np.arange(n)
    p_pi = kernel.probs[rows]
    c_pi = kernel.costs[pi.actions, np.arange(n)]
    return p_pi, c_pi


def evaluate_policy(
    kernel: TransitionKernel,
    pi: PolicyTable,
    method: str = "iterative",
    tol: float = 1e-13,
    max_iters: int = 10_000_000,
    direct_size_limit: int = 10_000,
) -> ValueTable:
    """Discounted cost-to-go of a fixed policy.

    ``direct`` factors the linear system ``(I - alpha * P) V = c`` (refused
    above ``direct_size_limit`` states); ``iterative`` applies the policy's
    own backup until the residual drops below ``tol``.
    """
    pi.validate(kernel)
    p_pi, c_pi = _policy_system(kernel, pi)
    n = kernel.space.size
    alpha = kernel.discount.alpha
    if method == "direct":
        if n > direct_size_limit:
            raise ValueError(
                f"direct solve refused for {n} states (limit {direct_size_limit}); "
                "use method='iterative'"
            )
        system = sp.eye(n, format="csr") - alpha * p_pi
        values = spla.spsolve(system.tocsc(), c_pi)
        return ValueTable(values, kernel.discount, iterations=0, residual=0.0, converged=True)
    if method == "iterative":
        values = np.zeros(n)
        residual = float("inf")
        converged = False
        done = 0
        for _ in range(max_iters):
            v_new = c_pi + alpha * (p_pi @ values)
            residual = float(np.max(np.abs(v_new - values)))
            values = v_new
            done += 1
            if residual <= tol:
                converged = True
                break
        return ValueTable(values, kernel.discount, done, residual, converged, tol)
    raise ValueError(f"unknown evaluation method {method!r}")


def save_checkpoint(
    path: str,
    table: ValueTable,
    policy: PolicyTable | None = None,
    params: ModelParams | None = None,
    n_max: int | None = None,
) -> None:
    """Write a resumable solve artifact.

    Layout (npz, format 1): ``format_version``; the value table under
    ``values`` with scalars ``iterations``, ``residual``, ``converged``,
    ``tol``; the discount under ``nu``/``alpha``/``beta``; optionally the
    greedy policy under ``policy`` (Action codes), the model under
    ``lam``/``mu0``/``cloud_speedup``/``local_fraction``, and the queue
    cap under ``n_max``.
    """
    payload: dict[str, np.ndarray | float | int] = {
        "format_version": CHECKPOINT_FORMAT,
        "values": table.values,
        "iterations": table.iterations,
        "residual": table.residual,
        "converged": int(table.converged),
        "tol": table.tol,
        "nu": table.discount.nu,
        "alpha": table.discount.alpha,
        "beta": table.discount.beta,
    }
    if policy is not None:
        payload["policy"] = policy.actions
    if params is not None:
        payload["lam"] = params.lam
        payload["mu0"] = params.mu0
        payload["cloud_speedup"] = params.K
        payload["local_fraction"] = params.f
    if n_max is not None:
        payload["n_max"] = n_max
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


@dataclass(frozen=True)
class Checkpoint:
    table: ValueTable
    policy: PolicyTable | None
    params: ModelParams | None
    n_max: int | None

    def space(self) -> StateSpace:
        if self.n_max is None:
            raise ValueError("checkpoint does not record the queue cap")
        return build_state_space(self.n_max)


def load_checkpoint(path: str) -> Checkpoint:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {version}")
        discount = DiscountSpec(
            nu=float(data["nu"]), alpha=float(data["alpha"]), beta=float(data["beta"])
        )
        table = ValueTable(
            values=data["values"],
            discount=discount,
            iterations=int(data["iterations"]),
            residual=float(data["residual"]),
            converged=bool(data["converged"]),
            tol=float(data["tol"]),
        )
        policy = PolicyTable(data["policy"]) if "policy" in data else None
        params = None
        if "lam" in data:
            params = derive_rates(
                float(data["lam"]),
                float(data["mu0"]),
                float(data["cloud_speedup"]),
                float(data["local_fraction"]),
            )
        n_max = int(data["n_max"]) if "n_max" in data else None
    return Checkpoint(table=table, policy=policy, params=params, n_max=n_max)
