"""Structural verification of computed dispatching policies.

The optimal policy for this system is expected to (i) always start a full
offload when the cloud is completely free ("cloud-first"), (ii) use split
execution in an upward-closed region of the (n0, n2) lattice
("switch-type"), which admits a per-slice threshold representation with
thresholds non-increasing in the cloud queue length, and (iii) never be
more eager to act in a state than in the same state with one extra queued
job ("urgency monotonicity").  This module checks those statements
mechanically on a policy table and extracts the threshold profile, plus
two value-table gap measurements that back the comparison arguments.

Truncation distorts decisions near the queue caps, so every check runs on
the interior region only: states whose queue content n0 + n2 is at most
``n_max - margin``.  Bounding the total rather than each component keeps
the deep corner of the index box out of scope — there both queues hold up
to twice the buffer limit, blocked arrivals make idling artificially
attractive, and the computed policy genuinely deviates from the
infinite-space structure.

A solved table only pins action preferences down to its numerical
resolution, and in large indifference regions (for example, committing a
job to the full-offload slot while the cloud is busy with split work is
worth essentially nothing either way) the recorded action is an artifact
of deterministic tie-breaking.  When the transition kernel is supplied
alongside the values, each check therefore measures the action-value
margins behind a candidate violation and reports it as indeterminate
rather than failed unless the competing action families are separated by
more than the value-accuracy floor ``alpha / (1 - alpha) * residual`` at
every state involved.  Checks never raise on failure; violations are
returned as counterexample lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kernel import StateSpace, TransitionKernel
from .model import Action
from .solver import TIE_EPS, PolicyTable, ValueTable, q_table

SCHEMA_VERSION = 1

# actions that put a job on the split path, directly or as part of the
# composite double assignment
_ASSIGNS_SM2 = (int(Action.SM2), int(Action.SM1_THEN_SM2))
_CLOUD_FIRST_OK = (int(Action.SM1), int(Action.SM1_THEN_SM2))


def _action_name(code: int) -> str:
    return Action(int(code)).name.lower()


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one structural check over the interior region.

    ``indeterminate`` counts candidate violations whose action-value
    margins fall below the decision floor; they neither pass nor fail.
    """

    name: str
    passed: bool
    checked: int
    counterexamples: tuple = ()
    indeterminate: int = 0

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "checked": self.checked,
            "counterexamples": [list(c) for c in self.counterexamples],
            "indeterminate": self.indeterminate,
        }


@dataclass(frozen=True)
class ThresholdProfile:
    """Per-slice minimal base-queue lengths beyond which SM2 is always used.

    ``sm1_busy[k]`` is the threshold on the slice (n0, 0, 1, k) — a full
    offload in service at the cloud and k split jobs queued there;
    ``sm1_free[k]`` (k >= 1) covers the slice (n0, 0, 0, k).  Entries use
    the "for all larger n0" form, so they are well defined even for
    non-monotone policies.  ``None`` means no threshold was witnessed on
    the slice; with ``cap`` recorded, that only proves the threshold
    exceeds the slice top ``cap - k``.
    """

    sm1_busy: dict[int, int | None] = field(default_factory=dict)
    sm1_free: dict[int, int | None] = field(default_factory=dict)
    cap: int | None = None

    def _non_increasing(self, seq: dict[int, int | None]) -> bool:
        bound = float("inf")
        for k in sorted(seq):
            t = seq[k]
            if t is None:
                # unwitnessed: the threshold exceeds the slice top (when
                # the cap is known) or does not exist at all; only a
                # provable excess over the running bound is a violation
                if self.cap is None:
                    if bound < float("inf"):
                        return False
                elif self.cap - k >= bound:
                    return False
                continue
            if t > bound:
                return False
            bound = t
        return True

    def non_increasing(self) -> bool:
        """No witnessed increase of the threshold in k, in either family."""
        return self._non_increasing(self.sm1_busy) and self._non_increasing(self.sm1_free)

    def to_json_dict(self) -> dict:
        return {
            "sm1_busy": {str(k): v for k, v in sorted(self.sm1_busy.items())},
            "sm1_free": {str(k): v for k, v in sorted(self.sm1_free.items())},
            "cap": self.cap,
        }


def profile_leq(a: ThresholdProfile, b: ThresholdProfile) -> bool:
    """Element-wise a <= b over shared slices, treating missing thresholds as infinite."""

    def leq(x: dict[int, int | None], y: dict[int, int | None]) -> bool:
        for k in set(x) & set(y):
            xv = float("inf") if x[k] is None else x[k]
            yv = float("inf") if y[k] is None else y[k]
            if xv > yv:
                return False
        return True

    return leq(a.sm1_busy, b.sm1_busy) and leq(a.sm1_free, b.sm1_free)


@dataclass(frozen=True)
class ValueGaps:
    """Minimum observed gaps for the two value-table inequalities.

    ``min_cloud_mode_gap`` is the minimum over interior n0 >= 1 of
    V(n0,0,1,0) - V(n0,0,0,1): holding a full-offload job at the cloud
    should cost at least as much as holding a split job there.
    ``min_arrival_gap`` is the minimum over interior states of
    V(state with one more queued job) - V(state): values should grow with
    queue length.
    """

    min_cloud_mode_gap: float
    min_arrival_gap: float
    checked: int

    def to_json_dict(self) -> dict:
        return {
            "min_cloud_mode_gap": self.min_cloud_mode_gap,
            "min_arrival_gap": self.min_arrival_gap,
            "checked": self.checked,
        }


def _interior_cap(space: StateSpace, margin: int) -> int:
    if margin < 0:
        raise ValueError(f"margin must be nonnegative, got {margin}")
    return space.n_max - margin


def _acting_advantage(q: np.ndarray) -> np.ndarray:
    """Per state, how much cheaper the best non-idle action is than idling."""
    return q[0] - np.minimum(np.minimum(q[1], q[2]), q[3])


def _assign_advantage(q: np.ndarray) -> np.ndarray:
    """Per state, how much cheaper the best split-assigning action is than not assigning."""
    return np.minimum(q[0], q[1]) - np.minimum(q[2], q[3])


def check_cloud_first(
    pi: PolicyTable,
    space: StateSpace,
    margin: int = 5,
    q: np.ndarray | None = None,
    floor: float = 0.0,
) -> CheckResult:
    """Full offload must be started whenever the cloud is completely free."""
    cap = _interior_cap(space, margin)
    acts = pi.actions
    bad = []
    checked = 0
    indeterminate = 0
    for i2 in (0, 1):
        for n0 in range(1, cap + 1):
            sid = space.id_of(n0, i2, 0, 0)
            checked += 1
            if int(acts[sid]) in _CLOUD_FIRST_OK:
                continue
            if q is not None:
                offload = min(q[1, sid], q[3, sid])
                keep = min(q[0, sid], q[2, sid])
                if abs(keep - offload) <= floor:
                    indeterminate += 1
                    continue
            bad.append(((n0, i2, 0, 0), _action_name(acts[sid])))
    return CheckResult("cloud_first", not bad, checked, tuple(bad), indeterminate)


def check_switch_type(
    pi: PolicyTable,
    space: StateSpace,
    margin: int = 5,
    q: np.ndarray | None = None,
    floor: float = 0.0,
) -> CheckResult:
    """The split-assignment region must be upward closed in (n0, n2).

    Unit steps suffice: violations of larger shifts always contain a
    violating unit step on the path between the two states.
    """
    cap = _interior_cap(space, margin)
    acts = np.asarray(pi.actions)
    assigns = np.isin(acts, _ASSIGNS_SM2)
    adv = None if q is None else _assign_advantage(q)
    # source and its +1 neighbour must both be interior: n0 + n2 < cap
    room = space.n0 + space.n2 + 1 <= cap
    stride_n0 = 4 * (space.n_max + 1)
    bad = []
    checked = 0
    indeterminate = 0
    for stride in (stride_n0, 1):
        src = np.flatnonzero(assigns & room)
        checked += src.size
        broken = src[~assigns[src + stride]]
        if adv is not None:
            # a real hole needs both ends strictly decided
            strict = (np.abs(adv[broken]) > floor) & (np.abs(adv[broken + stride]) > floor)
            indeterminate += int(broken.size - strict.sum())
            broken = broken[strict]
        for sid in broken:
            bad.append(
                (
                    space.state_of(int(sid)),
                    space.state_of(int(sid + stride)),
                    _action_name(acts[sid]),
                    _action_name(acts[sid + stride]),
                )
            )
    bad.sort()
    return CheckResult("switch_type", not bad, checked, tuple(bad), indeterminate)


def extract_thresholds(pi: PolicyTable, space: StateSpace, margin: int = 5) -> ThresholdProfile:
    """Per-slice thresholds for the use of split execution.

    For each cloud-queue length k, the threshold is the smallest n0 in the
    interior (n0 + k <= cap) such that every interior state with at least
    that many queued jobs on the slice assigns SM2 (composite included).
    """
    cap = _interior_cap(space, margin)
    if cap < 1:
        return ThresholdProfile()
    acts = np.asarray(pi.actions)
    assigns = np.isin(acts, _ASSIGNS_SM2)

    def slice_threshold(i1: int, k: int) -> int | None:
        top = cap - k
        sids = space.ids_of(np.arange(1, top + 1), 0, i1, k)
        b = assigns[sids]
        if not b[-1]:
            return None
        # length of the trailing all-True run
        run = int(np.argmin(b[::-1])) if not b.all() else b.size
        return top - run + 1

    sm1_busy = {k: slice_threshold(1, k) for k in range(0, cap)}
    sm1_free = {k: slice_threshold(0, k) for k in range(1, cap)}
    return ThresholdProfile(sm1_busy=sm1_busy, sm1_free=sm1_free, cap=cap)


def reconstruct_sm2_region(
    profile: ThresholdProfile, space: StateSpace, margin: int = 5
) -> np.ndarray:
    """Boolean mask over state ids: SM2 assigned according to the thresholds.

    Covers exactly the slices the profile describes; states outside them
    (local slot busy, or the all-free slice n2 = 0, i1 = 0) are False.
    """
    cap = _interior_cap(space, margin)
    mask = np.zeros(space.size, dtype=bool)
    for family, i1 in ((profile.sm1_busy, 1), (profile.sm1_free, 0)):
        for k, thr in family.items():
            if thr is None:
                continue
            sids = space.ids_of(np.arange(thr, cap - k + 1), 0, i1, k)
            mask[sids] = True
    return mask


def check_urgency_monotonicity(
    pi: PolicyTable,
    space: StateSpace,
    margin: int = 5,
    q: np.ndarray | None = None,
    floor: float = 0.0,
) -> CheckResult:
    """Idling with an extra queued job implies idling without it."""
    cap = _interior_cap(space, margin)
    acts = np.asarray(pi.actions)
    stride_n0 = 4 * (space.n_max + 1)
    src = np.flatnonzero(space.n0 + space.n2 + 1 <= cap)
    idle_up = acts[src + stride_n0] == int(Action.IDLE)
    busy_here = acts[src] != int(Action.IDLE)
    broken = src[idle_up & busy_here]
    indeterminate = 0
    if q is not None:
        adv = _acting_advantage(q)
        strict = (np.abs(adv[broken]) > floor) & (np.abs(adv[broken + stride_n0]) > floor)
        indeterminate = int(broken.size - strict.sum())
        broken = broken[strict]
    bad = []
    for sid in broken:
        bad.append(
            (
                space.state_of(int(sid)),
                _action_name(acts[sid]),
                space.state_of(int(sid + stride_n0)),
            )
        )
    bad.sort()
    return CheckResult("urgency_monotonicity", not bad, int(src.size), tuple(bad), indeterminate)


def check_value_inequalities(
    v: ValueTable, space: StateSpace, margin: int = 5
) -> ValueGaps:
    """Minimum gaps of the two comparison inequalities on a solved table."""
    cap = _interior_cap(space, margin)
    values = v.values
    # the (n,0,0,1) partner holds n + 1 jobs, so stop one short of the cap
    ns = np.arange(1, cap)
    mode_gap = values[space.ids_of(ns, 0, 1, 0)] - values[space.ids_of(ns, 0, 0, 1)]
    stride_n0 = 4 * (space.n_max + 1)
    src = np.flatnonzero(space.n0 + space.n2 + 1 <= cap)
    arrival_gap = values[src + stride_n0] - values[src]
    return ValueGaps(
        min_cloud_mode_gap=float(mode_gap.min()) if mode_gap.size else float("nan"),
        min_arrival_gap=float(arrival_gap.min()) if arrival_gap.size else float("nan"),
        checked=int(ns.size + src.size),
    )


@dataclass(frozen=True)
class StructureReport:
    """All structural checks for one policy (and optionally its value table)."""

    n_max: int
    margin: int
    cloud_first: CheckResult
    switch_type: CheckResult
    urgency_monotone: CheckResult
    thresholds: ThresholdProfile
    thresholds_non_increasing: bool
    value_gaps: ValueGaps | None = None
    decision_floor: float = 0.0

    # tolerance on the arrival-monotonicity gap: non-strict inequality up
    # to solver residual noise
    ARRIVAL_GAP_SLACK = 1e-9

    def all_passed(self) -> bool:
        ok = (
            self.cloud_first.passed
            and self.switch_type.passed
            and self.urgency_monotone.passed
            and self.thresholds_non_increasing
        )
        if self.value_gaps is not None:
            ok = ok and self.value_gaps.min_cloud_mode_gap > 0.0
            ok = ok and self.value_gaps.min_arrival_gap >= -self.ARRIVAL_GAP_SLACK
        return ok

    def to_json_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "n_max": self.n_max,
            "margin": self.margin,
            "decision_floor": self.decision_floor,
            "cloud_first": self.cloud_first.to_json_dict(),
            "switch_type": self.switch_type.to_json_dict(),
            "urgency_monotonicity": self.urgency_monotone.to_json_dict(),
            "thresholds": self.thresholds.to_json_dict(),
            "thresholds_non_increasing": self.thresholds_non_increasing,
            "value_gaps": None if self.value_gaps is None else self.value_gaps.to_json_dict(),
            "all_passed": self.all_passed(),
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        def verdict(ok: bool) -> str:
            return "PASS" if ok else "FAIL"

        def ties(result: CheckResult) -> str:
            return f", {result.indeterminate} indeterminate" if result.indeterminate else ""

        lines = [
            f"queue cap          : {self.n_max}",
            f"boundary margin    : {self.margin}",
            f"decision floor     : {self.decision_floor:.3e}",
            f"cloud_first        : {verdict(self.cloud_first.passed)}"
            f" ({self.cloud_first.checked} states{ties(self.cloud_first)})",
            f"switch_type        : {verdict(self.switch_type.passed)}"
            f" ({self.switch_type.checked} steps{ties(self.switch_type)})",
            f"urgency_monotone   : {verdict(self.urgency_monotone.passed)}"
            f" ({self.urgency_monotone.checked} states{ties(self.urgency_monotone)})",
            f"thresholds_monotone: {verdict(self.thresholds_non_increasing)}",
        ]
        for result in (self.cloud_first, self.switch_type, self.urgency_monotone):
            for ce in result.counterexamples[:10]:
                lines.append(f"  counterexample {result.name}: {ce}")
            if len(result.counterexamples) > 10:
                lines.append(
                    f"  ... {len(result.counterexamples) - 10} more {result.name} counterexamples"
                )
        if self.value_gaps is not None:
            g = self.value_gaps
            lines.append(
                f"value gaps         : cloud-mode min {g.min_cloud_mode_gap:.6e}"
                f" ({verdict(g.min_cloud_mode_gap > 0.0)}),"
                f" arrival min {g.min_arrival_gap:.6e}"
                f" ({verdict(g.min_arrival_gap >= -self.ARRIVAL_GAP_SLACK)})"
            )
        lines.append(f"overall            : {verdict(self.all_passed())}")
        return "\n".join(lines) + "\n"


def run_structure_checks(
    pi: PolicyTable,
    space: StateSpace,
    margin: int = 5,
    values: ValueTable | None = None,
    kernel: TransitionKernel | None = None,
    decision_floor: float | None = None,
) -> StructureReport:
    """Run every check and assemble the report.

    With ``kernel`` (which requires ``values``), candidate violations are
    screened against the action-value margins: pairs decided by less than
    the floor — ``alpha / (1 - alpha) * residual`` unless overridden — are
    indeterminate tie-breaking artifacts, not failures.
    """
    q = None
    floor = 0.0
    if kernel is not None:
        if values is None:
            raise ValueError("margin screening needs the solved value table")
        q = q_table(kernel, values.values)
        if decision_floor is None:
            alpha = kernel.discount.alpha
            amplification = alpha / (1.0 - alpha)
            res = values.residual
            floor = max(TIE_EPS, amplification * res) if np.isfinite(res) else TIE_EPS
        else:
            floor = decision_floor
    thresholds = extract_thresholds(pi, space, margin)
    return StructureReport(
        n_max=space.n_max,
        margin=margin,
        cloud_first=check_cloud_first(pi, space, margin, q, floor),
        switch_type=check_switch_type(pi, space, margin, q, floor),
        urgency_monotone=check_urgency_monotonicity(pi, space, margin, q, floor),
        thresholds=thresholds,
        thresholds_non_increasing=thresholds.non_increasing(),
        value_gaps=None if values is None else check_value_inequalities(values, space, margin),
        decision_floor=floor,
    )
