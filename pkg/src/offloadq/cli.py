"""Command-line front end: solve, inspect, and simulate dispatching policies.

Subcommands: ``solve`` (value iteration to artifacts), ``grid`` (policy
slice as CSV), ``analyze`` (structure checks on a solved artifact),
``simulate`` (delay estimate for one policy), ``sweep`` (delay vs
utilization CSV across policies), ``couple`` (paired comparison of two
policies on shared randomness).

Configuration is one JSON document with ``model``, ``solver``, ``sim``
and ``output`` blocks; every CLI flag overrides the corresponding file
value.  The model block needs exactly one of rho/lambda and exactly one
rate parameterization, (mu0, K, f) or (mu_c1, mu_l2, mu_c2); the solver
block accepts at most one of alpha/beta (required when a command has to
solve).  The output directory resolves flag, then the OFFLOADQ_OUT_DIR
environment variable, then the config file, then the working directory.

All CSV output is byte-stable for fixed inputs: fixed column order,
numbers at 9 significant digits, lines terminated with "\\n".  JSON
reports carry a ``schema_version`` field.  Exit codes: 0 success (and
all checks passed), 1 usage or configuration error, 2 structure-check
failure, 3 solver non-convergence (artifacts are still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernel import DiscountSpec, build_kernel, build_state_space, uniformization_rate
from .model import (
    Action,
    ModelParams,
    derive_rates,
    from_heterogeneous,
    lambda_from_utilization,
)
from .simulator import (
    SimConfig,
    SimulationError,
    TablePolicy,
    baseline,
    coupled_compare,
    simulate,
)
from .solver import load_checkpoint, save_checkpoint, value_iterate
from .structure import run_structure_checks

SCHEMA_VERSION = 1
ENV_OUT_DIR = "OFFLOADQ_OUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK = 2
EXIT_NO_CONVERGENCE = 3

DEFAULT_SWEEP_RHOS = tuple(round(0.1 * k, 1) for k in range(1, 10))
DEFAULT_SWEEP_POLICIES = ("optimal", "offload_only", "non_idling")

# grid CSV alphabet: idle 0, full offload 1, split 2; the composite keeps
# code 1 and raises the companion flag instead
_GRID_ACTION = {0: 0, 1: 1, 2: 2, 3: 1}


class ConfigError(ValueError):
    """Invalid configuration or command usage."""


def _fmt(x: float) -> str:
    return "%.9g" % float(x)


def _write_csv(path: Path, header: tuple, rows: list) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration for one command invocation."""

    params: ModelParams
    rho: float | None
    n_max: int
    alpha: float | None
    beta: float | None
    tol: float
    max_iters: int
    margin: int
    horizon: float
    warmup: float | None
    replications: int
    seed: int
    out_dir: Path

    def discount_for(self, params: ModelParams) -> DiscountSpec:
        nu = uniformization_rate(params)
        if self.alpha is not None:
            return DiscountSpec.from_alpha(nu, self.alpha)
        if self.beta is not None:
            return DiscountSpec.from_beta(nu, self.beta)
        raise ConfigError("solving requires alpha or beta in the solver block")

    def sim_config(self) -> SimConfig:
        return SimConfig(
            horizon=self.horizon,
            warmup=self.warmup,
            replications=self.replications,
            seed=self.seed,
        )

    def model_dict(self) -> dict:
        p = self.params
        return {
            "lam": p.lam,
            "mu0": p.mu0,
            "K": p.K,
            "f": p.f,
            "mu_c1": p.mu_c1,
            "mu_l2": p.mu_l2,
            "mu_c2": p.mu_c2,
            "utilization": p.utilization,
            "rho": self.rho,
        }

    def sim_dict(self) -> dict:
        cfg = self.sim_config()
        return {
            "horizon": cfg.horizon,
            "warmup": cfg.warmup,
            "replications": cfg.replications,
            "seed": cfg.seed,
        }


def _load_blocks(config_path: str | None) -> tuple[dict, dict, dict, dict]:
    if config_path is None:
        return {}, {}, {}, {}
    try:
        raw = json.loads(Path(config_path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    blocks = []
    for name in ("model", "solver", "sim", "output"):
        block = raw.get(name, {})
        if not isinstance(block, dict):
            raise ConfigError(f"config block {name!r} must be a JSON object")
        blocks.append(dict(block))
    model = blocks[0]
    if "lambda" in model:
        model["lam"] = model.pop("lambda")
    return tuple(blocks)


_SIMPLE_RATES = ("mu0", "K", "f")
_HETERO_RATES = ("mu_c1", "mu_l2", "mu_c2")


def _apply_overrides(args, model: dict, solver: dict, sim: dict) -> None:
    """Fold CLI flags into the config blocks; a flag replaces its counterpart."""
    if getattr(args, "rho", None) is not None and getattr(args, "lam", None) is None:
        model.pop("lam", None)
    if getattr(args, "lam", None) is not None and getattr(args, "rho", None) is None:
        model.pop("rho", None)
    flagged_simple = any(getattr(args, k, None) is not None for k in _SIMPLE_RATES)
    flagged_hetero = any(getattr(args, k, None) is not None for k in _HETERO_RATES)
    if flagged_simple and not flagged_hetero:
        for k in _HETERO_RATES:
            model.pop(k, None)
    if flagged_hetero and not flagged_simple:
        for k in _SIMPLE_RATES:
            model.pop(k, None)
    if getattr(args, "alpha", None) is not None and getattr(args, "beta", None) is None:
        solver.pop("beta", None)
    if getattr(args, "beta", None) is not None and getattr(args, "alpha", None) is None:
        solver.pop("alpha", None)

    for key in ("rho", "lam", *_SIMPLE_RATES, *_HETERO_RATES):
        value = getattr(args, key, None)
        if value is not None:
            model[key] = value
    for key in ("n_max", "alpha", "beta", "tol", "max_iters", "margin"):
        value = getattr(args, key, None)
        if value is not None:
            solver[key] = value
    for key in ("horizon", "warmup", "replications", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            sim[key] = value


def _parse_rates(model: dict) -> tuple[float, float, float]:
    has_simple = [k for k in _SIMPLE_RATES if k in model]
    has_hetero = [k for k in _HETERO_RATES if k in model]
    if has_simple and has_hetero:
        raise ConfigError(
            "model block mixes (mu0, K, f) with (mu_c1, mu_l2, mu_c2); pick one"
        )
    if has_simple:
        if len(has_simple) < 3:
            missing = sorted(set(_SIMPLE_RATES) - set(has_simple))
            raise ConfigError(f"model block is missing {', '.join(missing)}")
        return float(model["mu0"]), float(model["K"]), float(model["f"])
    if has_hetero:
        if len(has_hetero) < 3:
            missing = sorted(set(_HETERO_RATES) - set(has_hetero))
            raise ConfigError(f"model block is missing {', '.join(missing)}")
        return from_heterogeneous(
            float(model["mu_c1"]), float(model["mu_l2"]), float(model["mu_c2"])
        )
    raise ConfigError(
        "model block must provide (mu0, K, f) or (mu_c1, mu_l2, mu_c2)"
    )


def _resolve_out_dir(args, output: dict) -> Path:
    if getattr(args, "out_dir", None) is not None:
        return Path(args.out_dir)
    env = os.environ.get(ENV_OUT_DIR)
    if env:
        return Path(env)
    if "out_dir" in output:
        return Path(output["out_dir"])
    return Path(".")


def _run_config(args, allow_missing_rate: bool = False) -> RunConfig:
    model, solver, sim, output = _load_blocks(getattr(args, "config", None))
    _apply_overrides(args, model, solver, sim)

    try:
        mu0, K, f = _parse_rates(model)
        has_rho = "rho" in model
        has_lam = "lam" in model
        rho = None
        if has_rho and has_lam:
            raise ConfigError("model block must provide exactly one of rho, lambda")
        if has_rho:
            rho = float(model["rho"])
            lam = lambda_from_utilization(rho, mu0, K)
        elif has_lam:
            lam = float(model["lam"])
            rho = lam / ((K + 1.0) * mu0)
        elif allow_missing_rate:
            lam = 0.0
        else:
            raise ConfigError("model block must provide exactly one of rho, lambda")
        params = derive_rates(lam, mu0, K, f)

        if "alpha" in solver and "beta" in solver:
            raise ConfigError("solver block must provide at most one of alpha, beta")
        alpha = float(solver["alpha"]) if "alpha" in solver else None
        beta = float(solver["beta"]) if "beta" in solver else None

        return RunConfig(
            params=params,
            rho=rho,
            n_max=int(solver.get("n_max", 60)),
            alpha=alpha,
            beta=beta,
            tol=float(solver.get("tol", 1e-9)),
            max_iters=int(solver.get("max_iters", 2_000_000)),
            margin=int(solver.get("margin", 5)),
            horizon=float(sim.get("horizon", 1e5)),
            warmup=None if sim.get("warmup") is None else float(sim["warmup"]),
            replications=int(sim.get("replications", 20)),
            seed=int(sim.get("seed", 12345)),
            out_dir=_resolve_out_dir(args, output),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ------------------------------------------------------------------ solving


def _solve(params: ModelParams, cfg: RunConfig):
    space = build_state_space(cfg.n_max)
    kernel = build_kernel(params, space, cfg.discount_for(params))
    table, policy = value_iterate(kernel, tol=cfg.tol, max_iters=cfg.max_iters)
    return space, table, policy


def _resolve_policy(spec: str, cfg: RunConfig, cache: dict):
    """A policy argument is a baseline name, 'optimal', or an artifact path."""
    if spec in cache:
        return cache[spec]
    if spec == "optimal":
        _, table, policy = _solve(cfg.params, cfg)
        if not table.converged:
            raise ConfigError(
                f"value iteration did not converge within {cfg.max_iters} sweeps"
            )
        resolved = TablePolicy(policy.actions, cfg.n_max)
    else:
        try:
            resolved = baseline(spec)
        except ValueError:
            if not Path(spec).exists():
                raise ConfigError(
                    f"unknown policy {spec!r}: use 'optimal', a baseline name, "
                    "or a solution artifact path"
                ) from None
            ck = load_checkpoint(spec)
            if ck.policy is None or ck.n_max is None:
                raise ConfigError(f"artifact {spec} lacks a stored policy table")
            resolved = TablePolicy(ck.policy.actions, ck.n_max)
    cache[spec] = resolved
    return resolved


# -------------------------------------------------------------- subcommands


def cmd_solve(args) -> int:
    cfg = _run_config(args)
    cfg.discount_for(cfg.params)  # fail before the long run if unset
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    space, table, policy = _solve(cfg.params, cfg)
    solution = cfg.out_dir / "solution.npz"
    save_checkpoint(str(solution), table, policy, cfg.params, cfg.n_max)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "status": "converged" if table.converged else "not_converged",
        "iterations": table.iterations,
        "residual": table.residual,
        "error_bound": table.error_bound,
        "tol": table.tol,
        "n_max": cfg.n_max,
        "margin": cfg.margin,
        "states": space.size,
        "nu": table.discount.nu,
        "alpha": table.discount.alpha,
        "beta": table.discount.beta,
        "model": cfg.model_dict(),
        "artifacts": {"solution": solution.name},
    }
    _write_json(cfg.out_dir / "solution.json", meta)
    print(
        f"{meta['status']}: {table.iterations} sweeps, residual {table.residual:.3e}, "
        f"artifacts in {cfg.out_dir}"
    )
    return EXIT_OK if table.converged else EXIT_NO_CONVERGENCE


def cmd_grid(args) -> int:
    ck = load_checkpoint(args.solution)
    if ck.policy is None or ck.n_max is None:
        raise ConfigError(f"artifact {args.solution} lacks a stored policy table")
    space = ck.space()
    acts = ck.policy.actions
    rows = []
    for n0 in range(1, space.n_max + 1):
        for n2 in range(0, space.n_max + 1):
            a = int(acts[space.id_of(n0, args.i2, args.i1, n2)])
            rows.append((str(n0), str(n2), str(_GRID_ACTION[a]), str(int(a == 3))))
    out_dir = _resolve_out_dir(args, {})
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(args.out) if args.out else out_dir / f"grid_i2{args.i2}_i1{args.i1}.csv"
    _write_csv(path, ("n0", "n2", "action", "also_sm2"), rows)
    print(f"wrote {path} ({len(rows)} states)")
    return EXIT_OK


def cmd_analyze(args) -> int:
    ck = load_checkpoint(args.solution)
    if ck.policy is None or ck.n_max is None:
        raise ConfigError(f"artifact {args.solution} lacks a stored policy table")
    space = ck.space()
    # with the stored model the checks can screen violations against their
    # action-value margins instead of trusting tie-broken actions verbatim
    kernel = None
    if ck.params is not None:
        kernel = build_kernel(ck.params, space, ck.table.discount)
    report = run_structure_checks(
        ck.policy, space, margin=args.margin, values=ck.table, kernel=kernel
    )
    out_dir = _resolve_out_dir(args, {})
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "structure.json").write_text(report.to_json() + "\n")
    (out_dir / "structure.txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())
    return EXIT_OK if report.all_passed() else EXIT_CHECK


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    policy = _resolve_policy(args.policy, cfg, {})
    report = simulate(policy, cfg.params, cfg.sim_config())
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "policy": args.policy,
        "model": cfg.model_dict(),
        "sim": cfg.sim_dict(),
        "report": report.to_json_dict(),
    }
    _write_json(cfg.out_dir / "simulation.json", payload)
    print(
        f"{args.policy}: mean sojourn {_fmt(report.mean_sojourn)} "
        f"+- {_fmt(report.ci_halfwidth)}, time-avg jobs {_fmt(report.time_avg_jobs)}, "
        f"{report.jobs_completed} completions"
    )
    return EXIT_OK


def _policy_stable(name: str, rho: float, params: ModelParams) -> bool:
    # pure offloading saturates once arrivals outpace the full-offload
    # server; every splitting policy can hold out to total capacity
    if name == "offload_only":
        return params.lam < params.mu_c1
    return rho < 1.0


def cmd_sweep(args) -> int:
    cfg = _run_config(args, allow_missing_rate=True)
    rhos = [float(tok) for tok in args.rhos.split(",") if tok.strip()]
    policies = [tok.strip() for tok in args.policies.split(",") if tok.strip()]
    if not rhos or not policies:
        raise ConfigError("sweep needs at least one rho and one policy")
    if "optimal" in policies:
        cfg.discount_for(cfg.params)  # fail before the long run if unset
    rows = []
    for rho in rhos:
        lam = lambda_from_utilization(rho, cfg.params.mu0, cfg.params.K)
        params = derive_rates(lam, cfg.params.mu0, cfg.params.K, cfg.params.f)
        table_policy = None
        if "optimal" in policies and _policy_stable("optimal", rho, params):
            _, table, policy = _solve(params, cfg)
            if not table.converged:
                print(
                    f"error: value iteration did not converge at rho={rho:g}",
                    file=sys.stderr,
                )
                return EXIT_NO_CONVERGENCE
            table_policy = TablePolicy(policy.actions, cfg.n_max)
        for name in policies:
            if not _policy_stable(name, rho, params):
                rows.append((_fmt(rho), name, "", "", "", "unstable"))
                print(f"rho={rho:g} {name}: unstable")
                continue
            policy = table_policy if name == "optimal" else baseline(name)
            report = simulate(policy, params, cfg.sim_config())
            rows.append(
                (
                    _fmt(rho),
                    name,
                    _fmt(report.mean_sojourn),
                    _fmt(report.ci_halfwidth),
                    _fmt(report.time_avg_jobs),
                    "ok",
                )
            )
            print(
                f"rho={rho:g} {name}: mean {_fmt(report.mean_sojourn)} "
                f"+- {_fmt(report.ci_halfwidth)}"
            )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "sweep.csv"
    _write_csv(
        path, ("rho", "policy", "mean_delay", "ci_halfwidth", "avg_jobs", "status"), rows
    )
    print(f"wrote {path}")
    return EXIT_OK


def cmd_couple(args) -> int:
    cfg = _run_config(args)
    cache: dict = {}
    policy_a = _resolve_policy(args.policy_a, cfg, cache)
    policy_b = _resolve_policy(args.policy_b, cfg, cache)
    report = coupled_compare(policy_a, policy_b, cfg.params, cfg.sim_config())
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "policy_a": args.policy_a,
        "policy_b": args.policy_b,
        "model": cfg.model_dict(),
        "sim": cfg.sim_dict(),
        "report": report.to_json_dict(),
    }
    _write_json(cfg.out_dir / "couple.json", payload)
    print(
        f"mean sojourn difference (B - A): {_fmt(report.diff_mean)} "
        f"+- {_fmt(report.diff_ci_halfwidth)}; "
        f"dominance fraction {_fmt(report.dominance_fraction)}"
    )
    return EXIT_OK


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_model_flags(sub) -> None:
    sub.add_argument("--config", help="JSON config file (model/solver/sim/output)")
    g = sub.add_argument_group("model overrides")
    g.add_argument("--rho", type=float, help="utilization lambda/((K+1) mu0)")
    g.add_argument("--lam", type=float, help="arrival rate")
    g.add_argument("--mu0", type=float, help="local service rate scale")
    g.add_argument("--K", type=float, help="cloud speedup factor (> 1)")
    g.add_argument("--f", type=float, help="local fraction of split work (0, 1)")
    g.add_argument("--mu-c1", dest="mu_c1", type=float, help="full offload rate")
    g.add_argument("--mu-l2", dest="mu_l2", type=float, help="local phase rate")
    g.add_argument("--mu-c2", dest="mu_c2", type=float, help="split remainder rate")


def _add_solver_flags(sub) -> None:
    g = sub.add_argument_group("solver overrides")
    g.add_argument("--n-max", dest="n_max", type=int, help="queue cap (default 60)")
    g.add_argument("--alpha", type=float, help="discount factor in (0, 1)")
    g.add_argument("--beta", type=float, help="continuous-time discount rate")
    g.add_argument("--tol", type=float, help="sup-norm residual target")
    g.add_argument("--max-iters", dest="max_iters", type=int, help="sweep budget")
    g.add_argument("--margin", type=int, help="boundary margin for checks")


def _add_sim_flags(sub) -> None:
    g = sub.add_argument_group("simulation overrides")
    g.add_argument("--horizon", type=float, help="simulated time per replication")
    g.add_argument("--warmup", type=float, help="statistics exclusion prefix")
    g.add_argument("--replications", type=int, help="independent replications")
    g.add_argument("--seed", type=int, help="master seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="offloadq",
        description="Solve and simulate two-mode computation-offloading policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run value iteration and write artifacts")
    _add_model_flags(p)
    _add_solver_flags(p)
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("grid", help="dump a policy slice as CSV")
    p.add_argument("--solution", required=True, help="solution artifact (.npz)")
    p.add_argument("--i2", type=int, choices=(0, 1), required=True,
                   help="local slot occupancy of the slice")
    p.add_argument("--i1", type=int, choices=(0, 1), required=True,
                   help="full-offload slot occupancy of the slice")
    p.add_argument("--out", help="CSV path (default grid_i2<i2>_i1<i1>.csv)")
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory")
    p.set_defaults(handler=cmd_grid)

    p = sub.add_parser("analyze", help="run structure checks on a solved artifact")
    p.add_argument("--solution", required=True, help="solution artifact (.npz)")
    p.add_argument("--margin", type=int, default=5, help="boundary margin")
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("simulate", help="estimate delay for one policy")
    _add_model_flags(p)
    _add_solver_flags(p)
    _add_sim_flags(p)
    p.add_argument("--policy", required=True,
                   help="'optimal', a baseline name, or a solution artifact")
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("sweep", help="delay vs utilization for several policies")
    _add_model_flags(p)
    _add_solver_flags(p)
    _add_sim_flags(p)
    p.add_argument("--rhos", default=",".join(str(r) for r in DEFAULT_SWEEP_RHOS),
                   help="comma-separated utilization values")
    p.add_argument("--policies", default=",".join(DEFAULT_SWEEP_POLICIES),
                   help="comma-separated policy names")
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("couple", help="paired comparison on shared randomness")
    _add_model_flags(p)
    _add_solver_flags(p)
    _add_sim_flags(p)
    p.add_argument("--policy-a", dest="policy_a", required=True)
    p.add_argument("--policy-b", dest="policy_b", required=True)
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory")
    p.set_defaults(handler=cmd_couple)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
