"""Command-line front end.

Subcommands::

    cumgain run       --config run.yaml [--scenario NAME|PATH] [--policy NAME] [--seeds N] ...
    cumgain sweep     same flags as run
    cumgain figdata   TRACE.csv [TRACE.csv ...] --out DIR
    cumgain scenarios

Precedence for every setting is flag > config file > default. Errors go to
stderr as a single ``E_CODE: message`` line with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import harness
from .errors import ConfigError, CumgainError
from .policies import DEFAULT_DELTA, DEFAULT_MC_DRAWS, DEFAULT_RHO, DEFAULT_TAU, POLICIES, make_policy
from .scenarios import BUILTIN_SCENARIOS, builtin_scenario, load_scenario

EXIT_CODES = {"E_USAGE": 2, "E_CONFIG": 2, "E_IO": 3, "E_INTEGRITY": 4}


@dataclass
class RunConfig:
    scenario: Any = "case_study"
    policy: dict = field(default_factory=lambda: default_policy("secg"))
    seeds: list | None = None
    seed_count: int = 1
    master_seed: int = 0
    out: str = "out"

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return harness.derive_seeds(self.master_seed, self.seed_count)

    def to_dict(self) -> dict:
        seeds = list(self.seeds) if self.seeds is not None else {"count": self.seed_count, "master_seed": self.master_seed}
        return {"scenario": copy.deepcopy(self.scenario), "policy": dict(self.policy), "seeds": seeds, "out": self.out}


def default_policy(name: str) -> dict:
    return {"name": name, "tau": DEFAULT_TAU, "delta": DEFAULT_DELTA, "rho": DEFAULT_RHO, "mc_draws": DEFAULT_MC_DRAWS}


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", field=name)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value}", field=name)
    return value


def _float(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=name)
    return float(value)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(data) - {"scenario", "policy", "seeds", "out"}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field=sorted(unknown)[0])

    scenario = data.get("scenario", "case_study")
    if isinstance(scenario, dict):
        from .env import Scenario

        Scenario.from_config(scenario)
    elif not isinstance(scenario, str):
        raise ConfigError("scenario must be a name, a path or a mapping", field="scenario")

    raw_policy = data.get("policy", {"name": "secg"})
    if isinstance(raw_policy, str):
        raw_policy = {"name": raw_policy}
    if not isinstance(raw_policy, dict):
        raise ConfigError("policy must be a name or a mapping", field="policy")
    name = raw_policy.get("name")
    if name not in POLICIES:
        raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}", field="policy.name")
    extra = set(raw_policy) - set(default_policy(name))
    if extra:
        raise ConfigError(f"unknown policy keys {sorted(extra)}", field=f"policy.{sorted(extra)[0]}")
    policy = default_policy(name)
    policy.update(raw_policy)
    policy["tau"] = _int(policy["tau"], "tau", 1)
    policy["mc_draws"] = _int(policy["mc_draws"], "mc_draws", 1)
    policy["delta"] = _float(policy["delta"], "delta")
    policy["rho"] = _float(policy["rho"], "rho")
    if not 0.0 < policy["delta"] < 1.0:
        raise ConfigError(f"must lie in (0, 1), got {policy['delta']}", field="delta")
    if not policy["rho"] > 0.0:
        raise ConfigError(f"must be positive, got {policy['rho']}", field="rho")

    seeds = data.get("seeds", {})
    cfg = RunConfig(scenario=scenario, policy=policy, out=str(data.get("out", "out")))
    if isinstance(seeds, list):
        if not seeds:
            raise ConfigError("seed list is empty", field="seeds")
        cfg.seeds = [_int(s, "seeds", 0) for s in seeds]
    elif isinstance(seeds, dict):
        cfg.seed_count = _int(seeds.get("count", 1), "seeds.count", 1)
        cfg.master_seed = _int(seeds.get("master_seed", 0), "seeds.master_seed", 0)
        if cfg.master_seed >= 1 << 64:
            raise ConfigError("must fit in 64 unsigned bits", field="seeds.master_seed")
    elif isinstance(seeds, int) and not isinstance(seeds, bool):
        cfg.seed_count = _int(seeds, "seeds", 1)
    else:
        raise ConfigError("seeds must be a list, a count or a mapping", field="seeds")
    return cfg


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"malformed config: {problem}", line=None if mark is None else mark.line + 1) from exc
    return config_from_dict({} if data is None else data)


def render_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

METRIC_FIELDS = [
    "index",
    "seed",
    "status",
    "winner",
    "correct",
    "counterfactual_best",
    "stopping_day",
    "stopping_impressions",
    "regret",
    "expected_reward",
    "realized_reward",
    "coverage_violation",
]


def _metrics_csv(runs: list[harness.RunMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = len(runs[0].true_gains)
    w.writerow(METRIC_FIELDS + [f"true_gain_{i}" for i in range(k)])
    for idx, m in enumerate(runs):
        w.writerow(
            [
                idx,
                m.seed,
                "winner" if m.winner is not None else "inconclusive",
                "" if m.winner is None else m.winner,
                "" if m.correct is None else int(m.correct),
                m.counterfactual_best,
                m.stopping_day,
                m.stopping_impressions,
                repr(m.regret),
                repr(m.expected_reward),
                m.realized_reward,
                int(m.coverage_violation),
            ]
            + [repr(g) for g in m.true_gains]
        )
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def cmd_run(config: RunConfig, base_dir: Path | None = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    scenario = load_scenario(config.scenario, base_dir)
    policy = make_policy(config.policy)
    seeds = config.seed_list()

    out = Path(config.out)
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    runs = []
    for idx, seed in enumerate(seeds):
        try:
            trace = harness.run_experiment(scenario, policy, seed)
            metrics = harness.compute_metrics(trace, scenario)
        except Exception as exc:
            raise harness.SweepError(seed, exc) from exc
        harness.write_trace(trace, out / "traces", f"run_{idx:04d}")
        runs.append(metrics)
        status = f"winner={metrics.winner}" if metrics.winner is not None else "inconclusive"
        print(
            f"run {idx} seed={seed} {status} stopping_day={metrics.stopping_day} regret={metrics.regret:.6g}",
            file=stdout,
        )

    summary = harness.summarize(scenario, policy.to_config(), runs)
    _write(out / "metrics.csv", _metrics_csv(runs))
    aggregates = summary.aggregates()
    aggregates["seeds"] = seeds
    aggregates["config"] = config.to_dict()
    _write(out / "summary.json", json.dumps(aggregates, indent=2, sort_keys=True) + "\n")
    _write(out / "config.yaml", render_config(config))
    print(
        "summary runs={n} identification_rate={ir:.4f} inconclusive_rate={inc:.4f} "
        "median_stopping_day={md:g} mean_regret={mr:.6g}".format(
            n=summary.n_runs,
            ir=summary.identification_rate,
            inc=summary.inconclusive_rate,
            md=summary.median_stopping_day,
            mr=summary.mean_regret,
        ),
        file=stdout,
    )
    return 0


def cmd_figdata(trace_paths: list, out_dir, stdout=None) -> int:
    stdout = stdout or sys.stdout
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in trace_paths:
        path = Path(path)
        trace = harness.read_trace(path)
        for panel, rows in harness.figure_tables(trace).items():
            target = out / f"{path.stem}_{panel}.csv"
            _write(target, harness.figure_csv(rows, trace.k))
            print(target, file=stdout)
    return 0


def cmd_scenarios(stdout=None) -> int:
    stdout = stdout or sys.stdout
    for name in sorted(BUILTIN_SCENARIOS):
        s = builtin_scenario(name)
        desc = BUILTIN_SCENARIOS[name].get("description", "")
        print(f"{name}\tk={s.k}\thorizon={s.horizon}\t{desc}", file=stdout)
    return 0


# ----------------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------------


def _run_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--scenario", help="built-in scenario name or YAML file")
    p.add_argument("--policy", choices=sorted(POLICIES))
    p.add_argument("--seeds", type=int, help="number of seeds derived from the master seed")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--tau", type=int)
    p.add_argument("--mc-draws", type=int)
    p.add_argument("--out", help="output directory")
    return p


class _Parser(argparse.ArgumentParser):
    # keep bad invocations on the single-line error contract
    def error(self, message):
        print(f"E_USAGE: {message}", file=sys.stderr)
        sys.exit(EXIT_CODES["E_USAGE"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cumgain", description="Adaptive experiments on cumulative gain")
    sub = parser.add_subparsers(dest="command", required=True)
    _run_parser(sub, "run", "run a policy on a scenario for one or more seeds")
    _run_parser(sub, "sweep", "same as run; intended for many seeds")
    fig = sub.add_parser("figdata", help="write plot-ready CSVs from trace files")
    fig.add_argument("traces", nargs="+")
    fig.add_argument("--out", default="figdata")
    sub.add_parser("scenarios", help="list built-in scenarios")
    return parser


def resolve_config(args) -> tuple[RunConfig, Path | None]:
    data: dict = {}
    base_dir = None
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}", field="config") from exc
        data = parse_config(text).to_dict()
        base_dir = path.parent
    if args.scenario is not None:
        data["scenario"] = args.scenario
        base_dir = None
    policy = dict(data.get("policy", {"name": "secg"}))
    if args.policy is not None and args.policy != policy.get("name"):
        policy["name"] = args.policy
    for key in ("delta", "rho", "tau", "mc_draws"):
        value = getattr(args, key)
        if value is not None:
            policy[key] = value
    data["policy"] = policy
    if args.seeds is not None or args.master_seed is not None:
        seeds = data.get("seeds")
        current = seeds if isinstance(seeds, dict) else {}
        data["seeds"] = {
            "count": args.seeds if args.seeds is not None else current.get("count", 1),
            "master_seed": args.master_seed if args.master_seed is not None else current.get("master_seed", 0),
        }
    if args.out is not None:
        data["out"] = args.out
    return config_from_dict(data), base_dir


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("run", "sweep"):
            config, base_dir = resolve_config(args)
            return cmd_run(config, base_dir)
        if args.command == "figdata":
            return cmd_figdata(args.traces, args.out)
        return cmd_scenarios()
    except harness.SweepError as exc:
        cause = exc.__cause__
        code = getattr(cause, "code", "E_RUN")
        print(f"{code}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(code, 1)
    except CumgainError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.code, 1)
    except OSError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return EXIT_CODES["E_IO"]


if __name__ == "__main__":
    sys.exit(main())
