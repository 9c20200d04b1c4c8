"""Command-line entry point: ``synthreg {simulate,fit,test,bounds}``.

Exit codes: 0 success, 1 a requested bound check failed, 2 usage or input
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from synthreg.adversary import GeneratorSpec, TimingSpec, generate_panel, generate_timing
from synthreg.inference import ObservedStudy, randomization_test
from synthreg.panel import PanelError, format_float, load_panel
from synthreg.protocol import (
    BOUND_ALIASES,
    BOUND_KINDS,
    adaptive_regret,
    compute_regret,
    oracle_fixed_weights,
    run_protocol,
    theoretical_bound,
    weighted_regret,
    write_curves,
)
from synthreg.strategies import StrategyConfig, StrategyError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
SEED_ENV = "SYNTHREG_SEED"
CHECK_SLACK = 1e-6

ORACLE_CLASS = {"differenced_sc": "twfe", "demeaned_sc": "affine", "first_diff_sc": "first_diff"}


class ConfigError(ValueError):
    pass


@dataclass
class BoundCheck:
    bound: str
    strategy: str | None = None
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, item) -> "BoundCheck":
        if isinstance(item, str):
            return cls(item)
        if isinstance(item, dict) and "bound" in item:
            extra = set(item) - {"bound", "strategy", "params"}
            if extra:
                raise ConfigError(f"unknown check fields: {sorted(extra)}")
            return cls(item["bound"], item.get("strategy"), dict(item.get("params", {})))
        raise ConfigError(f"bad check entry: {item!r}")


@dataclass
class ExperimentConfig:
    strategies: list
    generator: GeneratorSpec | None = None
    panel: str | None = None
    timing: TimingSpec | None = None
    replications: int = 1
    seed: int = 0
    report: str | None = None
    curves: str | None = None
    checks: list = field(default_factory=list)
    adaptive: bool = False

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path = Path(".")) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {"generator", "panel", "strategies", "timing", "replications", "seed", "outputs", "checks", "adaptive"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if ("generator" in data) == ("panel" in data):
            raise ConfigError("config needs exactly one of 'generator' or 'panel'")
        strategies = data.get("strategies")
        if not isinstance(strategies, list) or not strategies:
            raise ConfigError("'strategies' must be a non-empty list")
        labels = set()
        for s in strategies:
            if not isinstance(s, dict):
                raise ConfigError("each strategy must be an object")
            probe = dict(s)
            if probe.get("kind") == "weighted_ftl" and "pi" not in probe:
                probe["pi"] = [1.0]  # filled from the timing spec per replication
            labels.add(StrategyConfig.from_dict(probe).label)
        replications = data.get("replications", 1)
        if not isinstance(replications, int) or replications < 1:
            raise ConfigError("'replications' must be a positive integer")
        seed = data.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("'seed' must be an integer")
        outputs = data.get("outputs", {})
        if not isinstance(outputs, dict):
            raise ConfigError("'outputs' must be an object")
        generator = None
        if "generator" in data:
            if not isinstance(data["generator"], dict):
                raise ConfigError("'generator' must be an object")
            generator = GeneratorSpec.from_dict(data["generator"])
        panel = None
        if "panel" in data:
            panel = str((base_dir / data["panel"]).resolve())
        timing = TimingSpec.from_dict(data["timing"]) if "timing" in data else None
        checks = data.get("checks", [])
        if not isinstance(checks, list):
            raise ConfigError("'checks' must be a list")
        parsed = [BoundCheck.parse(c) for c in checks]
        for check in parsed:
            if check.strategy is not None and check.strategy not in labels:
                raise ConfigError(f"check names strategy {check.strategy!r}; known: {sorted(labels)}")
            try:
                theoretical_bound(check.bound, 2, 2, **check.params)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad check {check.bound!r}: {exc}") from None
        return cls(
            strategies=strategies,
            generator=generator,
            panel=panel,
            timing=timing,
            replications=replications,
            seed=seed,
            report=outputs.get("report"),
            curves=outputs.get("curves"),
            checks=parsed,
            adaptive=bool(data.get("adaptive", False)),
        )


# -- simulate ----------------------------------------------------------------------


def _bound_value(check: BoundCheck, N: int, T: int) -> float:
    return theoretical_bound(check.bound, N, T, **check.params)


def natural_bound(config: StrategyConfig, N: int, T: int) -> float | None:
    """The regret bound that applies to a strategy against its own oracle class, if any."""
    kind = {"ftl": "ftl", "differenced_sc": "differenced_sc", "first_diff_sc": "differenced_sc", "demeaned_sc": "static_did"}.get(config.kind)
    params = {}
    if config.kind == "ftrl" and config.eta is None:
        kind = config.penalty
        if kind == "entropy" and N < 2:
            kind = "ridge"
        if kind == "quadratic":
            from synthreg.strategies import _penalty_for
            from synthreg.simplex import penalty_value_and_range

            params["K"] = penalty_value_and_range(_penalty_for(config, N, T), N)[1]
    if kind is None:
        return None
    return theoretical_bound(kind, N, T, **params)


def run_cell(task: dict) -> dict:
    """One strategy x replication cell; module-level so worker processes can run it."""
    panel = task["panel"]
    strategy = dict(task["strategy"])
    pi = task["pi"]
    if strategy.get("kind") == "weighted_ftl" and "pi" not in strategy:
        strategy["pi"] = list(pi)
    config = StrategyConfig.from_dict(strategy)
    loss = config.loss if config.kind == "ftrl" else "squared"
    cls = ORACLE_CLASS.get(config.kind, "simplex")
    traj = run_protocol(config, panel)
    oracle = oracle_fixed_weights(panel, cls, loss=loss)
    report = compute_regret(traj, oracle, pi=pi, loss=loss)
    if loss == "squared" and cls == "simplex":
        report.weighted_regret = weighted_regret(traj, panel, pi)[0]
    if task["adaptive"] and loss == "squared" and cls != "affine":
        report.adaptive_regret = adaptive_regret(traj, panel, cls).value
    report.theoretical_bound = natural_bound(config, panel.N, panel.T)
    out = report.to_dict()
    out.update(cell=task["cell"], seed=task["seed"], N=panel.N)
    checks = []
    for check in task["checks"]:
        if check.strategy is not None and check.strategy != config.label:
            continue
        bound = _bound_value(check, panel.N, panel.T)
        weighted = BOUND_ALIASES.get(check.bound, check.bound) == "weighted_ftl"
        value = out["weighted_regret"] if weighted else out["regret"]
        if value is None:
            raise ConfigError(f"check {check.bound} does not apply to {config.label}")
        checks.append({"bound": check.bound, "value": bound, "holds": bool(value <= bound + CHECK_SLACK)})
    out["checks"] = checks
    if task["curves"]:
        path = Path(task["curves"]) / f"cell{task['cell']:04d}_{_slug(config.label)}_seed{task['seed']}.csv"
        write_curves(traj, panel, oracle, path)
    return out


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)


def _tasks(cfg: ExperimentConfig):
    for rep in range(cfg.replications):
        seed = cfg.seed + rep
        if cfg.generator is not None:
            panel = generate_panel(cfg.generator.with_seed(seed))
        else:
            panel = load_panel(cfg.panel)
        if cfg.timing is not None:
            timing = TimingSpec(**{**cfg.timing.to_dict(), "seed": seed})
            pi = generate_timing(timing, panel.T, panel)
        else:
            pi = np.full(panel.T, 1.0 / panel.T)
        for strategy in cfg.strategies:
            yield {
                "panel": panel,
                "strategy": strategy,
                "pi": pi,
                "seed": seed,
                "checks": cfg.checks,
                "adaptive": cfg.adaptive,
                "curves": cfg.curves,
            }


def cmd_simulate(args) -> int:
    path = Path(args.config)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if args.seed is not None:
        data["seed"] = args.seed
    elif "seed" not in data and os.environ.get(SEED_ENV):
        data["seed"] = int(os.environ[SEED_ENV])
    cfg = ExperimentConfig.from_dict(data, path.parent)
    report_path = args.out or cfg.report
    if cfg.curves:
        Path(cfg.curves).mkdir(parents=True, exist_ok=True)
    tasks = list(_tasks(cfg))
    for i, task in enumerate(tasks):
        task["cell"] = i
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_cell, tasks, chunksize=max(1, len(tasks) // (4 * args.jobs))))
    else:
        results = [run_cell(t) for t in tasks]
    failures = []
    for r in results:
        status = "ok" if all(c["holds"] for c in r["checks"]) else "FAIL"
        bounds = " ".join(f"{c['bound']}={c['value']:.4g}" for c in r["checks"])
        print(f"cell={r['cell']} strategy={r['strategy']} seed={r['seed']} regret={r['regret']:.6g} {bounds} {status}".rstrip())
        for c in r["checks"]:
            if not c["holds"]:
                failures.append((r["strategy"], r["seed"], r["regret"], c["bound"], c["value"]))
    if report_path:
        Path(report_path).write_text(json.dumps(results, indent=2, sort_keys=True), encoding="utf-8")
    if failures:
        print("bound checks failed:", file=sys.stderr)
        for strategy, seed, regret, bound, value in failures:
            print(f"  strategy={strategy} seed={seed} regret={regret:.6g} {bound}={value:.6g}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


# -- fit / test ----------------------------------------------------------------------


def _strategy_arg(text: str | None) -> StrategyConfig:
    if text is None:
        return StrategyConfig("ftl")
    candidate = Path(text)
    try:
        if candidate.suffix == ".json" and candidate.exists():
            data = json.loads(candidate.read_text(encoding="utf-8"))
        elif text.lstrip().startswith("{"):
            data = json.loads(text)
        else:
            data = {"kind": text}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"strategy is not valid JSON: {exc}") from None
    return StrategyConfig.from_dict(data)


def cmd_fit(args) -> int:
    panel = load_panel(args.panel)
    config = _strategy_arg(args.strategy)
    traj = run_protocol(config, panel)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["t", "prediction", "loss"] + [f"w{i}" for i in range(1, panel.N + 1)]
    if traj.intercepts is not None:
        header.append("intercept")
    writer.writerow(header)
    for t in range(panel.T):
        row = [str(t + 1), format_float(traj.predictions[t]), format_float(traj.losses[t])]
        row += [format_float(v) for v in traj.weights[t]]
        if traj.intercepts is not None:
            row.append(format_float(traj.intercepts[t]))
        writer.writerow(row)
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def _null_arg(text: str | None, T: int):
    if text is None:
        return None
    path = Path(text)
    if path.exists():
        values = [float(v) for v in path.read_text(encoding="utf-8").replace(",", " ").split()]
    else:
        values = [float(v) for v in text.split(",")]
    if len(values) == 1:
        values = values * T
    if len(values) != T:
        raise ConfigError(f"null effects need 1 or {T} values, got {len(values)}")
    return np.array(values)


def cmd_test(args) -> int:
    panel = load_panel(args.panel)
    study = ObservedStudy(panel.treated, panel.controls, args.S, _null_arg(args.null, panel.T))
    report = randomization_test(study, _strategy_arg(args.strategy), args.alpha, args.c_bound)
    _emit(json.dumps(report.to_dict(), sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    params = {k: getattr(args, k) for k in ("C", "K", "R", "a", "b", "D") if getattr(args, k) is not None}
    if args.kind == "hazan" and args.hazan_n is not None:
        params["n"] = args.hazan_n
    value = theoretical_bound(args.kind, args.n, args.t, **params)
    inputs = " ".join(f"{k}={v}" for k, v in {"N": args.n, "T": args.t, **params}.items())
    print(f"{args.kind} {inputs} bound={value:.10g}")
    if args.out:
        Path(args.out).write_text(json.dumps({"kind": args.kind, "N": args.n, "T": args.t, **params, "bound": value}), encoding="utf-8")
    return EXIT_OK


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthreg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help=f"overrides the config seed (env {SEED_ENV})")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="report JSON path (overrides outputs.report)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run a strategy on a panel CSV")
    p.add_argument("--panel", required=True)
    p.add_argument("--strategy", default=None, help="kind name, JSON object, or .json file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="randomization test of a sharp null")
    p.add_argument("--panel", required=True, help="observed series as y0 plus controls")
    p.add_argument("--S", type=int, required=True, help="realized treatment period (1-based)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--c-bound", dest="c_bound", type=float, default=1.0)
    p.add_argument("--null", default=None, help="effects z: a number, comma list, or file")
    p.add_argument("--strategy", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("bounds", help="evaluate a regret bound")
    p.add_argument("kind", choices=list(BOUND_KINDS) + list(BOUND_ALIASES))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--C", type=float, default=None)
    p.add_argument("--K", type=float, default=None)
    p.add_argument("--R", type=float, default=None)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--D", type=float, default=None)
    p.add_argument("--hazan-n", dest="hazan_n", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StrategyError, PanelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
