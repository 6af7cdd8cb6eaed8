"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 numerical failure. Failures also leave ``error.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .data import (
    PartitionConfig,
    SplitConfig,
    default_adult_dir,
    dirichlet_partition,
    write_partition_manifest,
    split,
)
from .errors import DataError, InvalidSpec, NumericalError
from .evaluation import (
    ExperimentConfig,
    Variant,
    config_hash,
    constraint_slack,
    emit_report,
    evaluate,
    load_source,
    prepare_splits,
    run_experiment,
)
from .fedopt import OptimizerConfig, run_federated_postprocess, write_round_logs
from .domain import compute_group_statistics
from .postproc import DualParams, FairClassifier, FairnessConstraints
from .scores import read_score_csv, write_score_csv

SEED_ENV = "LOGOFAIR_SEED"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, help=f"seed (overrides ${SEED_ENV} and the config)")
    common.add_argument("--threads", type=int, default=1, help="worker cap")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key config override, repeatable")
    parser = _Parser(prog="fedpostfair", description="Federated fairness post-processing")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("partition", parents=[common], help="Dirichlet partition and stratified split")
    sub.add_parser("train-scores", parents=[common], help="train, calibrate and write score files")
    sub.add_parser("ingest-scores", parents=[common], help="validate externally produced score files")
    sub.add_parser("postprocess", parents=[common], help="fit dual variables on validation scores")
    sub.add_parser("evaluate", parents=[common], help="evaluate fitted duals on test scores")
    sub.add_parser("experiment", parents=[common], help="run all variants over all seeds")
    oc = sub.add_parser("oracle-check", parents=[common], help="run the discrete oracle suite")
    oc.add_argument("--instances", default="builtin", help='"builtin" or a JSON instance file')
    return parser


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, overrides: Sequence[str]) -> dict:
    config = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        node = config
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise InvalidSpec(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _parse_value(value)
    return config


def resolve_seed(config: dict, flag: int | None) -> int | None:
    """file < environment < flag."""
    seed = config.get("seed")
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            seed = int(env)
        except ValueError:
            raise InvalidSpec(f"${SEED_ENV} must be an integer, got {env!r}") from None
    if flag is not None:
        seed = flag
    return seed


def load_config(args) -> tuple[dict, list[Path]]:
    inputs = []
    config: dict = {}
    if args.config is not None:
        if not args.config.exists():
            raise DataError(f"config file {args.config} not found")
        try:
            config = json.loads(args.config.read_text())
        except json.JSONDecodeError as e:
            raise InvalidSpec(f"{args.config}: invalid JSON ({e})") from None
        inputs.append(args.config)
    config = apply_overrides(config, args.overrides)
    seed = resolve_seed(config, args.seed)
    if seed is not None:
        config["seed"] = int(seed)
    return config, inputs


def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dataset_inputs(config: dict) -> list[Path]:
    ds = config.get("dataset", {})
    kind = ds.get("kind", "adult")
    if kind == "adult":
        root = Path(ds["path"]) if ds.get("path") else default_adult_dir()
        return [root / "adult.data", root / "adult.test"]
    if kind == "csv":
        return [Path(ds["path"])]
    if kind == "scores":
        return [Path(ds["validation"]), Path(ds["test"])]
    return []


def _versions() -> dict:
    out = {"python": platform.python_version(), "fedpostfair": __version__}
    for pkg in ("numpy", "scipy", "pandas"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    return out


def write_manifest(out: Path, command: str, config: dict, inputs: Sequence[Path], outputs: Sequence[Path]) -> Path:
    doc = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": config.get("seed"),
        "inputs": {str(p): _file_hash(p) for p in inputs if Path(p).exists()},
        "outputs": {Path(p).name: _file_hash(p) for p in outputs},
        "versions": _versions(),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")
    return path


def _experiment_config(config: dict) -> ExperimentConfig:
    cfg = dict(config)
    seed = cfg.pop("seed", None)
    if seed is not None:
        cfg["seeds"] = [int(seed)]
    for key in ("delta_local", "delta_global", "variant", "validation_scores", "test_scores", "duals"):
        cfg.pop(key, None)
    return ExperimentConfig.from_dict(cfg)


def _single_seed(config: dict) -> int:
    if config.get("seed") is not None:
        return int(config["seed"])
    seeds = config.get("seeds") or [0]
    return int(seeds[0] if isinstance(seeds, list) else seeds)


# ---------------------------------------------------------------------------
# Subcommands; each returns the files it wrote
# ---------------------------------------------------------------------------

def cmd_partition(args, config: dict) -> list[Path]:
    exp = _experiment_config(config)
    seed = _single_seed(config)
    data, _ = load_source(exp, seed)
    if exp.alpha is not None:
        data = dirichlet_partition(data, PartitionConfig(exp.num_clients, exp.alpha, seed, exp.min_group_size))
    train, val, test = split(data, SplitConfig(seed=seed))
    path = args.out / "partition.json"
    write_partition_manifest(path, {"train": train, "validation": val, "test": test},
                             {"seed": seed, "alpha": exp.alpha, "num_clients": data.num_clients})
    return [path]


def cmd_train_scores(args, config: dict) -> list[Path]:
    exp = _experiment_config(config)
    seed = _single_seed(config)
    prepared = prepare_splits(exp, seed)
    outputs = [args.out / "scores_validation.csv", args.out / "scores_test.csv"]
    write_score_csv(outputs[0], prepared.validation, prepared.validation_scores)
    write_score_csv(outputs[1], prepared.test, prepared.test_scores)
    return outputs


def _score_paths(config: dict) -> tuple[Path, Path | None]:
    ds = config.get("dataset", {})
    val = config.get("validation_scores") or ds.get("validation")
    test = config.get("test_scores") or ds.get("test")
    if not val:
        raise InvalidSpec("no validation score file configured (set validation_scores=PATH)")
    return Path(val), Path(test) if test else None


def cmd_ingest_scores(args, config: dict) -> list[Path]:
    val_path, test_path = _score_paths(config)
    val, val_scores = read_score_csv(val_path)
    outputs = [args.out / "scores_validation.csv"]
    write_score_csv(outputs[0], val, val_scores.eta)
    summary = {"validation_rows": len(val), "num_clients": val.num_clients}
    if test_path is not None:
        test, test_scores = read_score_csv(test_path, val.num_clients)
        outputs.append(args.out / "scores_test.csv")
        write_score_csv(outputs[1], test, test_scores.eta)
        summary["test_rows"] = len(test)
    summary_path = args.out / "ingest.json"
    summary_path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return outputs + [summary_path]


def _variant(config: dict) -> Variant:
    return Variant.from_dict({"name": config.get("variant", "custom"),
                              "delta_local": config.get("delta_local"),
                              "delta_global": config.get("delta_global")})


def cmd_postprocess(args, config: dict) -> list[Path]:
    val_path, _ = _score_paths(config)
    val, val_scores = read_score_csv(val_path)
    variant = _variant(config)
    criterion = config.get("criterion", "DP")
    constraints = FairnessConstraints(criterion, variant.budget(val.num_clients), val.num_clients)
    opt = OptimizerConfig.from_dict({**config.get("optimizer", {}), "seed": _single_seed(config)})
    clf, logs = run_federated_postprocess(val, val_scores.eta, constraints, opt, workers=args.threads)
    duals_path = args.out / "duals.json"
    duals_path.write_text(json.dumps({
        "criterion": str(constraints.criterion.value),
        "delta_local": None if variant.delta_local == float("inf") else variant.delta_local,
        "delta_global": None if variant.delta_global == float("inf") else variant.delta_global,
        "duals": clf.duals.to_dict(),
    }, indent=1, sort_keys=True) + "\n")
    rounds_path = args.out / "rounds.jsonl"
    write_round_logs(logs, rounds_path)
    return [duals_path, rounds_path]


def cmd_evaluate(args, config: dict) -> list[Path]:
    val_path, test_path = _score_paths(config)
    if test_path is None:
        raise InvalidSpec("no test score file configured (set test_scores=PATH)")
    duals_file = config.get("duals")
    if not duals_file:
        raise InvalidSpec("no duals file configured (set duals=PATH)")
    fitted = json.loads(Path(duals_file).read_text())
    val, _ = read_score_csv(val_path)
    test, test_scores = read_score_csv(test_path, val.num_clients)
    variant = Variant.from_dict({"name": config.get("variant", "custom"),
                                 "delta_local": fitted.get("delta_local"),
                                 "delta_global": fitted.get("delta_global")})
    constraints = FairnessConstraints(fitted["criterion"], variant.budget(val.num_clients), val.num_clients)
    clf = FairClassifier(DualParams.from_dict(fitted["duals"]), compute_group_statistics(val), constraints)
    report = evaluate(clf, test, test_scores, constraints.criterion)
    slack_local, slack_global = constraint_slack(report, variant.budget(val.num_clients))
    row = {"method": variant.name, "seed": _single_seed(config), "acc": report.accuracy,
           "m_local": report.local_metric, "m_global": report.global_metric,
           "slack_local": slack_local, "slack_global": slack_global,
           "config_hash": config_hash(config)}
    return [emit_report([row], fmt, args.out / f"report.{ext}", constraints.criterion)
            for fmt, ext in (("csv", "csv"), ("markdown", "md"), ("json", "json"))]


def cmd_experiment(args, config: dict) -> list[Path]:
    exp = _experiment_config(config)
    result = run_experiment(exp, workers=args.threads)
    outputs = [emit_report(result.rows, fmt, args.out / f"report.{ext}", exp.criterion)
               for fmt, ext in (("csv", "csv"), ("markdown", "md"), ("json", "json"))]
    rounds = args.out / "rounds.jsonl"
    lines = []
    for run in result.runs:
        for log in run.logs:
            doc = json.loads(log.to_json())
            doc.update(variant=run.variant, seed=run.seed)
            lines.append(json.dumps(doc, sort_keys=True))
    rounds.write_text("".join(line + "\n" for line in lines))
    return outputs + [rounds]


def cmd_oracle_check(args, config: dict) -> list[Path]:
    from .oracle import builtin_instances, load_instances, run_oracle_checks

    if args.instances == "builtin":
        instances = builtin_instances()
    else:
        path = Path(args.instances)
        if not path.exists():
            raise DataError(f"instance file {path} not found")
        instances = load_instances(path)
    results = run_oracle_checks(instances)
    path = args.out / "oracle_report.json"
    path.write_text(json.dumps([r.to_dict() for r in results], indent=1, sort_keys=True) + "\n")
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{status:4s} {r.name}: lp={r.lp_risk:.6f} bayes={r.bayes_risk:.6f} "
              f"gap={r.theorem1.gap:.2e} violation={r.theorem1.violation:.2e}"
              + (f" ({'; '.join(r.notes)})" if r.notes else ""))
    if not all(r.ok for r in results):
        raise OracleCheckFailed(f"{sum(not r.ok for r in results)} oracle check(s) failed", [path])
    return [path]


class OracleCheckFailed(NumericalError):
    def __init__(self, message: str, outputs: list[Path]):
        super().__init__(message)
        self.outputs = outputs


COMMANDS = {
    "partition": cmd_partition,
    "train-scores": cmd_train_scores,
    "ingest-scores": cmd_ingest_scores,
    "postprocess": cmd_postprocess,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "oracle-check": cmd_oracle_check,
}


def _write_error(out: Path | None, command: str | None, code: int, exc: BaseException) -> None:
    if out is None:
        return
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(json.dumps({
            "command": command, "exit_code": code, "error": type(exc).__name__, "message": str(exc),
        }, indent=1, sort_keys=True) + "\n")
    except OSError:
        pass


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"fedpostfair: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    if args.threads < 1:
        print("fedpostfair: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    out: Path = args.out
    try:
        config, inputs = load_config(args)
        out.mkdir(parents=True, exist_ok=True)
        stale = out / "error.json"
        if stale.exists():
            stale.unlink()
        outputs = COMMANDS[args.command](args, config)
        inputs = inputs + _dataset_inputs(config)
        if args.command == "oracle-check" and args.instances != "builtin":
            inputs.append(Path(args.instances))
        write_manifest(out, args.command, config, inputs, outputs)
        return EXIT_OK
    except UsageError as e:
        print(f"fedpostfair: error: {e}", file=sys.stderr)
        _write_error(out, args.command, EXIT_USAGE, e)
        return EXIT_USAGE
    except (DataError, OSError, KeyError, ValueError) as e:
        print(f"fedpostfair: data error: {e}", file=sys.stderr)
        _write_error(out, args.command, EXIT_DATA, e)
        return EXIT_DATA
    except NumericalError as e:
        print(f"fedpostfair: numerical error: {e}", file=sys.stderr)
        _write_error(out, args.command, EXIT_NUMERIC, e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
