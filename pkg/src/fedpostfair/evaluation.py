"""Experiment harness: held-out evaluation, method variants over seeds, report tables."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .criteria import Criterion, fairness_metric
from .data import (
    CsvSchema,
    PartitionConfig,
    SplitConfig,
    dirichlet_partition,
    load_adult,
    load_csv,
    split,
    synth_generate,
    synth_spec_from_dict,
)
from .domain import FairnessBudget, FederatedDataset
from .errors import InvalidSpec
from .fedopt import OptimizerConfig, RoundLog, run_federated_postprocess
from .postproc import FairClassifier, FairnessConstraints
from .scores import (
    DEFAULT_NOISE,
    ScoreTable,
    calibrate_groupwise,
    finalize_scores,
    read_score_csv,
    score_dataset,
    train_score_model,
)


@dataclass
class FairnessReport:
    accuracy: float
    local_metric: float
    global_metric: float
    per_client: dict[int, tuple[float, float]]  # c -> (accuracy, local metric)
    criterion: Criterion
    global_disparity: np.ndarray = field(default_factory=lambda: np.zeros(0))
    local_disparity: dict[int, np.ndarray] = field(default_factory=dict)


def _as_scores(scores) -> np.ndarray:
    return np.asarray(scores.eta if isinstance(scores, ScoreTable) else scores, dtype=float)


def _rate(hits: np.ndarray, mask: np.ndarray) -> float:
    n = int(mask.sum())
    return float(hits[mask].sum()) / n if n else 0.0


def rate_disparity(predictions, test: FederatedDataset, criterion: Criterion, client: int | None = None) -> np.ndarray:
    """Gap in positive rates between a=+1 and a=-1, as exact count ratios.

    Equals the coefficient form of ``empirical_disparity`` with labels for
    eta, but a constant classifier gives exactly zero.
    """
    hits = np.asarray(predictions) == 1
    scope = np.ones(len(test), bool) if client is None else test.client == client
    pos, neg = scope & (test.sensitive == 1), scope & (test.sensitive == -1)
    if criterion is Criterion.DP:
        return np.array([_rate(hits, pos) - _rate(hits, neg)])
    y1, y0 = test.label == 1, test.label == 0
    return np.array([_rate(hits, pos & y1) - _rate(hits, neg & y1),
                     _rate(hits, pos & y0) - _rate(hits, neg & y0)])


def evaluate_predictions(predictions, test: FederatedDataset, criterion: Criterion | str) -> FairnessReport:
    """Accuracy and DP/EO gaps of fixed predictions on ``test``."""
    criterion = Criterion(criterion)
    predictions = np.asarray(predictions)
    if predictions.shape != (len(test),):
        raise InvalidSpec(f"predictions have shape {predictions.shape}, expected ({len(test)},)")
    correct = predictions == test.label
    g = rate_disparity(predictions, test, criterion)
    per_client, local = {}, {}
    for c in range(test.num_clients):
        m = test.client == c
        if not m.any():
            continue
        local[c] = rate_disparity(predictions, test, criterion, c)
        per_client[c] = (float(correct[m].mean()), fairness_metric(local[c]))
    return FairnessReport(
        accuracy=float(correct.mean()),
        local_metric=max((m for _, m in per_client.values()), default=0.0),
        global_metric=fairness_metric(g),
        per_client=per_client,
        criterion=criterion,
        global_disparity=g,
        local_disparity=local,
    )


def evaluate(classifier: FairClassifier, test: FederatedDataset, scores, criterion: Criterion | str) -> FairnessReport:
    predictions = classifier.predict_scores(_as_scores(scores), test.sensitive, test.client)
    return evaluate_predictions(predictions, test, criterion)


def constraint_slack(report: FairnessReport, budget: FairnessBudget) -> tuple[float, float]:
    """Largest excess of the measured gaps over their budgets (0 when all are met)."""
    local = max(
        (max(0.0, fairness_metric(d) - budget.local(c)) for c, d in report.local_disparity.items()),
        default=0.0,
    )
    glob = max(0.0, report.global_metric - budget.global_delta)
    return local, glob


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

def parse_budget(value) -> float:
    """null / "inf" mean no constraint."""
    if value is None or (isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity")):
        return math.inf
    v = float(value)
    if not v >= 0:
        raise InvalidSpec(f"budget must be nonnegative, got {value}")
    return v


@dataclass(frozen=True)
class Variant:
    name: str
    delta_local: float = math.inf
    delta_global: float = math.inf

    @classmethod
    def from_dict(cls, d: Mapping) -> "Variant":
        return cls(d["name"], parse_budget(d.get("delta_local")), parse_budget(d.get("delta_global")))

    def budget(self, num_clients: int) -> FairnessBudget:
        return FairnessBudget.uniform(num_clients, self.delta_local, self.delta_global)


DEFAULT_VARIANTS = (
    {"name": "unconstrained", "delta_local": None, "delta_global": None},
    {"name": "local", "delta_local": 0.01, "delta_global": None},
    {"name": "global", "delta_local": None, "delta_global": 0.01},
    {"name": "local+global", "delta_local": 0.01, "delta_global": 0.01},
)


@dataclass
class ExperimentConfig:
    dataset: dict
    num_clients: int = 5
    alpha: float | None = 0.5
    min_group_size: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    criterion: Criterion = Criterion.DP
    variants: list[Variant] = field(default_factory=lambda: [Variant.from_dict(v) for v in DEFAULT_VARIANTS])
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    score_model: dict = field(default_factory=dict)
    noise_epsilon: float = DEFAULT_NOISE
    name: str = "experiment"
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        known = {"dataset", "num_clients", "alpha", "min_group_size", "seeds", "criterion", "variants",
                 "optimizer", "score_model", "noise_epsilon", "name"}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown config keys {sorted(unknown)}")
        if "dataset" not in d:
            raise InvalidSpec("config must name a dataset")
        seeds = d.get("seeds", [0, 1, 2, 3, 4])
        if isinstance(seeds, int):
            seeds = [seeds]
        if not seeds:
            raise InvalidSpec("at least one seed is required")
        return cls(
            dataset=dict(d["dataset"]),
            num_clients=int(d.get("num_clients", 5)),
            alpha=None if d.get("alpha", 0.5) is None else float(d.get("alpha", 0.5)),
            min_group_size=int(d.get("min_group_size", 0)),
            seeds=[int(s) for s in seeds],
            criterion=Criterion(d.get("criterion", "DP")),
            variants=[Variant.from_dict(v) for v in d.get("variants", DEFAULT_VARIANTS)],
            optimizer=OptimizerConfig.from_dict(dict(d.get("optimizer", {}))),
            score_model=dict(d.get("score_model", {})),
            noise_epsilon=float(d.get("noise_epsilon", DEFAULT_NOISE)),
            name=str(d.get("name", "experiment")),
            raw=copy.deepcopy(dict(d)),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def config_hash(doc: Mapping) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

@dataclass
class PreparedSplits:
    """Validation and test rows with their final scores for one seed."""

    validation: FederatedDataset
    test: FederatedDataset
    validation_scores: np.ndarray
    test_scores: np.ndarray
    train: FederatedDataset | None = None


def load_source(config: ExperimentConfig, seed: int):
    """Returns (dataset, true eta or None) for the configured source."""
    ds = config.dataset
    kind = ds.get("kind", "adult")
    if kind == "adult":
        return load_adult(ds.get("path")), None
    if kind == "csv":
        return load_csv(ds["path"], CsvSchema.from_dict(ds["schema"])), None
    if kind == "synth":
        return synth_generate(synth_spec_from_dict(ds["spec"]), seed)
    raise InvalidSpec(f"unknown dataset kind {kind!r}")


def prepare_splits(config: ExperimentConfig, seed: int) -> PreparedSplits:
    kind = config.dataset.get("kind", "adult")
    if kind == "scores":
        val, val_scores = read_score_csv(config.dataset["validation"])
        test, test_scores = read_score_csv(config.dataset["test"], val.num_clients)
        return PreparedSplits(val, test, val_scores.eta, test_scores.eta)
    data, true_eta = load_source(config, seed)
    if config.alpha is not None:
        data = dirichlet_partition(
            data, PartitionConfig(config.num_clients, config.alpha, seed, config.min_group_size)
        )
    train, val, test = split(data, SplitConfig(seed=seed))
    sm = config.score_model
    if sm.get("kind", "logistic") == "true_eta":
        if true_eta is None:
            raise InvalidSpec("score_model true_eta needs a synthetic dataset")
        eta_by_id = dict(zip(data.sample_id.tolist(), true_eta.tolist()))
        def lookup(d):
            raw = np.array([eta_by_id[i] for i in d.sample_id.tolist()])
            return finalize_scores(raw, d.sample_id, config.noise_epsilon, seed)
        return PreparedSplits(val, test, lookup(val), lookup(test), train)
    model = train_score_model(
        train,
        epochs=int(sm.get("epochs", 10)),
        lr=float(sm.get("lr", 0.05)),
        local_epochs=int(sm.get("local_epochs", 1)),
        seed=seed,
        batch_size=int(sm.get("batch_size", 64)),
    )
    cal = calibrate_groupwise(model, val, int(sm.get("min_calibration_samples", 30)))
    return PreparedSplits(
        val, test,
        score_dataset(model, cal, val, config.noise_epsilon, seed).eta,
        score_dataset(model, cal, test, config.noise_epsilon, seed).eta,
        train,
    )


@dataclass
class RunResult:
    variant: str
    seed: int
    report: FairnessReport
    validation_report: FairnessReport
    budget: FairnessBudget
    logs: list[RoundLog]
    classifier: FairClassifier


def run_variant(
    prepared: PreparedSplits,
    variant: Variant,
    criterion: Criterion,
    optimizer: OptimizerConfig,
    seed: int,
) -> RunResult:
    k = prepared.validation.num_clients
    budget = variant.budget(k)
    constraints = FairnessConstraints(criterion, budget, k)
    clf, logs = run_federated_postprocess(prepared.validation, prepared.validation_scores, constraints, optimizer)
    return RunResult(
        variant=variant.name,
        seed=seed,
        report=evaluate(clf, prepared.test, prepared.test_scores, criterion),
        validation_report=evaluate(clf, prepared.validation, prepared.validation_scores, criterion),
        budget=budget,
        logs=logs,
        classifier=clf,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    config_hash: str
    runs: list[RunResult]
    rows: list[dict]

    def runs_for(self, variant: str) -> list[RunResult]:
        return [r for r in self.runs if r.variant == variant]

    def mean_row(self, variant: str) -> dict:
        return next(r for r in self.rows if r["method"] == variant and r["seed"] == "mean")


METRIC_KEYS = ("acc", "m_local", "m_global", "slack_local", "slack_global", "val_slack_local", "val_slack_global")


def _row(run: RunResult, chash: str) -> dict:
    sl, sg = constraint_slack(run.report, run.budget)
    vl, vg = constraint_slack(run.validation_report, run.budget)
    return {
        "method": run.variant,
        "seed": run.seed,
        "acc": run.report.accuracy,
        "m_local": run.report.local_metric,
        "m_global": run.report.global_metric,
        "slack_local": sl,
        "slack_global": sg,
        "val_slack_local": vl,
        "val_slack_global": vg,
        "config_hash": chash,
    }


def run_experiment(config: ExperimentConfig | Mapping, workers: int = 1) -> ExperimentResult:
    """One row per (variant, seed) followed by a mean row per variant."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    chash = config_hash(config.raw or {"name": config.name})

    def one_seed(seed: int) -> list[RunResult]:
        prepared = prepare_splits(config, seed)
        opt = OptimizerConfig(**{**config.optimizer.__dict__, "seed": seed})
        return [run_variant(prepared, v, config.criterion, opt, seed) for v in config.variants]

    if workers > 1 and len(config.seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(one_seed, config.seeds))
    else:
        per_seed = [one_seed(s) for s in config.seeds]
    runs = [r for v in config.variants for group in per_seed for r in group if r.variant == v.name]
    rows = []
    for v in config.variants:
        vrows = [_row(r, chash) for r in runs if r.variant == v.name]
        rows.extend(vrows)
        mean = {"method": v.name, "seed": "mean", "config_hash": chash}
        for key in METRIC_KEYS:
            mean[key] = math.fsum(r[key] for r in vrows) / len(vrows)
        rows.append(mean)
    return ExperimentResult(config, chash, runs, rows)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def report_columns(criterion: Criterion | str = Criterion.DP) -> list[tuple[str, str]]:
    """(row key, displayed header) pairs in output order."""
    c = Criterion(criterion).value
    return [
        ("method", "Method"),
        ("seed", "Seed"),
        ("acc", "Acc"),
        ("m_local", f"M_{c}^local"),
        ("m_global", f"M_{c}^global"),
        ("slack_local", "slack_local"),
        ("slack_global", "slack_global"),
        ("config_hash", "config_hash"),
    ]


def _fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.4f}"
    return str(value)


def render_report(rows: Sequence[Mapping], fmt: str, criterion: Criterion | str = Criterion.DP) -> str:
    if not rows:
        raise InvalidSpec("no rows to report")
    cols = report_columns(criterion)
    cells = [[_fmt(r.get(k, "")) for k, _ in cols] for r in rows]
    headers = [h for _, h in cols]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(headers)
        w.writerows(cells)
        return buf.getvalue()
    if fmt == "json":
        out = [
            {h: round(float(r[k]), 4) if isinstance(r.get(k), (float, np.floating)) else r.get(k, "")
             for k, h in cols}
            for r in rows
        ]
        return json.dumps(out, indent=1) + "\n"
    if fmt in ("md", "markdown"):
        lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
        lines += ["| " + " | ".join(row) + " |" for row in cells]
        return "\n".join(lines) + "\n"
    raise InvalidSpec(f"unknown report format {fmt!r}")


def emit_report(rows: Sequence[Mapping], fmt: str, path, criterion: Criterion | str = Criterion.DP) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report(rows, fmt, criterion))
    return path
