"""Simulated federated solver for the smoothed dual problem.

Each round the server broadcasts ``lam``; every client runs ``local_steps``
projected-gradient steps on its own objective in ``(lam, mu_c)`` and sends
back only the change in ``lam``. The server adds the changes up.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import FederatedDataset, GroupStatistics, compute_group_statistics
from .errors import DimensionMismatch, InvalidSpec, NonFiniteGradient
from .postproc import (
    DEFAULT_BETA,
    ClientObjective,
    DualParams,
    FairClassifier,
    FairnessConstraints,
)


@dataclass(frozen=True)
class OptimizerConfig:
    rounds: int = 50
    local_steps: int = 10
    lr_global: float | None = None  # None: 1 / smoothness bound
    lr_local: float | None = None
    beta: float = DEFAULT_BETA
    seed: int = 0
    aggregation: str = "sum"  # "sum" or "mean"
    final_local_steps: int = 0  # mu-only steps against the final lam

    def __post_init__(self):
        if self.rounds <= 0 or self.local_steps <= 0 or self.final_local_steps < 0:
            raise InvalidSpec("rounds and local_steps must be positive")
        for lr in (self.lr_global, self.lr_local):
            if lr is not None and not lr > 0:
                raise InvalidSpec(f"learning rates must be positive, got {lr}")
        if not self.beta > 0:
            raise InvalidSpec(f"beta must be positive, got {self.beta}")
        if self.aggregation not in ("sum", "mean"):
            raise InvalidSpec(f"unknown aggregation {self.aggregation!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        aliases = {"T": "rounds", "S": "local_steps", "lr": "lr_global"}
        kw = {aliases.get(k, k): v for k, v in d.items()}
        if "lr" in d and "lr_local" not in d:
            kw["lr_local"] = d["lr"]
        return cls(**kw)


@dataclass(frozen=True)
class LambdaDelta:
    """The only message a client sends to the server: the change in ``lam``."""

    delta: np.ndarray


@dataclass
class RoundLog:
    round: int
    lam: list[float]
    client_objectives: list[float]
    global_objective: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class ClientUpdate:
    delta_lambda: np.ndarray
    mu: np.ndarray
    trace: list[float] = field(default_factory=list)


def project_nonnegative(v) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=float), 0.0)


def projected_gradient_step(
    objective: ClientObjective, lam: np.ndarray, mu: np.ndarray, lr_global: float, lr_local: float
) -> tuple[np.ndarray, np.ndarray]:
    """One joint step; both gradients are taken at the current (lam, mu)."""
    g_lam, g_mu = objective.gradient(lam, mu)
    if not (np.isfinite(g_lam).all() and np.isfinite(g_mu).all()):
        raise NonFiniteGradient(f"non-finite gradient on client {objective.client}")
    mu_next = project_nonnegative(mu - lr_local * g_mu)
    lam_next = project_nonnegative(lam - lr_global * g_lam)
    return lam_next, mu_next


def client_local_update(
    objective: ClientObjective,
    lam_in: np.ndarray,
    mu_in: np.ndarray,
    steps: int,
    lr_global: float,
    lr_local: float,
    record_trace: bool = True,
) -> ClientUpdate:
    lam = np.asarray(lam_in, dtype=float)
    mu = np.asarray(mu_in, dtype=float)
    trace = [objective.value(lam, mu)] if record_trace else []
    for _ in range(steps):
        lam, mu = projected_gradient_step(objective, lam, mu, lr_global, lr_local)
        if record_trace:
            trace.append(objective.value(lam, mu))
    return ClientUpdate(lam - lam_in, mu, trace)


def server_aggregate(lam, deltas: Sequence[np.ndarray], mode: str = "sum") -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    deltas = [np.asarray(getattr(d, "delta", d), dtype=float) for d in deltas]
    for d in deltas:
        if d.shape != lam.shape:
            raise DimensionMismatch(f"delta of shape {d.shape} for lambda of shape {lam.shape}")
    if not deltas:
        return project_nonnegative(lam)
    total = np.sum(deltas, axis=0)
    if mode == "mean":
        total = total / len(deltas)
    return project_nonnegative(lam + total)


class FederatedClient:
    """Holds one client's data-derived objective and its private ``mu``."""

    def __init__(self, objective: ClientObjective, steps: int, lr_global: float, lr_local: float):
        self._objective = objective
        self._steps = steps
        self._lr_global = lr_global
        self._lr_local = lr_local
        self._mu = np.zeros(objective.n_mu)

    def local_round(self, lam: np.ndarray) -> LambdaDelta:
        update = client_local_update(
            self._objective, lam, self._mu, self._steps, self._lr_global, self._lr_local,
            record_trace=False,
        )
        self._mu = update.mu
        return LambdaDelta(update.delta_lambda)

    def refine_mu(self, lam: np.ndarray, steps: int) -> None:
        """Descend in ``mu`` only, with ``lam`` frozen."""
        mu = self._mu
        for _ in range(steps):
            _, g_mu = self._objective.gradient(lam, mu)
            mu = project_nonnegative(mu - self._lr_local * g_mu)
        self._mu = mu

    def objective_value(self, lam: np.ndarray) -> float:
        return self._objective.value(lam, self._mu)

    def release_mu(self) -> np.ndarray:
        """The client's final multipliers, used to assemble its deployed classifier."""
        return self._mu.copy()


def auto_step_size(objectives: Sequence[ClientObjective]) -> float:
    """1/L for the block-separable ``mu`` updates: the largest client bound."""
    bound = max((o.smoothness_bound() for o in objectives), default=0.0)
    return 1.0 / bound if bound > 0 else 1.0


def auto_global_step_size(objectives: Sequence[ClientObjective], aggregation: str = "sum") -> float:
    """1/L for ``lam``; summed deltas step on the total objective, so bounds add."""
    if aggregation == "mean":
        return auto_step_size(objectives)
    bound = math.fsum(o.smoothness_bound() for o in objectives)
    return 1.0 / bound if bound > 0 else 1.0


def build_client_objectives(
    validation: FederatedDataset,
    scores: np.ndarray,
    constraints: FairnessConstraints,
    stats: GroupStatistics,
    beta: float,
) -> list[ClientObjective]:
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(validation),):
        raise DimensionMismatch(f"{len(scores)} scores for {len(validation)} validation rows")
    out = []
    for c in range(validation.num_clients):
        m = validation.client == c
        out.append(ClientObjective(c, scores[m], validation.sensitive[m], stats, constraints, beta))
    return out


def run_federated(
    objectives: Sequence[ClientObjective],
    config: OptimizerConfig,
    workers: int = 1,
) -> tuple[DualParams, list[RoundLog]]:
    """Run the rounds on prebuilt client objectives; returns final duals and logs."""
    lr_g = config.lr_global if config.lr_global is not None else auto_global_step_size(objectives, config.aggregation)
    lr_l = config.lr_local if config.lr_local is not None else auto_step_size(objectives)
    clients = [FederatedClient(o, config.local_steps, lr_g, lr_l) for o in objectives]
    n_lambda = objectives[0].n_lambda if objectives else 0
    lam = np.zeros(n_lambda)
    logs: list[RoundLog] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(1, config.rounds + 1):
            if pool is None:
                deltas = [cl.local_round(lam) for cl in clients]
            else:
                deltas = list(pool.map(lambda cl: cl.local_round(lam), clients))
            lam = server_aggregate(lam, deltas, config.aggregation)
            values = [cl.objective_value(lam) for cl in clients]
            logs.append(RoundLog(t, lam.tolist(), values, math.fsum(values)))
    finally:
        if pool is not None:
            pool.shutdown()
    if config.final_local_steps:
        for cl in clients:
            cl.refine_mu(lam, config.final_local_steps)
    duals = DualParams(lam=lam, mu={o.client: cl.release_mu() for o, cl in zip(objectives, clients)})
    return duals, logs


def run_federated_postprocess(
    validation: FederatedDataset,
    scores: np.ndarray,
    constraints: FairnessConstraints,
    config: OptimizerConfig,
    stats: GroupStatistics | None = None,
    score_source=None,
    workers: int = 1,
) -> tuple[FairClassifier, list[RoundLog]]:
    """Fit the fair classifier from validation scores; statistics default to the validation split."""
    stats = stats if stats is not None else compute_group_statistics(validation)
    objectives = build_client_objectives(validation, scores, constraints, stats, config.beta)
    duals, logs = run_federated(objectives, config, workers)
    return FairClassifier(duals, stats, constraints, score_source), logs


def centralized_projected_gradient(
    objectives: Sequence[ClientObjective],
    steps: int,
    lr_global: float | None = None,
    lr_local: float | None = None,
) -> DualParams:
    """Plain projected gradient descent on the sum of client objectives."""
    lr_g = lr_global if lr_global is not None else auto_global_step_size(objectives)
    lr_l = lr_local if lr_local is not None else auto_step_size(objectives)
    lam = np.zeros(objectives[0].n_lambda if objectives else 0)
    mus = [np.zeros(o.n_mu) for o in objectives]
    for _ in range(steps):
        g_lam = np.zeros_like(lam)
        new_mus = []
        for o, mu in zip(objectives, mus):
            gl, gm = o.gradient(lam, mu)
            g_lam += gl
            new_mus.append(project_nonnegative(mu - lr_l * gm))
        mus = new_mus
        lam = project_nonnegative(lam - lr_g * g_lam)
    return DualParams(lam=lam, mu={o.client: mu for o, mu in zip(objectives, mus)})


def global_objective(objectives: Sequence[ClientObjective], duals: DualParams) -> float:
    return math.fsum(o.value(duals.lam, duals.mu_c(o.client)) for o in objectives)


def write_round_logs(logs: Sequence[RoundLog], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(log.to_json() + "\n" for log in logs))
