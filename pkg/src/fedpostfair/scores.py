"""Plug-in estimates of eta(x, a, c).

A logistic model is trained with federated averaging, its logits are
recalibrated per (a, c) group with an affine map, and a tiny deterministic
per-sample jitter breaks ties between equal scores.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit, log_expit

from .domain import SENSITIVE_GROUPS, FederatedDataset, SampleRecord
from .errors import DimensionMismatch, Divergence, EmptyDataset, InvalidSpec, ParseError, SchemaMismatch

SCORE_CLIP = 1e-6
DEFAULT_NOISE = 1e-6
MIN_CALIBRATION_SAMPLES = 30
SCORE_COLUMNS = ("sample_id", "client", "sensitive", "label", "score")


def design_matrix(features: np.ndarray, sensitive: np.ndarray) -> np.ndarray:
    """Features augmented with the sensitive attribute and an intercept column."""
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    return np.hstack([features, np.asarray(sensitive, dtype=float).reshape(n, 1), np.ones((n, 1))])


@dataclass(frozen=True)
class ScoreModel:
    weights: np.ndarray
    epochs: int = 0
    lr: float = 0.0
    local_epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.weights).all():
            raise Divergence("score model has non-finite weights")

    def logits(self, features, sensitive) -> np.ndarray:
        x = design_matrix(features, sensitive)
        if x.shape[1] != len(self.weights):
            raise DimensionMismatch(f"{x.shape[1] - 2} features for a model with {len(self.weights) - 2}")
        return x @ self.weights

    def predict_proba(self, features, sensitive) -> np.ndarray:
        return expit(self.logits(features, sensitive))


def _logistic_loss(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    z = x @ w
    return float(-np.mean(y * log_expit(z) + (1 - y) * log_expit(-z)))


def train_score_model(
    train: FederatedDataset,
    epochs: int = 20,
    lr: float = 0.1,
    local_epochs: int = 1,
    seed: int = 0,
    batch_size: int = 64,
    l2: float = 1e-4,
) -> ScoreModel:
    """FedAvg over clients: local minibatch SGD on cross-entropy, size-weighted averaging.

    ``epochs`` is the number of communication rounds.
    """
    if len(train) == 0:
        raise EmptyDataset("no training rows")
    if not np.isfinite(train.features).all():
        raise InvalidSpec("training features must be finite")
    x_all = design_matrix(train.features, train.sensitive)
    y_all = train.label.astype(float)
    parts = [np.flatnonzero(train.client == c) for c in range(train.num_clients)]
    parts = [p for p in parts if len(p)]
    sizes = np.array([len(p) for p in parts], dtype=float)
    rngs = [np.random.default_rng([seed, c]) for c in range(len(parts))]
    w = np.zeros(x_all.shape[1])
    for _ in range(epochs):
        local = []
        for idx, rng in zip(parts, rngs):
            x, y = x_all[idx], y_all[idx]
            wc = w.copy()
            for _ in range(local_epochs):
                order = rng.permutation(len(idx))
                for start in range(0, len(idx), batch_size):
                    b = order[start:start + batch_size]
                    err = expit(x[b] @ wc) - y[b]
                    wc -= lr * (x[b].T @ err / len(b) + l2 * wc)
            local.append(wc)
        w = np.average(local, axis=0, weights=sizes)
        if not (np.isfinite(w).all() and math.isfinite(_logistic_loss(x_all, y_all, w))):
            raise Divergence(f"training loss became non-finite (lr={lr})")
    return ScoreModel(w, epochs=epochs, lr=lr, local_epochs=local_epochs, seed=seed)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineLogit:
    slope: float = 1.0
    offset: float = 0.0

    def __call__(self, z):
        return self.slope * np.asarray(z, dtype=float) + self.offset


@dataclass(frozen=True)
class CalibrationMap:
    groups: Mapping[tuple[int, int], AffineLogit] = field(default_factory=dict)
    fallback: AffineLogit = AffineLogit()

    def transform(self, a: int, c: int) -> AffineLogit:
        return self.groups.get((a, c), self.fallback)

    def apply(self, logits, sensitive, client) -> np.ndarray:
        logits = np.asarray(logits, dtype=float)
        out = self.fallback(logits)
        for (a, c), t in self.groups.items():
            m = (sensitive == a) & (client == c)
            out[m] = t(logits[m])
        return out

    @classmethod
    def identity(cls) -> "CalibrationMap":
        return cls()


def fit_platt(z: np.ndarray, y: np.ndarray, iters: int = 50, ridge: float = 1e-8) -> AffineLogit | None:
    """Newton fit of ``y ~ sigmoid(slope * z + offset)``; None when the fit is degenerate."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(z) == 0 or y.min() == y.max():
        return None
    x = np.stack([z, np.ones_like(z)], axis=1)
    theta = np.array([1.0, 0.0])
    for _ in range(iters):
        p = expit(x @ theta)
        grad = x.T @ (p - y) + ridge * theta
        hess = (x * (p * (1 - p))[:, None]).T @ x + ridge * np.eye(2)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        theta = theta - step
        if np.abs(step).max() < 1e-10:
            break
    if not np.isfinite(theta).all() or theta[0] <= 0:
        return None
    return AffineLogit(float(theta[0]), float(theta[1]))


def calibrate_groupwise(
    model: ScoreModel, validation: FederatedDataset, min_samples: int = MIN_CALIBRATION_SAMPLES
) -> CalibrationMap:
    """Per-(a, c) Platt maps on the validation logits; small or degenerate groups use the pooled map."""
    z = model.logits(validation.features, validation.sensitive)
    return calibrate_logits(z, validation, min_samples)


def calibrate_logits(z, dataset: FederatedDataset, min_samples: int = MIN_CALIBRATION_SAMPLES) -> CalibrationMap:
    fallback = fit_platt(z, dataset.label) or AffineLogit()
    groups = {}
    for a in SENSITIVE_GROUPS:
        for c in range(dataset.num_clients):
            m = (dataset.sensitive == a) & (dataset.client == c)
            if m.sum() < min_samples:
                continue
            t = fit_platt(z[m], dataset.label[m])
            if t is not None:
                groups[(a, c)] = t
    return CalibrationMap(groups, fallback)


# ---------------------------------------------------------------------------
# Scoring with deterministic jitter
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(_MASK64)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def uniform_jitter(sample_id, seed: int, epsilon: float) -> np.ndarray:
    """Uniform(-epsilon, epsilon) value that depends only on (sample_id, seed)."""
    ids = np.atleast_1d(np.asarray(sample_id, dtype=np.int64)).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(_splitmix64(np.full_like(ids, np.uint64(seed & _MASK64))) ^ ids)
    u = (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return epsilon * (2.0 * u - 1.0)


def clamp_scores(eta) -> np.ndarray:
    return np.clip(np.asarray(eta, dtype=float), SCORE_CLIP, 1.0 - SCORE_CLIP)


def finalize_scores(raw, sample_id, noise_epsilon: float = DEFAULT_NOISE, seed: int = 0) -> np.ndarray:
    if not noise_epsilon >= 0:
        raise InvalidSpec(f"noise_epsilon must be nonnegative, got {noise_epsilon}")
    raw = np.asarray(raw, dtype=float)
    return clamp_scores(raw + uniform_jitter(sample_id, seed, noise_epsilon).reshape(raw.shape))


def score(
    model: ScoreModel,
    calibration: CalibrationMap,
    record: SampleRecord,
    noise_epsilon: float = DEFAULT_NOISE,
    seed: int = 0,
) -> float:
    z = model.logits(np.atleast_2d(record.features), np.array([record.sensitive]))[0]
    raw = expit(calibration.transform(record.sensitive, record.client)(z))
    return float(finalize_scores(raw, record.sample_id, noise_epsilon, seed))


@dataclass(frozen=True)
class ScoreTable:
    """Final eta estimates aligned with the rows of one dataset split."""

    eta: np.ndarray
    sample_id: np.ndarray
    noise_epsilon: float = DEFAULT_NOISE

    def __post_init__(self):
        if len(self.eta) != len(self.sample_id):
            raise DimensionMismatch("eta and sample_id lengths differ")
        if len(self.eta) and not ((self.eta >= SCORE_CLIP) & (self.eta <= 1 - SCORE_CLIP)).all():
            raise InvalidSpec("scores must lie in [1e-6, 1 - 1e-6]")

    def __len__(self) -> int:
        return len(self.eta)


def score_dataset(
    model: ScoreModel,
    calibration: CalibrationMap,
    dataset: FederatedDataset,
    noise_epsilon: float = DEFAULT_NOISE,
    seed: int = 0,
) -> ScoreTable:
    z = model.logits(dataset.features, dataset.sensitive)
    raw = expit(calibration.apply(z, dataset.sensitive, dataset.client))
    return ScoreTable(finalize_scores(raw, dataset.sample_id, noise_epsilon, seed), dataset.sample_id.copy(), noise_epsilon)


def write_score_csv(path: str | os.PathLike, dataset: FederatedDataset, eta: np.ndarray) -> None:
    eta = np.asarray(eta, dtype=float)
    if len(eta) != len(dataset):
        raise DimensionMismatch(f"{len(eta)} scores for {len(dataset)} rows")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for i in range(len(dataset)):
            w.writerow([int(dataset.sample_id[i]), int(dataset.client[i]), int(dataset.sensitive[i]),
                        int(dataset.label[i]), repr(float(eta[i]))])


def read_score_csv(path: str | os.PathLike, num_clients: int | None = None) -> tuple[FederatedDataset, ScoreTable]:
    """Load externally produced scores; rows carry no features."""
    ids, clients, sens, labels, eta = [], [], [], [], []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SCORE_COLUMNS:
            raise SchemaMismatch(f"score file header must be {','.join(SCORE_COLUMNS)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if len(row) != len(SCORE_COLUMNS):
                raise ParseError(line, "*", f"expected {len(SCORE_COLUMNS)} fields, got {len(row)}")
            try:
                i, c, a, y = (int(v) for v in row[:4])
            except ValueError:
                raise ParseError(line, "sample_id..label", "non-integer value") from None
            try:
                s = float(row[4])
            except ValueError:
                raise ParseError(line, "score", f"non-numeric value {row[4]!r}") from None
            if a not in SENSITIVE_GROUPS:
                raise ParseError(line, "sensitive", f"value {a} not in {{-1, 1}}")
            if y not in (0, 1):
                raise ParseError(line, "label", f"value {y} not in {{0, 1}}")
            if c < 0:
                raise ParseError(line, "client", "negative client index")
            if not 0 < s < 1:
                raise ParseError(line, "score", f"score {s} outside (0, 1)")
            ids.append(i); clients.append(c); sens.append(a); labels.append(y); eta.append(s)
    if not ids:
        raise EmptyDataset(f"{path}: no score rows")
    client = np.asarray(clients, dtype=np.int64)
    k = num_clients if num_clients is not None else int(client.max()) + 1
    ds = FederatedDataset(
        features=np.zeros((len(ids), 0)),
        sensitive=np.asarray(sens, dtype=np.int64),
        label=np.asarray(labels, dtype=np.int64),
        client=client,
        sample_id=np.asarray(ids, dtype=np.int64),
        num_clients=k,
    )
    return ds, ScoreTable(clamp_scores(eta), ds.sample_id.copy(), 0.0)
