"""Demographic parity and equalized odds as composite linear disparities.

A disparity is a vector ``D_k(h) = sum_a E_{X|a,c}[coef_k(a, c, eta) * h]``
(summed over clients as well for the global scope). The group fairness
gap is ``max_k |D_k|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .domain import SENSITIVE_GROUPS, FederatedDataset, GroupStatistics
from .errors import EmptyGroup, InvalidSpec, MissingStatistic


class Criterion(str, Enum):
    DP = "DP"
    EO = "EO"

    @property
    def k(self) -> int:
        return 1 if self is Criterion.DP else 2


@dataclass(frozen=True)
class DisparitySpec:
    criterion: Criterion
    client: int | None = None  # None means global scope

    @classmethod
    def global_(cls, criterion: Criterion | str) -> "DisparitySpec":
        return cls(Criterion(criterion), None)

    @classmethod
    def local(cls, criterion: Criterion | str, client: int) -> "DisparitySpec":
        return cls(Criterion(criterion), int(client))

    @property
    def is_global(self) -> bool:
        return self.client is None

    @property
    def k(self) -> int:
        return self.criterion.k


def _positive(table, key, what: str) -> float:
    value = table.get(key)
    if value is None or value <= 0:
        raise MissingStatistic(f"{what}{key} is absent or zero")
    return float(value)


def coefficient_vector(
    spec: DisparitySpec, a: int, c: int, eta, stats: GroupStatistics
) -> np.ndarray:
    """Coefficients of the disparity for group (a, c) evaluated at ``eta``.

    ``eta`` may be a scalar or an array; the result has shape
    ``np.shape(eta) + (K,)``.
    """
    if a not in SENSITIVE_GROUPS:
        raise InvalidSpec(f"sensitive value {a} not in {{-1, +1}}")
    if not spec.is_global and c != spec.client:
        raise InvalidSpec(f"local spec for client {spec.client} evaluated at client {c}")
    eta = np.asarray(eta, dtype=float)
    ones = np.ones_like(eta)

    if spec.criterion is Criterion.DP:
        if spec.is_global:
            weight = stats.c_given_a.get(a, {}).get(c)
            if weight is None:
                raise MissingStatistic(f"P(C={c}|A={a}) is absent")
            return (a * weight * ones)[..., None]
        return (a * ones)[..., None]

    if spec.is_global:
        p = _positive(stats.p_ac, (a, c), "p_ac")
        pos = _positive(stats.ay_joint, (a, 1), "P(A,Y)")
        neg = _positive(stats.ay_joint, (a, 0), "P(A,Y)")
        return np.stack([a * p * eta / pos, a * p * (1.0 - eta) / neg], axis=-1)
    pos = _positive(stats.y_given_ac, (a, c, 1), "P(Y|A,C)")
    neg = _positive(stats.y_given_ac, (a, c, 0), "P(Y|A,C)")
    return np.stack([a * eta / pos, a * (1.0 - eta) / neg], axis=-1)


def empirical_disparity(
    predictions: np.ndarray,
    dataset: FederatedDataset,
    spec: DisparitySpec,
    stats: GroupStatistics,
    scores: np.ndarray | None = None,
) -> np.ndarray:
    """Sample estimate of the disparity vector of a classifier.

    ``predictions`` (and ``scores`` if given) are aligned with the rows of
    ``dataset``. When ``scores`` is None the observed labels stand in for
    eta, which turns the EO coefficients into exact per-group TPR/FPR
    estimates.
    """
    predictions = np.asarray(predictions, dtype=float)
    if predictions.shape != (len(dataset),):
        raise InvalidSpec(f"predictions have shape {predictions.shape}, expected ({len(dataset)},)")
    eta = dataset.label.astype(float) if scores is None else np.asarray(scores, dtype=float)
    clients = range(dataset.num_clients) if spec.is_global else [spec.client]
    total = np.zeros(spec.k)
    for c in clients:
        for a in SENSITIVE_GROUPS:
            m = (dataset.client == c) & (dataset.sensitive == a)
            if not m.any():
                if spec.is_global and not stats.has_group(a, c):
                    continue  # no mass anywhere: contributes nothing to the pooled rate
                raise EmptyGroup(f"group (a={a}, c={c}) has no samples")
            coef = coefficient_vector(spec, a, c, eta[m], stats)
            total += (coef * predictions[m, None]).mean(axis=0)
    return total


def fairness_metric(d) -> float:
    d = np.asarray(d, dtype=float)
    return float(np.abs(d).max()) if d.size else 0.0
