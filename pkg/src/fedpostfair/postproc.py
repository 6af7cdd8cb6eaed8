"""Calibration function, thresholding classifier and the smoothed client objective.

For sensitive value ``a`` on client ``c`` with score ``eta`` the calibration
score is::

    F = p_ac * (2 eta - 1) - (lam1 - lam2) . phi(a, c, eta) - (mu1_c - mu2_c) . psi(a, c, eta)

where ``phi`` are the global and ``psi`` the local disparity coefficients.
The classifier predicts 1 iff ``F >= 0``. Dual variables are found by
minimising, per client, the softplus-smoothed objective::

    H_c = sum_a mean_i r_beta(F_i) + delta_g / |C| * sum(lam) + delta_c * sum(mu_c)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .criteria import Criterion, DisparitySpec, coefficient_vector
from .domain import SENSITIVE_GROUPS, FairnessBudget, GroupStatistics
from .errors import EmptyGroup, InvalidSpec, MissingStatistic

ETA_CLIP = 1e-6
DEFAULT_BETA = 100.0


@dataclass(frozen=True)
class FairnessConstraints:
    """Which criterion is enforced at each level, and with what budget.

    A family whose budget is infinite has no dual block at all.
    """

    criterion: Criterion
    budget: FairnessBudget
    num_clients: int
    local_criterion: Criterion | None = None

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        if self.local_criterion is None:
            object.__setattr__(self, "local_criterion", self.criterion)
        else:
            object.__setattr__(self, "local_criterion", Criterion(self.local_criterion))

    @property
    def global_spec(self) -> DisparitySpec | None:
        if not self.budget.global_active:
            return None
        return DisparitySpec.global_(self.criterion)

    def local_spec(self, c: int) -> DisparitySpec | None:
        if not self.budget.local_active(c):
            return None
        return DisparitySpec.local(self.local_criterion, c)

    @property
    def k_global(self) -> int:
        spec = self.global_spec
        return spec.k if spec else 0

    def k_local(self, c: int) -> int:
        spec = self.local_spec(c)
        return spec.k if spec else 0


@dataclass(frozen=True)
class SmoothingConfig:
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise InvalidSpec(f"beta must be positive and finite, got {self.beta}")


@dataclass
class DualParams:
    """Nonnegative multipliers; ``lam = [lam1, lam2]``, ``mu[c] = [mu1_c, mu2_c]``."""

    lam: np.ndarray
    mu: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, constraints: FairnessConstraints) -> "DualParams":
        return cls(
            lam=np.zeros(2 * constraints.k_global),
            mu={c: np.zeros(2 * constraints.k_local(c)) for c in range(constraints.num_clients)},
        )

    @property
    def lambda1(self) -> np.ndarray:
        return self.lam[: len(self.lam) // 2]

    @property
    def lambda2(self) -> np.ndarray:
        return self.lam[len(self.lam) // 2:]

    def mu_c(self, c: int) -> np.ndarray:
        return self.mu.get(c, np.zeros(0))

    def is_nonnegative(self) -> bool:
        return bool((self.lam >= 0).all() and all((m >= 0).all() for m in self.mu.values()))

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam.tolist(),
            "mu": {str(c): m.tolist() for c, m in sorted(self.mu.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DualParams":
        return cls(
            lam=np.asarray(d["lambda"], dtype=float),
            mu={int(c): np.asarray(m, dtype=float) for c, m in d["mu"].items()},
        )


def _split(v: np.ndarray) -> np.ndarray:
    """[v1, v2] -> v1 - v2."""
    k = len(v) // 2
    return v[:k] - v[k:]


def clip_scores(eta) -> np.ndarray:
    return np.clip(np.asarray(eta, dtype=float), ETA_CLIP, 1.0 - ETA_CLIP)


def _coefficients(spec: DisparitySpec | None, a: int, c: int, eta, stats) -> np.ndarray:
    if spec is None:
        return np.zeros(np.shape(eta) + (0,))
    return coefficient_vector(spec, a, c, eta, stats)


def calibration_score(
    duals: DualParams,
    eta,
    a: int,
    c: int,
    stats: GroupStatistics,
    constraints: FairnessConstraints,
) -> np.ndarray | float:
    """Signed calibration score for group (a, c); vectorised over ``eta``."""
    if not stats.has_group(a, c):
        raise MissingStatistic(f"no statistics for group (a={a}, c={c})")
    eta_c = clip_scores(eta)
    phi = _coefficients(constraints.global_spec, a, c, eta_c, stats)
    psi = _coefficients(constraints.local_spec(c), a, c, eta_c, stats)
    f = stats.p_ac[(a, c)] * (2.0 * eta_c - 1.0) - phi @ _split(duals.lam) - psi @ _split(duals.mu_c(c))
    return float(f) if np.ndim(f) == 0 else f


def r_beta(x, beta: float):
    """Softplus relaxation of max(x, 0) with sharpness ``beta``."""
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-beta * np.abs(x))) / beta
    return float(out) if out.ndim == 0 else out


def r_beta_prime(x, beta: float):
    return expit(beta * np.asarray(x, dtype=float))


class ClientObjective:
    """Smoothed dual objective of one client, with everything but the duals precomputed.

    ``eta`` and ``sensitive`` hold the client's validation rows. ``weights``
    defaults to ``1 / N_{a,c}`` within each group (the sample mean); the
    oracle passes conditional cell masses instead.
    """

    def __init__(
        self,
        client: int,
        eta: np.ndarray,
        sensitive: np.ndarray,
        stats: GroupStatistics,
        constraints: FairnessConstraints,
        beta: float = DEFAULT_BETA,
        weights: np.ndarray | None = None,
    ):
        SmoothingConfig(beta)
        self.client = client
        self.beta = float(beta)
        self.k_global = constraints.k_global
        self.k_local = constraints.k_local(client)
        active = self.k_global + self.k_local > 0

        eta = clip_scores(eta)
        sensitive = np.asarray(sensitive)
        n = len(eta)
        self.base = np.zeros(n)
        self.phi = np.zeros((n, self.k_global))
        self.psi = np.zeros((n, self.k_local))
        self.weights = np.zeros(n)
        self.group_index: dict[int, np.ndarray] = {}
        for a in SENSITIVE_GROUPS:
            idx = np.flatnonzero(sensitive == a)
            if len(idx) == 0:
                if active:
                    raise EmptyGroup(f"client {client} has no validation samples with a={a}")
                continue
            if not stats.has_group(a, client):
                raise MissingStatistic(f"no statistics for group (a={a}, c={client})")
            self.group_index[a] = idx
            self.base[idx] = stats.p_ac[(a, client)] * (2.0 * eta[idx] - 1.0)
            self.phi[idx] = _coefficients(constraints.global_spec, a, client, eta[idx], stats)
            self.psi[idx] = _coefficients(constraints.local_spec(client), a, client, eta[idx], stats)
            self.weights[idx] = 1.0 / len(idx) if weights is None else np.asarray(weights)[idx]

        self.global_penalty = (
            constraints.budget.global_delta / constraints.num_clients if self.k_global else 0.0
        )
        self.local_penalty = constraints.budget.local(client) if self.k_local else 0.0

    @property
    def n_lambda(self) -> int:
        return 2 * self.k_global

    @property
    def n_mu(self) -> int:
        return 2 * self.k_local

    def calibration(self, lam: np.ndarray, mu: np.ndarray) -> np.ndarray:
        return self.base - self.phi @ _split(lam) - self.psi @ _split(mu)

    def value(self, lam: np.ndarray, mu: np.ndarray) -> float:
        f = self.calibration(lam, mu)
        data = float(self.weights @ r_beta(f, self.beta))
        return data + self.global_penalty * float(np.sum(lam)) + self.local_penalty * float(np.sum(mu))

    def gradient(self, lam: np.ndarray, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.weights * r_beta_prime(self.calibration(lam, mu), self.beta)
        g_phi = self.phi.T @ s
        g_psi = self.psi.T @ s
        grad_lam = np.concatenate([-g_phi, g_phi]) + self.global_penalty
        grad_mu = np.concatenate([-g_psi, g_psi]) + self.local_penalty
        return grad_lam, grad_mu

    def smoothness_bound(self) -> float:
        """Upper bound on the Lipschitz constant of the gradient in (lam, mu).

        The Hessian is ``sum_i w_i r''(F_i) v_i v_i^T`` with ``v_i = (-phi_i, phi_i, -psi_i, psi_i)``
        and ``r'' <= beta / 4``; group weights sum to one, so the bound is
        ``beta / 4 * sum_a max_{i in a} |v_i|^2``.
        """
        sq = 2.0 * ((self.phi ** 2).sum(axis=1) + (self.psi ** 2).sum(axis=1))
        total = 0.0
        for idx in self.group_index.values():
            total += float(self.weights[idx].sum() * sq[idx].max()) if len(idx) else 0.0
        return self.beta / 4.0 * total


def local_objective(objective: ClientObjective, lam, mu) -> float:
    return objective.value(np.asarray(lam, dtype=float), np.asarray(mu, dtype=float))


def local_gradient(objective: ClientObjective, lam, mu) -> tuple[np.ndarray, np.ndarray]:
    return objective.gradient(np.asarray(lam, dtype=float), np.asarray(mu, dtype=float))


ScoreSource = Callable[[np.ndarray, int, int], float]


@dataclass
class FairClassifier:
    """Thresholding rule ``h(x, a, c) = 1[F(eta(x, a, c)) >= 0]``."""

    duals: DualParams
    stats: GroupStatistics
    constraints: FairnessConstraints
    score_source: ScoreSource | None = None

    def calibration_scores(self, eta, sensitive, client) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        sensitive = np.asarray(sensitive)
        client = np.asarray(client)
        out = np.empty(len(eta))
        for a in SENSITIVE_GROUPS:
            for c in np.unique(client[sensitive == a]):
                m = (sensitive == a) & (client == c)
                out[m] = calibration_score(self.duals, eta[m], a, int(c), self.stats, self.constraints)
        return out

    def predict_scores(self, eta, sensitive, client) -> np.ndarray:
        return (self.calibration_scores(eta, sensitive, client) >= 0).astype(np.int64)


def predict(classifier: FairClassifier, x, a: int, c: int) -> int:
    if classifier.score_source is None:
        raise InvalidSpec("classifier has no score source; use predict_scores with precomputed scores")
    eta = classifier.score_source(np.asarray(x, dtype=float), a, c)
    f = calibration_score(classifier.duals, eta, a, c, classifier.stats, classifier.constraints)
    return int(f >= 0)
