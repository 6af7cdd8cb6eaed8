"""Core data containers and empirical group statistics.

A federated dataset is stored column-wise (numpy arrays) rather than as a
list of record objects; :class:`SampleRecord` is the row view used at API
boundaries and in small tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import EmptyDataset, InvalidSpec

SENSITIVE_GROUPS = (-1, 1)
LABELS = (0, 1)


@dataclass(frozen=True)
class SampleRecord:
    features: np.ndarray
    sensitive: int
    label: int
    client: int
    sample_id: int = -1


@dataclass(frozen=True)
class ClientDataset:
    """The rows of a single client. Arrays are aligned."""

    client: int
    features: np.ndarray
    sensitive: np.ndarray
    label: np.ndarray
    sample_id: np.ndarray

    def __len__(self) -> int:
        return len(self.sensitive)

    def group_mask(self, a: int) -> np.ndarray:
        return self.sensitive == a


@dataclass(frozen=True)
class FederatedDataset:
    features: np.ndarray
    sensitive: np.ndarray
    label: np.ndarray
    client: np.ndarray
    sample_id: np.ndarray
    num_clients: int
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.sensitive)
        for name in ("label", "client", "sample_id"):
            if len(getattr(self, name)) != n:
                raise InvalidSpec(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise InvalidSpec(f"features must be a ({n}, d) matrix, got shape {self.features.shape}")
        if n and not np.isin(self.sensitive, SENSITIVE_GROUPS).all():
            raise InvalidSpec("sensitive attribute must take values in {-1, +1}")
        if n and not np.isin(self.label, LABELS).all():
            raise InvalidSpec("labels must take values in {0, 1}")
        if n and (self.client.min() < 0 or self.client.max() >= self.num_clients):
            raise InvalidSpec(f"client index outside 0..{self.num_clients - 1}")

    @classmethod
    def from_records(
        cls,
        records: Sequence[SampleRecord],
        num_clients: int | None = None,
        feature_names: Sequence[str] = (),
    ) -> "FederatedDataset":
        if not records:
            raise EmptyDataset("no records")
        widths = {len(np.atleast_1d(r.features)) for r in records}
        if len(widths) != 1:
            raise InvalidSpec(f"feature vectors have differing lengths {sorted(widths)}")
        ids = [r.sample_id if r.sample_id >= 0 else i for i, r in enumerate(records)]
        clients = np.array([r.client for r in records], dtype=np.int64)
        return cls(
            features=np.array([np.atleast_1d(r.features) for r in records], dtype=float),
            sensitive=np.array([r.sensitive for r in records], dtype=np.int64),
            label=np.array([r.label for r in records], dtype=np.int64),
            client=clients,
            sample_id=np.array(ids, dtype=np.int64),
            num_clients=int(num_clients if num_clients is not None else clients.max() + 1),
            feature_names=tuple(feature_names),
        )

    def __len__(self) -> int:
        return len(self.sensitive)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def records(self) -> Iterator[SampleRecord]:
        for i in range(len(self)):
            yield SampleRecord(
                self.features[i], int(self.sensitive[i]), int(self.label[i]),
                int(self.client[i]), int(self.sample_id[i]),
            )

    def subset(self, index: np.ndarray) -> "FederatedDataset":
        """Rows selected by a boolean mask or an index array; client count is kept."""
        return FederatedDataset(
            features=self.features[index],
            sensitive=self.sensitive[index],
            label=self.label[index],
            client=self.client[index],
            sample_id=self.sample_id[index],
            num_clients=self.num_clients,
            feature_names=self.feature_names,
        )

    def client_data(self, c: int) -> ClientDataset:
        m = self.client == c
        return ClientDataset(c, self.features[m], self.sensitive[m], self.label[m], self.sample_id[m])

    def clients(self) -> list[ClientDataset]:
        return [self.client_data(c) for c in range(self.num_clients)]

    def with_clients(self, client: np.ndarray, num_clients: int) -> "FederatedDataset":
        return FederatedDataset(
            self.features, self.sensitive, self.label, np.asarray(client, dtype=np.int64),
            self.sample_id, num_clients, self.feature_names,
        )


@dataclass(frozen=True)
class GroupStatistics:
    """Plug-in probabilities needed by the disparity coefficients.

    Keys: ``p_ac[(a, c)]``, ``p_a[a]``, ``y_given_ac[(a, c, y)]``,
    ``ay_joint[(a, y)]``, ``c_given_a[a][c]``, ``counts[(a, c)]``.
    Cells with no mass have no probability entries.
    """

    num_clients: int
    p_ac: Mapping[tuple[int, int], float]
    p_a: Mapping[int, float]
    y_given_ac: Mapping[tuple[int, int, int], float]
    ay_joint: Mapping[tuple[int, int], float]
    c_given_a: Mapping[int, Mapping[int, float]]
    counts: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def has_group(self, a: int, c: int) -> bool:
        return (a, c) in self.p_ac


def statistics_from_masses(
    mass: Mapping[tuple[int, int], float],
    positive_mass: Mapping[tuple[int, int], float],
    num_clients: int,
    counts: Mapping[tuple[int, int], int] | None = None,
) -> GroupStatistics:
    """Build statistics from (a, c) -> P(A=a, C=c) and (a, c) -> P(A=a, C=c, Y=1).

    Masses need not be normalised; they are divided by their total.
    """
    total = math.fsum(mass.values())
    if total <= 0:
        raise EmptyDataset("no probability mass")
    p_ac, y_given_ac = {}, {}
    p_a = {a: 0.0 for a in SENSITIVE_GROUPS}
    ay = {(a, y): 0.0 for a in SENSITIVE_GROUPS for y in LABELS}
    for (a, c), m in sorted(mass.items()):
        if m <= 0:
            continue
        pos = positive_mass.get((a, c), 0.0)
        p_ac[(a, c)] = m / total
        p_a[a] += m
        ay[(a, 1)] += pos
        ay[(a, 0)] += m - pos
        for y, my in ((1, pos), (0, m - pos)):
            if my > 0:
                y_given_ac[(a, c, y)] = my / m
    c_given_a = {
        a: {c: mass[(a, c)] / p_a[a] for c in range(num_clients) if (a, c) in p_ac}
        for a in SENSITIVE_GROUPS if p_a[a] > 0
    }
    p_a = {a: v / total for a, v in p_a.items() if v > 0}
    ay_joint = {k: v / total for k, v in ay.items() if v > 0}
    return GroupStatistics(
        num_clients=num_clients,
        p_ac=p_ac,
        p_a=p_a,
        y_given_ac=y_given_ac,
        ay_joint=ay_joint,
        c_given_a=c_given_a,
        counts=dict(counts or {}),
    )


def compute_group_statistics(dataset: FederatedDataset) -> GroupStatistics:
    """Empirical frequencies of the (sensitive, client, label) cells of a dataset."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot estimate statistics from an empty dataset")
    counts, mass, positive = {}, {}, {}
    for a in SENSITIVE_GROUPS:
        for c in range(dataset.num_clients):
            m = (dataset.sensitive == a) & (dataset.client == c)
            n = int(m.sum())
            counts[(a, c)] = n
            mass[(a, c)] = float(n)
            positive[(a, c)] = float(dataset.label[m].sum())
    return statistics_from_masses(mass, positive, dataset.num_clients, counts)


@dataclass(frozen=True)
class FairnessBudget:
    """Disparity budgets. ``math.inf`` disables a constraint family."""

    global_delta: float = math.inf
    local_delta: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        values = [self.global_delta, *self.local_delta.values()]
        if any(not (v >= 0) for v in values):
            raise InvalidSpec(f"budgets must be nonnegative, got {values}")

    @classmethod
    def uniform(cls, num_clients: int, local_delta: float = math.inf, global_delta: float = math.inf):
        return cls(global_delta=float(global_delta), local_delta={c: float(local_delta) for c in range(num_clients)})

    def local(self, c: int) -> float:
        return self.local_delta.get(c, math.inf)

    @property
    def global_active(self) -> bool:
        return math.isfinite(self.global_delta)

    def local_active(self, c: int) -> bool:
        return math.isfinite(self.local(c))
