"""Dataset ingestion, heterogeneous partitioning, splitting and synthetic data."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .domain import SENSITIVE_GROUPS, FederatedDataset
from .errors import (
    DataError,
    DegeneratePartition,
    EmptyDataset,
    InvalidSpec,
    ParseError,
    SchemaMismatch,
)

MAX_PARTITION_ATTEMPTS = 100


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    features: Sequence[str]
    sensitive: str
    label: str
    sensitive_map: Mapping[str, int] | None = None  # raw text -> {-1, +1}
    label_map: Mapping[str, int] | None = None
    client: str | None = None
    sample_id: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "CsvSchema":
        return cls(
            features=tuple(d["features"]),
            sensitive=d["sensitive"],
            label=d["label"],
            sensitive_map={str(k): int(v) for k, v in d["sensitive_map"].items()} if d.get("sensitive_map") else None,
            label_map={str(k): int(v) for k, v in d["label_map"].items()} if d.get("label_map") else None,
            client=d.get("client"),
            sample_id=d.get("sample_id"),
        )


def _parse_int(raw: str, mapping, allowed, line: int, column: str) -> int:
    text = raw.strip()
    if mapping is not None:
        if text not in mapping:
            raise ParseError(line, column, f"value {text!r} not in declared mapping {sorted(mapping)}")
        value = mapping[text]
    else:
        try:
            value = int(float(text))
        except ValueError:
            raise ParseError(line, column, f"non-numeric value {text!r}") from None
    if allowed is not None and value not in allowed:
        raise ParseError(line, column, f"value {value} not in {sorted(allowed)}")
    return value


def load_csv(path: str | os.PathLike, schema: CsvSchema) -> FederatedDataset:
    """Parse a delimited file into a dataset; without a client column all rows go to client 0."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [*schema.features, schema.sensitive, schema.label]
        needed += [c for c in (schema.client, schema.sample_id) if c]
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaMismatch(f"{path}: missing columns {missing}")
        feats, sens, labels, clients, ids = [], [], [], [], []
        for i, row in enumerate(reader):
            line = i + 2  # header is line 1
            try:
                feats.append([float(row[f]) for f in schema.features])
            except (TypeError, ValueError):
                bad = next(f for f in schema.features if not _is_float(row[f]))
                raise ParseError(line, bad, f"non-numeric value {row[bad]!r}") from None
            sens.append(_parse_int(row[schema.sensitive], schema.sensitive_map, SENSITIVE_GROUPS, line, schema.sensitive))
            labels.append(_parse_int(row[schema.label], schema.label_map, (0, 1), line, schema.label))
            clients.append(_parse_int(row[schema.client], None, None, line, schema.client) if schema.client else 0)
            if clients[-1] < 0:
                raise ParseError(line, schema.client, "negative client index")
            ids.append(_parse_int(row[schema.sample_id], None, None, line, schema.sample_id) if schema.sample_id else i)
    if not sens:
        raise EmptyDataset(f"{path}: no data rows")
    clients_arr = np.asarray(clients, dtype=np.int64)
    num_clients = int(clients_arr.max()) + 1
    present = np.unique(clients_arr)
    if len(present) != num_clients:
        raise SchemaMismatch(f"{path}: client indices must be 0..{num_clients - 1} without gaps")
    return FederatedDataset(
        features=np.asarray(feats, dtype=float).reshape(len(sens), len(schema.features)),
        sensitive=np.asarray(sens, dtype=np.int64),
        label=np.asarray(labels, dtype=np.int64),
        client=clients_arr,
        sample_id=np.asarray(ids, dtype=np.int64),
        num_clients=num_clients,
        feature_names=tuple(schema.features),
    )


def _is_float(text) -> bool:
    try:
        float(text)
        return True
    except (TypeError, ValueError):
        return False


# ---------------------------------------------------------------------------
# Adult
# ---------------------------------------------------------------------------

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]
ADULT_NUMERIC = ["age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week"]
ADULT_CATEGORICAL = ["workclass", "education", "marital-status", "occupation", "relationship", "race", "native-country"]


def default_adult_dir() -> Path:
    env = os.environ.get("FEDPOSTFAIR_ADULT_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data" / "adult"


def load_adult(data_dir: str | os.PathLike | None = None) -> FederatedDataset:
    """UCI Adult (train and test files pooled, rows with missing values dropped).

    Sensitive attribute is sex (Male -> +1, Female -> -1), label is income > 50K.
    Categorical columns are one-hot encoded and numeric columns z-scored.
    """
    import pandas as pd

    data_dir = Path(data_dir) if data_dir is not None else default_adult_dir()
    files = [data_dir / "adult.data", data_dir / "adult.test"]
    if not all(f.exists() for f in files):
        raise DataError(f"Adult files not found in {data_dir}; run scripts/fetch_adult.py")
    frames = [
        pd.read_csv(f, header=None, names=ADULT_COLUMNS, skipinitialspace=True,
                    na_values="?", comment="|")
        for f in files
    ]
    df = pd.concat(frames, ignore_index=True).dropna().reset_index(drop=True)
    label = df["income"].str.rstrip(".").eq(">50K").to_numpy(dtype=np.int64)
    sensitive = np.where(df["sex"].eq("Male"), 1, -1).astype(np.int64)
    numeric = df[ADULT_NUMERIC].to_numpy(dtype=float)
    numeric = (numeric - numeric.mean(axis=0)) / numeric.std(axis=0)
    dummies = pd.get_dummies(df[ADULT_CATEGORICAL], dtype=float)
    features = np.hstack([numeric, dummies.to_numpy()])
    names = tuple(ADULT_NUMERIC) + tuple(dummies.columns)
    n = len(df)
    return FederatedDataset(
        features=features,
        sensitive=sensitive,
        label=label,
        client=np.zeros(n, dtype=np.int64),
        sample_id=np.arange(n, dtype=np.int64),
        num_clients=1,
        feature_names=names,
    )


# ---------------------------------------------------------------------------
# Partitioning and splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionConfig:
    num_clients: int
    alpha: float
    seed: int = 0
    # Every client must hold at least this many samples of each sensitive
    # group (0 only requires clients to be nonempty).
    min_group_size: int = 0

    def __post_init__(self):
        if self.num_clients <= 0:
            raise InvalidSpec("num_clients must be positive")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InvalidSpec(f"alpha must be positive and finite, got {self.alpha}")


def _proportional_counts(proportions: np.ndarray, n: int) -> np.ndarray:
    """Integer counts summing to n, largest-remainder rounding of ``proportions * n``."""
    raw = proportions * n
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(dataset: FederatedDataset, config: PartitionConfig) -> FederatedDataset:
    """Assign rows to clients with Dirichlet-skewed sensitive-group proportions.

    For each sensitive group a proportion vector over clients is drawn from
    ``Dir(alpha * 1)`` and the group's rows are dealt out accordingly.
    """
    groups = {a: np.flatnonzero(dataset.sensitive == a) for a in SENSITIVE_GROUPS}
    if any(len(idx) == 0 for idx in groups.values()):
        raise DegeneratePartition("both sensitive groups must be present")
    rng = np.random.default_rng(config.seed)
    k = config.num_clients
    for _ in range(MAX_PARTITION_ATTEMPTS):
        assignment = np.empty(len(dataset), dtype=np.int64)
        per_group = []
        for a in SENSITIVE_GROUPS:
            idx = groups[a]
            q = rng.dirichlet(np.full(k, config.alpha))
            counts = _proportional_counts(q, len(idx))
            order = rng.permutation(idx)
            assignment[order] = np.repeat(np.arange(k), counts)
            per_group.append(counts)
        per_group = np.array(per_group)
        if per_group.sum(axis=0).min() > 0 and per_group.min() >= config.min_group_size:
            return dataset.with_clients(assignment, k)
    raise DegeneratePartition(
        f"no valid partition after {MAX_PARTITION_ATTEMPTS} draws "
        f"(alpha={config.alpha}, min_group_size={config.min_group_size})"
    )


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.7
    validation_fraction_of_train: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for f in (self.train_fraction, self.validation_fraction_of_train):
            if not 0 < f < 1:
                raise InvalidSpec(f"fractions must lie in (0, 1), got {f}")


def _systematic_pick(n: int, fraction: float) -> np.ndarray:
    """Boolean mask choosing floor(fraction * n) of n positions, evenly spread."""
    i = np.arange(n)
    return np.floor((i + 1) * fraction + 1e-9) - np.floor(i * fraction + 1e-9) >= 1


def split(dataset: FederatedDataset, config: SplitConfig = SplitConfig()):
    """Stratified (client, sensitive, label) split into train, validation and test.

    Rows are shuffled within each cell, cells are laid end to end and the
    test and validation picks are spread evenly along that order, so every
    cell and every client is divided in proportion up to one row.
    """
    rng = np.random.default_rng(config.seed)
    keys = np.stack([dataset.client, dataset.sensitive, dataset.label], axis=1)
    order_parts = []
    for key in np.unique(keys, axis=0):
        idx = np.flatnonzero((keys == key).all(axis=1))
        order_parts.append(rng.permutation(idx))
    order = np.concatenate(order_parts) if order_parts else np.zeros(0, dtype=np.int64)
    is_test = _systematic_pick(len(order), 1.0 - config.train_fraction)
    pool = order[~is_test]
    is_val = _systematic_pick(len(pool), config.validation_fraction_of_train)
    test_idx = np.sort(order[is_test])
    val_idx = np.sort(pool[is_val])
    train_idx = np.sort(pool[~is_val])
    return dataset.subset(train_idx), dataset.subset(val_idx), dataset.subset(test_idx)


def write_partition_manifest(path, splits: Mapping[str, FederatedDataset], extra: Mapping | None = None) -> None:
    """JSON listing sample ids per split per client, enough to replay a partition."""
    doc = dict(extra or {})
    doc["splits"] = {
        name: {str(c): ds.sample_id[ds.client == c].tolist() for c in range(ds.num_clients)}
        for name, ds in splits.items()
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def apply_partition_manifest(dataset: FederatedDataset, path) -> dict[str, FederatedDataset]:
    """Rebuild the splits recorded by :func:`write_partition_manifest` from the source rows."""
    doc = json.loads(Path(path).read_text())
    position = {int(s): i for i, s in enumerate(dataset.sample_id)}
    out = {}
    for name, per_client in doc["splits"].items():
        num_clients = len(per_client)
        idx, client = [], []
        for c, ids in per_client.items():
            idx.extend(position[i] for i in ids)
            client.extend([int(c)] * len(ids))
        sub = dataset.subset(np.asarray(idx, dtype=np.int64))
        out[name] = sub.with_clients(np.asarray(client, dtype=np.int64), num_clients)
    return out


# ---------------------------------------------------------------------------
# Synthetic data with known eta
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthCell:
    """Rows for one (sensitive, client) cell.

    Either a discrete alphabet (``etas`` with optional ``probs``; the feature
    is the symbol index) or a Gaussian feature vector with logistic ground
    truth ``eta = sigmoid(weights . x + bias)``.
    """

    client: int
    sensitive: int
    n: int
    etas: Sequence[float] | None = None
    probs: Sequence[float] | None = None
    mean: Sequence[float] | None = None
    weights: Sequence[float] | None = None
    bias: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    cells: Sequence[SynthCell]
    num_clients: int | None = None
    extra: dict = field(default_factory=dict)


def _validate_cell(cell: SynthCell) -> None:
    if cell.sensitive not in SENSITIVE_GROUPS or cell.client < 0 or cell.n < 0:
        raise InvalidSpec(f"bad cell header {cell}")
    discrete = cell.etas is not None
    gaussian = cell.mean is not None and cell.weights is not None
    if discrete == gaussian:
        raise InvalidSpec("a cell must be either discrete (etas) or gaussian (mean and weights)")
    if discrete:
        etas = np.asarray(cell.etas, dtype=float)
        if etas.size == 0 or (etas < 0).any() or (etas > 1).any():
            raise InvalidSpec("discrete etas must be nonempty and lie in [0, 1]")
        if cell.probs is not None:
            p = np.asarray(cell.probs, dtype=float)
            if p.shape != etas.shape or (p < 0).any() or not np.isclose(p.sum(), 1.0):
                raise InvalidSpec("probs must be a distribution over the alphabet")
    elif len(cell.mean) != len(cell.weights):
        raise InvalidSpec("mean and weights must have equal length")


def synth_generate(spec: SynthSpec, seed: int) -> tuple[FederatedDataset, np.ndarray]:
    """Sample a dataset and return it with the true eta of every row."""
    if not spec.cells:
        raise InvalidSpec("no cells")
    for cell in spec.cells:
        _validate_cell(cell)
    dims = {len(c.mean) for c in spec.cells if c.mean is not None}
    if len(dims) > 1:
        raise InvalidSpec("gaussian cells must share a dimension")
    width = dims.pop() if dims else 1
    if any(c.etas is not None for c in spec.cells) and any(c.mean is not None for c in spec.cells):
        raise InvalidSpec("cannot mix discrete and gaussian cells")
    rng = np.random.default_rng(seed)
    feats, etas, sens, clients = [], [], [], []
    for cell in spec.cells:
        if cell.etas is not None:
            alphabet = np.asarray(cell.etas, dtype=float)
            symbols = rng.choice(len(alphabet), size=cell.n, p=cell.probs)
            feats.append(symbols[:, None].astype(float))
            etas.append(alphabet[symbols])
        else:
            x = rng.normal(size=(cell.n, width)) + np.asarray(cell.mean, dtype=float)
            feats.append(x)
            etas.append(expit(x @ np.asarray(cell.weights, dtype=float) + cell.bias))
        sens.append(np.full(cell.n, cell.sensitive))
        clients.append(np.full(cell.n, cell.client))
    eta = np.concatenate(etas)
    labels = (rng.random(len(eta)) < eta).astype(np.int64)
    client = np.concatenate(clients).astype(np.int64)
    num_clients = spec.num_clients if spec.num_clients is not None else int(client.max()) + 1
    ds = FederatedDataset(
        features=np.concatenate(feats),
        sensitive=np.concatenate(sens).astype(np.int64),
        label=labels,
        client=client,
        sample_id=np.arange(len(eta), dtype=np.int64),
        num_clients=num_clients,
        feature_names=tuple(f"x{i}" for i in range(width)),
    )
    return ds, eta


def synth_spec_from_dict(d: Mapping) -> SynthSpec:
    cells = [SynthCell(**cell) for cell in d["cells"]]
    return SynthSpec(cells=cells, num_clients=d.get("num_clients"))
