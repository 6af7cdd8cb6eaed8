import math

import numpy as np
import pytest

from fedpostfair.data import SynthCell, SynthSpec, synth_generate
from fedpostfair.domain import (
    FairnessBudget,
    FederatedDataset,
    SampleRecord,
    compute_group_statistics,
)
from fedpostfair.errors import EmptyDataset, InvalidSpec

from conftest import make_dataset


def test_one_client_two_records():
    stats = compute_group_statistics(make_dataset([1, -1], [0, 0]))
    assert stats.p_ac[(1, 0)] == 0.5
    assert stats.p_ac[(-1, 0)] == 0.5
    assert stats.c_given_a[1][0] == 1.0
    assert stats.c_given_a[-1][0] == 1.0


def test_two_clients_four_records():
    stats = compute_group_statistics(make_dataset([1, 1, -1, 1], [0, 0, 1, 1]))
    assert stats.p_a[1] == 0.75
    assert stats.c_given_a[1][0] == pytest.approx(2 / 3, abs=1e-15)
    assert stats.counts[(1, 0)] == 2
    assert (-1, 0) not in stats.p_ac


def test_statistics_match_generator():
    spec = SynthSpec(cells=[
        SynthCell(client=0, sensitive=1, n=60, etas=[0.8]),
        SynthCell(client=0, sensitive=-1, n=40, etas=[0.3]),
        SynthCell(client=1, sensitive=1, n=30, etas=[0.5]),
        SynthCell(client=1, sensitive=-1, n=70, etas=[0.6]),
    ])
    ds, _ = synth_generate(spec, seed=3)
    stats = compute_group_statistics(ds)
    assert stats.p_ac[(1, 0)] == pytest.approx(0.30, abs=0.1)
    assert stats.p_ac[(-1, 1)] == pytest.approx(0.35, abs=0.1)
    assert stats.y_given_ac[(1, 0, 1)] == pytest.approx(0.8, abs=0.1)
    assert stats.y_given_ac[(-1, 1, 1)] == pytest.approx(0.6, abs=0.1)


def test_statistics_are_normalised():
    ds = make_dataset([1, -1, 1, -1, 1], [0, 0, 1, 1, 2], label=[1, 0, 0, 1, 1])
    stats = compute_group_statistics(ds)
    assert math.fsum(stats.p_ac.values()) == pytest.approx(1.0, abs=1e-15)
    assert math.fsum(stats.ay_joint.values()) == pytest.approx(1.0, abs=1e-15)
    for a in (-1, 1):
        assert math.fsum(stats.c_given_a[a].values()) == pytest.approx(1.0, abs=1e-15)


def test_empty_dataset_rejected():
    ds = make_dataset([1], [0]).subset(np.zeros(1, dtype=bool))
    with pytest.raises(EmptyDataset):
        compute_group_statistics(ds)


def test_invalid_columns_rejected():
    with pytest.raises(InvalidSpec):
        make_dataset([0, 1], [0, 0])
    with pytest.raises(InvalidSpec):
        make_dataset([1, -1], [0, 0], label=[2, 0])
    with pytest.raises(InvalidSpec):
        make_dataset([1, -1], [0, 3], num_clients=2)


def test_records_round_trip():
    recs = [SampleRecord(np.array([1.0, 2.0]), 1, 0, 0), SampleRecord(np.array([3.0, 4.0]), -1, 1, 1)]
    ds = FederatedDataset.from_records(recs)
    assert ds.num_clients == 2
    back = list(ds.records())
    assert [r.sensitive for r in back] == [1, -1]
    np.testing.assert_array_equal(back[1].features, [3.0, 4.0])
    assert len(ds.client_data(1)) == 1


def test_budget_validation():
    with pytest.raises(InvalidSpec):
        FairnessBudget(global_delta=-0.1)
    b = FairnessBudget.uniform(3, local_delta=0.02)
    assert b.local(2) == 0.02
    assert not b.global_active
    assert b.local(7) == math.inf
