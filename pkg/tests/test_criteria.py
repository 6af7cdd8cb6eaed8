import numpy as np
import pytest

from fedpostfair.criteria import (
    Criterion,
    DisparitySpec,
    coefficient_vector,
    empirical_disparity,
    fairness_metric,
)
from fedpostfair.domain import compute_group_statistics, statistics_from_masses
from fedpostfair.errors import EmptyGroup, InvalidSpec

from conftest import make_dataset


def _stats():
    # P(C=0|A=+1) = 0.3; P(Y=1|+1,0) = 0.5
    mass = {(1, 0): 0.3, (1, 1): 0.7, (-1, 0): 0.5, (-1, 1): 0.5}
    pos = {k: 0.5 * v for k, v in mass.items()}
    return statistics_from_masses(mass, pos, 2)


def test_dp_local_coefficients():
    stats = _stats()
    assert coefficient_vector(DisparitySpec.local("DP", 0), 1, 0, 0.7, stats).tolist() == [1.0]
    assert coefficient_vector(DisparitySpec.local("DP", 0), -1, 0, 0.2, stats).tolist() == [-1.0]


def test_dp_global_coefficient():
    stats = _stats()
    assert coefficient_vector(DisparitySpec.global_("DP"), 1, 0, 0.4, stats)[0] == pytest.approx(0.3, abs=1e-15)


def test_eo_local_coefficients():
    v = coefficient_vector(DisparitySpec.local("EO", 0), 1, 0, 0.5, _stats())
    np.testing.assert_allclose(v, [1.0, 1.0], atol=1e-15)


def test_coefficients_vectorise():
    eta = np.array([0.1, 0.5, 0.9])
    v = coefficient_vector(DisparitySpec.global_("EO"), -1, 1, eta, _stats())
    assert v.shape == (3, 2)


def test_local_spec_wrong_client():
    with pytest.raises(InvalidSpec):
        coefficient_vector(DisparitySpec.local("DP", 1), 1, 0, 0.5, _stats())


@pytest.mark.parametrize("criterion", ["DP", "EO"])
@pytest.mark.parametrize("scope", ["local", "global"])
def test_constant_classifier_zero_disparity(criterion, scope):
    rng = np.random.default_rng(0)
    n = 60
    ds = make_dataset(rng.choice([-1, 1], n), rng.integers(0, 2, n), label=rng.integers(0, 2, n))
    stats = compute_group_statistics(ds)
    spec = DisparitySpec.global_(criterion) if scope == "global" else DisparitySpec.local(criterion, 1)
    d = empirical_disparity(np.ones(n), ds, spec, stats)
    assert fairness_metric(d) == pytest.approx(0.0, abs=1e-12)


def test_four_sample_dp_local():
    ds = make_dataset([1, 1, -1, -1], [0, 0, 0, 0])
    stats = compute_group_statistics(ds)
    d = empirical_disparity(np.array([1, 1, 1, 0]), ds, DisparitySpec.local("DP", 0), stats)
    assert d.tolist() == [0.5]


def test_empty_group_raises():
    ds = make_dataset([1, 1, -1], [0, 0, 1])
    stats = compute_group_statistics(ds)
    with pytest.raises(EmptyGroup):
        empirical_disparity(np.ones(3), ds, DisparitySpec.local("DP", 0), stats)


def test_eo_labels_give_rate_differences():
    # a=+1: TPR 1/2, FPR 0; a=-1: TPR 1, FPR 1/2
    ds = make_dataset([1, 1, 1, -1, -1, -1], [0] * 6, label=[1, 1, 0, 1, 0, 0])
    stats = compute_group_statistics(ds)
    pred = np.array([1, 0, 0, 1, 1, 0])
    d = empirical_disparity(pred, ds, DisparitySpec.local("EO", 0), stats)
    np.testing.assert_allclose(d, [0.5 - 1.0, 0.0 - 0.5], atol=1e-12)


@pytest.mark.parametrize("d, expected", [([0.5], 0.5), ([-0.3, 0.1], 0.3), ([0, 0], 0.0)])
def test_fairness_metric(d, expected):
    assert fairness_metric(d) == expected


def test_criterion_k():
    assert Criterion.DP.k == 1 and Criterion.EO.k == 2
