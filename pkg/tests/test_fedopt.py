import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedpostfair.criteria import Criterion, DisparitySpec, empirical_disparity
from fedpostfair.domain import FairnessBudget, compute_group_statistics
from fedpostfair.errors import DimensionMismatch, InvalidSpec
from fedpostfair.fedopt import (
    FederatedClient,
    LambdaDelta,
    OptimizerConfig,
    auto_global_step_size,
    auto_step_size,
    build_client_objectives,
    centralized_projected_gradient,
    client_local_update,
    project_nonnegative,
    run_federated,
    run_federated_postprocess,
    server_aggregate,
)
from fedpostfair.oracle import Cell, DiscreteInstance, exact_optimal_fair
from fedpostfair.postproc import ClientObjective, FairnessConstraints

from conftest import make_dataset


def test_projection_examples():
    assert project_nonnegative([0.2, -0.1]).tolist() == [0.2, 0.0]
    assert project_nonnegative([0.0, 0.0]).tolist() == [0.0, 0.0]


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(0, 8), elements=st.floats(-1e6, 1e6)))
def test_projection_idempotent(v):
    p = project_nonnegative(v)
    assert (p >= 0).all()
    np.testing.assert_array_equal(project_nonnegative(p), p)


def test_aggregate_examples():
    np.testing.assert_allclose(server_aggregate([0, 0], [[0.1, 0], [-0.05, 0]]), [0.05, 0.0], atol=1e-17)
    assert server_aggregate([0.1], [[-0.3]]).tolist() == [0.0]
    np.testing.assert_allclose(server_aggregate([0.2, 0.0], [[0.1, 0.3], [0.3, 0.1]], "mean"), [0.4, 0.2])


def test_aggregate_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        server_aggregate([0.0, 0.0], [[0.1]])


def four_sample_instance():
    """One client; a=+1 scores {0.9, 0.7}, a=-1 scores {0.6, 0.2}."""
    ds = make_dataset([1, 1, -1, -1], [0, 0, 0, 0], label=[1, 1, 1, 0])
    eta = np.array([0.9, 0.7, 0.6, 0.2])
    return ds, eta


def four_cell_oracle(delta):
    cells = [Cell(i, a, 0, 0.25, e) for i, (a, e) in enumerate([(1, 0.9), (1, 0.7), (-1, 0.6), (-1, 0.2)])]
    return DiscreteInstance(cells, FairnessBudget.uniform(1, delta), Criterion.DP, 1)


def test_unconstrained_duals_stay_zero(synth_two_clients):
    ds, eta = synth_two_clients
    stats = compute_group_statistics(ds)
    cons = FairnessConstraints(Criterion.DP, FairnessBudget(), 2)
    objs = build_client_objectives(ds, eta, cons, stats, 100.0)
    upd = client_local_update(objs[0], np.zeros(0), np.zeros(0), 10, 0.1, 0.1)
    assert upd.delta_lambda.shape == (0,) and upd.mu.shape == (0,)


def test_four_sample_local_update_meets_budget():
    ds, eta = four_sample_instance()
    stats = compute_group_statistics(ds)
    delta = 0.0
    cons = FairnessConstraints(Criterion.DP, FairnessBudget.uniform(1, delta), 1)
    obj = build_client_objectives(ds, eta, cons, stats, 100.0)[0]
    gamma = auto_step_size([obj])
    upd = client_local_update(obj, np.zeros(0), np.zeros(2), 200, gamma, gamma)
    from fedpostfair.postproc import DualParams, FairClassifier

    clf = FairClassifier(DualParams(np.zeros(0), {0: upd.mu}), stats, cons)
    pred = clf.predict_scores(eta, ds.sensitive, ds.client)
    d = empirical_disparity(pred, ds, DisparitySpec.local("DP", 0), stats)
    assert abs(d[0]) <= delta + 0.02
    # trace descends within 1e-9 at gamma = 1/L
    assert np.all(np.diff(upd.trace) <= 1e-9)
    # risk against the exact LP optimum of the same four cells (0.35)
    lp = exact_optimal_fair(four_cell_oracle(delta))
    risk = np.mean(np.where(pred == 1, 1 - eta, eta))
    assert lp.risk == pytest.approx(0.35, abs=1e-12)
    assert abs(risk - lp.risk) <= 0.01


def test_four_sample_federated_risk_close_to_oracle():
    ds, eta = four_sample_instance()
    cons = FairnessConstraints(Criterion.DP, FairnessBudget.uniform(1, 0.0), 1)
    clf, _ = run_federated_postprocess(ds, eta, cons, OptimizerConfig(rounds=10, local_steps=50))
    pred = clf.predict_scores(eta, ds.sensitive, ds.client)
    risk = np.mean(np.where(pred == 1, 1 - eta, eta))
    assert abs(risk - exact_optimal_fair(four_cell_oracle(0.0)).risk) <= 0.01


@pytest.mark.parametrize("criterion", ["DP", "EO"])
def test_trace_monotone_on_synthetic(synth_two_clients, criterion):
    ds, eta = synth_two_clients
    stats = compute_group_statistics(ds)
    cons = FairnessConstraints(criterion, FairnessBudget.uniform(2, 0.01, 0.01), 2)
    for obj in build_client_objectives(ds, eta, cons, stats, 200.0):
        gamma = auto_step_size([obj])
        upd = client_local_update(obj, np.zeros(obj.n_lambda), np.zeros(obj.n_mu), 100, gamma, gamma)
        assert np.all(np.diff(upd.trace) <= 1e-9)


def test_global_step_uses_summed_bounds(synth_two_clients):
    ds, eta = synth_two_clients
    stats = compute_group_statistics(ds)
    cons = FairnessConstraints("EO", FairnessBudget.uniform(2, 0.01, 0.01), 2)
    objs = build_client_objectives(ds, eta, cons, stats, 200.0)
    bounds = [o.smoothness_bound() for o in objs]
    assert auto_global_step_size(objs) == pytest.approx(1 / sum(bounds), rel=1e-15)
    assert auto_global_step_size(objs, "mean") == auto_step_size(objs) == pytest.approx(1 / max(bounds), rel=1e-15)


@pytest.mark.parametrize("criterion", ["DP", "EO"])
def test_default_steps_decrease_global_objective(synth_two_clients, criterion):
    ds, eta = synth_two_clients
    cons = FairnessConstraints(criterion, FairnessBudget.uniform(2, 0.0, 0.0), 2)
    _, logs = run_federated_postprocess(ds, eta, cons, OptimizerConfig(rounds=40, local_steps=1, beta=200))
    h = [log.global_objective for log in logs]
    assert np.all(np.diff(h) <= 1e-12)


def test_identical_clients_get_identical_mu(synth_two_clients):
    ds, eta = synth_two_clients
    half = ds.subset(ds.client == 0)
    n = len(half)
    twin = make_dataset(np.concatenate([half.sensitive, half.sensitive]),
                        np.concatenate([np.zeros(n, int), np.ones(n, int)]),
                        label=np.concatenate([half.label, half.label]))
    e = np.concatenate([eta[ds.client == 0]] * 2)
    cons = FairnessConstraints(Criterion.DP, FairnessBudget.uniform(2, 0.01, 0.01), 2)
    clf, _ = run_federated_postprocess(twin, e, cons, OptimizerConfig(rounds=5, local_steps=20, beta=200))
    np.testing.assert_array_equal(clf.duals.mu[0], clf.duals.mu[1])
    assert clf.duals.mu[0].any()


def test_single_client_matches_centralized(synth_two_clients):
    ds, eta = synth_two_clients
    one = ds.subset(ds.client == 0).with_clients(np.zeros(int((ds.client == 0).sum()), int), 1)
    e = eta[ds.client == 0]
    stats = compute_group_statistics(one)
    cons = FairnessConstraints(Criterion.EO, FairnessBudget.uniform(1, 0.02, 0.01), 1)
    cfg = OptimizerConfig(rounds=7, local_steps=13, beta=300.0)
    clf, _ = run_federated_postprocess(one, e, cons, cfg)
    objs = build_client_objectives(one, e, cons, stats, cfg.beta)
    central = centralized_projected_gradient(objs, cfg.rounds * cfg.local_steps)
    np.testing.assert_allclose(clf.duals.lam, central.lam, atol=1e-12, rtol=0)
    np.testing.assert_allclose(clf.duals.mu[0], central.mu[0], atol=1e-12, rtol=0)


def test_round_logs(synth_two_clients):
    ds, eta = synth_two_clients
    cons = FairnessConstraints(Criterion.DP, FairnessBudget.uniform(2, 0.02, 0.02), 2)
    _, logs = run_federated_postprocess(ds, eta, cons, OptimizerConfig(rounds=4, local_steps=5))
    assert [l.round for l in logs] == [1, 2, 3, 4]
    assert all(len(l.client_objectives) == 2 for l in logs)
    assert logs[-1].global_objective == pytest.approx(sum(logs[-1].client_objectives))


def test_threads_give_identical_result(synth_two_clients):
    ds, eta = synth_two_clients
    stats = compute_group_statistics(ds)
    cons = FairnessConstraints(Criterion.DP, FairnessBudget.uniform(2, 0.02, 0.02), 2)
    objs = build_client_objectives(ds, eta, cons, stats, 100.0)
    cfg = OptimizerConfig(rounds=3, local_steps=10)
    a, _ = run_federated(objs, cfg, workers=1)
    b, _ = run_federated(objs, cfg, workers=2)
    np.testing.assert_array_equal(a.lam, b.lam)


def test_only_lambda_delta_crosses_interface(synth_two_clients):
    ds, eta = synth_two_clients
    stats = compute_group_statistics(ds)
    cons = FairnessConstraints(Criterion.DP, FairnessBudget.uniform(2, 0.02, 0.02), 2)
    obj = build_client_objectives(ds, eta, cons, stats, 100.0)[0]
    client = FederatedClient(obj, 5, 0.01, 0.01)
    msg = client.local_round(np.zeros(2))
    assert isinstance(msg, LambdaDelta)
    assert [f for f in vars(msg)] == ["delta"]
    assert msg.delta.shape == (2,)
    # the server step only consumes deltas
    assert list(inspect.signature(server_aggregate).parameters) == ["lam", "deltas", "mode"]


def test_config_validation():
    with pytest.raises(InvalidSpec):
        OptimizerConfig(rounds=0)
    with pytest.raises(InvalidSpec):
        OptimizerConfig(aggregation="median")
    cfg = OptimizerConfig.from_dict({"T": 3, "S": 4, "lr": 0.5, "beta": 10})
    assert (cfg.rounds, cfg.local_steps, cfg.lr_global, cfg.lr_local, cfg.beta) == (3, 4, 0.5, 0.5, 10)
