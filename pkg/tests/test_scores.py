import numpy as np
import pytest
from scipy.special import expit

from fedpostfair.domain import SampleRecord
from fedpostfair.errors import ParseError, SchemaMismatch
from fedpostfair.scores import (
    AffineLogit,
    CalibrationMap,
    ScoreModel,
    calibrate_groupwise,
    calibrate_logits,
    finalize_scores,
    read_score_csv,
    score,
    score_dataset,
    train_score_model,
    uniform_jitter,
    write_score_csv,
)

from conftest import make_dataset


def separable(n=400, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, 2)) * 0.5
    x[:, 0] += np.where(y == 1, 2.0, -2.0)  # margin >= 1 with overwhelming probability
    a = rng.choice([-1, 1], n)
    return make_dataset(a, rng.integers(0, 2, n), label=y, features=x)


def test_separable_training_accuracy():
    ds = separable()
    model = train_score_model(ds, epochs=20, lr=0.1, seed=0)
    acc = ((model.predict_proba(ds.features, ds.sensitive) >= 0.5) == ds.label).mean()
    assert acc >= 0.95


@pytest.mark.parametrize("label", [0, 1])
def test_constant_labels(label):
    ds = separable()
    ds = make_dataset(ds.sensitive, ds.client, label=np.full(len(ds), label), features=ds.features)
    model = train_score_model(ds, epochs=5, lr=0.1, seed=1)
    pred = (model.predict_proba(ds.features, ds.sensitive) >= 0.5).astype(int)
    assert (pred == label).all()


def test_training_is_deterministic():
    ds = separable()
    a = train_score_model(ds, epochs=3, lr=0.1, seed=5)
    b = train_score_model(ds, epochs=3, lr=0.1, seed=5)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_calibrated_group_fits_identity():
    rng = np.random.default_rng(4)
    n = 20000
    z = rng.normal(scale=2.0, size=n)
    y = (rng.random(n) < expit(z)).astype(int)
    ds = make_dataset(np.ones(n, int), np.zeros(n, int), label=y)
    cal = calibrate_logits(z, ds)
    t = cal.transform(1, 0)
    assert t.slope == pytest.approx(1.0, abs=0.1)
    assert t.offset == pytest.approx(0.0, abs=0.1)


def test_small_group_uses_fallback():
    rng = np.random.default_rng(5)
    n = 400
    a = np.ones(n, int)
    a[:5] = -1
    z = rng.normal(size=n)
    y = (rng.random(n) < expit(2 * z)).astype(int)
    ds = make_dataset(a, np.zeros(n, int), label=y)
    cal = calibrate_logits(z, ds)
    assert (-1, 0) not in cal.groups
    assert cal.transform(-1, 0) == cal.fallback
    assert (1, 0) in cal.groups


def test_calibration_preserves_order(synth_two_clients):
    ds, _ = synth_two_clients
    model = train_score_model(ds, epochs=5, lr=0.1)
    cal = calibrate_groupwise(model, ds)
    assert all(t.slope > 0 for t in cal.groups.values())
    z = model.logits(ds.features, ds.sensitive)
    out = cal.apply(z, ds.sensitive, ds.client)
    for a in (-1, 1):
        for c in (0, 1):
            m = (ds.sensitive == a) & (ds.client == c)
            order = np.argsort(z[m], kind="stable")
            assert np.all(np.diff(out[m][order]) >= 0)


def test_score_examples():
    model = ScoreModel(np.zeros(3))
    rec = SampleRecord(np.array([0.7]), 1, 0, 0, sample_id=12)
    assert score(model, CalibrationMap.identity(), rec, noise_epsilon=0.0) == 0.5
    assert finalize_scores(np.array([0.9999999]), np.array([0]), 0.0)[0] == 1 - 1e-6
    assert finalize_scores(np.array([1e-9]), np.array([0]), 0.0)[0] == 1e-6


def test_noise_bound_and_determinism():
    ids = np.arange(10000)
    raw = np.full(len(ids), 0.4)
    noisy = finalize_scores(raw, ids, 1e-4, seed=3)
    assert np.max(np.abs(noisy - raw)) <= 1e-4
    assert noisy.tobytes() == finalize_scores(raw, ids, 1e-4, seed=3).tobytes()
    assert not np.array_equal(noisy, finalize_scores(raw, ids, 1e-4, seed=4))
    u = uniform_jitter(ids, 0, 1.0)
    assert -1 <= u.min() < -0.9 and 0.9 < u.max() <= 1


def test_scores_in_range(synth_two_clients):
    ds, _ = synth_two_clients
    model = train_score_model(ds, epochs=3, lr=0.1)
    table = score_dataset(model, calibrate_groupwise(model, ds), ds, seed=2)
    assert ((table.eta >= 1e-6) & (table.eta <= 1 - 1e-6)).all()
    rec = next(ds.records())
    single = score(model, calibrate_groupwise(model, ds), rec, seed=2)
    assert single == table.eta[0]


def test_score_file_round_trip(tmp_path, synth_two_clients):
    ds, eta = synth_two_clients
    path = tmp_path / "s.csv"
    write_score_csv(path, ds, eta)
    back, table = read_score_csv(path)
    np.testing.assert_array_equal(back.sample_id, ds.sample_id)
    np.testing.assert_array_equal(back.client, ds.client)
    np.testing.assert_allclose(table.eta, np.clip(eta, 1e-6, 1 - 1e-6), rtol=0, atol=0)
    assert path.read_text().splitlines()[0] == "sample_id,client,sensitive,label,score"


def test_score_file_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,score\n1,0.5\n")
    with pytest.raises(SchemaMismatch):
        read_score_csv(bad)
    bad.write_text("sample_id,client,sensitive,label,score\n0,0,1,1,0.5\n1,0,1,1,1.5\n")
    with pytest.raises(ParseError) as err:
        read_score_csv(bad)
    assert err.value.line == 3
