"""Optimiser and training-loop tests.

Adam is exercised on a quadratic bowl where convergence is provable, and
in its beta=0 degenerate mode where each step must equal a signed
learning-rate step.  The loop contracts (early stopping, determinism,
divergence flagging) run on tiny separable problems.
"""

import math

import numpy as np
import pytest

from losid.dataset import DatasetSplit, NormalizationStats, SequenceSample, normalize, split
from losid.errors import ConfigError, NumericError
from losid.lstm import LstmParams, init_params, num_params
from losid.training import AdamState, TrainConfig, adam_step, cost, predict_scores, train


def _vector_params(value=1.0):
    n = num_params(1, 1)
    return LstmParams(1, 1, np.full(n, value)), n


def _toy_samples(n_per_class, seed=0, window=3, dim=4, sep=1.0, noise=0.3):
    """Windows whose first feature's mean carries the class."""
    rng = np.random.default_rng(seed)
    samples = []
    for label in (1, 0):
        centre = sep if label else -sep
        for i in range(n_per_class):
            x = rng.normal(0.0, noise, (window, dim))
            x[:, 0] += centre
            samples.append(SequenceSample(x=x, label=label, session_id=None, start=i, stream=0))
    return samples


def _toy_split(n_per_class=60, seed=0, **kw):
    samples = _toy_samples(n_per_class, seed=seed, **kw)
    sp = split(samples, seed=seed)
    return DatasetSplit(
        train=[normalize(s, sp.stats) for s in sp.train],
        validation=[normalize(s, sp.stats) for s in sp.validation],
        test=[normalize(s, sp.stats) for s in sp.test],
        stats=sp.stats,
    )


# ---------------------------------------------------------------- config

def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(max_epochs=-1)
    with pytest.raises(ConfigError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(beta2=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(patience=0)
    TrainConfig(patience=None)   # unlimited is fine


# ---------------------------------------------------------------- adam

def test_adam_converges_on_quadratic():
    # f(theta) = sum theta^2, gradient 2*theta; every coordinate must
    # settle near the minimum.
    params, n = _vector_params(1.0)
    state = AdamState.zeros(n)
    config = TrainConfig(learning_rate=0.1)
    for _ in range(200):
        adam_step(params, 2.0 * params.theta, state, config)
    assert np.max(np.abs(params.theta)) < 1e-2
    assert state.t == 200


def test_adam_degenerates_to_sign_steps():
    params, n = _vector_params(0.0)
    state = AdamState.zeros(n)
    config = TrainConfig(learning_rate=0.5, beta1=0.0, beta2=0.0, epsilon=0.0)
    grad = np.zeros(n)
    grad[0] = 3.0
    grad[1] = -0.25
    adam_step(params, grad, state, config)
    assert params.theta[0] == -0.5        # minus lr * sign
    assert params.theta[1] == 0.5
    np.testing.assert_array_equal(params.theta[2:], 0.0)   # zero grad, no move
    assert state.t == 1


def test_adam_zero_gradient_is_a_no_op_that_counts():
    params, n = _vector_params(2.0)
    state = AdamState.zeros(n)
    adam_step(params, np.zeros(n), state, TrainConfig())
    np.testing.assert_array_equal(params.theta, 2.0)
    assert state.t == 1


def test_adam_rejects_non_finite_gradient():
    params, n = _vector_params()
    grad = np.zeros(n)
    grad[-1] = math.nan
    with pytest.raises(NumericError, match="block b"):
        adam_step(params, grad, AdamState.zeros(n), TrainConfig())
    grad = np.zeros(n)
    grad[0] = math.inf
    with pytest.raises(NumericError, match="block W_f"):
        adam_step(params, grad, AdamState.zeros(n), TrainConfig())


def test_adam_rejects_shape_mismatch():
    params, n = _vector_params()
    with pytest.raises(ValueError):
        adam_step(params, np.zeros(n + 1), AdamState.zeros(n), TrainConfig())


def test_adam_first_step_magnitude_is_learning_rate():
    # Bias correction makes the very first update lr * g/(|g| + eps), so
    # the magnitude is the learning rate for any gradient scale well above
    # epsilon.
    for scale in (1e-2, 1.0, 1e6):
        params, n = _vector_params(0.0)
        grad = np.full(n, scale)
        adam_step(params, grad, AdamState.zeros(n), TrainConfig(learning_rate=0.01))
        np.testing.assert_allclose(params.theta, -0.01, rtol=1e-5)


# ---------------------------------------------------------------- cost

def test_cost_matches_direct_formula():
    rng = np.random.default_rng(3)
    params = init_params(4, 3, seed=0)
    x = rng.normal(size=(6, 2, 4))
    y = rng.integers(0, 2, 6).astype(float)
    from losid.lstm import forward_batch

    z = forward_batch(params, x).logit
    expected = float(np.mean(np.logaddexp(0.0, z) - y * z))
    assert cost(params, x, y) == pytest.approx(expected, abs=1e-12)


def test_cost_accepts_sample_lists():
    samples = _toy_samples(5)
    params = init_params(4, 3, seed=0)
    x = np.stack([s.x for s in samples])
    y = np.array([float(s.label) for s in samples])
    assert cost(params, samples) == pytest.approx(cost(params, x, y), abs=1e-12)
    with pytest.raises(ValueError):
        cost(params, [])


def test_predict_scores_are_probabilities():
    params = init_params(4, 3, seed=1)
    x = np.random.default_rng(0).normal(size=(10, 3, 4))
    scores = predict_scores(params, x)
    assert scores.shape == (10,)
    assert np.all((scores > 0) & (scores < 1))


# ---------------------------------------------------------------- loop

def test_train_learns_separable_problem():
    sp = _toy_split()
    config = TrainConfig(learning_rate=0.05, max_epochs=50, batch_size=16, seed=0)
    params, report = train(sp, config, hidden_dim=4)
    assert report.best_val_cost < 0.05
    assert not report.diverged
    # selected params classify the held-out windows correctly
    x = np.stack([s.x for s in sp.test])
    y = np.array([s.label for s in sp.test])
    scores = predict_scores(params, x)
    assert np.mean((scores >= 0.5).astype(int) == y) == 1.0


def test_train_selection_contract():
    sp = _toy_split()
    config = TrainConfig(learning_rate=0.05, max_epochs=30, batch_size=16, seed=1)
    params, report = train(sp, config, hidden_dim=4)
    assert report.epochs_run == 30
    # best epoch is the argmin of the validation curve, earliest on ties
    best = int(np.argmin(report.val_costs)) + 1
    assert report.best_epoch == best
    assert report.best_val_cost == report.val_costs[best - 1]
    # re-evaluating the returned params reproduces the recorded minimum
    assert cost(params, sp.validation) == pytest.approx(report.best_val_cost, abs=1e-12)


def test_train_patience_stops_early():
    # Label-free noise cannot keep improving the validation cost, so the
    # patience counter must fire long before the epoch limit.
    sp = _toy_split(n_per_class=30, sep=0.0)
    config = TrainConfig(learning_rate=0.3, max_epochs=400, batch_size=16,
                         patience=5, seed=0)
    _, report = train(sp, config, hidden_dim=4)
    assert report.epochs_run < 400
    assert report.epochs_run - report.best_epoch >= 5


def test_train_zero_epochs_returns_init():
    sp = _toy_split()
    config = TrainConfig(max_epochs=0, seed=7)
    params, report = train(sp, config, hidden_dim=4)
    assert report.epochs_run == 0
    assert report.best_epoch == 0
    assert math.isnan(report.best_val_cost)
    np.testing.assert_array_equal(params.theta, init_params(4, 4, seed=7).theta)


def test_train_is_deterministic():
    sp = _toy_split()
    config = TrainConfig(learning_rate=0.02, max_epochs=5, batch_size=8, seed=3)
    a, ra = train(sp, config, hidden_dim=3)
    b, rb = train(sp, config, hidden_dim=3)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(ra.val_costs, rb.val_costs)
    c, _ = train(sp, TrainConfig(learning_rate=0.02, max_epochs=5, batch_size=8, seed=4),
                 hidden_dim=3)
    assert not np.array_equal(a.theta, c.theta)


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_train_flags_divergence_instead_of_raising():
    sp = _toy_split(n_per_class=10)
    config = TrainConfig(learning_rate=1e308, max_epochs=5, batch_size=0,
                         clip_norm=0.0, seed=0)
    _, report = train(sp, config, hidden_dim=2)
    assert report.diverged
    assert report.epochs_run < 5


def test_train_progress_callback_sees_every_epoch():
    sp = _toy_split(n_per_class=10)
    seen = []
    config = TrainConfig(learning_rate=0.01, max_epochs=4, batch_size=8, seed=0)
    train(sp, config, hidden_dim=2, progress=lambda e, tr, va, te: seen.append((e, tr, va, te)))
    assert [e for e, *_ in seen] == [1, 2, 3, 4]
    assert all(math.isfinite(tr) and math.isfinite(va) for _, tr, va, _ in seen)


def test_train_requires_nonempty_splits():
    sp = _toy_split(n_per_class=10)
    empty_val = DatasetSplit(train=sp.train, validation=[], test=sp.test, stats=sp.stats)
    with pytest.raises(ValueError):
        train(empty_val, TrainConfig(max_epochs=1))


def test_train_report_csv(tmp_path):
    sp = _toy_split(n_per_class=10)
    _, report = train(sp, TrainConfig(max_epochs=3, batch_size=8), hidden_dim=2)
    path = tmp_path / "report.csv"
    report.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epoch,train_cost,val_cost,test_cost"
    assert len(lines) == 4
    cells = lines[1].split(",")
    assert int(cells[0]) == 1
    # plain parseable floats, full precision
    assert float(cells[1]) == report.train_costs[0]
