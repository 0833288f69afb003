"""Adam training loop with min-validation-cost model selection.

The objective is the mean binary cross-entropy.  Per window the loss is
computed from the logit z (the pre-sigmoid head output) in log-sum-exp
form,

    loss = logaddexp(0, z) - y * z

which equals -[y*log(yhat) + (1-y)*log(1-yhat)] but stays finite for any
saturation of the sigmoid.

There is no patience by default: training runs all epochs and returns the
parameter snapshot from the epoch with the smallest validation cost (the
earliest such epoch on ties).  An optional patience cuts the loop short
once the minimum has not improved for that many epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetSplit, SequenceSample, stacked
from .errors import ConfigError, NumericError
from .lstm import LstmParams, backward, block_name_at, forward_batch, init_params

EVAL_CHUNK = 4096


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    max_epochs: int = 1000
    batch_size: int = 64          # 0 means full batch
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0        # 0 disables gradient clipping
    patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be non-negative")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be non-negative (0 = full batch)")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("betas must lie in [0, 1)")
        if self.epsilon < 0 or self.clip_norm < 0:
            raise ConfigError("epsilon and clip_norm must be non-negative")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be at least 1 when set")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(
    params: LstmParams, grad: np.ndarray, state: AdamState, config: TrainConfig
):
    """One Adam update, in place on params.theta.

    With beta1 = beta2 = 0 and epsilon = 0 this degenerates to the
    normalised step theta -= lr * sign(grad) (entries with zero gradient
    stay put).  Non-finite gradients abort with the offending block named.
    """
    if grad.shape != params.theta.shape:
        raise ValueError("gradient and parameter vector shapes differ")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        name = block_name_at(params.input_dim, params.hidden_dim, bad)
        raise NumericError(f"non-finite gradient in parameter block {name}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    denom = np.sqrt(v_hat) + config.epsilon
    update = np.divide(m_hat, denom, out=np.zeros_like(m_hat), where=denom > 0)
    params.theta -= config.learning_rate * update
    return params, state


def _to_arrays(samples_or_x, y=None):
    if y is not None:
        return np.asarray(samples_or_x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if len(samples_or_x) and isinstance(samples_or_x[0], SequenceSample):
        x, labels = stacked(samples_or_x)
        return x, labels.astype(np.float64)
    raise ValueError("pass either a list of SequenceSample or (x, y) arrays")


def cost(params: LstmParams, samples_or_x, y=None) -> float:
    """Mean cross-entropy over a sample set (list of samples or x/y arrays)."""
    x, labels = _to_arrays(samples_or_x, y)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cost of an empty sample set is undefined")
    total = 0.0
    for lo in range(0, n, EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, n)
        z = forward_batch(params, x[lo:hi]).logit
        total += float(np.sum(np.logaddexp(0.0, z) - labels[lo:hi] * z))
    return total / n


def predict_scores(params: LstmParams, x: np.ndarray) -> np.ndarray:
    """Model outputs yhat for an (n, window_len, input_dim) array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, x.shape[0])
        out[lo:hi] = forward_batch(params, x[lo:hi]).yhat
    return out


@dataclass
class TrainReport:
    """Per-epoch cost curves plus which epoch's snapshot was selected."""

    train_costs: np.ndarray
    val_costs: np.ndarray
    test_costs: np.ndarray
    best_epoch: int           # 1-based; 0 when no epoch ran
    best_val_cost: float
    diverged: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_costs)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_cost,val_cost,test_cost\n")
            for e in range(self.epochs_run):
                fh.write(
                    f"{e + 1},{float(self.train_costs[e])!r},"
                    f"{float(self.val_costs[e])!r},"
                    f"{float(self.test_costs[e])!r}\n"
                )


def train(
    split: DatasetSplit,
    config: TrainConfig,
    params: LstmParams | None = None,
    hidden_dim: int = 10,
    progress=None,
):
    """Run the full loop and return (selected params, report).

    Operates on the split as given (normalize first if you want z-scored
    inputs).  Fresh parameters are drawn from config.seed when none are
    passed.  Divergence (non-finite cost) stops the loop and is flagged on
    the report instead of raising.  ``progress`` is called as
    progress(epoch, train_cost, val_cost, test_cost) after every epoch.
    """
    x_tr, y_tr = _to_arrays(split.train)
    if x_tr.shape[0] == 0 or len(split.validation) == 0:
        raise ValueError("train and validation splits must be non-empty")
    x_va, y_va = _to_arrays(split.validation)
    have_test = len(split.test) > 0
    if have_test:
        x_te, y_te = _to_arrays(split.test)

    if params is None:
        params = init_params(x_tr.shape[2], hidden_dim, seed=config.seed)
    adam = AdamState.zeros(params.theta.size)
    rng = np.random.default_rng(config.seed)

    n = x_tr.shape[0]
    batch = config.batch_size or n
    train_costs, val_costs, test_costs = [], [], []
    best_epoch = 0
    best_val = math.inf
    best_theta = params.theta.copy()
    diverged = False

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = perm[lo : lo + batch]
            trace = forward_batch(params, x_tr[idx])
            grad = backward(params, trace, y_tr[idx])
            if config.clip_norm:
                norm = float(np.linalg.norm(grad))
                if norm > config.clip_norm:
                    grad *= config.clip_norm / norm
            adam_step(params, grad, adam, config)

        j_tr = cost(params, x_tr, y_tr)
        j_va = cost(params, x_va, y_va)
        j_te = cost(params, x_te, y_te) if have_test else math.nan
        train_costs.append(j_tr)
        val_costs.append(j_va)
        test_costs.append(j_te)
        if progress is not None:
            progress(epoch, j_tr, j_va, j_te)
        if not (math.isfinite(j_tr) and math.isfinite(j_va)):
            diverged = True
            break
        if j_va < best_val:
            best_val = j_va
            best_epoch = epoch
            best_theta = params.theta.copy()
        if config.patience is not None and epoch - best_epoch >= config.patience:
            break

    report = TrainReport(
        train_costs=np.asarray(train_costs),
        val_costs=np.asarray(val_costs),
        test_costs=np.asarray(test_costs),
        best_epoch=best_epoch,
        best_val_cost=best_val if best_epoch else math.nan,
        diverged=diverged,
    )
    selected = LstmParams(params.input_dim, params.hidden_dim, best_theta)
    return selected, report
