"""Single-layer LSTM binary classifier, implemented directly on numpy.

Cell equations, for input x_p and previous state (h, c):

    f = sigma(W_f x + U_f h + b_f)          forget gate
    i = sigma(W_i x + U_i h + b_i)          input gate
    o = sigma(W_o x + U_o h + b_o)          output gate
    g = tanh(W_c x + U_c h + b_c)           candidate cell
    c' = f * c + i * g
    h' = o * tanh(c')

The initial state is zero.  After the last step a scalar head produces
yhat = sigma(v . h_P + b), the probability of the LOS class.

Parameters live in one flat float64 vector ``theta`` whose layout is the
on-disk checkpoint order (W_f, U_f, b_f, W_i, U_i, b_i, W_o, U_o, b_o,
W_c, U_c, b_c, v, b; matrices row-major).  The named attributes are views
into that vector, so optimizer updates on theta reach every block and the
gradient can be handled as a plain vector.

backward() runs truncated-free BPTT over the whole window and returns the
gradient of the mean binary cross-entropy as a vector with the same layout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import NormalizationStats
from .errors import CheckpointError

MODEL_MAGIC = b"CSIM"
MODEL_FORMAT = "csi-lstm"
MODEL_VERSION = 1

GATE_NAMES = ("f", "i", "o", "c")


def param_layout(input_dim: int, hidden_dim: int):
    """(name, offset, shape) for every block, in checkpoint order."""
    layout = []
    offset = 0

    def add(name, shape):
        nonlocal offset
        layout.append((name, offset, shape))
        offset += int(np.prod(shape))

    for gate in GATE_NAMES:
        add(f"W_{gate}", (hidden_dim, input_dim))
        add(f"U_{gate}", (hidden_dim, hidden_dim))
        add(f"b_{gate}", (hidden_dim,))
    add("v", (hidden_dim,))
    add("b", (1,))
    return layout


def num_params(input_dim: int, hidden_dim: int) -> int:
    return 4 * (hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim) + hidden_dim + 1


@dataclass(eq=False)
class LstmParams:
    input_dim: int
    hidden_dim: int
    theta: np.ndarray

    def __post_init__(self):
        expected = num_params(self.input_dim, self.hidden_dim)
        if self.theta.shape != (expected,):
            raise ValueError(f"theta has shape {self.theta.shape}, expected ({expected},)")
        self._views = {}
        for name, offset, shape in param_layout(self.input_dim, self.hidden_dim):
            self._views[name] = self.theta[offset : offset + int(np.prod(shape))].reshape(shape)

    def __getattr__(self, name):
        views = self.__dict__.get("_views")
        if views is not None and name in views:
            return views[name]
        raise AttributeError(name)

    def block(self, name: str) -> np.ndarray:
        return self._views[name]

    @property
    def bias(self) -> float:
        return float(self._views["b"][0])

    def copy(self) -> "LstmParams":
        return LstmParams(self.input_dim, self.hidden_dim, self.theta.copy())


def block_name_at(input_dim: int, hidden_dim: int, flat_index: int) -> str:
    """Which named block a flat theta index falls into (for diagnostics)."""
    for name, offset, shape in param_layout(input_dim, hidden_dim):
        if offset <= flat_index < offset + int(np.prod(shape)):
            return name
    raise IndexError(flat_index)


def init_params(input_dim: int, hidden_dim: int, seed=0) -> LstmParams:
    """Uniform init: bound 1/sqrt(input_dim) for W and v, 1/sqrt(hidden_dim)
    for U; biases zero except the forget bias, which starts at 1."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(num_params(input_dim, hidden_dim))
    params = LstmParams(input_dim, hidden_dim, theta)
    r_in = 1.0 / math.sqrt(input_dim)
    r_rec = 1.0 / math.sqrt(hidden_dim)
    for gate in GATE_NAMES:
        params.block(f"W_{gate}")[:] = rng.uniform(-r_in, r_in, (hidden_dim, input_dim))
        params.block(f"U_{gate}")[:] = rng.uniform(-r_rec, r_rec, (hidden_dim, hidden_dim))
    params.block("b_f")[:] = 1.0
    params.block("v")[:] = rng.uniform(-r_in, r_in, hidden_dim)
    return params


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LstmState":
        return cls(h=np.zeros(hidden_dim), c=np.zeros(hidden_dim))


def step(params: LstmParams, x: np.ndarray, state: LstmState) -> LstmState:
    """One cell update for a single input vector.  Pure: returns a new state."""
    f = sigmoid(params.W_f @ x + params.U_f @ state.h + params.b_f)
    i = sigmoid(params.W_i @ x + params.U_i @ state.h + params.b_i)
    o = sigmoid(params.W_o @ x + params.U_o @ state.h + params.b_o)
    g = np.tanh(params.W_c @ x + params.U_c @ state.h + params.b_c)
    c = f * state.c + i * g
    return LstmState(h=o * np.tanh(c), c=c)


@dataclass(eq=False)
class ForwardTrace:
    """Everything backward() needs, for a batch of equally long windows.

    Gate and state arrays have shape (window_len, batch, hidden_dim);
    ``x`` is the (batch, window_len, input_dim) input as given.
    """

    x: np.ndarray
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    h: np.ndarray
    logit: np.ndarray
    yhat: np.ndarray


def forward_batch(params: LstmParams, x: np.ndarray) -> ForwardTrace:
    """Run the cell over a (batch, window_len, input_dim) array of windows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("forward_batch expects (batch, window_len, input_dim)")
    batch, window_len, input_dim = x.shape
    if input_dim != params.input_dim:
        raise ValueError(f"input dim {input_dim} does not match model ({params.input_dim})")
    if window_len < 1:
        raise ValueError("window_len must be at least 1")
    dh = params.hidden_dim
    shape = (window_len, batch, dh)
    fs, is_, os_, gs = (np.empty(shape) for _ in range(4))
    cs, hs = np.empty(shape), np.empty(shape)
    h = np.zeros((batch, dh))
    c = np.zeros((batch, dh))
    wf, wi, wo, wc = params.W_f.T, params.W_i.T, params.W_o.T, params.W_c.T
    uf, ui, uo, uc = params.U_f.T, params.U_i.T, params.U_o.T, params.U_c.T
    for p in range(window_len):
        xp = x[:, p, :]
        f = sigmoid(xp @ wf + h @ uf + params.b_f)
        i = sigmoid(xp @ wi + h @ ui + params.b_i)
        o = sigmoid(xp @ wo + h @ uo + params.b_o)
        g = np.tanh(xp @ wc + h @ uc + params.b_c)
        c = f * c + i * g
        h = o * np.tanh(c)
        fs[p], is_[p], os_[p], gs[p], cs[p], hs[p] = f, i, o, g, c, h
    logit = hs[-1] @ params.v + params.bias
    return ForwardTrace(x=x, f=fs, i=is_, o=os_, g=gs, c=cs, h=hs, logit=logit, yhat=sigmoid(logit))


def forward(params: LstmParams, x: np.ndarray):
    """Probability of LOS for one (window_len, input_dim) window.

    Returns (yhat, trace); yhat is strictly inside (0, 1).
    """
    trace = forward_batch(params, np.asarray(x, dtype=np.float64)[None])
    return float(trace.yhat[0]), trace


def backward(params: LstmParams, trace: ForwardTrace, y) -> np.ndarray:
    """BPTT gradient of the mean binary cross-entropy over the traced batch.

    ``y`` holds the 0/1 labels (scalar or (batch,)).  The result is a flat
    float64 vector in the same layout as params.theta.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    window_len, batch, dh = trace.h.shape
    if y.shape != (batch,):
        raise ValueError(f"labels have shape {y.shape}, expected ({batch},)")

    grad = np.zeros_like(params.theta)
    gview = LstmParams(params.input_dim, params.hidden_dim, grad)

    # Head: d loss / d logit of the mean cross-entropy is (yhat - y) / batch.
    dz = (trace.yhat - y) / batch
    gview.block("v")[:] = trace.h[-1].T @ dz
    gview.block("b")[0] = dz.sum()

    dh_next = np.outer(dz, params.v)
    dc_next = np.zeros((batch, dh))
    for p in range(window_len - 1, -1, -1):
        f, i, o, g, c = trace.f[p], trace.i[p], trace.o[p], trace.g[p], trace.c[p]
        tanh_c = np.tanh(c)
        do = dh_next * tanh_c
        dc = dc_next + dh_next * o * (1.0 - tanh_c * tanh_c)
        dg = dc * i
        di = dc * g
        if p > 0:
            c_prev, h_prev = trace.c[p - 1], trace.h[p - 1]
        else:
            c_prev = np.zeros((batch, dh))
            h_prev = np.zeros((batch, dh))
        df = dc * c_prev

        da_f = df * f * (1.0 - f)
        da_i = di * i * (1.0 - i)
        da_o = do * o * (1.0 - o)
        da_g = dg * (1.0 - g * g)

        xp = trace.x[:, p, :]
        gview.block("W_f")[:] += da_f.T @ xp
        gview.block("W_i")[:] += da_i.T @ xp
        gview.block("W_o")[:] += da_o.T @ xp
        gview.block("W_c")[:] += da_g.T @ xp
        gview.block("U_f")[:] += da_f.T @ h_prev
        gview.block("U_i")[:] += da_i.T @ h_prev
        gview.block("U_o")[:] += da_o.T @ h_prev
        gview.block("U_c")[:] += da_g.T @ h_prev
        gview.block("b_f")[:] += da_f.sum(axis=0)
        gview.block("b_i")[:] += da_i.sum(axis=0)
        gview.block("b_o")[:] += da_o.sum(axis=0)
        gview.block("b_c")[:] += da_g.sum(axis=0)

        dh_next = da_f @ params.U_f + da_i @ params.U_i + da_o @ params.U_o + da_g @ params.U_c
        dc_next = dc * f
    return grad


@dataclass
class ModelCheckpoint:
    """A trained model with everything needed to score raw windows."""

    params: LstmParams
    num_subcarriers: int
    include_rssi: bool
    alpha: float
    stats: NormalizationStats
    train_meta: dict = field(default_factory=dict)


def save_model(path, checkpoint: ModelCheckpoint) -> None:
    """Write a checkpoint: JSON header plus float64 LE parameter block."""
    params = checkpoint.params
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "num_subcarriers": checkpoint.num_subcarriers,
        "include_rssi": checkpoint.include_rssi,
        "alpha": checkpoint.alpha,
        "normalization": {
            "mean": checkpoint.stats.mean.tolist(),
            "std": checkpoint.stats.std.tolist(),
        },
        "train_meta": checkpoint.train_meta,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        fh.write(np.ascontiguousarray(params.theta, dtype="<f8").tobytes())


def load_model(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, not a model checkpoint")
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated before header")
    header_len = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if len(blob) < 8 + header_len:
        raise CheckpointError(f"{path}: truncated inside header")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: header is not valid JSON ({exc})") from exc
    if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_VERSION:
        raise CheckpointError(f"{path}: unsupported format/version")
    try:
        input_dim = int(header["input_dim"])
        hidden_dim = int(header["hidden_dim"])
        num_subcarriers = int(header["num_subcarriers"])
        include_rssi = bool(header["include_rssi"])
        alpha = float(header["alpha"])
        norm = header["normalization"]
        stats = NormalizationStats(
            mean=np.asarray(norm["mean"], dtype=np.float64),
            std=np.asarray(norm["std"], dtype=np.float64),
        )
        train_meta = dict(header.get("train_meta") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: header missing or bad field ({exc})") from exc
    if input_dim < 1 or hidden_dim < 1:
        raise CheckpointError(f"{path}: non-positive model dimensions")

    block = blob[8 + header_len :]
    expected = num_params(input_dim, hidden_dim) * 8
    if len(block) != expected:
        raise CheckpointError(
            f"{path}: parameter block holds {len(block)} bytes, expected {expected}"
        )
    theta = np.frombuffer(block, dtype="<f8").astype(np.float64)
    if stats.mean.shape != (input_dim,) or stats.std.shape != (input_dim,):
        raise CheckpointError(f"{path}: normalization stats do not match input_dim")
    return ModelCheckpoint(
        params=LstmParams(input_dim, hidden_dim, theta),
        num_subcarriers=num_subcarriers,
        include_rssi=include_rssi,
        alpha=alpha,
        stats=stats,
        train_meta=train_meta,
    )
