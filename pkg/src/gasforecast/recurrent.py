"""LSTM, GRU and bidirectional LSTM layers with a dense head, trained by BPTT.

Everything is plain numpy in float64. Gate parameters of a cell are stacked
row-wise: LSTM uses gate order (i, f, o, g), GRU uses (z, r, h).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError

log = logging.getLogger(__name__)

LSTM_GATES = ("i", "f", "o", "g")
GRU_GATES = ("z", "r", "h")
LAYER_KINDS = ("lstm", "gru", "bilstm")


def sigmoid(x):
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class LstmCellParams:
    W: np.ndarray  # (4H, F)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str):
        k = LSTM_GATES.index(name)
        H = self.hidden_size
        sl = slice(k * H, (k + 1) * H)
        return self.W[sl], self.U[sl], self.b[sl]

    def validate(self) -> None:
        H, F = self.hidden_size, self.input_size
        if self.W.shape != (4 * H, F) or self.U.shape != (4 * H, H) or self.b.shape != (4 * H,):
            raise DataError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )


@dataclass
class GruCellParams:
    W: np.ndarray  # (3H, F)
    U: np.ndarray  # (3H, H)
    b: np.ndarray  # (3H,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str):
        k = GRU_GATES.index(name)
        H = self.hidden_size
        sl = slice(k * H, (k + 1) * H)
        return self.W[sl], self.U[sl], self.b[sl]

    def validate(self) -> None:
        H, F = self.hidden_size, self.input_size
        if self.W.shape != (3 * H, F) or self.U.shape != (3 * H, H) or self.b.shape != (3 * H,):
            raise DataError(
                f"inconsistent GRU shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )


def _check_step_dims(params, x, h_prev) -> None:
    params.validate()
    if x.shape != (params.input_size,):
        raise DataError(f"input has shape {x.shape}, cell expects ({params.input_size},)")
    if h_prev.shape != (params.hidden_size,):
        raise DataError(f"state has shape {h_prev.shape}, cell expects ({params.hidden_size},)")


def lstm_step(params: LstmCellParams, x, h_prev, c_prev):
    """One LSTM time step for a single example, gate by gate.

    Returns ``(h, c)``.
    """
    x, h_prev, c_prev = (np.asarray(v, dtype=float) for v in (x, h_prev, c_prev))
    _check_step_dims(params, x, h_prev)
    if c_prev.shape != h_prev.shape:
        raise DataError("cell state and hidden state shapes differ")

    def pre(name):
        W, U, b = params.gate(name)
        return W @ x + U @ h_prev + b

    i = sigmoid(pre("i"))
    f = sigmoid(pre("f"))
    o = sigmoid(pre("o"))
    g = np.tanh(pre("g"))
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def gru_step(params: GruCellParams, x, h_prev):
    """One GRU time step for a single example."""
    x, h_prev = (np.asarray(v, dtype=float) for v in (x, h_prev))
    _check_step_dims(params, x, h_prev)
    Wz, Uz, bz = params.gate("z")
    Wr, Ur, br = params.gate("r")
    Wh, Uh, bh = params.gate("h")
    z = sigmoid(Wz @ x + Uz @ h_prev + bz)
    r = sigmoid(Wr @ x + Ur @ h_prev + br)
    h_tilde = np.tanh(Wh @ x + Uh @ (r * h_prev) + bh)
    return (1.0 - z) * h_prev + z * h_tilde


# --------------------------------------------------------------------------
# batched scans over (B, L, F) inputs


def _lstm_scan(cell: LstmCellParams, x: np.ndarray):
    B, L, _ = x.shape
    H = cell.hidden_size
    xw = x @ cell.W.T + cell.b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, L, H))
    cache = []
    for t in range(L):
        a = xw[:, t] + h @ cell.U.T
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H : 2 * H])
        o = sigmoid(a[:, 2 * H : 3 * H])
        g = np.tanh(a[:, 3 * H :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        cache.append((i, f, o, g, c_prev, h_prev, tc))
    return hs, (x, cache)


def _lstm_scan_backward(cell: LstmCellParams, dhs: np.ndarray, saved):
    x, cache = saved
    B, L, _ = x.shape
    H = cell.hidden_size
    dW = np.zeros_like(cell.W)
    dU = np.zeros_like(cell.U)
    db = np.zeros_like(cell.b)
    dx = np.empty_like(x)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    da = np.empty((B, 4 * H))
    for t in reversed(range(L)):
        i, f, o, g, c_prev, h_prev, tc = cache[t]
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        da[:, 3 * H :] = dc * i * (1.0 - g * g)
        dW += da.T @ x[:, t]
        dU += da.T @ h_prev
        db += da.sum(axis=0)
        dx[:, t] = da @ cell.W
        dh_next = da @ cell.U
        dc_next = dc * f
    return dx, {"W": dW, "U": dU, "b": db}


def _gru_scan(cell: GruCellParams, x: np.ndarray):
    B, L, _ = x.shape
    H = cell.hidden_size
    xw = x @ cell.W.T + cell.b
    U_zr = cell.U[: 2 * H]
    U_h = cell.U[2 * H :]
    h = np.zeros((B, H))
    hs = np.empty((B, L, H))
    cache = []
    for t in range(L):
        a_zr = xw[:, t, : 2 * H] + h @ U_zr.T
        z = sigmoid(a_zr[:, :H])
        r = sigmoid(a_zr[:, H:])
        rh = r * h
        h_tilde = np.tanh(xw[:, t, 2 * H :] + rh @ U_h.T)
        h_prev = h
        h = (1.0 - z) * h_prev + z * h_tilde
        hs[:, t] = h
        cache.append((z, r, h_tilde, h_prev, rh))
    return hs, (x, cache)


def _gru_scan_backward(cell: GruCellParams, dhs: np.ndarray, saved):
    x, cache = saved
    B, L, _ = x.shape
    H = cell.hidden_size
    U_zr = cell.U[: 2 * H]
    U_h = cell.U[2 * H :]
    dW = np.zeros_like(cell.W)
    dU = np.zeros_like(cell.U)
    db = np.zeros_like(cell.b)
    dx = np.empty_like(x)
    dh_next = np.zeros((B, H))
    da = np.empty((B, 3 * H))
    for t in reversed(range(L)):
        z, r, h_tilde, h_prev, rh = cache[t]
        dh = dhs[:, t] + dh_next
        da_h = dh * z * (1.0 - h_tilde * h_tilde)
        drh = da_h @ U_h
        da[:, :H] = dh * (h_tilde - h_prev) * z * (1.0 - z)
        da[:, H : 2 * H] = drh * h_prev * r * (1.0 - r)
        da[:, 2 * H :] = da_h
        dU[: 2 * H] += da[:, : 2 * H].T @ h_prev
        dU[2 * H :] += da_h.T @ rh
        dW += da.T @ x[:, t]
        db += da.sum(axis=0)
        dx[:, t] = da @ cell.W
        dh_next = dh * (1.0 - z) + drh * r + da[:, : 2 * H] @ U_zr
    return dx, {"W": dW, "U": dU, "b": db}


_SCANS = {
    LstmCellParams: (_lstm_scan, _lstm_scan_backward),
    GruCellParams: (_gru_scan, _gru_scan_backward),
}


@dataclass
class RecurrentLayer:
    """One recurrent layer: unidirectional LSTM/GRU or a bidirectional LSTM.

    A bidirectional layer holds ``(forward, backward)`` cells and emits the
    concatenation of both hidden sequences, width ``2H``. Dropout acts on the
    layer output during training only, with inverted scaling.
    """

    kind: str
    cells: list
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise DataError(f"unknown layer kind {self.kind!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError(f"dropout must lie in [0, 1), got {self.dropout}")
        expected = 2 if self.kind == "bilstm" else 1
        if len(self.cells) != expected:
            raise DataError(f"{self.kind} layer needs {expected} cell(s)")
        if self.kind == "bilstm" and self.cells[0].hidden_size != self.cells[1].hidden_size:
            raise DataError("bidirectional cells must share the hidden size")
        for cell in self.cells:
            cell.validate()

    @property
    def input_size(self) -> int:
        return self.cells[0].input_size

    @property
    def hidden_size(self) -> int:
        return self.cells[0].hidden_size

    @property
    def output_size(self) -> int:
        return self.hidden_size * len(self.cells)

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.kind == "bilstm" else ("fwd",)

    def forward(self, x: np.ndarray, training: bool = False, rng=None):
        scan, _ = _SCANS[type(self.cells[0])]
        h_fwd, c_fwd = scan(self.cells[0], x)
        if self.kind == "bilstm":
            h_bwd, c_bwd = scan(self.cells[1], x[:, ::-1])
            out = np.concatenate([h_fwd, h_bwd[:, ::-1]], axis=2)
            caches = (c_fwd, c_bwd)
        else:
            out = h_fwd
            caches = (c_fwd,)
        mask = None
        if training and self.dropout > 0.0:
            if rng is None:
                raise ValueError("training with dropout needs an rng")
            keep = 1.0 - self.dropout
            mask = (rng.random(out.shape) < keep) / keep
            out = out * mask
        return out, (caches, mask)

    def backward(self, dout: np.ndarray, saved):
        caches, mask = saved
        if mask is not None:
            dout = dout * mask
        _, scan_back = _SCANS[type(self.cells[0])]
        H = self.hidden_size
        dx, g_fwd = scan_back(self.cells[0], np.ascontiguousarray(dout[:, :, :H]), caches[0])
        grads = [g_fwd]
        if self.kind == "bilstm":
            d_rev = np.ascontiguousarray(dout[:, ::-1, H:])
            dx_rev, g_bwd = scan_back(self.cells[1], d_rev, caches[1])
            dx = dx + dx_rev[:, ::-1]
            grads.append(g_bwd)
        return dx, grads


def bilstm_forward(layer: RecurrentLayer, window, training: bool = False, rng=None) -> np.ndarray:
    """Run a bidirectional layer over one ``L x F`` window; returns ``L x 2H``."""
    window = np.asarray(window, dtype=float)
    if layer.kind != "bilstm":
        raise DataError(f"expected a bilstm layer, got {layer.kind}")
    if window.ndim != 2 or window.shape[0] == 0:
        raise DataError("window must be a non-empty L x F matrix")
    if not np.all(np.isfinite(window)):
        raise DataError("window contains non-finite values")
    out, _ = layer.forward(window[None], training=training, rng=rng)
    return out[0]


def _init_cell(cls, n_gates: int, input_size: int, hidden: int, rng, forget_bias: float):
    bound_w = 1.0 / np.sqrt(input_size)
    bound_u = 1.0 / np.sqrt(hidden)
    W = rng.uniform(-bound_w, bound_w, size=(n_gates * hidden, input_size))
    U = rng.uniform(-bound_u, bound_u, size=(n_gates * hidden, hidden))
    b = np.zeros(n_gates * hidden)
    if cls is LstmCellParams:
        b[hidden : 2 * hidden] = forget_bias
    return cls(W, U, b)


class RecurrentNetwork:
    """Stacked recurrent layers followed by an affine head on the last time step."""

    def __init__(self, layers: list[RecurrentLayer], head_W: np.ndarray, head_b: np.ndarray, seed: int = 0):
        if not layers:
            raise DataError("network needs at least one recurrent layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.output_size != nxt.input_size:
                raise DataError(
                    f"layer width mismatch: {prev.output_size} feeds a layer expecting {nxt.input_size}"
                )
        head_W = np.asarray(head_W, dtype=float)
        head_b = np.asarray(head_b, dtype=float)
        if head_W.shape != (1, layers[-1].output_size) or head_b.shape != (1,):
            raise DataError(
                f"head shapes {head_W.shape}/{head_b.shape} do not fit width {layers[-1].output_size}"
            )
        self.layers = layers
        self.head_W = head_W
        self.head_b = head_b
        self.seed = seed

    @classmethod
    def build(
        cls,
        kind: str,
        input_size: int,
        hidden_size: int = 64,
        num_layers: int = 2,
        dropout: float = 0.2,
        seed: int = 0,
        forget_bias: float = 1.0,
    ) -> "RecurrentNetwork":
        """Initialise uniformly in +-1/sqrt(fan_in); LSTM forget bias starts at ``forget_bias``."""
        if kind not in LAYER_KINDS:
            raise DataError(f"unknown network kind {kind!r}")
        if num_layers < 1 or hidden_size < 1:
            raise DataError("need at least one layer and one hidden unit")
        rng = np.random.default_rng(seed)
        cell_cls, n_gates = (GruCellParams, 3) if kind == "gru" else (LstmCellParams, 4)
        n_dir = 2 if kind == "bilstm" else 1
        layers = []
        width = input_size
        for _ in range(num_layers):
            cells = [
                _init_cell(cell_cls, n_gates, width, hidden_size, rng, forget_bias)
                for _ in range(n_dir)
            ]
            layers.append(RecurrentLayer(kind, cells, dropout))
            width = hidden_size * n_dir
        bound = 1.0 / np.sqrt(width)
        head_W = rng.uniform(-bound, bound, size=(1, width))
        return cls(layers, head_W, np.zeros(1), seed)

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def kind(self) -> str:
        return self.layers[0].kind

    def parameters(self) -> dict[str, np.ndarray]:
        """Named parameter arrays (live references, not copies)."""
        params = {}
        for k, layer in enumerate(self.layers):
            for direction, cell in zip(layer.directions, layer.cells):
                for name in ("W", "U", "b"):
                    params[f"layers.{k}.{direction}.{name}"] = getattr(cell, name)
        params["head.W"] = self.head_W
        params["head.b"] = self.head_b
        return params

    def _check_inputs(self, inputs) -> np.ndarray:
        x = np.asarray(inputs, dtype=float)
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise DataError(
                f"inputs of shape {x.shape} do not match network input width {self.input_size}"
            )
        if x.shape[1] == 0:
            raise DataError("empty window")
        return x

    def _forward(self, x, training, rng):
        saved = []
        out = x
        for layer in self.layers:
            out, s = layer.forward(out, training=training, rng=rng)
            saved.append(s)
        last = out[:, -1, :]
        pred = last @ self.head_W[0] + self.head_b[0]
        return pred, (saved, out.shape, last)

    def predict(self, inputs, training: bool = False, rng=None) -> np.ndarray:
        """Predictions for a ``(B, L, F)`` batch."""
        pred, _ = self._forward(self._check_inputs(inputs), training, rng)
        return pred

    def forward(self, window, training: bool = False, rng=None):
        """Scalar prediction for one ``L x F`` window (or a batch)."""
        x = np.asarray(window, dtype=float)
        if x.ndim == 2:
            return float(self.predict(x[None], training, rng)[0])
        return self.predict(x, training, rng)

    def loss_and_grads(self, inputs, target, training: bool = True, rng=None):
        """Mean squared error and its gradient for every named parameter."""
        x = self._check_inputs(inputs)
        y = np.asarray(target, dtype=float)
        pred, (saved, out_shape, last) = self._forward(x, training, rng)
        err = pred - y
        loss = float(np.mean(err * err))
        dpred = 2.0 * err / len(y)
        grads = {}
        d_head_W = (dpred @ last)[None, :]
        d_head_b = np.array([dpred.sum()])
        dout = np.zeros(out_shape)
        dout[:, -1, :] = dpred[:, None] * self.head_W[0]
        for k in reversed(range(len(self.layers))):
            layer = self.layers[k]
            dout, cell_grads = layer.backward(dout, saved[k])
            for direction, g in zip(layer.directions, cell_grads):
                for name in ("W", "U", "b"):
                    grads[f"layers.{k}.{direction}.{name}"] = g[name]
        grads["head.W"] = d_head_W
        grads["head.b"] = d_head_b
        return loss, grads


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")


@dataclass
class TrainHistory:
    """Per-epoch losses.

    ``batch_loss`` averages the mini-batch losses seen during the epoch
    (dropout active, parameters moving). ``train_loss`` is the inference-mode
    MSE over all training windows after the epoch's last update.
    """

    batch_loss: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.batch_loss)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def train(net: RecurrentNetwork, inputs, target, cfg: TrainConfig, validation=None):
    """Mini-batch BPTT with Adam on mean squared error.

    Batches come from a seeded shuffle each epoch; gradients are clipped to
    ``cfg.clip_norm`` global norm. ``validation`` is an optional
    ``(inputs, target)`` pair scored after each epoch. Trains ``net`` in
    place and returns ``(net, history)``.
    """
    cfg.validate()
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(target, dtype=float)
    if len(y) == 0:
        raise DataError("no training windows")
    rng = np.random.default_rng([cfg.seed, 1])
    params = net.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    history = TrainHistory()
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = net.loss_and_grads(x[idx], y[idx], training=True, rng=rng)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            _clip(grads, cfg.clip_norm)
            opt.step(params, grads)
            total += loss * len(idx)
        history.batch_loss.append(total / n)
        resid = net.predict(x) - y
        full = float(np.mean(resid * resid))
        if not np.isfinite(full):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        history.train_loss.append(full)
        if validation is not None:
            vx, vy = validation
            vr = net.predict(vx) - np.asarray(vy, dtype=float)
            history.val_loss.append(float(np.mean(vr * vr)))
        if epoch == 1 or epoch % 50 == 0 or epoch == cfg.epochs:
            log.debug("epoch %d: batch loss %.6g, train loss %.6g", epoch, total / n, full)
    return net, history


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    per_param: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradient_check(
    net: RecurrentNetwork,
    inputs,
    target,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare BPTT gradients with central differences for every parameter entry.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``; dropout
    is off (inference-mode forward).
    """
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 2:
        x = x[None]
    y = np.atleast_1d(np.asarray(target, dtype=float))
    _, grads = net.loss_and_grads(x, y, training=False)
    per_param = {}
    max_rel = 0.0
    max_abs = 0.0
    for name, p in net.parameters().items():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + step
            up, _ = net.loss_and_grads(x, y, training=False)
            flat[j] = old - step
            down, _ = net.loss_and_grads(x, y, training=False)
            flat[j] = old
            num_flat[j] = (up - down) / (2.0 * step)
        analytic = grads[name]
        diff = np.abs(analytic - numeric)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        rel = float(np.max(diff / denom))
        per_param[name] = rel
        max_rel = max(max_rel, rel)
        max_abs = max(max_abs, float(np.max(diff)))
    return GradCheckReport(max_rel, max_abs, per_param, tolerance)
