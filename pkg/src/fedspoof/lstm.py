"""Stacked LSTM regressor: forward pass, backpropagation through time, Adam
training loop with early stopping, and flat-vector checkpointing.

The model is two LSTM layers (the second consumes the first layer's full
hidden sequence and emits only its last hidden state) followed by a dense
sigmoid head producing one value in (0, 1).  Parameters live in a single flat
vector with a fixed layout so they can be averaged coordinate-wise and
checkpointed bit-exactly.  Gate packing order within each 4H block is
(input, forget, cell, output).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_INPUT_SIZE = 36
DEFAULT_HIDDEN_SIZE = 100


def param_count(input_size: int, hidden_size: int) -> int:
    """Total parameters of the 2-layer LSTM plus dense head."""
    d, h = input_size, hidden_size
    layer1 = 4 * (d * h + h * h + h)
    layer2 = 4 * (h * h + h * h + h)
    head = h + 1
    return layer1 + layer2 + head


def layout_blocks(input_size: int, hidden_size: int) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, offset) manifest of the flat parameter vector."""
    d, h = input_size, hidden_size
    shapes = [
        ("l1_wx", (d, 4 * h)),
        ("l1_wh", (h, 4 * h)),
        ("l1_b", (4 * h,)),
        ("l2_wx", (h, 4 * h)),
        ("l2_wh", (h, 4 * h)),
        ("l2_b", (4 * h,)),
        ("head_w", (h,)),
        ("head_b", (1,)),
    ]
    blocks = []
    offset = 0
    for name, shape in shapes:
        blocks.append((name, shape, offset))
        offset += int(np.prod(shape))
    return blocks


@dataclass
class LstmModelParams:
    """Flat, ordered parameter vector with a layout manifest."""

    input_size: int
    hidden_size: int
    vector: np.ndarray

    def __post_init__(self) -> None:
        expected = param_count(self.input_size, self.hidden_size)
        self.vector = np.ascontiguousarray(self.vector)
        if self.vector.ndim != 1 or self.vector.size != expected:
            raise ValueError(
                f"parameter vector must be flat with {expected} entries, got {self.vector.shape}"
            )

    def block(self, name: str) -> np.ndarray:
        """Zero-copy view of one named block, reshaped per the layout."""
        for bname, shape, offset in layout_blocks(self.input_size, self.hidden_size):
            if bname == name:
                size = int(np.prod(shape))
                return self.vector[offset : offset + size].reshape(shape)
        raise KeyError(name)

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: self.block(name) for name, _, _ in self.layout()}

    def layout(self) -> list[tuple[str, tuple[int, ...], int]]:
        return layout_blocks(self.input_size, self.hidden_size)

    def copy(self) -> "LstmModelParams":
        return LstmModelParams(self.input_size, self.hidden_size, self.vector.copy())

    def astype(self, dtype) -> "LstmModelParams":
        return LstmModelParams(self.input_size, self.hidden_size, self.vector.astype(dtype))


def init_params(
    seed: int,
    input_size: int = DEFAULT_INPUT_SIZE,
    hidden_size: int = DEFAULT_HIDDEN_SIZE,
    dtype=np.float32,
) -> LstmModelParams:
    """Glorot-uniform weights per gate block, zero biases, forget bias 1.0.

    Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    params = LstmModelParams(
        input_size, hidden_size, np.zeros(param_count(input_size, hidden_size), dtype=dtype)
    )
    h = hidden_size
    for name in ("l1_wx", "l1_wh", "l2_wx", "l2_wh"):
        w = params.block(name)
        fan_in = w.shape[0]
        limit = np.sqrt(6.0 / (fan_in + h))
        w[:] = rng.uniform(-limit, limit, size=w.shape).astype(dtype)
    limit = np.sqrt(6.0 / (h + 1))
    params.block("head_w")[:] = rng.uniform(-limit, limit, size=h).astype(dtype)
    params.block("l1_b")[h : 2 * h] = 1.0
    params.block("l2_b")[h : 2 * h] = 1.0
    return params


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _layer_forward(wx, wh, b, x):
    """One LSTM layer over a batch.  x is (B, T, D); returns hidden sequence
    (B, T, H) and the per-gate activations needed for BPTT."""
    bsz, steps, _ = x.shape
    h_dim = wh.shape[0]
    dtype = wx.dtype
    gi = np.empty((bsz, steps, h_dim), dtype=dtype)
    gf = np.empty_like(gi)
    gg = np.empty_like(gi)
    go = np.empty_like(gi)
    cs = np.empty_like(gi)
    tc = np.empty_like(gi)
    hs = np.empty_like(gi)
    h = np.zeros((bsz, h_dim), dtype=dtype)
    c = np.zeros((bsz, h_dim), dtype=dtype)
    for t in range(steps):
        z = x[:, t] @ wx + h @ wh + b
        i = _sigmoid(z[:, :h_dim])
        f = _sigmoid(z[:, h_dim : 2 * h_dim])
        g = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
        o = _sigmoid(z[:, 3 * h_dim :])
        c = f * c + i * g
        t_c = np.tanh(c)
        h = o * t_c
        gi[:, t], gf[:, t], gg[:, t], go[:, t] = i, f, g, o
        cs[:, t], tc[:, t], hs[:, t] = c, t_c, h
    return hs, {"i": gi, "f": gf, "g": gg, "o": go, "c": cs, "tc": tc, "x": x}


def _layer_backward(wx, wh, cache, d_hs):
    """BPTT through one layer given upstream gradients on every hidden state.

    Returns gradients for the layer inputs and for (wx, wh, b).
    """
    x = cache["x"]
    bsz, steps, in_dim = x.shape
    h_dim = wh.shape[0]
    dtype = wx.dtype
    d_wx = np.zeros_like(wx)
    d_wh = np.zeros_like(wh)
    d_b = np.zeros(4 * h_dim, dtype=dtype)
    d_x = np.empty((bsz, steps, in_dim), dtype=dtype)
    dh_rec = np.zeros((bsz, h_dim), dtype=dtype)
    dc_rec = np.zeros((bsz, h_dim), dtype=dtype)
    hs = cache.get("hs")
    for t in range(steps - 1, -1, -1):
        i, f, g, o = cache["i"][:, t], cache["f"][:, t], cache["g"][:, t], cache["o"][:, t]
        t_c = cache["tc"][:, t]
        c_prev = cache["c"][:, t - 1] if t > 0 else 0.0
        h_prev = hs[:, t - 1] if t > 0 else None

        dh = d_hs[:, t] + dh_rec
        do = dh * t_c
        dc = dh * o * (1.0 - t_c * t_c) + dc_rec
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_rec = dc * f

        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        d_wx += x[:, t].T @ dz
        if h_prev is not None:
            d_wh += h_prev.T @ dz
        d_b += dz.sum(axis=0)
        dh_rec = dz @ wh.T
        d_x[:, t] = dz @ wx.T
    return d_x, d_wx, d_wh, d_b


def forward(params: LstmModelParams, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Model output for a batch of sequences.

    x is (B, W, input_size) or a single (W, input_size) sequence.  Returns
    (predictions in (0, 1), cached activations for backward).
    """
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != params.input_size:
        raise ValueError(f"input must be (B, W, {params.input_size}), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite values in input sequence")
    x = x.astype(params.vector.dtype, copy=False)

    blocks = params.blocks()
    h1, cache1 = _layer_forward(blocks["l1_wx"], blocks["l1_wh"], blocks["l1_b"], x)
    cache1["hs"] = h1
    h2, cache2 = _layer_forward(blocks["l2_wx"], blocks["l2_wh"], blocks["l2_b"], h1)
    cache2["hs"] = h2

    h_last = h2[:, -1]
    u = h_last @ blocks["head_w"] + blocks["head_b"][0]
    y = _sigmoid(u)
    cache = {"cache1": cache1, "cache2": cache2, "h2_last": h_last, "y": y}
    return (y[0] if single else y), cache


def predict(params: LstmModelParams, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Scores for many windows, evaluated in chunks to bound memory."""
    x = np.asarray(x)
    out = np.empty(x.shape[0], dtype=np.float64)
    for start in range(0, x.shape[0], batch_size):
        y, _ = forward(params, x[start : start + batch_size])
        out[start : start + y.shape[0]] = y
    return out


def backward(
    params: LstmModelParams, x: np.ndarray, targets: np.ndarray
) -> tuple[np.ndarray, float]:
    """Gradient of batch-mean squared error w.r.t. every parameter.

    Returns (flat gradient in parameter layout order, batch MSE).
    """
    x = np.asarray(x)
    targets = np.asarray(targets)
    if x.ndim != 3:
        raise ValueError("backward expects a batch of sequences")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if targets.shape != (x.shape[0],):
        raise ValueError(f"targets shape {targets.shape} does not match batch {x.shape[0]}")

    y, cache = forward(params, x)
    dtype = params.vector.dtype
    bsz = x.shape[0]
    resid = y - targets.astype(y.dtype)
    mse = float(np.mean(resid.astype(np.float64) ** 2))

    blocks = params.blocks()
    dy = (2.0 / bsz) * resid
    du = (dy * y * (1.0 - y)).astype(dtype)

    h_last = cache["h2_last"]
    d_head_w = h_last.T @ du
    d_head_b = du.sum(keepdims=True)

    steps = x.shape[1]
    d_h2 = np.zeros((bsz, steps, params.hidden_size), dtype=dtype)
    d_h2[:, -1] = np.outer(du, blocks["head_w"])
    d_h1, d_l2_wx, d_l2_wh, d_l2_b = _layer_backward(
        blocks["l2_wx"], blocks["l2_wh"], cache["cache2"], d_h2
    )
    _, d_l1_wx, d_l1_wh, d_l1_b = _layer_backward(
        blocks["l1_wx"], blocks["l1_wh"], cache["cache1"], d_h1
    )

    grad = np.concatenate(
        [
            d_l1_wx.ravel(),
            d_l1_wh.ravel(),
            d_l1_b,
            d_l2_wx.ravel(),
            d_l2_wh.ravel(),
            d_l2_b,
            d_head_w,
            d_head_b,
        ]
    ).astype(dtype)
    return grad, mse


def batch_mse(params: LstmModelParams, x: np.ndarray, targets: np.ndarray) -> float:
    scores = predict(params, x)
    return float(np.mean((scores - np.asarray(targets, dtype=np.float64)) ** 2))


def clip_gradient_norm(grad: np.ndarray, max_norm: float) -> float:
    """Scale grad in place so its global L2 norm is at most max_norm."""
    norm = float(np.linalg.norm(grad.astype(np.float64)))
    if norm > max_norm > 0.0:
        grad *= max_norm / norm
    return norm


class AdamOptimizer:
    """Adam with bias correction; moments live in the parameter dtype."""

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, dtype=np.float32):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n_params, dtype=dtype)
        self.v = np.zeros(n_params, dtype=dtype)

    def step(self, vector: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m += (1.0 - self.beta1) * (grad - self.m)
        self.v += (1.0 - self.beta2) * (grad * grad - self.v)
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        vector -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(vector.dtype)


class EarlyStopping:
    """Stop when validation loss fails to improve for `patience` epochs.

    Improvement means a strict decrease of at least min_delta below the best
    loss seen so far.
    """

    def __init__(self, patience: int = 20, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best: float | None = None
        self.best_epoch = 0
        self.counter = 0
        self.should_stop = False

    def update(self, loss: float, epoch: int) -> bool:
        if self.best is None or self.best - loss >= self.min_delta:
            self.best = loss
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        if self.counter >= self.patience:
            self.should_stop = True
        return False


@dataclass(frozen=True)
class TrainConfig:
    """Local training hyperparameters."""

    batch_size: int = 72
    base_learning_rate: float = 1e-3
    max_epochs: int = 200
    early_stop_patience: int = 20
    validation_fraction: float = 0.2
    min_improvement: float = 1e-6
    clip_norm: float = 5.0
    lr_scale_min: float = 0.5
    lr_scale_max: float = 2.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must be in (0, 1)")


@dataclass
class TrainReport:
    """Per-epoch loss curves and the early-stopping outcome."""

    epochs_run: int
    best_epoch: int
    best_validation_loss: float
    train_mse_curve: list[float] = field(default_factory=list)
    val_mse_curve: list[float] = field(default_factory=list)


def scaled_learning_rate(cfg: TrainConfig, n_local: int, announced_mean: float | None) -> float:
    """Per-client learning rate: base rate scaled by local data volume.

    The multiplier is n_local over the server-announced mean dataset size,
    clamped to [lr_scale_min, lr_scale_max]; without an announced mean the
    base rate is used unchanged.
    """
    if announced_mean is None or announced_mean <= 0.0:
        return cfg.base_learning_rate
    scale = min(max(n_local / announced_mean, cfg.lr_scale_min), cfg.lr_scale_max)
    return cfg.base_learning_rate * scale


def train_local(
    params: LstmModelParams,
    x: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    announced_mean_size: float | None = None,
) -> tuple[LstmModelParams, TrainReport]:
    """Train on one client's windows with Adam and early stopping.

    The validation split is the last `validation_fraction` of the windows in
    time order (no shuffling across the split, to avoid temporal leakage).
    Mini-batches of `batch_size` are drawn from a per-epoch shuffle of the
    training windows, the final short batch kept.  Returns the parameters of
    the best validation epoch; deterministic per cfg.rng_seed.
    """
    x = np.asarray(x, dtype=np.float32)
    targets = np.asarray(targets, dtype=np.float32)
    n = x.shape[0]
    if n == 0 or targets.shape[0] != n:
        raise ValueError("dataset empty or targets misaligned")
    n_val = int(n * cfg.validation_fraction)
    n_train = n - n_val
    if n_val < 1 or n_train < 1:
        raise ValueError(
            f"dataset of {n} windows is smaller than the validation split minimum"
        )
    train_x, val_x = x[:n_train], x[n_train:]
    train_y, val_y = targets[:n_train], targets[n_train:]

    work = params.copy()
    best_vec = work.vector.copy()
    best_loss = np.inf
    best_epoch = 0
    lr = scaled_learning_rate(cfg, n_train, announced_mean_size)
    opt = AdamOptimizer(work.vector.size, lr, dtype=work.vector.dtype)
    # the min_delta rule governs only the stopping counter; the returned model
    # is the plain argmin of the validation curve
    stopper = EarlyStopping(cfg.early_stop_patience, cfg.min_improvement)
    rng = np.random.default_rng(cfg.rng_seed)
    report = TrainReport(epochs_run=0, best_epoch=0, best_validation_loss=np.inf)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_train)
        sq_err_sum = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grad, mse = backward(work, train_x[idx], train_y[idx])
            clip_gradient_norm(grad, cfg.clip_norm)
            opt.step(work.vector, grad)
            sq_err_sum += mse * idx.size
        if not np.isfinite(work.vector).all():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")

        report.train_mse_curve.append(sq_err_sum / n_train)
        val_mse = batch_mse(work, val_x, val_y)
        report.val_mse_curve.append(val_mse)
        report.epochs_run = epoch
        if val_mse < best_loss:
            best_loss = val_mse
            best_epoch = epoch
            best_vec = work.vector.copy()
        stopper.update(val_mse, epoch)
        if stopper.should_stop:
            break

    report.best_epoch = best_epoch
    report.best_validation_loss = float(best_loss)
    return LstmModelParams(params.input_size, params.hidden_size, best_vec), report


CHECKPOINT_MAGIC = "fedspoof-lstm-checkpoint v1"


def save_checkpoint(params: LstmModelParams, path: str) -> None:
    """Write a checkpoint: text layout manifest + little-endian float32 block."""
    vec = params.vector.astype("<f4")
    with open(path, "wb") as fh:
        header = [CHECKPOINT_MAGIC,
                  f"input_size {params.input_size}",
                  f"hidden_size {params.hidden_size}",
                  f"param_count {vec.size}"]
        header += [f"block {name} {'x'.join(map(str, shape))} {offset}"
                   for name, shape, offset in params.layout()]
        fh.write(("\n".join(header) + "\n\n").encode("ascii"))
        fh.write(vec.tobytes())


def load_checkpoint(path: str) -> LstmModelParams:
    """Read a checkpoint written by save_checkpoint; bit-exact round-trip."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, body = blob.partition(b"\n\n")
    lines = head.decode("ascii").split("\n")
    if lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"unrecognized checkpoint {path!r}")
    meta = dict(line.split(" ", 1) for line in lines[1:] if not line.startswith("block "))
    input_size = int(meta["input_size"])
    hidden_size = int(meta["hidden_size"])
    count = int(meta["param_count"])
    vec = np.frombuffer(body, dtype="<f4", count=count).astype(np.float32)
    return LstmModelParams(input_size, hidden_size, vec)
