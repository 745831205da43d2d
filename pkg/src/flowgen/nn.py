"""A small MLP velocity / noise network with hand-written backprop and Adam.

The network maps ``concat(flatten(x), embed_time(t), c)`` to a tensor of
x's shape. Hidden layers use SiLU; the output layer is linear and starts
at zero, so a fresh model predicts the zero field.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractViolation,
    MagicMismatchError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)

DEFAULT_LR = 2e-4
DEFAULT_TIME_WIDTH = 32
DEFAULT_TIME_MAX_FREQ = 50.0

MODEL_MAGIC = b"FGMD"
MODEL_VERSION = 1
METHODS = ("fm", "ddpm")


def embed_time(t, width: int = DEFAULT_TIME_WIDTH, max_freq: float = DEFAULT_TIME_MAX_FREQ) -> np.ndarray:
    """Sinusoidal embedding of t in [0, 1]: (sin(w_k t), cos(w_k t)) pairs.

    Frequencies are geometrically spaced from 1 to ``max_freq``.
    Returns shape ``t.shape + (width,)``.
    """
    if width < 2 or width % 2:
        raise ContractViolation(f"time embedding width must be even and >= 2, got {width}")
    t = np.asarray(t, dtype=np.float64)
    half = width // 2
    freqs = max_freq ** (np.arange(half) / max(half - 1, 1))
    angles = t[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def silu(z):
    return z * _sigmoid(z)


def silu_grad(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


@dataclass
class VelocityModel:
    """MLP f(x, c, t) whose output has the shape of x.

    ``weights[i]`` has shape (fan_in, fan_out); ``biases[i]`` has shape (fan_out,).
    """

    channels: int
    samples: int
    condition_dim: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    time_width: int = DEFAULT_TIME_WIDTH
    time_max_freq: float = DEFAULT_TIME_MAX_FREQ
    sample_rate_hz: float = 100.0

    @property
    def signal_dim(self) -> int:
        return self.channels * self.samples

    @property
    def input_dim(self) -> int:
        return self.signal_dim + self.time_width + self.condition_dim

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def params(self) -> list[np.ndarray]:
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "VelocityModel":
        return VelocityModel(
            self.channels,
            self.samples,
            self.condition_dim,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.time_width,
            self.time_max_freq,
            self.sample_rate_hz,
        )

    def __call__(self, x, c, t) -> np.ndarray:
        return forward(self, x, c, t)


def init_model(
    channels: int,
    samples: int,
    condition_dim: int,
    hidden_sizes=(256, 256),
    *,
    time_width: int = DEFAULT_TIME_WIDTH,
    time_max_freq: float = DEFAULT_TIME_MAX_FREQ,
    sample_rate_hz: float = 100.0,
    seed: int = 0,
    zero_final: bool = True,
) -> VelocityModel:
    """Fan-in scaled uniform init; the last layer is zeroed unless ``zero_final`` is False."""
    if min(channels, samples, condition_dim) < 1 or any(h < 1 for h in hidden_sizes):
        raise ContractViolation("model dimensions must be positive")
    rng = np.random.default_rng(seed)
    sizes = [channels * samples + time_width + condition_dim, *hidden_sizes, channels * samples]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        if zero_final and i == len(sizes) - 2:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return VelocityModel(
        channels, samples, condition_dim, weights, biases, time_width, time_max_freq, float(sample_rate_hz)
    )


def _prepare(model: VelocityModel, x, c, t):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    if xb.ndim != 3 or xb.shape[1:] != (model.channels, model.samples):
        raise ContractViolation(
            f"input shape {x.shape} does not match model signal shape ({model.channels}, {model.samples})"
        )
    batch = xb.shape[0]
    c = np.asarray(c, dtype=np.float64)
    cb = np.broadcast_to(c, (batch, c.size)) if c.ndim == 1 else c
    if cb.shape != (batch, model.condition_dim):
        raise ContractViolation(f"condition shape {c.shape} does not match width {model.condition_dim}")
    t = np.asarray(t, dtype=np.float64)
    if t.size not in (1, batch):
        raise ContractViolation(f"{t.size} time values for a batch of {batch}")
    tb = np.broadcast_to(t.reshape(-1), (batch,))
    if np.any(tb < 0) or np.any(tb > 1):
        raise ContractViolation("time input must lie in [0, 1]")
    inputs = np.concatenate(
        [xb.reshape(batch, -1), embed_time(tb, model.time_width, model.time_max_freq), cb], axis=1
    )
    return inputs, single, xb.shape


def _forward_layers(model: VelocityModel, inputs: np.ndarray):
    acts, pre = [inputs], []
    h = inputs
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if i == last:
            return z, acts, pre
        pre.append(z)
        h = silu(z)
        acts.append(h)


def forward(model: VelocityModel, x, c, t) -> np.ndarray:
    """Evaluate the field for one signal (channels, samples) or a batch (B, channels, samples).

    ``c`` may be one condition vector (broadcast over the batch) or one row
    per item; ``t`` may be a scalar or one value per item.
    """
    inputs, single, shape = _prepare(model, x, c, t)
    out, _, _ = _forward_layers(model, inputs)
    out = out.reshape(shape)
    return out[0] if single else out


def loss_and_grad(model: VelocityModel, x, c, t, target) -> tuple[float, list[np.ndarray]]:
    """Mean squared error against ``target`` and its gradient for every parameter.

    The loss is the mean over batch items of the per-item mean squared
    residual, which for equal-sized items is the mean over all elements.
    Gradients come back in ``model.params()`` order.
    """
    inputs, _, shape = _prepare(model, x, c, t)
    target = np.asarray(target, dtype=np.float64).reshape(inputs.shape[0], -1)
    if inputs.shape[0] == 0:
        raise ContractViolation("batch must be non-empty")
    out, acts, pre = _forward_layers(model, inputs)
    resid = out - target
    loss = float(np.mean(resid * resid))
    delta = 2.0 * resid / resid.size
    grads_w, grads_b = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w.append(acts[i].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i].T) * silu_grad(pre[i - 1])
    grads = []
    for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
        grads += [gw, gb]
    return loss, grads


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_model(cls, model: VelocityModel, **hyper) -> "AdamState":
        params = model.params()
        return cls(**hyper, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(model: VelocityModel, grads: list[np.ndarray], st: AdamState):
    """Bias-corrected Adam update, applied in place. Returns ``(model, st)``."""
    params = model.params()
    if len(grads) != len(params) or len(st.m) != len(params):
        raise ContractViolation("gradient / optimizer state does not match model parameters")
    st.step += 1
    bc1 = 1.0 - st.beta1**st.step
    bc2 = 1.0 - st.beta2**st.step
    for p, g, m, v in zip(params, grads, st.m, st.v):
        if g.shape != p.shape:
            raise ContractViolation(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= st.beta1
        m += (1.0 - st.beta1) * g
        v *= st.beta2
        v += (1.0 - st.beta2) * (g * g)
        p -= st.lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)
    return model, st


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """A model plus what is needed to sample from it.

    ``schedule`` is ``(T, beta_min, beta_max)`` for ddpm and None for fm.
    """

    model: VelocityModel
    method: str
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: tuple[int, float, float] | None = None


_CK_HEAD = struct.Struct("<4sH4sHIHdHdH")
_CK_LAYER = struct.Struct("<II")
_CK_TAIL = struct.Struct("<ddddIdd")


def save_model(path, ck: Checkpoint) -> None:
    if ck.method not in METHODS:
        raise ContractViolation(f"unknown method {ck.method!r}")
    m = ck.model
    parts = [
        _CK_HEAD.pack(
            MODEL_MAGIC,
            MODEL_VERSION,
            ck.method.encode().ljust(4, b"\0"),
            m.channels,
            m.samples,
            m.condition_dim,
            m.sample_rate_hz,
            m.time_width,
            m.time_max_freq,
            len(m.weights),
        )
    ]
    for w, b in zip(m.weights, m.biases):
        parts.append(_CK_LAYER.pack(*w.shape))
        parts.append(w.astype("<f8").tobytes())
        parts.append(b.astype("<f8").tobytes())
    T, bmin, bmax = ck.schedule if ck.schedule is not None else (0, 0.0, 0.0)
    parts.append(_CK_TAIL.pack(ck.lr, ck.beta1, ck.beta2, ck.eps, T, bmin, bmax))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def _take(blob: bytes, pos: int, n: int, what: str, path) -> bytes:
    if pos + n > len(blob):
        raise TruncatedPayloadError(f"{path}: truncated while reading {what}")
    return blob[pos : pos + n]


def load_model(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise MagicMismatchError(f"{path}: bad magic {blob[:4]!r}, expected {MODEL_MAGIC!r}")
    head = _CK_HEAD.unpack(_take(blob, 0, _CK_HEAD.size, "header", path))
    _, version, tag, channels, samples, cdim, rate, twidth, tfreq, n_layers = head
    if version != MODEL_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {MODEL_VERSION}")
    method = tag.rstrip(b"\0").decode("ascii", "replace")
    if method not in METHODS:
        raise MagicMismatchError(f"{path}: unknown method tag {tag!r}")
    if n_layers < 1 or twidth < 2 or twidth % 2:
        raise ShapeMismatchError(f"{path}: corrupt header (layers={n_layers}, time width={twidth})")
    pos = _CK_HEAD.size
    expected_in = channels * samples + twidth + cdim
    weights, biases = [], []
    for i in range(n_layers):
        rows, cols = _CK_LAYER.unpack(_take(blob, pos, _CK_LAYER.size, f"layer {i} shape", path))
        pos += _CK_LAYER.size
        if rows != expected_in:
            raise ShapeMismatchError(f"{path}: layer {i} declares {rows} inputs, expected {expected_in}")
        if i == n_layers - 1 and cols != channels * samples:
            raise ShapeMismatchError(
                f"{path}: layer {i} declares {cols} outputs, expected {channels * samples}"
            )
        w = np.frombuffer(_take(blob, pos, 8 * rows * cols, f"layer {i} weights", path), "<f8")
        pos += 8 * rows * cols
        b = np.frombuffer(_take(blob, pos, 8 * cols, f"layer {i} biases", path), "<f8")
        pos += 8 * cols
        weights.append(w.reshape(rows, cols).astype(np.float64))
        biases.append(b.astype(np.float64))
        expected_in = cols
    lr, b1, b2, eps, T, bmin, bmax = _CK_TAIL.unpack(_take(blob, pos, _CK_TAIL.size, "optimizer block", path))
    pos += _CK_TAIL.size
    if pos != len(blob):
        raise ShapeMismatchError(f"{path}: {len(blob) - pos} trailing bytes")
    model = VelocityModel(channels, samples, cdim, weights, biases, twidth, tfreq, rate)
    schedule = (T, bmin, bmax) if method == "ddpm" else None
    return Checkpoint(model, method, lr, b1, b2, eps, schedule)
