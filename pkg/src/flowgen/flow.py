"""Linear-path flow matching: interpolants, target velocities, loss and training."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ContractViolation, NumericError
from .nn import DEFAULT_LR, AdamState, VelocityModel, adam_step, loss_and_grad
from .signal import LabeledDataset

DEFAULT_BATCH_SIZE = 6


def _per_item(t, ndim: int) -> np.ndarray:
    # reshape a scalar or (B,) time array so it broadcasts over (B, ...) tensors
    t = np.asarray(t, dtype=np.float64)
    return t.reshape(t.shape + (1,) * (ndim - t.ndim)) if t.ndim else t


def interpolate(x0, x1, t) -> np.ndarray:
    """x_t = (1 - t) x0 + t x1. ``t`` is a scalar or one value per leading item."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ContractViolation(f"shape mismatch {x0.shape} vs {x1.shape}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise ContractViolation("t must lie in [0, 1]")
    tb = _per_item(t_arr, x0.ndim)
    return (1.0 - tb) * x0 + tb * x1


def target_velocity(x0, x1) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ContractViolation(f"shape mismatch {x0.shape} vs {x1.shape}")
    return x1 - x0


@dataclass(frozen=True)
class FlowBatch:
    """One minibatch for the flow-matching loss; arrays have a leading batch axis."""

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    v_target: np.ndarray
    c: np.ndarray

    def __len__(self):
        return self.x0.shape[0]

    @classmethod
    def build(cls, x0, x1, t, c) -> "FlowBatch":
        return cls(
            np.asarray(x0, dtype=np.float64),
            np.asarray(x1, dtype=np.float64),
            np.asarray(t, dtype=np.float64),
            interpolate(x0, x1, t),
            target_velocity(x0, x1),
            np.asarray(c, dtype=np.float64),
        )


def sample_batch(ds: LabeledDataset, batch_size: int, rng: np.random.Generator) -> FlowBatch:
    """Draw data items uniformly (with their conditions), N(0, I) noise and t ~ U[0, 1] per item."""
    if ds is None or len(ds) == 0:
        raise ContractViolation("cannot sample from an empty dataset")
    if batch_size < 1:
        raise ContractViolation(f"batch size must be positive, got {batch_size}")
    idx = rng.integers(0, len(ds), size=batch_size)
    x1 = ds.array[idx]
    x0 = rng.standard_normal(x1.shape)
    t = rng.uniform(0.0, 1.0, size=batch_size)
    return FlowBatch.build(x0, x1, t, ds.condition_matrix[idx])


def fm_loss(model: Callable, batch: FlowBatch) -> float:
    """Mean over batch items of the mean squared error between f(x_t, c, t) and x1 - x0."""
    if len(batch) == 0:
        raise ContractViolation("batch must be non-empty")
    resid = model(batch.xt, batch.c, batch.t) - batch.v_target
    per_item = np.mean(resid.reshape(len(batch), -1) ** 2, axis=1)
    return float(np.mean(per_item))


def linear_path_field(x1) -> Callable:
    """Conditional velocity u_t(x | x1) = (x1 - x) / (1 - t) of the linear path; t < 1."""
    x1 = np.asarray(x1, dtype=np.float64)

    def u(x, t):
        return (x1 - x) / (1.0 - _per_item(t, x.ndim))

    return u


def conditional_fm_objective(model: Callable, xt, c, t, u: Callable) -> float:
    """Generic regression objective E ||f(x, c, t) - u_t(x)||^2 for an arbitrary target field ``u``."""
    xt = np.asarray(xt, dtype=np.float64)
    pred = model(xt, c, t)
    target = u(xt, t)
    total = 0.0
    for i in range(xt.shape[0]):
        total += np.mean((pred[i] - target[i]) ** 2)
    return float(total / xt.shape[0])


@dataclass(frozen=True)
class TrainOptions:
    steps: int = 1000
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    seed: int = 0
    log_every: int = 1

    def validate(self):
        problems = []
        if self.steps < 0:
            problems.append("steps must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if self.log_every < 1:
            problems.append("log_every must be >= 1")
        if problems:
            raise ContractViolation("; ".join(problems))


class LossRecord(NamedTuple):
    step: int
    loss: float
    wall_ms: float


def run_training(model: VelocityModel, opts: TrainOptions, step_fn: Callable, label: str):
    """Shared Adam loop. ``step_fn(rng) -> (x, c, t, target)`` draws one regression batch.

    Works on a copy of ``model``; returns ``(trained_copy, trace)``.
    """
    opts.validate()
    model = model.copy()
    adam = AdamState.for_model(model, lr=opts.lr)
    rng = np.random.default_rng(opts.seed)
    trace = []
    start = time.perf_counter()
    for step in range(opts.steps):
        x, c, t, target = step_fn(rng)
        loss, grads = loss_and_grad(model, x, c, t, target)
        if not np.isfinite(loss):
            raise NumericError(f"{label} training: non-finite loss {loss} at step {step}", step=step)
        adam_step(model, grads, adam)
        if step % opts.log_every == 0 or step == opts.steps - 1:
            trace.append(LossRecord(step, loss, (time.perf_counter() - start) * 1e3))
    return model, trace


def train_flow(model: VelocityModel, ds: LabeledDataset, opts: TrainOptions):
    """Fit ``model`` to the linear-path velocity x1 - x0. Returns ``(model, trace)``."""
    if len(ds) == 0:
        raise ContractViolation("empty dataset")
    if ds.shape != (model.channels, model.samples) or ds.condition_dim != model.condition_dim:
        raise ContractViolation(
            f"dataset shape {ds.shape}/cond {ds.condition_dim} does not match model "
            f"({model.channels}, {model.samples})/cond {model.condition_dim}"
        )

    def draw(rng):
        b = sample_batch(ds, opts.batch_size, rng)
        return b.xt, b.c, b.t, b.v_target

    return run_training(model, opts, draw, "flow")


def write_loss_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "wall_ms"])
        for rec in trace:
            w.writerow([rec.step, repr(rec.loss), f"{rec.wall_ms:.3f}"])
