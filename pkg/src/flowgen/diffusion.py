"""DDPM baseline: linear beta schedule, epsilon-prediction training, strided ancestral sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, NumericError
from .flow import TrainOptions, _per_item, run_training
from .nn import VelocityModel, adam_step, loss_and_grad
from .sampler import item_seed
from .signal import ConditionVector, LabeledDataset, MultiLeadSignal

DEFAULT_T = 200
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return self.betas.size

    def time_input(self, t_index) -> np.ndarray:
        """Network time input for a step index: t_index / (T - 1) in [0, 1]."""
        return np.asarray(t_index, dtype=np.float64) / (self.T - 1)


def make_schedule(T: int = DEFAULT_T, beta_min: float = DEFAULT_BETA_MIN, beta_max: float = DEFAULT_BETA_MAX) -> NoiseSchedule:
    if int(T) != T or T < 2:
        raise ContractViolation(f"T must be an integer >= 2, got {T}")
    if not (0 < beta_min < beta_max < 1):
        raise ContractViolation(f"need 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})")
    betas = np.linspace(beta_min, beta_max, int(T))
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    # float64 limits: long, aggressive schedules underflow abar; near-equal endpoints collapse betas
    if not (np.all(np.diff(betas) > 0) and alpha_bars[-1] > 0 and np.all(np.diff(alpha_bars) < 0)):
        raise ContractViolation(
            f"schedule (T={T}, {beta_min}, {beta_max}) is not representable in float64: "
            "betas must stay strictly increasing and alpha_bars strictly decreasing above 0"
        )
    for a in (betas, alphas, alpha_bars):
        a.setflags(write=False)
    return NoiseSchedule(betas, alphas, alpha_bars)


def q_sample(x0, t_index, eps, sched: NoiseSchedule) -> np.ndarray:
    """Forward noising sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t_index`` scalar or per item."""
    t_index = np.asarray(t_index)
    if np.any(t_index < 0) or np.any(t_index >= sched.T):
        raise ContractViolation(f"t_index out of range [0, {sched.T})")
    x0 = np.asarray(x0, dtype=np.float64)
    ab = _per_item(sched.alpha_bars[t_index], x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


@dataclass(frozen=True)
class DiffusionBatch:
    x0: np.ndarray
    eps: np.ndarray
    t_index: np.ndarray
    xt: np.ndarray
    c: np.ndarray


def draw_ddpm_batch(ds: LabeledDataset, sched: NoiseSchedule, batch_size: int, rng) -> DiffusionBatch:
    if ds is None or len(ds) == 0:
        raise ContractViolation("cannot sample from an empty dataset")
    idx = rng.integers(0, len(ds), size=batch_size)
    x0 = ds.array[idx]
    eps = rng.standard_normal(x0.shape)
    t_index = rng.integers(0, sched.T, size=batch_size)
    return DiffusionBatch(x0, eps, t_index, q_sample(x0, t_index, eps, sched), ds.condition_matrix[idx])


def ddpm_loss(eps_model: Callable, batch: DiffusionBatch, sched: NoiseSchedule) -> float:
    """Batch MSE between predicted and true noise."""
    pred = eps_model(batch.xt, batch.c, sched.time_input(batch.t_index))
    return float(np.mean((pred - batch.eps) ** 2))


def train_ddpm(model: VelocityModel, ds: LabeledDataset, sched: NoiseSchedule, opts: TrainOptions):
    """Epsilon-prediction training with the same Adam loop as flow matching."""
    if ds.shape != (model.channels, model.samples) or ds.condition_dim != model.condition_dim:
        raise ContractViolation("dataset shape does not match model")

    def draw(rng):
        b = draw_ddpm_batch(ds, sched, opts.batch_size, rng)
        return b.xt, b.c, sched.time_input(b.t_index), b.eps

    return run_training(model, opts, draw, "ddpm")


def ddpm_train_step(model, ds, sched, batch_size, rng, adam) -> float:
    """One optimisation step in place; returns the batch loss before the update."""
    b = draw_ddpm_batch(ds, sched, batch_size, rng)
    loss, grads = loss_and_grad(model, b.xt, b.c, sched.time_input(b.t_index), b.eps)
    if not np.isfinite(loss):
        raise NumericError(f"ddpm training: non-finite loss {loss} at step {adam.step}", step=adam.step)
    adam_step(model, grads, adam)
    return loss


def stride_timesteps(T: int, nfe: int) -> np.ndarray:
    """Evenly spaced descending step indices from T-1 down to 0, ``nfe`` of them.

    nfe = T gives every step; nfe = 1 gives [T-1] (one jump straight to data).
    """
    if int(nfe) != nfe or nfe < 1:
        raise ContractViolation(f"nfe must be a positive integer, got {nfe}")
    if nfe > T:
        raise ContractViolation(f"nfe={nfe} exceeds the {T} diffusion steps")
    if nfe == 1:
        return np.array([T - 1])
    return np.floor(np.linspace(T - 1, 0, nfe) + 0.5).astype(np.int64)


def reverse_coefficients(sched: NoiseSchedule, nfe: int):
    """Per-step (t_index, abar_t, abar_prev, beta_eff, posterior_var) along the strided chain.

    For a jump from step t to the next kept step s (or to clean data),
    beta_eff = 1 - abar_t / abar_s and the posterior variance is
    (1 - abar_s) / (1 - abar_t) * beta_eff.
    """
    steps = stride_timesteps(sched.T, nfe)
    out = []
    for k, t in enumerate(steps):
        ab_t = sched.alpha_bars[t]
        ab_prev = sched.alpha_bars[steps[k + 1]] if k + 1 < len(steps) else 1.0
        beta = 1.0 - ab_t / ab_prev
        var = (1.0 - ab_prev) / (1.0 - ab_t) * beta
        out.append((int(t), ab_t, ab_prev, beta, var))
    return out


def ancestral_solve(eps_model: Callable, x_T, c, sched: NoiseSchedule, nfe: int, rngs) -> np.ndarray:
    """Run the strided reverse chain from ``x_T`` with exactly ``nfe`` model calls.

    ``rngs`` is one Generator per batch item (or a single Generator when
    ``x_T`` is unbatched); each draws its own per-step noise.
    """
    x = np.array(x_T, dtype=np.float64)
    batched = isinstance(rngs, (list, tuple))
    coeffs = reverse_coefficients(sched, nfe)
    for k, (t, ab_t, _, beta, var) in enumerate(coeffs):
        eps_hat = eps_model(x, c, sched.time_input(t))
        mean = (x - beta / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(1.0 - beta)
        if k + 1 < len(coeffs):
            if batched:
                z = np.stack([r.standard_normal(x.shape[1:]) for r in rngs])
            else:
                z = rngs.standard_normal(x.shape)
            x = mean + np.sqrt(var) * z
        else:
            x = mean
    return x


def ancestral_sample(model, c: ConditionVector, sched: NoiseSchedule, nfe: int, seed: int) -> MultiLeadSignal:
    if c.dim != model.condition_dim:
        raise ContractViolation(f"condition width {c.dim} != model condition width {model.condition_dim}")
    rng = np.random.default_rng(seed)
    x_T = rng.standard_normal((model.channels, model.samples))
    x = ancestral_solve(model, x_T, c.bits, sched, nfe, rng)
    return MultiLeadSignal(x, model.sample_rate_hz)


def ddpm_batch_generate(
    model, conditions: Sequence[ConditionVector], sched: NoiseSchedule, nfe: int, seed: int
) -> list[MultiLeadSignal]:
    """Batched ``ancestral_sample``; item i behaves exactly as if seeded with ``item_seed(seed, i)``."""
    if len(conditions) == 0:
        raise ContractViolation("conditions must be non-empty")
    stride_timesteps(sched.T, nfe)
    for cond in conditions:
        if cond.dim != model.condition_dim:
            raise ContractViolation(f"condition width {cond.dim} != model condition width {model.condition_dim}")
    rngs = [np.random.default_rng(item_seed(seed, i)) for i in range(len(conditions))]
    x_T = np.stack([r.standard_normal((model.channels, model.samples)) for r in rngs])
    c = np.stack([cond.bits for cond in conditions]).astype(np.float64)
    x = ancestral_solve(model, x_T, c, sched, nfe, rngs)
    return [MultiLeadSignal(s, model.sample_rate_hz) for s in x]
