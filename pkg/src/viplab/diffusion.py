"""Discrete-time DDPM shared by teacher and students.

Forward noising q(x_t | x_0), the epsilon-MSE training loss, and ancestral
sampling. Sampling chains draw from per-chain noise streams derived from
(seed, chain index), so results do not depend on batch layout or any
future parallel evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .autodiff import GradientError, Tensor, mean_all, sum_rows
from .nets import EpsilonNet
from .optim import AdamOptimizer, collect_grads
from .serde import write_csv


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and their cumulative products."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.shape != (self.T,):
            raise ValueError(f"beta must have shape ({self.T},), got {beta.shape}")
        if not ((beta > 0.0).all() and (beta < 1.0).all()):
            raise ValueError("beta values must lie strictly in (0, 1)")
        if not (np.diff(beta) > 0.0).all():
            raise ValueError("beta must be strictly increasing")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        if not ((alpha_bar > 0.0).all() and (alpha_bar <= 1.0).all()):
            raise ValueError("alpha_bar must stay in (0, 1]")
        if not (np.diff(alpha_bar) < 0.0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.size and ((t < 0).any() or (t >= self.T).any()):
            raise ValueError(f"timestep out of range [0, {self.T})")
        return t


def linear_schedule(
    T: int = 100, beta_min: float = 1e-4, beta_max: float = 0.02
) -> NoiseSchedule:
    """Default toy schedule: T=100, beta linear from 1e-4 to 0.02."""
    return NoiseSchedule(T=T, beta=np.linspace(beta_min, beta_max, T))


@dataclass
class DiffusionModel:
    net: EpsilonNet
    schedule: NoiseSchedule

    def __post_init__(self):
        if self.net.output_dim != 2:
            raise ValueError("net output dimension must be 2")

    def clone(self) -> "DiffusionModel":
        return DiffusionModel(net=self.net.clone(), schedule=self.schedule)


def q_sample(schedule: NoiseSchedule, x0, t, eps) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with caller-supplied eps."""
    t = schedule.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} must match x0 shape {x0.shape}")
    abar = schedule.alpha_bar[t]
    if np.ndim(abar) == 1 and x0.ndim == 2:
        abar = abar[:, None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def diffusion_train_loss(
    model: DiffusionModel, x0: np.ndarray, rng: np.random.Generator
) -> Tensor:
    """Differentiable E ||eps - eps_theta(x_t, t)||^2 over a batch.

    Draws t ~ U{0..T-1} and eps ~ N(0, I) from the supplied generator,
    in that order.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] == 0:
        raise ValueError("x0 must be a non-empty (batch, 2) array")
    t = rng.integers(0, model.schedule.T, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(model.schedule, x0, t, eps)
    pred = model.net.forward(x_t, t, grad=True)
    diff = eps - pred
    return mean_all(sum_rows(diff * diff))


def sample(model: DiffusionModel, n: int, seed: int) -> np.ndarray:
    """Ancestral DDPM sampling of n points, deterministic in seed.

    Chain i consumes its own stream (seed, chain=i): first the x_T draw,
    then one z per step down to t=1 (no noise at t=0). sigma_t = sqrt(beta_t).
    """
    if n <= 0:
        raise ValueError("n must be positive")
    sched = model.schedule
    children = np.random.SeedSequence(entropy=int(seed)).spawn(n)
    noise = np.empty((n, sched.T + 1, 2))
    for i, child in enumerate(children):
        noise[i] = np.random.default_rng(child).standard_normal((sched.T + 1, 2))

    x = noise[:, 0, :].copy()
    for step, t in enumerate(range(sched.T - 1, -1, -1)):
        eps_hat = model.net.forward(x, np.full(n, t), grad=False)
        coef = sched.beta[t] / np.sqrt(1.0 - sched.alpha_bar[t])
        mean = (x - coef * eps_hat) / np.sqrt(sched.alpha[t])
        if t > 0:
            x = mean + np.sqrt(sched.beta[t]) * noise[:, 1 + step, :]
        else:
            x = mean
    return x


def pretrain(
    model: DiffusionModel,
    sample_data,
    steps: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
) -> list[float]:
    """Train the epsilon net with Adam on fresh batches from sample_data.

    sample_data(batch_size, rng) -> (batch, 2) array; returns the per-step
    loss history.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    opt = AdamOptimizer(learning_rate)
    history: list[float] = []
    for step in range(steps):
        x0 = sample_data(batch_size, rng)
        model.net.zero_grad()
        loss = diffusion_train_loss(model, x0, rng)
        if not np.isfinite(loss.data):
            raise GradientError(f"non-finite pretraining loss at step {step}")
        autodiff.backward(loss)
        opt.step(model.net, collect_grads(model.net))
        history.append(float(loss.data))
    return history


def save_samples_csv(samples: np.ndarray, path) -> None:
    """CSV dump with header x,y."""
    write_csv(path, ["x", "y"], [(float(a), float(b)) for a, b in samples])
