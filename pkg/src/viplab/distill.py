"""Preference-distillation objectives and the epoch-level trainer.

Three losses over winner/loser pairs, with a frozen teacher as reference:

* SFT: squared distance between student and teacher noise predictions on
  the noised winner, averaged over the batch.
* diffusion-DPO: per pair, compare the student-vs-reference denoising
  error margins on winner and loser branches inside a log-sigmoid,
  scaled by beta * T * omega.
* ReDPO: diffusion-DPO plus w_sft times the SFT term, where the SFT term
  reuses the winner branch's timestep and noise draw.

Random draw protocol per batch (one generator, consumed in order):
timesteps t (one per pair; a second independent set for the loser branch
when shared_t is off), winner noise, loser noise. The SFT-only mode draws
just (t, winner noise). ReDPO adds no draws beyond diffusion-DPO, so a
zero SFT weight is stream-identical to the pure DPO loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import Tensor, logsigmoid, mean_all, sum_rows
from .curation import PreferencePair
from .diffusion import DiffusionModel, q_sample
from .optim import AdamOptimizer, collect_grads


class TrainingError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass
class DistillConfig:
    """Knobs for preference distillation.

    ``omega`` is the constant value of the timestep weighting (the only
    supported mode). The toy default beta is scaled down from the
    full-scale setting, which saturates the sigmoid at this problem size;
    ``paper_preset`` carries the full-scale numbers.
    """

    beta: float = 50.0
    omega: float = 1.0
    w_sft: float = 10.0
    learning_rate: float = 1e-3
    epochs: int = 1
    batch_size: int = 64
    shared_t: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.w_sft < 0:
            raise ValueError("w_sft must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def paper_preset(w_sft: float = 1e6) -> DistillConfig:
    """Full-scale hyperparameters (beta 5000, lr 6e-6, batch 2, 2 epochs)."""
    return DistillConfig(
        beta=5000.0, w_sft=w_sft, learning_rate=6e-6, epochs=2, batch_size=2
    )


@dataclass(frozen=True)
class LossBreakdown:
    dpo: float
    sft: float
    total: float

    @classmethod
    def combine(cls, dpo: float, sft: float, w_sft: float) -> "LossBreakdown":
        return cls(dpo=dpo, sft=sft, total=dpo + w_sft * sft)


def _check_pair_models(student: DiffusionModel, teacher: DiffusionModel) -> None:
    if student.schedule.T != teacher.schedule.T or not np.array_equal(
        student.schedule.beta, teacher.schedule.beta
    ):
        raise ValueError("student and teacher must share one noise schedule")


def pairs_to_arrays(pairs: list[PreferencePair]) -> tuple[np.ndarray, np.ndarray]:
    x_w = np.array([p.x_w for p in pairs], dtype=np.float64)
    x_l = np.array([p.x_l for p in pairs], dtype=np.float64)
    return x_w, x_l


def sft_term(
    student: DiffusionModel,
    teacher: DiffusionModel,
    x_w: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
) -> Tensor:
    """Batch-mean ||eps_theta(x_t^w, t) - eps_ref(x_t^w, t)||^2 (fixed draws)."""
    x_t = q_sample(student.schedule, x_w, t, eps)
    pred = student.net.forward(x_t, t, grad=True)
    ref = teacher.net.forward(x_t, t, grad=False)
    diff = pred - ref
    return mean_all(sum_rows(diff * diff))


def dpo_sft_terms(
    student: DiffusionModel,
    teacher: DiffusionModel,
    x_w: np.ndarray,
    x_l: np.ndarray,
    t_w: np.ndarray,
    t_l: np.ndarray,
    eps_w: np.ndarray,
    eps_l: np.ndarray,
    cfg: DistillConfig,
) -> tuple[Tensor, Tensor]:
    """Deterministic core of the DPO and SFT objectives on fixed draws.

    Returns (dpo, sft) scalar nodes; the SFT node reuses the winner-branch
    forward passes, so evaluating both costs no extra network work.
    """
    sched = student.schedule
    xw_t = q_sample(sched, x_w, t_w, eps_w)
    xl_t = q_sample(sched, x_l, t_l, eps_l)
    pred_w = student.net.forward(xw_t, t_w, grad=True)
    pred_l = student.net.forward(xl_t, t_l, grad=True)
    ref_w = teacher.net.forward(xw_t, t_w, grad=False)
    ref_l = teacher.net.forward(xl_t, t_l, grad=False)

    resid_w = eps_w - pred_w
    resid_l = eps_l - pred_l
    d_w = sum_rows(resid_w * resid_w) - sum_rows((eps_w - ref_w) ** 2)
    d_l = sum_rows(resid_l * resid_l) - sum_rows((eps_l - ref_l) ** 2)
    scale = cfg.beta * sched.T * cfg.omega
    dpo = mean_all(-logsigmoid(-scale * (d_w - d_l)))

    diff = pred_w - ref_w
    sft = mean_all(sum_rows(diff * diff))
    return dpo, sft


def _draw_pair_batch(cfg: DistillConfig, rng: np.random.Generator, n: int, T: int):
    t_w = rng.integers(0, T, size=n)
    t_l = t_w if cfg.shared_t else rng.integers(0, T, size=n)
    eps_w = rng.standard_normal((n, 2))
    eps_l = rng.standard_normal((n, 2))
    return t_w, t_l, eps_w, eps_l


def loss_sft(
    student: DiffusionModel,
    teacher: DiffusionModel,
    x_w: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
) -> Tensor:
    """Public SFT regularizer on explicit draws (teacher stays frozen)."""
    _check_pair_models(student, teacher)
    return sft_term(student, teacher, np.asarray(x_w, dtype=np.float64), t, eps)


def loss_diff_dpo(
    student: DiffusionModel,
    teacher: DiffusionModel,
    pairs: list[PreferencePair],
    cfg: DistillConfig,
    rng: np.random.Generator,
) -> Tensor:
    """Diffusion-DPO batch loss with draws taken from rng."""
    node, _ = _pair_losses(student, teacher, pairs, cfg, rng, w_sft=0.0)
    return node


def loss_redpo(
    student: DiffusionModel,
    teacher: DiffusionModel,
    pairs: list[PreferencePair],
    cfg: DistillConfig,
    rng: np.random.Generator,
) -> tuple[Tensor, LossBreakdown]:
    """ReDPO batch loss: DPO + w_sft * SFT on the shared winner branch."""
    return _pair_losses(student, teacher, pairs, cfg, rng, w_sft=cfg.w_sft)


def _pair_losses(
    student: DiffusionModel,
    teacher: DiffusionModel,
    pairs: list[PreferencePair],
    cfg: DistillConfig,
    rng: np.random.Generator,
    w_sft: float,
) -> tuple[Tensor, LossBreakdown]:
    _check_pair_models(student, teacher)
    if not pairs:
        raise ValueError("pair batch must be non-empty")
    x_w, x_l = pairs_to_arrays(pairs)
    t_w, t_l, eps_w, eps_l = _draw_pair_batch(cfg, rng, len(pairs), student.schedule.T)
    dpo, sft = dpo_sft_terms(student, teacher, x_w, x_l, t_w, t_l, eps_w, eps_l, cfg)
    # w_sft == 0 must be bit-identical to the pure DPO objective, so the
    # SFT node is kept out of the graph entirely in that case.
    total = dpo if w_sft == 0.0 else dpo + w_sft * sft
    breakdown = LossBreakdown.combine(float(dpo.data), float(sft.data), w_sft)
    return total, breakdown


MODES = ("sft", "dpo", "redpo")


def train_distill(
    student: DiffusionModel,
    teacher: DiffusionModel,
    dataset: list[PreferencePair],
    cfg: DistillConfig,
    mode: str = "redpo",
) -> list[LossBreakdown]:
    """Adam-train the student over epochs of shuffled mini-batches.

    The teacher is only ever run without gradients. Returns the per-epoch
    mean loss breakdown (total recombined as dpo + w_eff * sft). A
    non-finite loss aborts with the epoch and batch index before any
    gradient is applied.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    _check_pair_models(student, teacher)
    if not dataset:
        raise ValueError("dataset must be non-empty")

    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed)))
    opt = AdamOptimizer(cfg.learning_rate)
    x_w_all, _ = pairs_to_arrays(dataset)
    n = len(dataset)
    history: list[LossBreakdown] = []

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_dpo: list[float] = []
        epoch_sft: list[float] = []
        for batch_idx, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            if mode == "sft":
                t = rng.integers(0, student.schedule.T, size=len(idx))
                eps = rng.standard_normal((len(idx), 2))
                loss = sft_term(student, teacher, x_w_all[idx], t, eps)
                breakdown = LossBreakdown.combine(0.0, float(loss.data), 1.0)
            else:
                batch = [dataset[i] for i in idx]
                w_eff = cfg.w_sft if mode == "redpo" else 0.0
                loss, breakdown = _pair_losses(
                    student, teacher, batch, cfg, rng, w_sft=w_eff
                )
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {batch_idx}"
                )
            student.net.zero_grad()
            autodiff.backward(loss)
            opt.step(student.net, collect_grads(student.net))
            epoch_dpo.append(breakdown.dpo)
            epoch_sft.append(breakdown.sft)
        w_eff = 1.0 if mode == "sft" else (cfg.w_sft if mode == "redpo" else 0.0)
        history.append(
            LossBreakdown.combine(
                float(np.mean(epoch_dpo)), float(np.mean(epoch_sft)), w_eff
            )
        )
    return history


def save_loss_history(history: list[LossBreakdown], path) -> None:
    from .serde import write_csv

    write_csv(
        path,
        ["epoch", "dpo", "sft", "total"],
        [(i, h.dpo, h.sft, h.total) for i, h in enumerate(history)],
    )
