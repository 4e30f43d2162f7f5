"""Ground-truth 2D mixture, analytic per-property rewards and model evaluation.

Two properties stand in for a learned reward model: ``target_affinity``
(negative distance to the target mode's mean, maximal at 0) and ``quality``
(log density under the ground-truth mixture). Model-level evaluation
aggregates per-sample scores plus mode-assignment tallies, with a point
counted as out-of-distribution when it sits farther than r_ood sigmas
from every mode mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator
from .serde import dump_json, load_json

OOD = -1

DEFAULT_PROPERTIES = ("target_affinity", "quality")


@dataclass(frozen=True)
class GroundTruthMixture:
    """Isotropic Gaussian mixture with well-separated modes."""

    means: np.ndarray  # (K, 2)
    sigmas: np.ndarray  # (K,)
    weights: np.ndarray  # (K,)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        sigmas = np.asarray(self.sigmas, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if means.ndim != 2 or means.shape[1] != 2:
            raise ValueError(f"means must have shape (K, 2), got {means.shape}")
        k = means.shape[0]
        if sigmas.shape != (k,) or weights.shape != (k,):
            raise ValueError("sigmas and weights must have one entry per mode")
        if not (sigmas > 0).all():
            raise ValueError("sigmas must be positive")
        if not (weights > 0).all():
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        # Separation guarantees unambiguous nearest-mean assignment.
        min_sep = np.inf
        for i in range(k):
            for j in range(i + 1, k):
                min_sep = min(min_sep, float(np.linalg.norm(means[i] - means[j])))
        if k > 1 and min_sep <= 6.0 * sigmas.max():
            raise ValueError(
                f"mode means must be separated by more than 6*max(sigma)="
                f"{6.0 * sigmas.max():g}; closest pair is {min_sep:g} apart"
            )
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "weights", weights)

    @property
    def n_modes(self) -> int:
        return self.means.shape[0]

    def log_pdf(self, x) -> np.ndarray:
        """Log density, vectorized over rows of x."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d2 = ((x[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=2)
        var = self.sigmas**2
        log_comp = (
            np.log(self.weights)
            - np.log(2.0 * np.pi * var)
            - d2 / (2.0 * var)
        )
        m = log_comp.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(log_comp - m).sum(axis=1, keepdims=True))).ravel()

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "sigmas": self.sigmas.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthMixture":
        return cls(
            means=np.asarray(d["means"], dtype=np.float64),
            sigmas=np.asarray(d["sigmas"], dtype=np.float64),
            weights=np.asarray(d["weights"], dtype=np.float64),
        )


def default_mixture() -> GroundTruthMixture:
    """Three tight modes on a radius-2 ring; mode 1 is deliberately rare."""
    return GroundTruthMixture(
        means=np.array([[0.0, 2.0], [-1.732, -1.0], [1.732, -1.0]]),
        sigmas=np.array([0.15, 0.15, 0.15]),
        weights=np.array([0.45, 0.10, 0.45]),
    )


@dataclass(frozen=True)
class RewardSpec:
    """Names the target mode and the property set for a run."""

    target_mode: int = 1
    properties: tuple[str, ...] = DEFAULT_PROPERTIES
    r_ood: float = 4.0

    def __post_init__(self):
        if "target_affinity" not in self.properties or "quality" not in self.properties:
            raise ValueError(
                "properties must include 'target_affinity' and 'quality'"
            )


def sample_gt(mix: GroundTruthMixture, n: int, rng) -> np.ndarray:
    """n i.i.d. draws: component by weight, then an isotropic Gaussian."""
    gen = as_generator(rng)
    comp = gen.choice(mix.n_modes, size=n, p=mix.weights)
    return mix.means[comp] + mix.sigmas[comp, None] * gen.standard_normal((n, 2))


def assign_modes(mix: GroundTruthMixture, x, r_ood: float = 4.0) -> np.ndarray:
    """Nearest-mean assignment per row; OOD (-1) beyond r_ood sigmas.

    Exact distance ties go to the lower mode index (argmin behaviour).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dist = np.linalg.norm(x[:, None, :] - mix.means[None, :, :], axis=2)
    nearest = dist.argmin(axis=1)
    out = nearest.astype(np.int64)
    limit = r_ood * mix.sigmas[nearest]
    out[dist[np.arange(len(x)), nearest] > limit] = OOD
    return out


def assign_mode(mix: GroundTruthMixture, x, r_ood: float = 4.0) -> int:
    """Single-point assign_modes; returns a mode index or OOD (-1)."""
    return int(assign_modes(mix, np.asarray(x).reshape(1, 2), r_ood)[0])


def score_samples(
    spec: RewardSpec, mix: GroundTruthMixture, x: np.ndarray
) -> dict[str, np.ndarray]:
    """Per-sample property scores, vectorized over rows."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    scores: dict[str, np.ndarray] = {}
    for prop in spec.properties:
        if prop == "target_affinity":
            scores[prop] = -np.linalg.norm(x - mix.means[spec.target_mode], axis=1)
        elif prop == "quality":
            scores[prop] = mix.log_pdf(x)
        else:
            raise ValueError(f"unknown property {prop!r}")
    return scores


def score_sample(spec: RewardSpec, mix: GroundTruthMixture, x) -> dict[str, float]:
    per = score_samples(spec, mix, np.asarray(x).reshape(1, 2))
    return {name: float(v[0]) for name, v in per.items()}


@dataclass
class EvalReport:
    """Aggregate view of one model: property means, mode tallies, OOD count."""

    properties: dict[str, float]
    mode_counts: list[int]
    ood_count: int
    n_samples: int
    seed: int | None = None
    total: float = field(init=False)

    def __post_init__(self):
        if not self.properties:
            raise ValueError("properties must be non-empty")
        if sum(self.mode_counts) + self.ood_count != self.n_samples:
            raise ValueError(
                f"mode_counts {self.mode_counts} + ood_count {self.ood_count} "
                f"must sum to n_samples {self.n_samples}"
            )
        self.total = float(np.mean(list(self.properties.values())))

    def to_dict(self) -> dict:
        return {
            "properties": {k: float(v) for k, v in self.properties.items()},
            "total": self.total,
            "mode_counts": [int(c) for c in self.mode_counts],
            "ood_count": int(self.ood_count),
            "n_samples": int(self.n_samples),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            properties=dict(d["properties"]),
            mode_counts=list(d["mode_counts"]),
            ood_count=int(d["ood_count"]),
            n_samples=int(d["n_samples"]),
            seed=d.get("seed"),
        )

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(load_json(path))


def report_from_samples(
    spec: RewardSpec,
    mix: GroundTruthMixture,
    samples: np.ndarray,
    seed: int | None = None,
) -> EvalReport:
    per = score_samples(spec, mix, samples)
    modes = assign_modes(mix, samples, spec.r_ood)
    counts = [int((modes == k).sum()) for k in range(mix.n_modes)]
    return EvalReport(
        properties={name: float(v.mean()) for name, v in per.items()},
        mode_counts=counts,
        ood_count=int((modes == OOD).sum()),
        n_samples=len(samples),
        seed=seed,
    )


def score_model(model, spec: RewardSpec, mix: GroundTruthMixture, n: int, seed: int) -> EvalReport:
    """Sample n points from a diffusion model and aggregate their scores."""
    from .diffusion import sample as sample_model  # deferred: avoids an import cycle

    if n < 100:
        raise ValueError(f"score_model needs n >= 100, got {n}")
    samples = sample_model(model, n, seed)
    return report_from_samples(spec, mix, samples, seed=seed)


def compare_reports(full: EvalReport, pruned: EvalReport) -> list[str]:
    """Properties where the pruned model dropped, largest drop first.

    Equal drops are ordered by property name; properties that held or
    improved are omitted.
    """
    if set(full.properties) != set(pruned.properties):
        raise ValueError(
            f"property sets differ: {sorted(full.properties)} vs "
            f"{sorted(pruned.properties)}"
        )
    drops = [
        (full.properties[name] - pruned.properties[name], name)
        for name in full.properties
        if pruned.properties[name] < full.properties[name]
    ]
    drops.sort(key=lambda item: (-item[0], item[1]))
    return [name for _, name in drops]
