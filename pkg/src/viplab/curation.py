"""Winner/loser preference-pair construction from scored candidates.

Teacher candidates provide winners, student candidates provide losers,
matched by condition_id (the unconditional analog of "same prompt": the
i-th teacher draw pairs only with the i-th student draw). A pair survives
when, for the target property, winner > loser > tau; the loser clears the
population lower bound mean - alpha*std; and the target gap dominates the
gap of every other property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .serde import dumps_json


class PairFileError(ValueError):
    """Malformed pair-dataset file; carries the offending line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Candidate:
    sample: tuple[float, float]
    scores: dict[str, float]
    source: str  # "teacher" | "student"
    condition_id: int

    def __post_init__(self):
        if self.source not in ("teacher", "student"):
            raise ValueError(f"source must be teacher or student, got {self.source!r}")
        if not all(math.isfinite(v) for v in self.scores.values()):
            raise ValueError("candidate scores must be finite")
        object.__setattr__(self, "sample", (float(self.sample[0]), float(self.sample[1])))


@dataclass(frozen=True)
class PreferencePair:
    x_w: tuple[float, float]
    x_l: tuple[float, float]
    scores_w: dict[str, float]
    scores_l: dict[str, float]
    target: str
    stage: int
    condition_id: int


@dataclass
class CurationConfig:
    """Thresholds and knobs for pair construction.

    ``target`` may name one property or several; with several, every
    listed target must satisfy the ordering/threshold rules and the
    smallest target gap must still dominate every non-target gap. The
    first entry orders the output.
    """

    tau: dict[str, float] = field(default_factory=dict)
    alpha: float = 0.3
    target: str | tuple[str, ...] = "target_affinity"
    max_pairs: int = 2000
    candidate_filter: str | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.max_pairs <= 0:
            raise ValueError("max_pairs must be positive")
        if isinstance(self.target, str):
            self.target = (self.target,)
        else:
            self.target = tuple(self.target)
        if not self.target:
            raise ValueError("at least one target property is required")

    @property
    def primary_target(self) -> str:
        return self.target[0]


def filter_losers(candidates: list[Candidate], cfg: CurationConfig) -> list[Candidate]:
    """Keep student candidates whose primary-target score clears mean - alpha*std.

    Statistics are population moments of the candidates' own scores, so at
    least two candidates are required.
    """
    if len(candidates) < 2:
        raise ValueError("filter_losers needs at least 2 candidates")
    scores = np.array([c.scores[cfg.primary_target] for c in candidates])
    bound = scores.mean() - cfg.alpha * scores.std()
    return [c for c, s in zip(candidates, scores) if s >= bound]


def _pair_ok(w: Candidate, l: Candidate, cfg: CurationConfig) -> bool:
    gaps = {p: w.scores[p] - l.scores[p] for p in w.scores}
    for t in cfg.target:
        tau_t = cfg.tau.get(t, -math.inf)
        if not (w.scores[t] > l.scores[t] > tau_t):
            return False
    min_target_gap = min(gaps[t] for t in cfg.target)
    for p, gap in gaps.items():
        if p in cfg.target:
            continue
        if not (min_target_gap > gap):
            return False
    return True


def _canonical(candidates: list[Candidate]) -> list[Candidate]:
    return sorted(
        candidates,
        key=lambda c: (c.condition_id, c.sample, tuple(sorted(c.scores.items()))),
    )


def build_pairs(
    teacher_cands: list[Candidate],
    student_cands: list[Candidate],
    cfg: CurationConfig,
    pair_filter=None,
    stage: int = 0,
) -> list[PreferencePair]:
    """Emit every rule-satisfying condition-matched pair, best gaps first.

    Assumes filter_losers already ran on student_cands. Output order is
    descending primary-target gap with condition_id as tie-break, then
    truncated to max_pairs; the canonical pre-sort makes the result
    independent of input permutation.
    """
    students_by_id: dict[int, list[Candidate]] = {}
    for cand in _canonical(student_cands):
        students_by_id.setdefault(cand.condition_id, []).append(cand)

    accepted: list[tuple[float, int, PreferencePair]] = []
    for w in _canonical(teacher_cands):
        for l in students_by_id.get(w.condition_id, ()):
            if set(w.scores) != set(l.scores):
                raise ValueError(
                    f"candidates for condition {w.condition_id} carry different "
                    f"property sets"
                )
            if pair_filter is not None and not pair_filter(w, l):
                continue
            if not _pair_ok(w, l, cfg):
                continue
            gap = w.scores[cfg.primary_target] - l.scores[cfg.primary_target]
            accepted.append(
                (
                    gap,
                    w.condition_id,
                    PreferencePair(
                        x_w=w.sample,
                        x_l=l.sample,
                        scores_w=dict(w.scores),
                        scores_l=dict(l.scores),
                        target=cfg.primary_target,
                        stage=stage,
                        condition_id=w.condition_id,
                    ),
                )
            )
    accepted.sort(key=lambda item: (-item[0], item[1]))
    return [pair for _, _, pair in accepted[: cfg.max_pairs]]


def curate(
    teacher_cands: list[Candidate],
    student_cands: list[Candidate],
    cfg: CurationConfig,
    pair_filter=None,
    stage: int = 0,
) -> list[PreferencePair]:
    """filter_losers followed by build_pairs."""
    survivors = filter_losers(student_cands, cfg)
    return build_pairs(teacher_cands, survivors, cfg, pair_filter, stage)


def make_target_mode_filter(mix, target_mode: int):
    """Built-in candidate filter: keep pairs where either member's nearest
    mode (plain nearest mean, no OOD radius) is the target mode."""

    def nearest(sample) -> int:
        d = np.linalg.norm(np.asarray(sample) - mix.means, axis=1)
        return int(d.argmin())

    def pair_filter(w: Candidate, l: Candidate) -> bool:
        return nearest(w.sample) == target_mode or nearest(l.sample) == target_mode

    return pair_filter


CANDIDATE_FILTERS = {"target-mode-relevant": make_target_mode_filter}


# -- persistence ----------------------------------------------------------------

_FIELD_ORDER = ("stage", "target", "condition_id", "x_w", "x_l", "scores_w", "scores_l")


def save_pairs(pairs: list[PreferencePair], path) -> Path:
    """JSON-lines dump with fixed field order and 17-digit floats."""
    lines = []
    for pair in pairs:
        record = {
            "stage": pair.stage,
            "target": pair.target,
            "condition_id": pair.condition_id,
            "x_w": [pair.x_w[0], pair.x_w[1]],
            "x_l": [pair.x_l[0], pair.x_l[1]],
            "scores_w": pair.scores_w,
            "scores_l": pair.scores_l,
        }
        lines.append(dumps_json(record, indent=None).rstrip("\n"))
    path = Path(path)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def load_pairs(path) -> list[PreferencePair]:
    import json

    pairs: list[PreferencePair] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PairFileError(lineno, f"invalid JSON ({exc.msg})") from exc
        missing = [k for k in _FIELD_ORDER if k not in record]
        if missing:
            raise PairFileError(lineno, f"missing fields {missing}")
        try:
            pairs.append(
                PreferencePair(
                    x_w=(float(record["x_w"][0]), float(record["x_w"][1])),
                    x_l=(float(record["x_l"][0]), float(record["x_l"][1])),
                    scores_w={k: float(v) for k, v in record["scores_w"].items()},
                    scores_l={k: float(v) for k, v in record["scores_l"].items()},
                    target=str(record["target"]),
                    stage=int(record["stage"]),
                    condition_id=int(record["condition_id"]),
                )
            )
        except (TypeError, ValueError, IndexError, KeyError) as exc:
            raise PairFileError(lineno, f"malformed record ({exc})") from exc
    return pairs
