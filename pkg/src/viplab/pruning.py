"""Block-importance measurement and stagewise block selection.

Importance of block i is the drop in the evaluation total when only that
block is masked: delta_i = total(M) - total(M - block_i). All evaluations
inside one table share a single seed so deltas reflect the block, not
sampling noise. Selection takes the k smallest deltas; ties fall back to
the quality score of the masked-model report (higher first), then to the
block index.
"""

from __future__ import annotations

from dataclasses import dataclass

from .diffusion import DiffusionModel
from .nets import param_count
from .rewards import EvalReport, GroundTruthMixture, RewardSpec, score_model
from .serde import write_csv


@dataclass(frozen=True)
class ImportanceEntry:
    block_id: int
    delta: float
    report_without: EvalReport


@dataclass(frozen=True)
class ImportanceTable:
    entries: tuple[ImportanceEntry, ...]
    baseline: EvalReport

    def save_csv(self, path) -> None:
        rows = [
            (
                e.block_id,
                e.delta,
                e.report_without.total,
                e.report_without.properties.get("quality", float("nan")),
            )
            for e in self.entries
        ]
        write_csv(path, ["block_id", "delta", "total_without", "quality_without"], rows)


@dataclass
class PruneStageResult:
    stage: int
    pruned_block_ids: list[int]
    params_before: int
    params_after: int
    report_before: EvalReport | None = None
    report_after: EvalReport | None = None

    def __post_init__(self):
        if self.params_after >= self.params_before:
            raise ValueError("pruning must strictly reduce the parameter count")


def block_importance(
    model: DiffusionModel,
    spec: RewardSpec,
    mix: GroundTruthMixture,
    n: int,
    seed: int,
) -> ImportanceTable:
    """Score the model with each active block masked in turn.

    The model is restored exactly afterwards; entries appear in block-index
    order. Requires at least two active blocks (pruning may never empty
    the network).
    """
    active_ids = [i for i, a in enumerate(model.net.block_active) if a]
    if len(active_ids) < 2:
        raise ValueError("block_importance needs at least 2 active blocks")
    baseline = score_model(model, spec, mix, n, seed)
    entries = []
    for block_id in active_ids:
        model.net.block_active[block_id] = False
        try:
            report = score_model(model, spec, mix, n, seed)
        finally:
            model.net.block_active[block_id] = True
        entries.append(
            ImportanceEntry(
                block_id=block_id,
                delta=baseline.total - report.total,
                report_without=report,
            )
        )
    return ImportanceTable(entries=tuple(entries), baseline=baseline)


def select_blocks(
    table: ImportanceTable, k: int, secondary_key: str = "quality"
) -> list[int]:
    """k block ids with the smallest importance deltas.

    Ties break on the secondary property of the masked-model report
    (descending: prefer removing the block whose absence keeps that score
    high), then on the block index ascending.
    """
    n_active = len(table.entries)
    if not 0 < k <= n_active - 1:
        raise ValueError(
            f"k must be in [1, {n_active - 1}] to keep at least one active block, got {k}"
        )
    ranked = sorted(
        table.entries,
        key=lambda e: (
            e.delta,
            -e.report_without.properties.get(secondary_key, 0.0),
            e.block_id,
        ),
    )
    return [e.block_id for e in ranked[:k]]


def apply_prune(
    model: DiffusionModel, block_ids: list[int], stage: int = 0
) -> PruneStageResult:
    """Mask the given blocks inactive, recording parameter counts."""
    for block_id in block_ids:
        if not 0 <= block_id < len(model.net.block_active):
            raise ValueError(f"block id {block_id} out of range")
        if not model.net.block_active[block_id]:
            raise ValueError(f"block {block_id} is already inactive")
    params_before = param_count(model.net)
    for block_id in block_ids:
        model.net.block_active[block_id] = False
    if not any(model.net.block_active):
        for block_id in block_ids:
            model.net.block_active[block_id] = True
        raise ValueError("refusing to prune the last active block")
    return PruneStageResult(
        stage=stage,
        pruned_block_ids=list(block_ids),
        params_before=params_before,
        params_after=param_count(model.net),
    )


def unprune(model: DiffusionModel, block_ids: list[int]) -> None:
    """Re-activate blocks (test-only inverse of apply_prune)."""
    for block_id in block_ids:
        model.net.block_active[block_id] = True
