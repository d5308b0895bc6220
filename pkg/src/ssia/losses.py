"""Aggregation of the task loss and per-block auxiliary losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ssia.tensor import Tensor


@dataclass
class LossWeights:
    """Relative contributions: task vs auxiliary total vs individual blocks."""

    lambda_task: float = 1.0
    lambda_sb: float = 0.2
    per_block: list = field(default_factory=lambda: [1.0, 2.0, 3.0])


def total_ssia_loss(block_losses: list, weights: LossWeights) -> Tensor:
    """Weighted sum of the attached blocks' losses (block 1 = lowest tap)."""
    if len(block_losses) != len(weights.per_block) and block_losses:
        raise ValueError(
            f"{len(block_losses)} block losses but {len(weights.per_block)} per-block weights")
    total = None
    for loss, w in zip(block_losses, weights.per_block):
        term = loss * w
        total = term if total is None else total + term
    return total if total is not None else Tensor(np.zeros((), dtype=np.float32))


def total_loss(task_loss: Tensor, ssia_total: Tensor, weights: LossWeights) -> Tensor:
    """The training objective: lambda_task * task + lambda_sb * auxiliary total."""
    return task_loss * weights.lambda_task + ssia_total * weights.lambda_sb
