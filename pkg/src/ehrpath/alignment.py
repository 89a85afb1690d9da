"""Align an orderless gold label set to decoder time steps.

Steps whose greedy prediction is already a gold label keep it (first step
wins on duplicates); the remaining labels are assigned to the remaining
steps by a minimum-cost linear assignment over negative log probabilities.
Surplus steps are supervised toward STOP at the first unassigned position
only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .generator import PROB_FLOOR, MixtureDistribution, generator_step_loss


@dataclass
class AlignmentMatrix:
    """Binary assignment of labels (columns, ascending code order) to time
    steps (rows): every label claims exactly one step, every step at most
    one label."""
    matrix: np.ndarray
    labels: tuple[int, ...]

    def pairs(self) -> list[tuple[int, int]]:
        """(step, code) for each assignment, in step order."""
        rows, cols = np.nonzero(self.matrix)
        return sorted((int(t), self.labels[int(j)]) for t, j in zip(rows, cols))


def fix_correct_predictions(greedy_path: Sequence[int], gold: Iterable[int]) -> dict[int, int]:
    """Pin steps whose greedy prediction is a gold label: step -> code,
    each label claimed at most once, earliest step winning."""
    gold_set = set(gold)
    pins: dict[int, int] = {}
    claimed: set[int] = set()
    for t, code in enumerate(greedy_path):
        if code in gold_set and code not in claimed:
            pins[t] = code
            claimed.add(code)
    return pins


def hungarian_assign(cost: np.ndarray, pinned: Mapping[int, int],
                     labels: tuple[int, ...] | None = None) -> AlignmentMatrix:
    """Complete a partial assignment optimally.

    cost is (steps, labels); pinned maps step -> column index and is kept
    verbatim. The unpinned steps x unclaimed columns sub-problem is solved
    exactly, minimizing total cost among completions that respect the pins.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n_steps, n_labels = cost.shape
    if n_labels > n_steps:
        raise ValueError(f"{n_labels} labels cannot be aligned to {n_steps} steps; "
                         "decode length must cover the gold set")
    if not np.all(np.isfinite(cost)):
        raise ValueError("assignment cost matrix must be finite")
    if len(set(pinned.values())) != len(pinned):
        raise ValueError("pinned assignment claims a column twice")
    for t, j in pinned.items():
        if not (0 <= t < n_steps and 0 <= j < n_labels):
            raise ValueError(f"pin ({t}, {j}) outside cost matrix {cost.shape}")

    matrix = np.zeros((n_steps, n_labels), dtype=np.int8)
    for t, j in pinned.items():
        matrix[t, j] = 1
    free_rows = [t for t in range(n_steps) if t not in pinned]
    free_cols = [j for j in range(n_labels) if j not in set(pinned.values())]
    if free_cols:
        sub = cost[np.ix_(free_rows, free_cols)]
        rr, cc = linear_sum_assignment(sub)
        for r, c in zip(rr, cc):
            matrix[free_rows[r], free_cols[c]] = 1
    if labels is None:
        labels = tuple(range(n_labels))
    return AlignmentMatrix(matrix, labels)


def align_path(distributions: Sequence[MixtureDistribution], greedy_path: Sequence[int],
               gold: Iterable[int]) -> AlignmentMatrix:
    """Build the full alignment for one document: pin correct greedy
    predictions, then assign the remaining labels by -log probability."""
    labels = tuple(sorted(set(gold)))
    cost = np.empty((len(distributions), len(labels)))
    for t, dist in enumerate(distributions):
        for j, code in enumerate(labels):
            cost[t, j] = -np.log(max(float(dist.probs[code]), PROB_FLOOR))
    pins = fix_correct_predictions(greedy_path, labels)
    pinned_cols = {t: labels.index(code) for t, code in pins.items()}
    return hungarian_assign(cost, pinned_cols, labels)


def step_targets(alignment: AlignmentMatrix, n_steps: int, stop_id: int) -> list[int | None]:
    """Per-step supervision targets: the assigned code, STOP at the first
    unassigned step, nothing afterwards."""
    targets: list[int | None] = [None] * n_steps
    for t, code in alignment.pairs():
        targets[t] = code
    for t in range(n_steps):
        if targets[t] is None:
            targets[t] = stop_id
            break
    return targets


def pla_loss(distributions: Sequence[MixtureDistribution], alignment: AlignmentMatrix) -> float:
    """Sum of -log p over assigned (step, label) pairs plus -log p(STOP) at
    the first unassigned step; probabilities floored at 1e-12."""
    stop_id = distributions[0].probs.shape[0] - 2
    targets = step_targets(alignment, len(distributions), stop_id)
    return sum(generator_step_loss(dist, tgt)
               for dist, tgt in zip(distributions, targets) if tgt is not None)
