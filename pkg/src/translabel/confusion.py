"""Confusion mining over soft assignments.

An image is confused when the gap between its two largest assignment
probabilities is at most alpha; each such image contributes one entry
keyed by its unordered top-2 class pair.  Pair selection then greedily
covers the requested fraction of confusion entries, skipping pairs that
were already sent out for attribute generation.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .state import Assignments

Pair = tuple[int, int]


@dataclass(frozen=True)
class ConfusionEntry:
    image_index: int
    pair: Pair  # unordered, smaller class index first
    margin: float  # top-1 minus top-2 probability, in [0, alpha]


@dataclass
class ConfusionReport:
    entries: list[ConfusionEntry]
    pair_counts: dict[Pair, int]
    selected_pairs: list[Pair] = field(default_factory=list)
    alpha: float = 0.0
    coverage_fraction: float = 0.0

    @property
    def total_entries(self) -> int:
        return len(self.entries)


def mine(z, alpha: float) -> ConfusionReport:
    """Collect every image whose top-2 probability margin is <= alpha.

    Ties inside a row resolve toward the lower class index (stable sort
    order), making the report deterministic.
    """
    zz = z.z if isinstance(z, Assignments) else np.asarray(z, dtype=np.float64)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if zz.ndim != 2 or zz.shape[1] < 2:
        raise ValueError(f"need at least 2 classes, got shape {zz.shape}")

    order = np.argsort(-zz, axis=1, kind="stable")
    top1, top2 = order[:, 0], order[:, 1]
    margins = zz[np.arange(len(zz)), top1] - zz[np.arange(len(zz)), top2]
    entries = []
    counts: Counter[Pair] = Counter()
    for i in np.nonzero(margins <= alpha)[0]:
        pair = (int(min(top1[i], top2[i])), int(max(top1[i], top2[i])))
        entries.append(ConfusionEntry(int(i), pair, float(margins[i])))
        counts[pair] += 1
    return ConfusionReport(entries=entries, pair_counts=dict(counts), alpha=alpha)


def select_pairs(
    report: ConfusionReport,
    coverage_fraction: float,
    already_queried: set[Pair] | frozenset[Pair] = frozenset(),
) -> list[Pair]:
    """Greedy cover of the confusion entries by class pairs.

    Pairs are taken in descending entry count (ties broken by pair order)
    until the taken pairs account for at least coverage_fraction of all
    entries in the report.  Pairs already queried never repeat; if the
    filter exhausts the candidates the cover may fall short.
    """
    if not (0.0 < coverage_fraction <= 1.0):
        raise ValueError(f"coverage_fraction must be in (0, 1], got {coverage_fraction}")
    total = report.total_entries
    if total == 0:
        return []
    target = coverage_fraction * total
    ranked = sorted(report.pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    taken: list[Pair] = []
    covered = 0
    for pair, count in ranked:
        if pair in already_queried:
            continue
        taken.append(pair)
        covered += count
        if covered >= target:
            break
    return taken
