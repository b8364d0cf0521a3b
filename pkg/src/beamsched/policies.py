"""Per-slot beam assignment rules.

All five policies see only the pre-channel state: current queue lengths
plus static per-user data. Users with empty queues are never selected,
so unneeded beams stay dark and their cost is not charged; when fewer
non-empty queues than beams exist, the extra beams are simply not
assigned. Ties are broken uniformly at random from the caller's stream.

Every policy reduces to one primitive: rank the eligible users by a
per-user key (with a uniform tie-break) and take the smallest
min(B, #eligible). The simulator's compiled kernel mirrors the same
primitive; a test pins the two implementations to each other exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .whittle import WhittleTable, lookup_index


@dataclass(frozen=True)
class Selection:
    """Users granted a beam this slot; always non-empty queues only."""

    chosen: tuple[int, ...]
    active_count: int

    def __post_init__(self):
        if self.active_count != len(self.chosen):
            raise ValueError("active_count must equal the number of chosen users")

    def __contains__(self, user: int) -> bool:
        return user in self.chosen


def pick_smallest_keys(
    keys: np.ndarray, queues: np.ndarray, num_beams: int, tiebreaks: np.ndarray
) -> Selection:
    """Select the min(B, #non-empty) eligible users with smallest (key, tiebreak)."""
    if num_beams < 1:
        raise ValueError("num_beams must be at least 1")
    eligible = np.flatnonzero(queues > 0)
    take = min(num_beams, eligible.size)
    order = np.lexsort((tiebreaks, keys))
    mask = queues[order] > 0
    chosen = order[mask][:take]
    return Selection(chosen=tuple(sorted(int(i) for i in chosen)), active_count=take)


def _as_queues(queues: Sequence[int]) -> np.ndarray:
    arr = np.asarray(queues)
    if arr.ndim != 1:
        raise ValueError("queues must be a vector")
    if np.any(arr < 0):
        raise ValueError("queue lengths must be non-negative")
    return arr


def whittle_select(
    queues: Sequence[int],
    tables: Sequence[WhittleTable],
    num_beams: int,
    rng: np.random.Generator,
) -> Selection:
    """Assign beams to the users whose current states have the smallest indices."""
    arr = _as_queues(queues)
    if len(tables) != arr.size:
        raise ValueError(f"need one index table per user: {len(tables)} tables, {arr.size} users")
    keys = np.array([lookup_index(tbl, int(x)) for tbl, x in zip(tables, arr)])
    return pick_smallest_keys(keys, arr, num_beams, rng.random(arr.size))


def lqf_select(queues: Sequence[int], num_beams: int, rng: np.random.Generator) -> Selection:
    """Longest queues first."""
    arr = _as_queues(queues)
    return pick_smallest_keys(-arr.astype(np.float64), arr, num_beams, rng.random(arr.size))


def mws_select(
    queues: Sequence[int],
    channel_probs: Sequence[float],
    num_beams: int,
    rng: np.random.Generator,
) -> Selection:
    """Largest products of queue length and good-channel probability first."""
    arr = _as_queues(queues)
    d = np.asarray(channel_probs, dtype=np.float64)
    if d.size != arr.size:
        raise ValueError("need one channel probability per user")
    return pick_smallest_keys(-arr * d, arr, num_beams, rng.random(arr.size))


def wfq_select(
    queues: Sequence[int],
    weights: Sequence[float],
    num_beams: int,
    rng: np.random.Generator,
) -> Selection:
    """Weighted fair draw of distinct users, proportional to fixed weights.

    Equivalent to repeatedly drawing a user with probability w_i / sum(w),
    discarding hits on empty queues or already-chosen users, until enough
    distinct users are collected: an exponential race decided by
    Exp(1)/w_i keys realizes exactly that distribution in one pass.
    """
    arr = _as_queues(queues)
    w = np.asarray(weights, dtype=np.float64)
    if w.size != arr.size:
        raise ValueError("need one weight per user")
    if np.any(w <= 0.0):
        raise ValueError("weights must be positive")
    u = rng.random(arr.size)
    keys = -np.log1p(-u) / w
    return pick_smallest_keys(keys, arr, num_beams, u)


def random_select(queues: Sequence[int], num_beams: int, rng: np.random.Generator) -> Selection:
    """Uniform sample of distinct users among the non-empty queues."""
    arr = _as_queues(queues)
    return pick_smallest_keys(np.zeros(arr.size), arr, num_beams, rng.random(arr.size))
