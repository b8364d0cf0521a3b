"""Single-user queue dynamics for the downlink beam scheduling problem.

Each user owns a FIFO packet queue at the base station. Per slot: the
scheduler decides whether to form a beam (action u), the channel comes up
good with probability d, a transmitted packet departs on a good channel,
and a new packet arrives with probability a at the slot boundary. Queue
lengths live on the truncated space {0, ..., buffer_size}; an arrival
into a full buffer is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence


def _check_prob(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie strictly inside (0, 1), got {value!r}")


@dataclass(frozen=True)
class UserParams:
    """MDP parameters of one user.

    arrival_prob   per-slot packet arrival probability, in (0, 1)
    channel_prob   per-slot good-channel probability, in (0, 1)
    beam_cost      cost charged in any slot where a beam is formed, > 0
    holding_coeff  coefficient of the quadratic holding cost x -> c * x**2, >= 0
    buffer_size    largest storable queue length; states are {0, ..., buffer_size}
    """

    arrival_prob: float
    channel_prob: float
    beam_cost: float
    holding_coeff: float
    buffer_size: int

    def __post_init__(self):
        _check_prob("arrival_prob", self.arrival_prob)
        _check_prob("channel_prob", self.channel_prob)
        if not self.beam_cost > 0.0:
            raise ValueError(f"beam_cost must be positive, got {self.beam_cost!r}")
        if self.holding_coeff < 0.0:
            raise ValueError(f"holding_coeff must be non-negative, got {self.holding_coeff!r}")
        if not (isinstance(self.buffer_size, int) and self.buffer_size >= 1):
            raise ValueError(f"buffer_size must be an integer >= 1, got {self.buffer_size!r}")

    @property
    def num_states(self) -> int:
        return self.buffer_size + 1


@dataclass(frozen=True)
class TransitionRow:
    """One-step transition distribution out of a single (state, action) pair.

    At most three entries, each within one step of the origin state, summing
    to one. Kept as an explicit list so tests can compare against enumerated
    channel/arrival outcomes.
    """

    entries: tuple[tuple[int, float], ...] = field(default=())

    def __post_init__(self):
        total = sum(p for _, p in self.entries)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"transition probabilities sum to {total!r}, expected 1")
        if len(self.entries) > 3:
            raise ValueError("a queue can move by at most one packet per slot")

    def as_dict(self) -> dict[int, float]:
        return dict(self.entries)

    def prob(self, state: int) -> float:
        return self.as_dict().get(state, 0.0)


def _check_binary(name: str, value: int) -> None:
    if value not in (0, 1):
        raise ValueError(f"{name} must be 0 or 1, got {value!r}")


def step_queue(x: int, u: int, s: int, arr: int, n_buf: int) -> int:
    """Advance one queue by one slot: serve (if u and s), then admit the arrival.

    Returns min(n_buf, max(0, x - s*u) + arr). An arrival finding the buffer
    full is dropped by the truncation.
    """
    if not 0 <= x <= n_buf:
        raise ValueError(f"queue length {x} outside [0, {n_buf}]")
    _check_binary("u", u)
    _check_binary("s", s)
    _check_binary("arr", arr)
    return min(n_buf, max(0, x - s * u) + arr)


def transition_row(x: int, u: int, p: UserParams) -> TransitionRow:
    """Marginalize channel and arrival randomness of step_queue at (x, u)."""
    n = p.buffer_size
    if not 0 <= x <= n:
        raise ValueError(f"queue length {x} outside [0, {n}]")
    _check_binary("u", u)
    a, d = p.arrival_prob, p.channel_prob
    probs: dict[int, float] = {}
    if u == 1:
        # enumerate (s, arr) outcomes; boundary mass folds via step_queue
        for s, ps in ((1, d), (0, 1.0 - d)):
            for arr, pa in ((1, a), (0, 1.0 - a)):
                nxt = step_queue(x, 1, s, arr, n)
                probs[nxt] = probs.get(nxt, 0.0) + ps * pa
    else:
        for arr, pa in ((1, a), (0, 1.0 - a)):
            nxt = step_queue(x, 0, 0, arr, n)
            probs[nxt] = probs.get(nxt, 0.0) + pa
    return TransitionRow(tuple(sorted(probs.items())))


def holding_cost(x: int, p: UserParams) -> float:
    """Quadratic per-slot holding cost of x queued packets."""
    if not 0 <= x <= p.buffer_size:
        raise ValueError(f"queue length {x} outside [0, {p.buffer_size}]")
    return p.holding_coeff * float(x) * float(x)


def holding_cost_table(p: UserParams) -> list[float]:
    """Holding cost tabulated over {0, ..., buffer_size}.

    Downstream solvers consume the table, so any convex non-decreasing
    cost could be substituted here without touching them.
    """
    return [holding_cost(x, p) for x in range(p.num_states)]


def slot_cost(states: Sequence[int], actions: Sequence[int], params: Sequence[UserParams]) -> float:
    """Total base-station cost of one slot: holding costs plus beam costs."""
    if not (len(states) == len(actions) == len(params)):
        raise ValueError(
            f"length mismatch: {len(states)} states, {len(actions)} actions, {len(params)} users"
        )
    total = 0.0
    for x, u, p in zip(states, actions, params):
        _check_binary("action", u)
        total += holding_cost(x, p) + p.beam_cost * u
    return total
