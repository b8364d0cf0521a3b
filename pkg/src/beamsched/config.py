"""Experiment configuration: the full description of one simulated system."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .model import UserParams
from .solver import SolverKnobs
from .whittle import IndexKnobs


class Policy(str, Enum):
    WHITTLE = "whittle"
    LQF = "lqf"
    MWS = "mws"
    WFQ = "wfq"
    RANDOM = "random"


ALL_POLICIES = tuple(Policy)


@dataclass(frozen=True)
class SystemConfig:
    """One runnable scenario: users, beams, horizon, seed, policy, knobs.

    The cost average excludes the first `warmup` slots; active-beam
    statistics always cover the whole horizon. The seed feeds three
    independent substreams (policy tie-breaks, channels, arrivals), so
    two policies run on the same seed see identical arrival and channel
    sample paths.
    """

    num_users: int
    num_beams: int
    users: tuple[UserParams, ...]
    horizon: int
    warmup: int
    seed: int
    policy: Policy
    solver: SolverKnobs = field(default_factory=SolverKnobs)
    index: IndexKnobs = field(default_factory=IndexKnobs)

    def __post_init__(self):
        if not (isinstance(self.num_users, int) and self.num_users >= 2):
            raise ValueError(f"num_users must be an integer >= 2, got {self.num_users!r}")
        if not (isinstance(self.num_beams, int) and 1 <= self.num_beams < self.num_users):
            raise ValueError(
                f"need 1 <= num_beams < num_users, got num_beams={self.num_beams!r} "
                f"with num_users={self.num_users!r}"
            )
        if len(self.users) != self.num_users:
            raise ValueError(f"expected {self.num_users} user entries, got {len(self.users)}")
        if not (isinstance(self.horizon, int) and self.horizon >= 1):
            raise ValueError(f"horizon must be a positive integer, got {self.horizon!r}")
        if not (isinstance(self.warmup, int) and 0 <= self.warmup < self.horizon):
            raise ValueError(
                f"warmup must satisfy 0 <= warmup < horizon, got {self.warmup!r} "
                f"with horizon={self.horizon!r}"
            )
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not isinstance(self.policy, Policy):
            raise ValueError(f"unknown policy {self.policy!r}")

    @property
    def max_buffer(self) -> int:
        return max(u.buffer_size for u in self.users)
