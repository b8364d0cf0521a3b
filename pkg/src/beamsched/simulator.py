"""Slot-synchronous Monte Carlo engine.

Per slot: record holding costs at the slot start, let the policy pick
users from queue lengths alone, charge beam costs, realize the selected
users' channels and pop a head-of-line packet on each success, then
realize arrivals (timestamped with the next slot index, dropped if the
buffer is full) and advance.

All randomness is materialized up front as arrays drawn from three
substreams of the root seed — policy tie-breaks, channels, arrivals —
and the slot loop itself is a compiled kernel over those arrays, so a
replication is deterministic, fast, and fully replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .config import Policy, SystemConfig
from .model import holding_cost_table
from .whittle import WhittleTable

_WFQ_KIND = 1
_TABLE_KIND = 0


@dataclass(frozen=True)
class Streams:
    """Materialized randomness of one replication."""

    arrivals: np.ndarray  # (T, K) uint8, end-of-slot arrival indicators
    channels: np.ndarray  # (T, K) uint8, good-channel indicators
    uniforms: np.ndarray  # (T, K) float64, policy tie-break/draw variates


@dataclass(frozen=True)
class RawRun:
    """Unaggregated outputs of one replication, plus its inputs."""

    config: SystemConfig
    streams: Streams
    per_user_costs: np.ndarray  # (T, K) holding + beam cost charged per user per slot
    active_counts: np.ndarray  # (T,) beams actually assigned
    selection_counts: np.ndarray  # (K,) slots in which each user held a beam
    delay_sums: np.ndarray  # (K,) summed delays of departed packets
    departed: np.ndarray  # (K,)
    dropped: np.ndarray  # (K,)
    accepted: np.ndarray  # (K,) arrivals admitted to the buffer
    residual: np.ndarray  # (K,) packets still queued at the horizon
    selections: np.ndarray | None = None  # (T, B) chosen users, -1 padded (trace only)
    queue_log: np.ndarray | None = None  # (T+1, K) queue lengths at slot starts (trace only)
    departures: np.ndarray | None = None  # (n_dep, 3) slot, user, arrival ts (trace only)


@dataclass(frozen=True)
class UserMetrics:
    user: int
    avg_cost: float
    avg_delay: float
    active_rate: float
    arrived: int
    departed: int
    dropped: int
    residual: int


@dataclass(frozen=True)
class MetricsSummary:
    """Aggregated run statistics.

    `avg_cost` averages slots at or after the warmup cut; `avg_delay`
    pools every departed packet (NaN when nothing departed — never a
    silent zero); `avg_active_beams` averages over every slot.
    """

    avg_cost: float
    avg_delay: float
    avg_active_beams: float
    per_user: tuple[UserMetrics, ...]
    arrived_packets: int
    departed_packets: int
    dropped_packets: int
    residual_packets: int


@dataclass(frozen=True)
class MetricAggregate:
    mean: float
    ci_half_width: float


@dataclass(frozen=True)
class ReplicationAggregate:
    """Across-replication means with normal-approximation 95% intervals."""

    avg_cost: MetricAggregate
    avg_delay: MetricAggregate
    avg_active_beams: MetricAggregate
    n_reps: int


@njit(cache=True, nogil=True)
def _run_slots(
    num_beams,
    bufsizes,
    hold_tables,
    beam_costs,
    key_tables,
    wfq_weights,
    policy_kind,
    arrivals,
    channels,
    uniforms,
    want_trace,
):
    T, K = arrivals.shape
    cap = hold_tables.shape[1] - 1

    queues = np.zeros(K, np.int64)
    heads = np.zeros(K, np.int64)
    ts_buf = np.zeros((K, cap), np.int64)

    per_user_costs = np.zeros((T, K))
    active_counts = np.zeros(T, np.int64)
    sel_counts = np.zeros(K, np.int64)
    delay_sums = np.zeros(K)
    departed = np.zeros(K, np.int64)
    dropped = np.zeros(K, np.int64)
    accepted = np.zeros(K, np.int64)

    if want_trace:
        sel_log = np.full((T, num_beams), -1, np.int64)
        queue_log = np.zeros((T + 1, K), np.int64)
        dep_log = np.zeros((T * num_beams, 3), np.int64)
    else:
        sel_log = np.full((1, 1), -1, np.int64)
        queue_log = np.zeros((1, 1), np.int64)
        dep_log = np.zeros((1, 3), np.int64)
    dep_n = 0

    keys = np.empty(K)
    taken = np.zeros(K, np.bool_)

    for n in range(T):
        n_eligible = 0
        for i in range(K):
            per_user_costs[n, i] = hold_tables[i, queues[i]]
            taken[i] = False
            if queues[i] > 0:
                n_eligible += 1
                if policy_kind == _WFQ_KIND:
                    keys[i] = -np.log1p(-uniforms[n, i]) / wfq_weights[i]
                else:
                    keys[i] = key_tables[i, queues[i]]

        m = num_beams if n_eligible > num_beams else n_eligible
        active_counts[n] = m
        for b in range(m):
            best = -1
            for i in range(K):
                if queues[i] > 0 and not taken[i]:
                    if best < 0:
                        best = i
                    elif keys[i] < keys[best] or (
                        keys[i] == keys[best] and uniforms[n, i] < uniforms[n, best]
                    ):
                        best = i
            taken[best] = True
            sel_counts[best] += 1
            per_user_costs[n, best] += beam_costs[best]
            if want_trace:
                sel_log[n, b] = best
            if channels[n, best] == 1:
                ts = ts_buf[best, heads[best]]
                heads[best] = (heads[best] + 1) % cap
                queues[best] -= 1
                delay_sums[best] += n - ts + 1
                departed[best] += 1
                if want_trace:
                    dep_log[dep_n, 0] = n
                    dep_log[dep_n, 1] = best
                    dep_log[dep_n, 2] = ts
                    dep_n += 1

        for i in range(K):
            if arrivals[n, i] == 1:
                if queues[i] < bufsizes[i]:
                    ts_buf[i, (heads[i] + queues[i]) % cap] = n + 1
                    queues[i] += 1
                    accepted[i] += 1
                else:
                    dropped[i] += 1

        if want_trace:
            for i in range(K):
                queue_log[n + 1, i] = queues[i]

    return (
        per_user_costs,
        active_counts,
        sel_counts,
        delay_sums,
        departed,
        dropped,
        accepted,
        queues,
        sel_log,
        queue_log,
        dep_log,
        dep_n,
    )


def substreams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Policy, channel, and arrival generators spawned from one root seed."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def generate_streams(config: SystemConfig) -> Streams:
    policy_rng, channel_rng, arrival_rng = substreams(config.seed)
    T, K = config.horizon, config.num_users
    d = np.array([u.channel_prob for u in config.users])
    a = np.array([u.arrival_prob for u in config.users])
    uniforms = policy_rng.random((T, K))
    channels = (channel_rng.random((T, K)) < d).astype(np.uint8)
    arrivals = (arrival_rng.random((T, K)) < a).astype(np.uint8)
    return Streams(arrivals=arrivals, channels=channels, uniforms=uniforms)


def _policy_arrays(config: SystemConfig, tables):
    """Per-(user, state) ranking keys for the kernel, or the WFQ flag."""
    K = config.num_users
    width = config.max_buffer + 1
    key_tables = np.zeros((K, width))
    wfq_weights = np.ones(K)
    kind = _TABLE_KIND
    pol = config.policy
    if pol is Policy.WHITTLE:
        if tables is None or len(tables) != K:
            raise ValueError(
                f"whittle policy needs one index table per user, got "
                f"{0 if tables is None else len(tables)} for {K} users"
            )
        for i, (tbl, user) in enumerate(zip(tables, config.users)):
            if tbl.full.size < user.buffer_size + 1:
                raise ValueError(
                    f"index table for user {i} covers {tbl.full.size} states, "
                    f"need {user.buffer_size + 1}"
                )
            key_tables[i, : tbl.full.size] = tbl.full[:width]
    elif pol is Policy.LQF:
        key_tables[:] = -np.arange(width)
    elif pol is Policy.MWS:
        d = np.array([u.channel_prob for u in config.users])
        key_tables[:] = -np.arange(width) * d[:, None]
    elif pol is Policy.WFQ:
        # default weights: holding cost of a single queued packet
        wfq_weights = np.array([u.holding_coeff for u in config.users])
        if np.any(wfq_weights <= 0.0):
            raise ValueError("weighted fair queueing needs positive holding coefficients")
        kind = _WFQ_KIND
    elif pol is Policy.RANDOM:
        pass
    else:  # pragma: no cover
        raise ValueError(f"unknown policy {pol!r}")
    return key_tables, wfq_weights, kind


def simulate_arrays(
    config: SystemConfig,
    streams: Streams,
    tables: tuple[WhittleTable, ...] | None = None,
    trace: bool = False,
) -> RawRun:
    """Run the slot loop over explicit randomness arrays.

    The normal entry point is run_simulation; this one exists so tests
    can inject degenerate streams and replay traces.
    """
    T, K = config.horizon, config.num_users
    for name, arr in (
        ("arrivals", streams.arrivals),
        ("channels", streams.channels),
        ("uniforms", streams.uniforms),
    ):
        if arr.shape != (T, K):
            raise ValueError(f"{name} must have shape {(T, K)}, got {arr.shape}")
    key_tables, wfq_weights, kind = _policy_arrays(config, tables)
    bufsizes = np.array([u.buffer_size for u in config.users], dtype=np.int64)
    hold_tables = np.zeros((K, config.max_buffer + 1))
    for i, u in enumerate(config.users):
        hold_tables[i, : u.buffer_size + 1] = holding_cost_table(u)
    beam_costs = np.array([u.beam_cost for u in config.users])

    out = _run_slots(
        config.num_beams,
        bufsizes,
        hold_tables,
        beam_costs,
        key_tables,
        wfq_weights,
        kind,
        np.ascontiguousarray(streams.arrivals),
        np.ascontiguousarray(streams.channels),
        np.ascontiguousarray(streams.uniforms),
        trace,
    )
    (
        per_user_costs,
        active_counts,
        sel_counts,
        delay_sums,
        departed,
        dropped,
        accepted,
        residual,
        sel_log,
        queue_log,
        dep_log,
        dep_n,
    ) = out
    return RawRun(
        config=config,
        streams=streams,
        per_user_costs=per_user_costs,
        active_counts=active_counts,
        selection_counts=sel_counts,
        delay_sums=delay_sums,
        departed=departed,
        dropped=dropped,
        accepted=accepted,
        residual=residual,
        selections=sel_log if trace else None,
        queue_log=queue_log if trace else None,
        departures=dep_log[:dep_n] if trace else None,
    )


def compute_metrics(raw: RawRun, warmup: int) -> MetricsSummary:
    """Aggregate a raw run; pure and deterministic."""
    T, K = raw.per_user_costs.shape
    if not 0 <= warmup < T:
        raise ValueError(f"warmup must satisfy 0 <= warmup < horizon, got {warmup} with T={T}")
    windowed = raw.per_user_costs[warmup:]
    total_departed = int(raw.departed.sum())
    per_user = []
    for i in range(K):
        dep_i = int(raw.departed[i])
        per_user.append(
            UserMetrics(
                user=i,
                avg_cost=float(windowed[:, i].mean()),
                avg_delay=float(raw.delay_sums[i] / dep_i) if dep_i else math.nan,
                active_rate=float(raw.selection_counts[i] / T),
                arrived=int(raw.accepted[i] + raw.dropped[i]),
                departed=dep_i,
                dropped=int(raw.dropped[i]),
                residual=int(raw.residual[i]),
            )
        )
    return MetricsSummary(
        avg_cost=float(windowed.sum(axis=1).mean()),
        avg_delay=float(raw.delay_sums.sum() / total_departed) if total_departed else math.nan,
        avg_active_beams=float(raw.active_counts.mean()),
        per_user=tuple(per_user),
        arrived_packets=int(raw.accepted.sum() + raw.dropped.sum()),
        departed_packets=total_departed,
        dropped_packets=int(raw.dropped.sum()),
        residual_packets=int(raw.residual.sum()),
    )


def run_simulation(
    config: SystemConfig, tables: tuple[WhittleTable, ...] | None = None
) -> MetricsSummary:
    """One replication at the config's seed."""
    raw = simulate_arrays(config, generate_streams(config), tables=tables)
    return compute_metrics(raw, config.warmup)


def _aggregate(values: list[float], n: int) -> MetricAggregate:
    arr = np.asarray(values)
    mean = float(arr.mean())
    if n == 1:
        return MetricAggregate(mean=mean, ci_half_width=0.0)
    half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(n)
    return MetricAggregate(mean=mean, ci_half_width=half)


def run_replications(
    config: SystemConfig,
    n_reps: int,
    seed_stride: int = 1,
    tables: tuple[WhittleTable, ...] | None = None,
) -> tuple[list[MetricsSummary], ReplicationAggregate]:
    """Independent replications at seeds root + r * seed_stride."""
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    summaries = []
    for r in range(n_reps):
        rep_config = replace(config, seed=config.seed + r * seed_stride)
        summaries.append(run_simulation(rep_config, tables=tables))
    agg = ReplicationAggregate(
        avg_cost=_aggregate([s.avg_cost for s in summaries], n_reps),
        avg_delay=_aggregate([s.avg_delay for s in summaries], n_reps),
        avg_active_beams=_aggregate([s.avg_active_beams for s in summaries], n_reps),
        n_reps=n_reps,
    )
    return summaries, agg


def write_trace(raw: RawRun, path) -> None:
    """Per-slot tab-separated trace: slot, queues, selection, channels, cost.

    Needs a trace-enabled run (see simulate_arrays); queue lengths are
    slot-start values, channel column shows the full slot outcome vector.
    """
    if raw.queue_log is None or raw.selections is None:
        raise ValueError("trace output needs a run made with trace=True")
    T = raw.per_user_costs.shape[0]
    slot_costs = raw.per_user_costs.sum(axis=1)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("slot\tqueues\tselected\tchannels\tcost\n")
        for n in range(T):
            queues = ",".join(str(int(q)) for q in raw.queue_log[n])
            sel = ",".join(str(int(i)) for i in raw.selections[n] if i >= 0)
            chans = ",".join(str(int(c)) for c in raw.streams.channels[n])
            fh.write(f"{n}\t{queues}\t{sel}\t{chans}\t{slot_costs[n]:.12g}\n")
