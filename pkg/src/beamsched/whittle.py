"""Per-user Whittle index computation.

The index of a queue state x is the passivity tax at which serving and
idling are equally attractive there. It is found by damped fixed-point
iteration on the tax: each sweep re-solves the value equations of the
policy that idles on {0, ..., x} and serves above, then nudges the tax
toward the indifference point by a step proportional to the mismatch
between the serve and idle sides. An independent bisection oracle over
the average-cost solver guards the iteration in tests.

Indices are computed at a strided subset of states and filled in by
monotone piecewise-linear interpolation; larger queues never get a
larger index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BracketFailure, DegenerateChain, NoConvergence
from .model import UserParams
from .solver import Kernel, SolverKnobs, _guarded_lu, relative_value_iteration, threshold_system


@dataclass(frozen=True)
class IndexKnobs:
    """Step size, start point, and stopping rules of the index iteration."""

    step: float = 0.1
    lambda_init: float = 0.0
    fp_tol: float = 1e-9
    fp_max_iter: int = 10**12
    sample_stride: int = 1

    def __post_init__(self):
        if not self.step > 0.0:
            raise ValueError("step must be positive")
        if not self.fp_tol > 0.0:
            raise ValueError("fp_tol must be positive")
        if not self.fp_max_iter >= 1:
            raise ValueError("fp_max_iter must be a positive integer")
        if not self.sample_stride >= 1:
            raise ValueError("sample_stride must be a positive integer")


@dataclass(frozen=True)
class WhittleTable:
    """Index of every queue state for one user.

    `anchors` holds the directly computed (state, index) pairs; `full`
    covers every state via interpolation and is non-increasing.
    """

    user_id: int
    anchors: tuple[tuple[int, float], ...]
    full: np.ndarray


def _affine_value_solution(x: int, p: UserParams, knobs: SolverKnobs):
    """Solve the passive-below-x value system for all taxes at once.

    The tax enters the system only through the right-hand side, so the
    solution is affine in it: V_lam = base + lam * slope. One
    factorization therefore prices every iteration of the tax update.
    """
    mat, rhs_base, rhs_tax = threshold_system(p, x)
    lu_piv = _guarded_lu(mat, knobs.linear_solve_pivot_tol)
    base = scipy.linalg.lu_solve(lu_piv, rhs_base)
    slope = scipy.linalg.lu_solve(lu_piv, rhs_tax)
    return base[:-1], slope[:-1]


def _indifference_coeffs(x: int, p: UserParams, knobs: SolverKnobs) -> tuple[float, float]:
    """Coefficients (c0, c1) with serve-vs-idle mismatch c0 + (c1 - 1) * lam."""
    if x == p.buffer_size:
        raise DegenerateChain(
            f"state {x} equals the buffer size: the all-passive inner chain absorbs there"
        )
    base, slope = _affine_value_solution(x, p, knobs)
    kern = Kernel(p)
    diff_row = kern.row(x, 1) - kern.row(x, 0)
    c0 = float(diff_row @ base) + p.beam_cost
    c1 = float(diff_row @ slope)
    return c0, c1


def index_iteration(x: int, p: UserParams, k: IndexKnobs, solver: SolverKnobs) -> float:
    """Whittle index of state x by damped fixed-point iteration on the tax.

    Because the inner solve is affine in the tax, the update map is the
    scalar affine recursion lam += step * (c0 + (c1 - 1) * lam). Its
    trajectory is evaluated in closed form: the returned value is the
    limit the literal recursion reaches, and NoConvergence is raised
    exactly when the literal recursion would not meet fp_tol within
    fp_max_iter steps (divergent map, or contraction too close to one).
    A mismatch already below tolerance at the start point stops there,
    exactly as the literal recursion would; this happens when the
    serve-idle comparison is degenerate (flat in the tax).
    """
    if not 0 <= x <= p.buffer_size:
        raise ValueError(f"state {x} outside [0, {p.buffer_size}]")
    c0, c1 = _indifference_coeffs(x, p, solver)
    lam0 = k.lambda_init
    step0 = k.step * (c0 + (c1 - 1.0) * lam0)
    if abs(step0) <= k.fp_tol:
        return lam0 + step0
    factor = 1.0 + k.step * (c1 - 1.0)  # per-iteration step shrink
    if not -1.0 < factor < 1.0:
        raise NoConvergence(
            f"index iteration at state {x} cannot converge: successive steps scale "
            f"by {factor:.6g} (tax sensitivity {1.0 - c1:.3e})",
            residual=abs(step0),
        )
    if factor == 0.0:
        return c0 / (1.0 - c1)
    needed = math.log(k.fp_tol / abs(step0)) / math.log(abs(factor))
    if needed > k.fp_max_iter:
        raise NoConvergence(
            f"index iteration at state {x}: needs about {needed:.3g} iterations "
            f"for fp_tol={k.fp_tol:g}, cap is {k.fp_max_iter}",
            residual=abs(step0) * abs(factor) ** k.fp_max_iter,
            iterations=k.fp_max_iter,
        )
    return c0 / (1.0 - c1)


def indifference_mismatch(lam: float, x: int, p: UserParams, solver: SolverKnobs) -> float:
    """Serve-vs-idle mismatch at state x under tax `lam`, from a fresh solve.

    Zero exactly at the Whittle index; used to validate iteration output.
    """
    base, slope = _affine_value_solution(x, p, solver)
    values = base + lam * slope
    kern = Kernel(p)
    diff_row = kern.row(x, 1) - kern.row(x, 0)
    return float(diff_row @ values) + p.beam_cost - lam


def index_bisection_oracle(x: int, p: UserParams, solver: SolverKnobs, tol: float = 1e-5) -> float:
    """Whittle index of state x by bisecting the optimal action's flip point.

    Independent of the fixed-point path: each probe runs the average-cost
    solver and reads the optimal action at x, which switches from passive
    to active as the tax rises.
    """
    if not 0 <= x <= p.buffer_size:
        raise ValueError(f"state {x} outside [0, {p.buffer_size}]")
    if not tol > 0.0:
        raise ValueError("tol must be positive")

    def active_at(lam: float) -> bool:
        return bool(relative_value_iteration(lam, p, solver).actions[x] == 1)

    span = p.beam_cost + p.holding_coeff * p.buffer_size**2
    lo, hi = -span, span
    for _ in range(64):
        if not active_at(lo):
            break
        lo *= 2.0
    else:
        raise BracketFailure(f"no passive region found down to tax {lo:.3e} at state {x}")
    for _ in range(64):
        if active_at(hi):
            break
        hi *= 2.0
    else:
        raise BracketFailure(f"no active region found up to tax {hi:.3e} at state {x}")

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if active_at(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def threshold_cost_envelope_index(p: UserParams) -> np.ndarray:
    """Exact per-state index from the family of threshold-policy cost lines.

    For each threshold t the long-run cost is affine in the tax:
    f(lam, t) = h_t + lam * m_t with m_t the passive stationary mass
    (the all-passive chain absorbs at the cap, so f(lam, N) = H(N) + lam).
    The optimal threshold at a tax is the lower envelope of those lines,
    and the index of state x is the largest tax at which the envelope
    still keeps x passive. Computable in closed form, so it covers
    states where the damped iteration is too stiff to converge.
    """
    from .model import holding_cost_table
    from .solver import stationary_distribution

    n = p.buffer_size
    hold = np.asarray(holding_cost_table(p))
    masses = np.empty(n + 2)  # thresholds -1 .. N
    intercepts = np.empty(n + 2)
    for j, t in enumerate(range(-1, n + 1)):
        if t == n:
            masses[j] = 1.0
            intercepts[j] = hold[n]
            continue
        probs = stationary_distribution(t, p).probs
        m = float(np.sum(probs[: t + 1])) if t >= 0 else 0.0
        masses[j] = m
        intercepts[j] = float(hold @ probs) + p.beam_cost * (1.0 - m)

    def passive_wins(lam: float, x: int) -> bool:
        costs = intercepts + lam * masses
        # thresholds -1..x-1 leave x active; x..N keep it passive
        return bool(np.min(costs[x + 1 :]) <= np.min(costs[: x + 1]))

    out = np.empty(n + 1)
    span = p.beam_cost + hold[n] + 1.0
    for x in range(n + 1):
        lo, hi = -span, p.beam_cost + 1.0
        while not passive_wins(lo, x):
            lo *= 2.0
        while passive_wins(hi, x):
            hi *= 2.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if passive_wins(mid, x):
                lo = mid
            else:
                hi = mid
        out[x] = 0.5 * (lo + hi)
    return out


def build_index_table(
    p: UserParams, k: IndexKnobs, solver: SolverKnobs, user_id: int = 0
) -> WhittleTable:
    """Index table over all states: strided anchors plus interpolation.

    Anchors are {0, stride, 2*stride, ...} together with 1 and N-1.
    State 1 is always sampled because the index drops sharply from the
    empty state (whose index is exactly the beam cost) to the occupied
    states; interpolating across that cliff would smear it. The state
    N copies the N-1 value, since its inner chain is degenerate and a
    full queue is at least as urgent as an almost-full one. Anchor
    values are forced non-increasing before interpolating, so the table
    is monotone and matches its anchors by construction.

    Heavily stable queues make the fixed-point iteration stiff (the
    serve-idle mismatch barely responds to the tax); anchors it cannot
    reach fall back to the exact threshold-cost envelope index.
    """
    n = p.buffer_size
    anchor_states = sorted(set(range(0, n, k.sample_stride)) | {min(1, n - 1), n - 1})
    envelope: np.ndarray | None = None
    anchor_values: list[float] = []
    for x in anchor_states:
        try:
            val = index_iteration(x, p, k, solver)
        except NoConvergence:
            if envelope is None:
                envelope = threshold_cost_envelope_index(p)
            val = float(envelope[x])
        if anchor_values:
            val = min(val, anchor_values[-1])
        anchor_values.append(val)

    full = np.empty(n + 1)
    for (x0, v0), (x1, v1) in zip(
        zip(anchor_states, anchor_values), zip(anchor_states[1:], anchor_values[1:])
    ):
        for x in range(x0, x1 + 1):
            frac = (x - x0) / (x1 - x0)
            full[x] = v0 + frac * (v1 - v0)
    full[anchor_states[0]] = anchor_values[0]
    full[n] = full[n - 1] if n >= 1 else anchor_values[0]
    np.minimum.accumulate(full, out=full)
    return WhittleTable(
        user_id=user_id,
        anchors=tuple(zip(anchor_states, anchor_values)),
        full=full,
    )


def lookup_index(table: WhittleTable, x: int) -> float:
    """Index of state x, an O(1) table read."""
    if not 0 <= x < table.full.size:
        raise ValueError(f"state {x} outside [0, {table.full.size - 1}]")
    return float(table.full[x])


def format_table(table: WhittleTable) -> str:
    """Flat text rendering: one `state<TAB>index` line per state.

    Values carry 12 significant digits, enough to reload tables for
    scheduling without visible rank changes and to diff runs byte for
    byte.
    """
    lines = [f"# user {table.user_id}"]
    for x in range(table.full.size):
        lines.append(f"{x}\t{table.full[x]:.12g}")
    return "\n".join(lines) + "\n"


def write_table(table: WhittleTable, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_table(table))


def read_table(path) -> WhittleTable:
    """Reload a table written by write_table.

    Every line becomes an anchor, matching a stride-one table; only the
    `full` vector matters for scheduling.
    """
    user_id = 0
    states: list[int] = []
    values: list[float] = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                user_id = int(line.split()[-1])
                continue
            state_str, value_str = line.split("\t")
            states.append(int(state_str))
            values.append(float(value_str))
    if states != list(range(len(states))):
        raise ValueError("table file must list every state once, in order")
    full = np.asarray(values)
    return WhittleTable(user_id=user_id, anchors=tuple(zip(states, values)), full=full)
