"""Average-cost solver for the tax-parameterized single-user MDP.

For a tax `lam` charged in every passive slot, the per-slot cost is
H(x) + P when a beam is formed and H(x) + lam when it is not, and the
optimal pair (V, eta) satisfies

    V(x) = H(x) - eta + min(E[V | serve](x) + P, lam + E[V | idle](x)),

with V anchored at V(0) = 0. This module provides relative value
iteration for that equation, a discounted-iteration oracle whose scaled
value V_g(0)*(1-g) approaches eta as the discount g rises to one,
direct solves of the fixed-threshold policy equations, birth-death
stationary distributions, and the average cost of a threshold policy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateChain, NoConvergence, SingularSystem
from .model import UserParams, holding_cost_table

# States within this distance of the buffer limit are excluded from
# structural property checks: truncation can perturb the value function
# near the boundary even though the untruncated properties hold.
BOUNDARY_MARGIN = 5

_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class SolverKnobs:
    """Tolerances and caps for the iterative and direct solvers."""

    rvi_tol: float = 1e-9
    rvi_max_iter: int = 200_000
    discount: float = 0.999
    linear_solve_pivot_tol: float = 1e-12

    def __post_init__(self):
        if not self.rvi_tol > 0.0:
            raise ValueError("rvi_tol must be positive")
        if not self.rvi_max_iter >= 1:
            raise ValueError("rvi_max_iter must be a positive integer")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if not self.linear_solve_pivot_tol > 0.0:
            raise ValueError("linear_solve_pivot_tol must be positive")


@dataclass(frozen=True)
class ValueSolution:
    """Solver output for one tax value.

    `values` is the value table over {0, ..., N} with values[0] = 0,
    `avg_cost` the optimal long-run average cost, `actions` the argmin
    action per state (ties resolved to passive), and `threshold` the
    largest all-passive prefix end, or None when the action map is not
    threshold shaped. `residual` is the worst per-state defect of the
    optimality equation at the returned (values, avg_cost).
    """

    tax: float
    values: np.ndarray
    avg_cost: float
    actions: np.ndarray
    threshold: int | None
    residual: float
    iterations: int


@dataclass(frozen=True)
class StationaryDistribution:
    """Stationary law of the chain induced by a threshold policy.

    `degenerate` marks the all-passive threshold (t = N), whose chain
    absorbs at the buffer limit; the point mass at N is returned then.
    """

    probs: np.ndarray
    threshold: int
    degenerate: bool = False


class Kernel:
    """Banded transition coefficients of one user's controlled queue.

    For each state x, the queue moves down one, stays, or moves up one.
    Serving changes only the down/up weights; the arrays fold the
    boundary behavior (no departures from 0, arrivals dropped at N).
    """

    def __init__(self, p: UserParams):
        n = p.buffer_size
        a, d = p.arrival_prob, p.channel_prob
        self.params = p
        self.num_states = n + 1

        self.active_down = np.zeros(n + 1)
        self.active_down[1:] = d * (1.0 - a)
        self.active_up = np.zeros(n + 1)
        self.active_up[0] = a
        self.active_up[1:n] = a * (1.0 - d)
        self.active_stay = 1.0 - self.active_down - self.active_up

        self.passive_up = np.zeros(n + 1)
        self.passive_up[:n] = a
        self.passive_stay = 1.0 - self.passive_up

    def expect_active(self, values: np.ndarray) -> np.ndarray:
        ev = self.active_stay * values
        ev[1:] += self.active_down[1:] * values[:-1]
        ev[:-1] += self.active_up[:-1] * values[1:]
        return ev

    def expect_passive(self, values: np.ndarray) -> np.ndarray:
        ev = self.passive_stay * values
        ev[:-1] += self.passive_up[:-1] * values[1:]
        return ev

    def row(self, x: int, u: int) -> np.ndarray:
        """Dense one-step distribution out of (x, u)."""
        out = np.zeros(self.num_states)
        if u == 1:
            if x > 0:
                out[x - 1] = self.active_down[x]
            out[x] = self.active_stay[x]
            if x < self.num_states - 1:
                out[x + 1] = self.active_up[x]
        else:
            out[x] = self.passive_stay[x]
            if x < self.num_states - 1:
                out[x + 1] = self.passive_up[x]
        return out

    def matrix(self, actions: np.ndarray) -> np.ndarray:
        """Dense transition matrix of the chain induced by an action map."""
        return np.vstack([self.row(x, int(actions[x])) for x in range(self.num_states)])


def _effective_tol(base_tol: float, values: np.ndarray) -> float:
    # Floating-point noise in a Bellman sweep scales with the value
    # magnitudes; do not demand a residual below that noise floor.
    return max(base_tol, 64.0 * _EPS * max(1.0, float(np.max(np.abs(values)))))


def relative_value_iteration(lam: float, p: UserParams, knobs: SolverKnobs) -> ValueSolution:
    """Solve the average-cost optimality equation for tax `lam`.

    Iterates the Bellman operator with the V(0) = 0 anchor re-applied
    after every sweep and stops once the per-state defect of the
    optimality equation is within tolerance everywhere.
    """
    kern = Kernel(p)
    costs = np.asarray(holding_cost_table(p))
    values = np.zeros(kern.num_states)
    for it in range(1, knobs.rvi_max_iter + 1):
        q_active = kern.expect_active(values) + p.beam_cost
        q_passive = kern.expect_passive(values) + lam
        swept = costs + np.minimum(q_active, q_passive)
        gain = swept - values
        eta = float(gain[0])
        residual = float(np.max(np.abs(gain - eta)))
        if residual <= _effective_tol(knobs.rvi_tol, values):
            actions = (q_active < q_passive).astype(np.int64)  # tie -> passive
            return ValueSolution(
                tax=lam,
                values=values,
                avg_cost=eta,
                actions=actions,
                threshold=extract_threshold(actions),
                residual=residual,
                iterations=it,
            )
        values = swept - swept[0]
    raise NoConvergence(
        f"relative value iteration: residual {residual:.3e} after {knobs.rvi_max_iter} sweeps",
        residual=residual,
        iterations=knobs.rvi_max_iter,
    )


def discounted_value_iteration(
    lam: float, gamma: float, p: UserParams, knobs: SolverKnobs
) -> tuple[np.ndarray, float]:
    """Fixed point of the discounted optimality equation; returns (V, V(0)).

    The stopping rule bounds the error of (1 - gamma) * V(0) by roughly
    the configured tolerance, which is the quantity the vanishing
    discount comparison consumes.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    kern = Kernel(p)
    costs = np.asarray(holding_cost_table(p))
    values = np.zeros(kern.num_states)
    for it in range(1, knobs.rvi_max_iter + 1):
        q_active = costs + p.beam_cost + gamma * kern.expect_active(values)
        q_passive = costs + lam + gamma * kern.expect_passive(values)
        swept = np.minimum(q_active, q_passive)
        change = float(np.max(np.abs(swept - values)))
        values = swept
        if change <= _effective_tol(knobs.rvi_tol, values):
            return values, float(values[0])
    raise NoConvergence(
        f"discounted value iteration: change {change:.3e} after {knobs.rvi_max_iter} sweeps",
        residual=change,
        iterations=knobs.rvi_max_iter,
    )


def threshold_system(p: UserParams, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear system of the threshold-t policy's value equations.

    Unknowns are (V(0), ..., V(N), eta). Row y states
    V(y) - E[V | action(y)](y) + eta = H(y) + (tax if y <= t else P);
    the final row anchors V(0) = 0. The tax enters only the right-hand
    side, so it is returned split: rhs = rhs_base + tax * rhs_tax.
    """
    kern = Kernel(p)
    n_states = kern.num_states
    if not -1 <= t <= n_states - 1:
        raise ValueError(f"threshold {t} outside [-1, {n_states - 1}]")
    size = n_states + 1
    mat = np.zeros((size, size))
    passive = np.arange(n_states) <= t
    for y in range(n_states):
        u = 0 if passive[y] else 1
        mat[y, y] = 1.0
        row = kern.row(y, u)
        mat[y, :n_states] -= row
        mat[y, n_states] = 1.0
    mat[n_states, 0] = 1.0

    costs = np.asarray(holding_cost_table(p))
    rhs_base = np.zeros(size)
    rhs_base[:n_states] = costs + np.where(passive, 0.0, p.beam_cost)
    rhs_tax = np.zeros(size)
    rhs_tax[:n_states] = np.where(passive, 1.0, 0.0)
    return mat, rhs_base, rhs_tax


def _guarded_lu(mat: np.ndarray, pivot_tol: float):
    lu, piv = scipy.linalg.lu_factor(mat)
    min_pivot = float(np.min(np.abs(np.diag(lu))))
    if min_pivot < pivot_tol:
        raise SingularSystem(
            f"threshold value system is singular: pivot {min_pivot:.3e} below {pivot_tol:.3e}"
        )
    return lu, piv


def solve_fixed_threshold(
    lam: float, t: int, p: UserParams, knobs: SolverKnobs
) -> tuple[np.ndarray, float]:
    """Directly solve the value equations of the threshold-t policy.

    Returns (V, eta) with V(0) = 0. Exact up to the dense factorization,
    so it serves as the inner solve of the index computation.
    """
    mat, rhs_base, rhs_tax = threshold_system(p, t)
    lu_piv = _guarded_lu(mat, knobs.linear_solve_pivot_tol)
    sol = scipy.linalg.lu_solve(lu_piv, rhs_base + lam * rhs_tax)
    return sol[:-1], float(sol[-1])


def stationary_distribution(t: int, p: UserParams) -> StationaryDistribution:
    """Stationary law of the threshold-t chain via the birth-death product form.

    States below t are transient (no departures below the threshold), so
    their mass is zero. For t = N the passive chain is pure birth and
    absorbs at N; the point mass is returned flagged degenerate.
    """
    n = p.buffer_size
    if not -1 <= t <= n:
        raise ValueError(f"threshold {t} outside [-1, {n}]")
    probs = np.zeros(n + 1)
    if t == n:
        probs[n] = 1.0
        return StationaryDistribution(probs=probs, threshold=t, degenerate=True)

    a, d = p.arrival_prob, p.channel_prob
    base = max(t, 0)  # t = -1 induces the same chain as t = 0
    # log-space ratios: v(base+1)/v(base) = a / (d (1-a)); afterwards each
    # step multiplies by a(1-d) / (d(1-a)).
    log_first = np.log(a) - np.log(d * (1.0 - a))
    log_rho = np.log(a * (1.0 - d)) - np.log(d * (1.0 - a))
    ks = np.arange(n - base + 1, dtype=np.float64)
    log_w = np.where(ks == 0.0, 0.0, log_first + (ks - 1.0) * log_rho)
    log_w -= np.max(log_w)
    weights = np.exp(log_w)
    probs[base:] = weights / np.sum(weights)

    kern = Kernel(p)
    actions = (np.arange(n + 1) > t).astype(np.int64)
    residual = float(np.max(np.abs(probs @ kern.matrix(actions) - probs)))
    if residual > 1e-8:
        raise NoConvergence(
            f"stationary distribution fails v = vP with residual {residual:.3e}",
            residual=residual,
        )
    return StationaryDistribution(probs=probs, threshold=t)


def threshold_average_cost(lam: float, t: int, p: UserParams) -> float:
    """Long-run average cost of the threshold-t policy under tax `lam`.

    Holding cost is averaged against the stationary law; the tax weighs
    the passive states and the beam cost the active ones.
    """
    dist = stationary_distribution(t, p)
    if dist.degenerate:
        raise DegenerateChain(f"threshold {t} leaves no active state; average cost is ill-posed")
    costs = np.asarray(holding_cost_table(p))
    passive_mass = float(np.sum(dist.probs[: t + 1])) if t >= 0 else 0.0
    return float(costs @ dist.probs) + lam * passive_mass + p.beam_cost * (1.0 - passive_mass)


def extract_threshold(actions: np.ndarray) -> int | None:
    """Largest t with all states <= t passive and all states > t active.

    Returns -1 when every state is active, N when every state is
    passive, and None when the action map is not of threshold shape.
    """
    arr = np.asarray(actions)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("actions must be a non-empty vector")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("actions must be binary")
    ones = np.flatnonzero(arr == 1)
    if ones.size == 0:
        return int(arr.size - 1)
    first = int(ones[0])
    if np.all(arr[first:] == 1):
        return first - 1
    return None


def service_gain(values: np.ndarray, p: UserParams) -> np.ndarray:
    """Expected value change from serving vs idling, per interior state.

    Entry x (1 <= x <= N-1) is E[V(next | serve)] - E[V(next | idle)]
    computed from a supplied value table. Non-positive and non-increasing
    for value tables produced by the solver away from the boundary.
    """
    kern = Kernel(p)
    gain = kern.expect_active(values) - kern.expect_passive(values)
    return gain[1 : kern.num_states - 1]
