"""Executable structural checks on solver output.

The solver's correctness rests on structural facts about the single-user
problem: the value function is non-decreasing and convex away from the
buffer boundary, the optimal action map is a threshold, that threshold
falls as the passivity tax rises, the passive mass of the threshold
chain grows with the threshold, the threshold-policy cost surface is
supermodular in (tax, threshold), the scaled discounted value approaches
the average cost, and the two index computations agree. This module
turns each fact into a check over sampled parameter tuples and renders a
deterministic pass/fail report.

Checks near the buffer boundary are skipped within BOUNDARY_MARGIN
states: truncation perturbs the value table there without invalidating
the untruncated-space facts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import solver as _solver
from . import whittle as _whittle
from .model import UserParams, holding_cost_table
from .solver import BOUNDARY_MARGIN, SolverKnobs
from .whittle import IndexKnobs

# violations smaller than this are numerical noise, not structure
SLACK = 1e-8


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    checked: int
    violations: int
    worst: float  # most negative margin observed; >= -SLACK when passing

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: checked={self.checked} "
            f"violations={self.violations} worst={self.worst:.3e}"
        )


@dataclass(frozen=True)
class VerifyReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def render(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append("ALL PASS" if self.passed else "FAILURES PRESENT")
        return "\n".join(lines) + "\n"


class _Accumulator:
    """Collects worst-case margins for one named check across samples."""

    def __init__(self, name: str):
        self.name = name
        self.checked = 0
        self.violations = 0
        self.worst = np.inf

    def add(self, margin: float) -> None:
        # margin >= 0 means satisfied; below -SLACK counts as a violation
        self.checked += 1
        self.worst = min(self.worst, margin)
        if margin < -SLACK:
            self.violations += 1

    def result(self) -> CheckResult:
        worst = 0.0 if self.checked == 0 else float(self.worst)
        return CheckResult(
            name=self.name,
            passed=self.violations == 0,
            checked=self.checked,
            violations=self.violations,
            worst=worst,
        )


def sample_params(rng: np.random.Generator, buffer_size: int = 60) -> UserParams:
    """One random parameter tuple from the verification ranges."""
    return UserParams(
        arrival_prob=float(rng.uniform(0.1, 0.9)),
        channel_prob=float(rng.uniform(0.1, 0.9)),
        beam_cost=float(rng.uniform(1.0, 200.0)),
        holding_coeff=float(rng.uniform(1.0, 100.0)),
        buffer_size=buffer_size,
    )


def tax_grid(p: UserParams, n_taxes: int) -> np.ndarray:
    """Evenly spaced taxes from -P up to 2P plus the worst holding cost."""
    top = 2.0 * p.beam_cost + p.holding_coeff * p.buffer_size**2
    return np.linspace(-p.beam_cost, top, n_taxes)


def _interior_threshold(actions: np.ndarray, margin: int) -> int | None:
    interior = actions[: actions.size - margin]
    return _solver.extract_threshold(interior)


def structural_suite(
    n_param_sets: int = 20,
    n_taxes: int = 15,
    buffer_size: int = 60,
    seed: int = 20_260_810,
    knobs: SolverKnobs | None = None,
) -> VerifyReport:
    """Value-function and threshold-chain structure over sampled tuples.

    Runs the average-cost solver on a tax grid per tuple and checks:
    monotone values, convex values, threshold-shaped action maps, a
    non-increasing serve-vs-idle value gain, a tax-monotone threshold,
    growing passive mass of the threshold chain, and supermodularity of
    the threshold-policy cost.
    """
    knobs = knobs or SolverKnobs()
    rng = np.random.default_rng(seed)
    margin = BOUNDARY_MARGIN

    monotone = _Accumulator("monotone_values")
    convex = _Accumulator("convex_values")
    thresh_shape = _Accumulator("threshold_actions")
    gain_mono = _Accumulator("service_gain_monotone")
    thresh_mono = _Accumulator("threshold_monotone_in_tax")
    residuals = _Accumulator("optimality_residual")
    passive_mass = _Accumulator("passive_mass_increasing")
    supermod = _Accumulator("supermodular_threshold_cost")

    for _ in range(n_param_sets):
        p = sample_params(rng, buffer_size)
        n = p.buffer_size
        taxes = tax_grid(p, n_taxes)

        thresholds: list[int | None] = []
        for lam in taxes:
            sol = _solver.relative_value_iteration(float(lam), p, knobs)
            v = sol.values

            hi = n - margin  # inclusive top state for interior checks
            monotone.add(float(np.min(np.diff(v[: hi + 1]))))
            second = v[2 : hi + 1] - 2.0 * v[1:hi] + v[: hi - 1]
            convex.add(float(np.min(second)))

            t_int = _interior_threshold(sol.actions, margin)
            thresh_shape.add(0.0 if t_int is not None else -1.0)
            thresholds.append(t_int)

            gain = _solver.service_gain(v, p)  # states 1 .. n-1
            steps = np.diff(gain[: n - margin - 1])
            if steps.size:
                gain_mono.add(float(np.min(-steps)))

            scale = max(1.0, float(np.max(np.abs(v))))
            allowed = max(knobs.rvi_tol, 128.0 * np.finfo(np.float64).eps * scale)
            residuals.add(float(allowed - sol.residual))

        for t_prev, t_next in zip(thresholds, thresholds[1:]):
            if t_prev is None or t_next is None:
                continue  # already counted by threshold_actions
            thresh_mono.add(float(t_prev - t_next))

        mass = _passive_mass_curve(p)
        passive_mass.add(float(np.min(np.diff(mass))))

        _supermodular_samples(p, taxes, rng, supermod)

    checks = (
        monotone.result(),
        convex.result(),
        thresh_shape.result(),
        gain_mono.result(),
        thresh_mono.result(),
        passive_mass.result(),
        supermod.result(),
        residuals.result(),
    )
    return VerifyReport(checks=checks)


def _passive_mass_curve(p: UserParams) -> np.ndarray:
    """Cumulative stationary mass at or below t, for t = 0 .. N-1."""
    out = np.empty(p.buffer_size)
    for t in range(p.buffer_size):
        dist = _solver.stationary_distribution(t, p)
        out[t] = float(np.sum(dist.probs[: t + 1]))
    return out


def _supermodular_samples(
    p: UserParams, taxes: np.ndarray, rng: np.random.Generator, acc: _Accumulator, n_quads: int = 40
) -> None:
    n = p.buffer_size
    hold = np.asarray(holding_cost_table(p))
    dists: dict[int, np.ndarray] = {}

    def f(lam: float, t: int) -> float:
        if t not in dists:
            dists[t] = _solver.stationary_distribution(t, p).probs
        probs = dists[t]
        passive = float(np.sum(probs[: t + 1])) if t >= 0 else 0.0
        return float(hold @ probs) + lam * passive + p.beam_cost * (1.0 - passive)

    for _ in range(n_quads):
        l1, l2 = np.sort(rng.choice(taxes, size=2, replace=False))[::-1]
        t1, t2 = sorted(rng.choice(np.arange(-1, n), size=2, replace=False), reverse=True)
        lhs = f(float(l1), int(t2)) + f(float(l2), int(t1))
        rhs = f(float(l1), int(t1)) + f(float(l2), int(t2))
        scale = max(1.0, abs(lhs), abs(rhs))
        acc.add(float((rhs - lhs) / scale))


def discount_limit_suite(
    cases: list[tuple[UserParams, float]] | None = None,
    knobs: SolverKnobs | None = None,
    gamma_lo: float = 0.99,
    gamma_hi: float = 0.999,
    gap_bound: float = 0.1,
) -> VerifyReport:
    """Vanishing-discount consistency: (1-g) V_g(0) approaches the average cost.

    Uses stable, light-tail tuples by default: the gap scales with the
    transient excess cost from an empty queue, which is unbounded over
    the full parameter ranges but small in the operating regimes the
    scheduler targets.
    """
    knobs = knobs or SolverKnobs()
    cases = cases if cases is not None else default_discount_cases()
    close = _Accumulator("discount_gap_small")
    shrink = _Accumulator("discount_gap_shrinks")
    for p, lam in cases:
        eta = _solver.relative_value_iteration(lam, p, knobs).avg_cost
        gaps = []
        for gamma in (gamma_lo, gamma_hi):
            _, v0 = _solver.discounted_value_iteration(lam, gamma, p, knobs)
            gaps.append(abs((1.0 - gamma) * v0 - eta))
        close.add(float(gap_bound - gaps[1]))
        shrink.add(float(gaps[0] - gaps[1]))
    return VerifyReport(checks=(close.result(), shrink.result()))


def default_discount_cases() -> list[tuple[UserParams, float]]:
    """Five stable tuples (service beats arrivals, modest holding cost)."""
    raw = [
        # (a, d, P, q, N, lam)
        (0.30, 0.60, 10.0, 1.0, 60, 5.0),
        (0.25, 0.70, 20.0, 2.0, 50, 12.0),
        (0.40, 0.75, 15.0, 1.5, 60, 0.0),
        (0.20, 0.55, 8.0, 1.0, 40, 4.0),
        (0.35, 0.80, 25.0, 2.5, 50, 18.0),
    ]
    return [
        (
            UserParams(
                arrival_prob=a,
                channel_prob=d,
                beam_cost=pp,
                holding_coeff=q,
                buffer_size=n,
            ),
            lam,
        )
        for a, d, pp, q, n, lam in raw
    ]


def index_agreement_suite(
    n_param_sets: int = 10,
    states: tuple[int, ...] | None = None,
    buffer_size: int = 60,
    seed: int = 20_260_811,
    tol: float = 1e-3,
    index_knobs: IndexKnobs | None = None,
    knobs: SolverKnobs | None = None,
) -> VerifyReport:
    """Fixed-point index versus the bisection oracle, plus index monotonicity."""
    knobs = knobs or SolverKnobs()
    index_knobs = index_knobs or IndexKnobs()
    if states is None:
        n = buffer_size
        states = tuple(sorted({0, n // 6, n // 3, 2 * n // 3, n - 6 if n > 6 else n - 1}))
    rng = np.random.default_rng(seed)
    agree = _Accumulator("index_methods_agree")
    mono = _Accumulator("index_monotone_in_state")
    from .errors import BracketFailure, DegenerateChain, NoConvergence

    for _ in range(n_param_sets):
        p = sample_params(rng, buffer_size)
        vals = []
        for x in states:
            try:
                it_val = _whittle.index_iteration(x, p, index_knobs, knobs)
                bi_val = _whittle.index_bisection_oracle(x, p, knobs, tol=tol * 0.1)
            except (NoConvergence, BracketFailure, DegenerateChain):
                # a route that cannot produce the value counts as disagreement
                agree.add(-np.inf)
                continue
            agree.add(float(tol - abs(it_val - bi_val)))
            vals.append(it_val)
        mono.add(float(np.min(-np.diff(vals))) if len(vals) > 1 else 0.0)
    return VerifyReport(checks=(agree.result(), mono.result()))


def full_suite(
    n_param_sets: int = 20,
    n_taxes: int = 15,
    buffer_size: int = 60,
    seed: int = 20_260_810,
    index_param_sets: int = 4,
    knobs: SolverKnobs | None = None,
) -> VerifyReport:
    """Everything: structure, discount limit, and index agreement."""
    checks: list[CheckResult] = []
    checks.extend(
        structural_suite(
            n_param_sets=n_param_sets,
            n_taxes=n_taxes,
            buffer_size=buffer_size,
            seed=seed,
            knobs=knobs,
        ).checks
    )
    checks.extend(discount_limit_suite(knobs=knobs).checks)
    checks.extend(
        index_agreement_suite(
            n_param_sets=index_param_sets,
            buffer_size=buffer_size,
            seed=seed + 1,
            knobs=knobs,
        ).checks
    )
    return VerifyReport(checks=tuple(checks))
