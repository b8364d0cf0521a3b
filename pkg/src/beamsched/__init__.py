"""Whittle-index beam scheduling toolkit.

Computes per-user Whittle indices for a tax-parameterized queueing MDP,
verifies the structural facts the index policy rests on, and benchmarks
the index policy against longest-queue-first, max-weight, weighted fair
queueing, and random scheduling in a slot-synchronous simulator.
"""

from .config import ALL_POLICIES, Policy, SystemConfig
from .errors import (
    BeamschedError,
    BracketFailure,
    ConfigError,
    DegenerateChain,
    NoConvergence,
    ParseError,
    SingularSystem,
    ValidationError,
)
from .experiments import (
    PRESETS,
    ExperimentSpec,
    ResultRecord,
    build_tables,
    fingerprint,
    load_preset,
    parse_config,
    run_sweep,
    serialize_config,
    simulate_policies,
)
from .model import TransitionRow, UserParams, holding_cost, slot_cost, step_queue, transition_row
from .policies import (
    Selection,
    lqf_select,
    mws_select,
    random_select,
    wfq_select,
    whittle_select,
)
from .simulator import (
    MetricsSummary,
    RawRun,
    Streams,
    compute_metrics,
    generate_streams,
    run_replications,
    run_simulation,
    simulate_arrays,
)
from .solver import (
    BOUNDARY_MARGIN,
    SolverKnobs,
    StationaryDistribution,
    ValueSolution,
    discounted_value_iteration,
    extract_threshold,
    relative_value_iteration,
    solve_fixed_threshold,
    stationary_distribution,
    threshold_average_cost,
)
from .verify import full_suite, index_agreement_suite, structural_suite
from .whittle import (
    IndexKnobs,
    WhittleTable,
    build_index_table,
    index_bisection_oracle,
    index_iteration,
    lookup_index,
    read_table,
    write_table,
)

__version__ = "0.1.0"
