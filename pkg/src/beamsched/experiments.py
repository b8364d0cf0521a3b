"""Experiment descriptions, bundled presets, sweeps, and result records.

An experiment is a base system plus an optional sweep over the user
count or the beam count. Growing the user population during a sweep
uses a named per-user parameter rule, so preset populations of twenty
plus users are generated rather than hand-typed. Results are emitted as
flat records (one per point, policy, and metric) plus a machine-readable
summary document.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from importlib import resources

from .config import ALL_POLICIES, Policy, SystemConfig
from .errors import ParseError, ValidationError
from .model import UserParams
from .simulator import ReplicationAggregate, run_replications
from .solver import SolverKnobs
from .whittle import IndexKnobs, WhittleTable, build_index_table

SWEEP_AXES = ("none", "num_users", "num_beams")


@dataclass(frozen=True)
class ExperimentSpec:
    """A base system plus a sweep axis, policies to compare, and rep count."""

    name: str
    base: SystemConfig
    sweep: str = "none"
    values: tuple[int, ...] = ()
    user_rule: str | None = None
    policies: tuple[Policy, ...] = ALL_POLICIES
    n_reps: int = 20
    seed_stride: int = 1

    def __post_init__(self):
        if self.sweep not in SWEEP_AXES:
            raise ValueError(f"sweep must be one of {SWEEP_AXES}, got {self.sweep!r}")
        if self.sweep == "none":
            if self.values:
                raise ValueError("a sweep of 'none' takes no values")
        elif not self.values:
            raise ValueError(f"sweep over {self.sweep} needs at least one value")
        if self.sweep == "num_users" and self.user_rule not in USER_RULES:
            raise ValueError(
                f"user-count sweeps need a known user_rule, got {self.user_rule!r}; "
                f"known rules: {sorted(USER_RULES)}"
            )
        if not self.policies:
            raise ValueError("at least one policy must be requested")
        if self.n_reps < 1:
            raise ValueError("n_reps must be at least 1")
        if self.seed_stride < 1:
            raise ValueError("seed_stride must be at least 1")
        # every sweep point must itself be a valid system
        self.resolve_points()

    def resolve_points(self) -> list[tuple[int | None, SystemConfig]]:
        """All (axis value, resolved config) pairs of the sweep."""
        if self.sweep == "none":
            return [(None, self.base)]
        points = []
        for value in self.values:
            if self.sweep == "num_beams":
                cfg = replace(self.base, num_beams=value)
            else:
                cfg = self._resolve_user_count(value)
            points.append((value, cfg))
        return points

    def _resolve_user_count(self, k: int) -> SystemConfig:
        base_k = self.base.num_users
        if k < base_k:
            raise ValueError(f"user-count sweep value {k} is below the {base_k} base users")
        rule = USER_RULES[self.user_rule]
        buffer = self.base.users[0].buffer_size
        extra = tuple(rule(i, buffer) for i in range(base_k + 1, k + 1))
        return replace(self.base, num_users=k, users=self.base.users + extra)


# --- per-user growth rules (1-based user index i) --------------------------


def _round12(x: float) -> float:
    return round(x, 12)


def _alternating_users(i: int, buffer_size: int) -> UserParams:
    """Alternate channel quality by user parity; linearly fading a, P, q."""
    return UserParams(
        arrival_prob=_round12(0.53 - 0.01 * i),
        channel_prob=0.28 if i % 2 == 1 else 0.29,
        beam_cost=float(63 - 3 * i),
        holding_coeff=float(85 - 5 * i),
        buffer_size=buffer_size,
    )


def _fading_users(i: int, buffer_size: int) -> UserParams:
    """Every parameter decays linearly with the user index."""
    return UserParams(
        arrival_prob=_round12(0.59 - 0.03 * i),
        channel_prob=_round12(0.295 - 0.005 * i),
        beam_cost=float(60 - 4 * i),
        holding_coeff=float(86 - 4 * i),
        buffer_size=buffer_size,
    )


def _cyclic_users(i: int, buffer_size: int) -> UserParams:
    """Parameters cycle with period five across the user index."""
    k = (i - 1) % 5
    return UserParams(
        arrival_prob=_round12(0.64 - 0.005 * k),
        channel_prob=_round12(0.74 - 0.005 * k),
        beam_cost=float(60 - 5 * k),
        holding_coeff=float(40 - 5 * k),
        buffer_size=buffer_size,
    )


USER_RULES = {
    "alternating": _alternating_users,
    "fading": _fading_users,
    "cyclic": _cyclic_users,
}


# --- bundled presets --------------------------------------------------------


def _users(d, a, p, q, buffer_size) -> tuple[UserParams, ...]:
    if not (len(d) == len(a) == len(p) == len(q)):
        raise ValueError("parameter vectors must share a length")
    return tuple(
        UserParams(
            arrival_prob=ai,
            channel_prob=di,
            beam_cost=float(pi),
            holding_coeff=float(qi),
            buffer_size=buffer_size,
        )
        for di, ai, pi, qi in zip(d, a, p, q)
    )


def _base(
    users, num_beams, seed, horizon=20_000, warmup=10_000, stride=4
) -> SystemConfig:
    return SystemConfig(
        num_users=len(users),
        num_beams=num_beams,
        users=users,
        horizon=horizon,
        warmup=warmup,
        seed=seed,
        policy=Policy.WHITTLE,
        solver=SolverKnobs(),
        index=IndexKnobs(sample_stride=stride),
    )


def _build_presets() -> dict[str, ExperimentSpec]:
    presets: dict[str, ExperimentSpec] = {}

    presets["fig3a"] = ExperimentSpec(
        name="fig3a",
        base=_base(
            _users(
                d=[0.35, 0.33, 0.31, 0.29, 0.27, 0.25],
                a=[0.55, 0.52, 0.49, 0.46, 0.43, 0.40],
                p=[60, 55, 50, 45, 40, 35],
                q=[30, 26, 22, 18, 14, 10],
                buffer_size=400,
            ),
            num_beams=4,
            seed=611_001,
        ),
        n_reps=20,
    )

    presets["fig3b"] = ExperimentSpec(
        name="fig3b",
        base=_base(
            _users(
                d=[0.34, 0.30, 0.28, 0.32],
                a=[0.58, 0.56, 0.57, 0.55],
                p=[87, 74, 62, 49],
                q=[90, 60, 44, 28],
                buffer_size=500,
            ),
            num_beams=3,
            seed=611_002,
        ),
        n_reps=20,
    )

    presets["fig4a"] = ExperimentSpec(
        name="fig4a",
        base=_base(
            _users(
                d=[0.30, 0.28, 0.29, 0.31, 0.28],
                a=[0.52, 0.51, 0.50, 0.49, 0.48],
                p=[60, 57, 54, 51, 48],
                q=[80, 75, 70, 65, 60],
                buffer_size=200,
            ),
            num_beams=4,
            seed=611_003,
        ),
        sweep="num_users",
        values=(5, 6, 7, 8, 9, 10),
        user_rule="alternating",
        n_reps=20,
    )

    presets["fig4b"] = ExperimentSpec(
        name="fig4b",
        base=_base(
            _users(
                d=[0.25, 0.241, 0.231, 0.222, 0.213, 0.204, 0.195, 0.186, 0.177],
                a=[0.55, 0.545, 0.54, 0.535, 0.53, 0.525, 0.52, 0.515, 0.51],
                p=[120, 110, 100, 90, 80, 70, 60, 50, 40],
                q=[90, 82, 74, 66, 58, 50, 42, 34, 26],
                buffer_size=200,
            ),
            num_beams=4,
            seed=611_004,
        ),
        sweep="num_beams",
        values=(4, 5, 6, 7, 8),
        n_reps=20,
    )

    presets["fig5a"] = ExperimentSpec(
        name="fig5a",
        base=_base(
            _users(
                d=[0.29, 0.285, 0.28, 0.275, 0.27],
                a=[0.56, 0.53, 0.50, 0.47, 0.44],
                p=[56, 52, 48, 44, 40],
                q=[82, 78, 74, 70, 66],
                buffer_size=200,
            ),
            num_beams=4,
            seed=611_005,
        ),
        sweep="num_users",
        values=(5, 6, 7, 8, 9),
        user_rule="fading",
        n_reps=20,
    )

    presets["fig5b"] = ExperimentSpec(
        name="fig5b",
        base=_base(
            _users(
                d=[0.28, 0.272, 0.253, 0.243, 0.231, 0.222, 0.21, 0.196, 0.187],
                a=[0.505, 0.504, 0.503, 0.502, 0.503, 0.502, 0.503, 0.502, 0.503],
                p=[60, 55, 50, 45, 40, 35, 30, 25, 20],
                q=[85, 77, 69, 61, 53, 45, 37, 29, 21],
                buffer_size=200,
            ),
            num_beams=4,
            seed=611_006,
        ),
        sweep="num_beams",
        values=(4, 5, 6, 7, 8),
        n_reps=20,
    )

    presets["table1"] = ExperimentSpec(
        name="table1",
        base=_base(
            _users(
                d=[0.35, 0.341, 0.332, 0.323, 0.314, 0.305, 0.296, 0.287, 0.278, 0.269,
                   0.260, 0.251, 0.242, 0.233, 0.224, 0.215, 0.206, 0.197, 0.188, 0.179],
                a=[0.65, 0.645, 0.64, 0.635, 0.63, 0.625, 0.62, 0.615, 0.61, 0.605,
                   0.60, 0.595, 0.59, 0.585, 0.58, 0.575, 0.57, 0.565, 0.56, 0.555],
                p=[200, 190, 180, 170, 160, 150, 140, 130, 120, 110,
                   100, 90, 80, 70, 60, 50, 40, 30, 20, 10],
                q=[174, 166, 158, 150, 142, 134, 126, 118, 110, 102,
                   94, 86, 78, 70, 62, 54, 46, 34, 28, 20],
                buffer_size=100,
            ),
            num_beams=8,
            seed=611_007,
            stride=2,
        ),
        sweep="num_beams",
        values=(8, 9, 10, 11, 12, 13, 14, 15, 16),
        n_reps=50,
    )

    cyc5 = lambda xs: xs * 3 + xs[:1]  # noqa: E731 - period-5 pattern, 16 entries
    presets["table2"] = ExperimentSpec(
        name="table2",
        base=_base(
            _users(
                d=cyc5([0.74, 0.735, 0.73, 0.725, 0.72]),
                a=cyc5([0.64, 0.635, 0.63, 0.625, 0.62]),
                p=cyc5([60, 55, 50, 45, 40]),
                q=cyc5([40, 35, 30, 25, 20]),
                buffer_size=100,
            ),
            num_beams=15,
            seed=611_008,
            stride=2,
        ),
        sweep="num_users",
        values=(16, 17, 18, 19, 20, 21, 22, 23, 24, 25),
        user_rule="cyclic",
        n_reps=50,
    )

    return presets


PRESETS = _build_presets()


def load_preset(name: str) -> ExperimentSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


# --- serialization ----------------------------------------------------------

_USER_KEYS = {"arrival_prob", "channel_prob", "beam_cost", "holding_coeff", "buffer_size"}
_SOLVER_KEYS = {"rvi_tol", "rvi_max_iter", "discount", "linear_solve_pivot_tol"}
_INDEX_KEYS = {"step", "lambda_init", "fp_tol", "fp_max_iter", "sample_stride"}
_CONFIG_KEYS = {
    "num_users", "num_beams", "users", "horizon", "warmup", "seed", "policy",
    "solver", "index",
}
_EXPERIMENT_KEYS = {"name", "sweep", "values", "user_rule", "policies", "n_reps", "seed_stride"}


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ParseError(f"unknown field(s) {unknown} in {where}")


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ParseError(f"missing field {key!r} in {where}")
    return obj[key]


def config_to_dict(cfg: SystemConfig) -> dict:
    out = asdict(cfg)
    out["policy"] = cfg.policy.value
    out["users"] = [asdict(u) for u in cfg.users]
    return out


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "base": config_to_dict(spec.base),
        "experiment": {
            "name": spec.name,
            "sweep": spec.sweep,
            "values": list(spec.values),
            "user_rule": spec.user_rule,
            "policies": [p.value for p in spec.policies],
            "n_reps": spec.n_reps,
            "seed_stride": spec.seed_stride,
        },
    }


def _config_from_dict(obj: dict, where: str = "config") -> SystemConfig:
    if not isinstance(obj, dict):
        raise ParseError(f"{where} must be an object")
    _reject_unknown(obj, _CONFIG_KEYS, where)
    users_raw = _require(obj, "users", where)
    if not isinstance(users_raw, list):
        raise ParseError(f"users must be a list in {where}")
    try:
        users = []
        for idx, u in enumerate(users_raw):
            if not isinstance(u, dict):
                raise ParseError(f"users[{idx}] must be an object in {where}")
            _reject_unknown(u, _USER_KEYS, f"{where}.users[{idx}]")
            users.append(UserParams(**u))
        solver_raw = obj.get("solver", {})
        _reject_unknown(solver_raw, _SOLVER_KEYS, f"{where}.solver")
        index_raw = obj.get("index", {})
        _reject_unknown(index_raw, _INDEX_KEYS, f"{where}.index")
        policy_raw = _require(obj, "policy", where)
        try:
            policy = Policy(policy_raw)
        except ValueError:
            raise ValidationError(
                f"policy must be one of {[p.value for p in Policy]}, got {policy_raw!r}"
            ) from None
        return SystemConfig(
            num_users=_require(obj, "num_users", where),
            num_beams=_require(obj, "num_beams", where),
            users=tuple(users),
            horizon=_require(obj, "horizon", where),
            warmup=_require(obj, "warmup", where),
            seed=_require(obj, "seed", where),
            policy=policy,
            solver=SolverKnobs(**solver_raw),
            index=IndexKnobs(**index_raw),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _spec_from_dict(obj: dict) -> ExperimentSpec:
    _reject_unknown(obj, {"base", "experiment"}, "experiment file")
    base = _config_from_dict(_require(obj, "base", "experiment file"), "base")
    exp = _require(obj, "experiment", "experiment file")
    if not isinstance(exp, dict):
        raise ParseError("experiment must be an object")
    _reject_unknown(exp, _EXPERIMENT_KEYS, "experiment")
    try:
        policies = tuple(Policy(p) for p in exp.get("policies", [p.value for p in ALL_POLICIES]))
        return ExperimentSpec(
            name=exp.get("name", "experiment"),
            base=base,
            sweep=exp.get("sweep", "none"),
            values=tuple(exp.get("values", [])),
            user_rule=exp.get("user_rule"),
            policies=policies,
            n_reps=exp.get("n_reps", 20),
            seed_stride=exp.get("seed_stride", 1),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"experiment: {exc}") from exc


def parse_config_text(text: str, where: str = "config") -> SystemConfig | ExperimentSpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: top level must be an object")
    if "experiment" in obj or "base" in obj:
        return _spec_from_dict(obj)
    return _config_from_dict(obj, where)


def parse_config(path) -> SystemConfig | ExperimentSpec:
    """Load a system config or experiment spec from a JSON file.

    Strict: unknown fields raise ParseError, invariant breaches raise
    ValidationError naming the offending constraint.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, where=str(path))


def serialize_config(cfg: SystemConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def serialize_spec(spec: ExperimentSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n"


def bundled_preset_text(name: str) -> str:
    """Raw JSON of a preset shipped with the package."""
    ref = resources.files("beamsched").joinpath(f"presets/{name}.json")
    return ref.read_text(encoding="utf-8")


def fingerprint(cfg: SystemConfig) -> str:
    """Stable short hash of the fully resolved configuration."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()[:16]


# --- execution --------------------------------------------------------------


@dataclass(frozen=True)
class ResultRecord:
    fingerprint: str
    policy: str
    metric: str
    mean: float
    ci_half_width: float
    n_reps: int
    seed: int


RECORD_HEADER = "fingerprint\tpolicy\tmetric\tmean\tci_half_width\tn_reps\tseed"


def record_lines(records) -> str:
    lines = [RECORD_HEADER]
    for r in records:
        lines.append(
            f"{r.fingerprint}\t{r.policy}\t{r.metric}\t{r.mean!r}\t"
            f"{r.ci_half_width!r}\t{r.n_reps}\t{r.seed}"
        )
    return "\n".join(lines) + "\n"


def build_tables(cfg: SystemConfig) -> tuple[WhittleTable, ...]:
    """Whittle index tables for every user of a config."""
    return tuple(
        build_index_table(u, cfg.index, cfg.solver, user_id=i)
        for i, u in enumerate(cfg.users)
    )


class _TableCache:
    """Reuse per-user index tables across sweep points and policies."""

    def __init__(self):
        self._cache: dict[tuple, WhittleTable] = {}

    def tables_for(self, cfg: SystemConfig) -> tuple[WhittleTable, ...]:
        out = []
        for i, u in enumerate(cfg.users):
            key = (u, cfg.index, cfg.solver)
            if key not in self._cache:
                self._cache[key] = build_index_table(u, cfg.index, cfg.solver, user_id=i)
            tbl = self._cache[key]
            out.append(tbl if tbl.user_id == i else replace(tbl, user_id=i))
        return tuple(out)


def _records_for(
    cfg: SystemConfig, policy: Policy, agg: ReplicationAggregate, n_reps: int
) -> list[ResultRecord]:
    fp = fingerprint(cfg)
    out = []
    for metric, stat in (
        ("avg_cost", agg.avg_cost),
        ("avg_delay", agg.avg_delay),
        ("avg_active_beams", agg.avg_active_beams),
    ):
        out.append(
            ResultRecord(
                fingerprint=fp,
                policy=policy.value,
                metric=metric,
                mean=stat.mean,
                ci_half_width=stat.ci_half_width,
                n_reps=n_reps,
                seed=cfg.seed,
            )
        )
    return out


def simulate_policies(
    cfg: SystemConfig,
    policies=ALL_POLICIES,
    n_reps: int = 20,
    seed_stride: int = 1,
    tables: tuple[WhittleTable, ...] | None = None,
) -> tuple[dict[Policy, ReplicationAggregate], list[ResultRecord]]:
    """Replicated runs of several policies on common random numbers.

    Every policy sees the same per-replication seeds, hence identical
    arrival and channel sample paths.
    """
    if Policy.WHITTLE in policies and tables is None:
        tables = build_tables(cfg)
    aggregates: dict[Policy, ReplicationAggregate] = {}
    records: list[ResultRecord] = []
    for policy in policies:
        pol_cfg = replace(cfg, policy=policy)
        _, agg = run_replications(
            pol_cfg,
            n_reps,
            seed_stride=seed_stride,
            tables=tables if policy is Policy.WHITTLE else None,
        )
        aggregates[policy] = agg
        records.extend(_records_for(pol_cfg, policy, agg, n_reps))
    return aggregates, records


@dataclass(frozen=True)
class SweepPoint:
    value: int | None
    config: SystemConfig
    aggregates: dict[Policy, ReplicationAggregate]


def run_sweep(spec: ExperimentSpec) -> tuple[list[SweepPoint], list[ResultRecord]]:
    """Run every sweep point of an experiment; records in point order."""
    cache = _TableCache()
    points: list[SweepPoint] = []
    records: list[ResultRecord] = []
    for value, cfg in spec.resolve_points():
        tables = cache.tables_for(cfg) if Policy.WHITTLE in spec.policies else None
        aggs, recs = simulate_policies(
            cfg,
            policies=spec.policies,
            n_reps=spec.n_reps,
            seed_stride=spec.seed_stride,
            tables=tables,
        )
        points.append(SweepPoint(value=value, config=cfg, aggregates=aggs))
        records.extend(recs)
    return points, records


def sweep_summary(spec: ExperimentSpec, points: list[SweepPoint]) -> dict:
    """Machine-readable companion document for a sweep's records."""
    return {
        "experiment": spec.name,
        "sweep": spec.sweep,
        "n_reps": spec.n_reps,
        "seed_stride": spec.seed_stride,
        "policies": [p.value for p in spec.policies],
        "points": [
            {
                "value": pt.value,
                "fingerprint": fingerprint(pt.config),
                "num_users": pt.config.num_users,
                "num_beams": pt.config.num_beams,
                "seed": pt.config.seed,
                "metrics": {
                    pol.value: {
                        "avg_cost": {
                            "mean": agg.avg_cost.mean,
                            "ci_half_width": agg.avg_cost.ci_half_width,
                        },
                        "avg_delay": {
                            "mean": agg.avg_delay.mean,
                            "ci_half_width": agg.avg_delay.ci_half_width,
                        },
                        "avg_active_beams": {
                            "mean": agg.avg_active_beams.mean,
                            "ci_half_width": agg.avg_active_beams.ci_half_width,
                        },
                    }
                    for pol, agg in pt.aggregates.items()
                },
            }
            for pt in points
        ],
    }
