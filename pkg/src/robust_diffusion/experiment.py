"""Declarative experiment configs, sweep execution, and CSV persistence.

A config is one YAML mapping with a ``schema_version`` field. Parsing is
strict: unknown keys anywhere are errors carrying the offending path, and
every value is type- and range-checked, so a typo cannot silently change a
sweep. Given the master seed, running a config is a pure function; the CSV
it produces is byte-identical across repeat runs and across worker counts.

CSV contract (one row per sweep cell, Monte-Carlo run, and iteration)::

    sweep_value, run, iteration, msd, malicious_weight_mass, assumption_ok

Floats are serialized with 17 significant digits; ``assumption_ok`` is
``true``/``false``. Wall-clock timestamps only ever go to the metadata
sidecar, never the CSV.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .aggregate import AggregatorSpec
from .estimators import (
    DEFAULT_HUBER_K,
    DEFAULT_TUKEY_C,
    IrlsSettings,
    LossFamily,
    LossSpec,
)
from .network import (
    AssumptionViolationError,
    CombinationMatrix,
    Topology,
    TopologyKind,
    build_topology,
    uniform_combination,
    validate_assumption1,
)
from .simulate import (
    DEFAULT_EPSILON,
    AttackKind,
    AttackSpec,
    LinearModelTask,
    Trace,
    run_diffusion,
    steady_state_msd,
    task_vector_stream,
)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("sweep_value", "run", "iteration", "msd", "malicious_weight_mass", "assumption_ok")
STEADY_WINDOW_FRAC = 0.1


class ConfigError(ValueError):
    """Invalid experiment configuration; message starts with the field path."""


# ---------------------------------------------------------------------------
# config model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskConfig:
    dim: int = 10
    noise_var: float = 0.01
    w_true: str | tuple[float, ...] = "gaussian"


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "fully_connected"
    agents: int = 32
    edge_prob: float | None = None
    graph_seed: int | None = None


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "none"
    delta: float | None = None
    gain: float | None = None
    replacement: tuple[float, ...] | None = None
    malicious: tuple[int, ...] = ()


@dataclass(frozen=True)
class AggregatorConfig:
    rule: str = "mean"
    loss: str | None = None
    tuning: float | None = None
    trim_fraction: float | None = None
    irls_max_iters: int = 100
    irls_tol: float = 1e-10
    irls_scale_floor: float = 1e-9


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "none"
    values: tuple[float, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    mu: float
    iterations: int
    runs: int = 5
    epsilon: float = DEFAULT_EPSILON
    task: TaskConfig = TaskConfig()
    topology: TopologyConfig = TopologyConfig()
    attack: AttackConfig = AttackConfig()
    aggregator: AggregatorConfig = AggregatorConfig()
    sweep: SweepConfig = SweepConfig()
    output_dir: str = "results"


# ---------------------------------------------------------------------------
# strict parsing
# ---------------------------------------------------------------------------


class _Section:
    """A mapping being consumed key by key; leftovers are errors."""

    def __init__(self, data, path: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
        self.data = dict(data)
        self.path = path

    def pop(self, key, default=None, required=False):
        if key in self.data:
            return self.data.pop(key)
        if required:
            raise ConfigError(f"{self.path}.{key}: required key is missing")
        return default

    def child(self, key) -> "_Section":
        return _Section(self.pop(key), f"{self.path}.{key}")

    def finish(self):
        if self.data:
            stray = sorted(self.data)[0]
            raise ConfigError(f"{self.path}.{stray}: unknown key")


def _as_int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _as_float(value, path, minimum=None, below=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(f"{path}: must be finite, got {value}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    if below is not None and value >= below:
        raise ConfigError(f"{path}: must be < {below}, got {value}")
    return value


def _as_choice(value, path, choices):
    if value not in choices:
        raise ConfigError(f"{path}: expected one of {sorted(choices)}, got {value!r}")
    return value


def _as_float_list(value, path):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{path}: expected a non-empty list of numbers")
    return tuple(_as_float(v, f"{path}[{i}]") for i, v in enumerate(value))


def _parse_task(section: _Section) -> TaskConfig:
    dim = _as_int(section.pop("dim", 10), f"{section.path}.dim", minimum=1)
    noise_var = _as_float(section.pop("noise_var", 0.01), f"{section.path}.noise_var", minimum=0.0)
    w_raw = section.pop("w_true", "gaussian")
    if isinstance(w_raw, str):
        w_true = _as_choice(w_raw, f"{section.path}.w_true", {"gaussian", "gaussian_unit", "ones"})
    else:
        w_true = _as_float_list(w_raw, f"{section.path}.w_true")
        if len(w_true) != dim:
            raise ConfigError(
                f"{section.path}.w_true: expected {dim} entries, got {len(w_true)}"
            )
    section.finish()
    return TaskConfig(dim=dim, noise_var=noise_var, w_true=w_true)


def _parse_topology(section: _Section) -> TopologyConfig:
    kind = _as_choice(
        section.pop("kind", "fully_connected"),
        f"{section.path}.kind",
        {k.value for k in TopologyKind},
    )
    agents = _as_int(section.pop("agents", 32), f"{section.path}.agents", minimum=1)
    edge_prob = section.pop("edge_prob")
    graph_seed = section.pop("graph_seed")
    if kind == "erdos_renyi":
        if edge_prob is None:
            raise ConfigError(f"{section.path}.edge_prob: required for erdos_renyi")
        edge_prob = _as_float(edge_prob, f"{section.path}.edge_prob", minimum=0.0)
        if edge_prob > 1:
            raise ConfigError(f"{section.path}.edge_prob: must be <= 1")
        if graph_seed is None:
            raise ConfigError(f"{section.path}.graph_seed: required for erdos_renyi")
        graph_seed = _as_int(graph_seed, f"{section.path}.graph_seed")
    else:
        if edge_prob is not None:
            raise ConfigError(f"{section.path}.edge_prob: only valid for erdos_renyi")
        if graph_seed is not None:
            raise ConfigError(f"{section.path}.graph_seed: only valid for erdos_renyi")
    section.finish()
    return TopologyConfig(kind=kind, agents=agents, edge_prob=edge_prob, graph_seed=graph_seed)


def _parse_attack(section: _Section, agents: int) -> AttackConfig:
    kind = _as_choice(
        section.pop("kind", "none"), f"{section.path}.kind", {k.value for k in AttackKind}
    )
    delta = section.pop("delta")
    gain = section.pop("gain")
    replacement = section.pop("replacement")
    if kind == "additive_shift":
        if delta is None:
            raise ConfigError(f"{section.path}.delta: required for additive_shift")
        delta = _as_float(delta, f"{section.path}.delta")
    elif delta is not None:
        raise ConfigError(f"{section.path}.delta: only valid for additive_shift")
    if kind == "sign_flip":
        if gain is None:
            raise ConfigError(f"{section.path}.gain: required for sign_flip")
        gain = _as_float(gain, f"{section.path}.gain")
    elif gain is not None:
        raise ConfigError(f"{section.path}.gain: only valid for sign_flip")
    if kind == "value_replace":
        if replacement is None:
            raise ConfigError(f"{section.path}.replacement: required for value_replace")
        replacement = _as_float_list(replacement, f"{section.path}.replacement")
    elif replacement is not None:
        raise ConfigError(f"{section.path}.replacement: only valid for value_replace")

    raw = section.pop("malicious", 0)
    path = f"{section.path}.malicious"
    if isinstance(raw, (list, tuple)):
        idx = tuple(sorted(_as_int(v, f"{path}[{i}]", minimum=0) for i, v in enumerate(raw)))
        if len(set(idx)) != len(idx):
            raise ConfigError(f"{path}: duplicate agent indices")
    else:
        count = _as_int(raw, path, minimum=0)
        idx = tuple(range(count))
    if any(i >= agents for i in idx):
        raise ConfigError(f"{path}: index out of range for {agents} agents")
    if len(idx) >= agents:
        raise ConfigError(f"{path}: at least one agent must remain benign")
    section.finish()
    return AttackConfig(kind=kind, delta=delta, gain=gain, replacement=replacement, malicious=idx)


_RULES = {
    "mean",
    "coordinate_median",
    "trimmed_mean",
    "geometric_median",
    "m_estimator",
    "mm_estimator",
}


def _parse_aggregator(section: _Section) -> AggregatorConfig:
    rule = _as_choice(section.pop("rule", required=True), f"{section.path}.rule", _RULES)
    loss = section.pop("loss")
    tuning = section.pop("tuning")
    trim = section.pop("trim_fraction")
    if rule in ("m_estimator", "mm_estimator"):
        if loss is None:
            raise ConfigError(f"{section.path}.loss: required for {rule}")
        loss = _as_choice(loss, f"{section.path}.loss", {f.value for f in LossFamily})
        if tuning is not None:
            tuning = _as_float(tuning, f"{section.path}.tuning", minimum=0.0)
            if tuning == 0.0:
                raise ConfigError(f"{section.path}.tuning: must be positive")
    else:
        if loss is not None:
            raise ConfigError(f"{section.path}.loss: only valid for m/mm estimators")
        if tuning is not None:
            raise ConfigError(f"{section.path}.tuning: only valid for m/mm estimators")
    if rule == "trimmed_mean":
        if trim is None:
            raise ConfigError(f"{section.path}.trim_fraction: required for trimmed_mean")
        trim = _as_float(trim, f"{section.path}.trim_fraction", minimum=0.0, below=0.5)
    elif trim is not None:
        raise ConfigError(f"{section.path}.trim_fraction: only valid for trimmed_mean")
    irls = section.child("irls")
    max_iters = _as_int(irls.pop("max_iters", 100), f"{irls.path}.max_iters", minimum=1)
    tol = _as_float(irls.pop("tol", 1e-10), f"{irls.path}.tol")
    scale_floor = _as_float(irls.pop("scale_floor", 1e-9), f"{irls.path}.scale_floor")
    if tol <= 0:
        raise ConfigError(f"{irls.path}.tol: must be positive")
    if scale_floor <= 0:
        raise ConfigError(f"{irls.path}.scale_floor: must be positive")
    irls.finish()
    section.finish()
    return AggregatorConfig(
        rule=rule,
        loss=loss,
        tuning=tuning,
        trim_fraction=trim,
        irls_max_iters=max_iters,
        irls_tol=tol,
        irls_scale_floor=scale_floor,
    )


def _parse_sweep(section: _Section, attack: AttackConfig, agents: int) -> SweepConfig:
    axis = _as_choice(section.pop("axis", "none"), f"{section.path}.axis", {"none", "strength", "rate"})
    raw_values = section.pop("values")
    if axis == "none":
        if raw_values is not None:
            raise ConfigError(f"{section.path}.values: only valid when axis is not none")
        section.finish()
        return SweepConfig(axis=axis, values=())
    if raw_values is None:
        raise ConfigError(f"{section.path}.values: required for a {axis} sweep")
    values = _as_float_list(raw_values, f"{section.path}.values")
    if axis == "strength":
        if attack.kind != "additive_shift":
            raise ConfigError(
                f"{section.path}.axis: a strength sweep requires attack.kind additive_shift"
            )
        if not attack.malicious:
            raise ConfigError(
                f"{section.path}.axis: a strength sweep needs at least one malicious agent"
            )
    else:
        for i, v in enumerate(values):
            if not 0 <= v < 1:
                raise ConfigError(f"{section.path}.values[{i}]: rate must lie in [0, 1)")
            if round(v * agents) >= agents:
                raise ConfigError(
                    f"{section.path}.values[{i}]: rate leaves no benign agent"
                )
    section.finish()
    return SweepConfig(axis=axis, values=values)


def parse_config(data, source: str = "config") -> ExperimentConfig:
    """Parse and validate a raw mapping into an ExperimentConfig."""
    root = _Section(data, source)
    version = _as_int(root.pop("schema_version", required=True), f"{source}.schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{source}.schema_version: expected {SCHEMA_VERSION}, got {version}")
    seed = _as_int(root.pop("seed", required=True), f"{source}.seed")
    mu = _as_float(root.pop("mu", required=True), f"{source}.mu")
    if mu <= 0:
        raise ConfigError(f"{source}.mu: must be positive")
    iterations = _as_int(root.pop("iterations", required=True), f"{source}.iterations", minimum=1)
    runs = _as_int(root.pop("runs", 5), f"{source}.runs", minimum=1)
    epsilon = _as_float(root.pop("epsilon", DEFAULT_EPSILON), f"{source}.epsilon", minimum=0.0, below=0.5)
    task = _parse_task(root.child("task"))
    topology = _parse_topology(root.child("topology"))
    attack = _parse_attack(root.child("attack"), topology.agents)
    aggregator = _parse_aggregator(root.child("aggregator"))
    sweep = _parse_sweep(root.child("sweep"), attack, topology.agents)
    out = root.child("output")
    output_dir = out.pop("directory", "results")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError(f"{out.path}.directory: expected a non-empty string")
    out.finish()
    root.finish()
    return ExperimentConfig(
        seed=seed,
        mu=mu,
        iterations=iterations,
        runs=runs,
        epsilon=epsilon,
        task=task,
        topology=topology,
        attack=attack,
        aggregator=aggregator,
        sweep=sweep,
        output_dir=output_dir,
    )


def load_config(path) -> ExperimentConfig:
    """Load and validate a YAML experiment config."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from e
    return parse_config(raw, source=path.name)


# ---------------------------------------------------------------------------
# runtime construction
# ---------------------------------------------------------------------------


def build_task(cfg: ExperimentConfig) -> LinearModelTask:
    """Materialize the task; a generated w_true is drawn from the dedicated
    stream of the master seed so it is stable across runs and sweeps."""
    tc = cfg.task
    if isinstance(tc.w_true, tuple):
        w = np.asarray(tc.w_true, dtype=np.float64)
    elif tc.w_true == "ones":
        w = np.ones(tc.dim)
    else:
        w = task_vector_stream(cfg.seed).standard_normal(tc.dim)
        if tc.w_true == "gaussian_unit":
            w = w / np.linalg.norm(w)
    return LinearModelTask(dim=tc.dim, w_true=w, noise_var=tc.noise_var)


def build_aggregator(cfg: AggregatorConfig) -> AggregatorSpec:
    irls = IrlsSettings(
        max_iters=cfg.irls_max_iters, tol=cfg.irls_tol, scale_floor=cfg.irls_scale_floor
    )
    rule = cfg.rule
    if rule == "mean":
        return AggregatorSpec.mean()
    if rule == "coordinate_median":
        return AggregatorSpec.coordinate_median()
    if rule == "trimmed_mean":
        return AggregatorSpec.trimmed_mean(cfg.trim_fraction)
    if rule == "geometric_median":
        return AggregatorSpec.geometric_median(irls=irls)
    family = LossFamily(cfg.loss)
    tuning = cfg.tuning
    if tuning is None:
        tuning = {
            LossFamily.HUBER: DEFAULT_HUBER_K,
            LossFamily.TUKEY_BISQUARE: DEFAULT_TUKEY_C,
        }.get(family, 1.0)
    loss = LossSpec(family, tuning)
    if rule == "m_estimator":
        return AggregatorSpec.m_estimator(loss=loss, irls=irls)
    return AggregatorSpec.mm_estimator(loss=loss, irls=irls)


def _build_attack(cfg: AttackConfig, delta_override: float | None = None) -> AttackSpec:
    kind = AttackKind(cfg.kind)
    if delta_override is not None:
        return AttackSpec.additive_shift(delta_override)
    if kind is AttackKind.NONE:
        return AttackSpec.none()
    if kind is AttackKind.ADDITIVE_SHIFT:
        return AttackSpec.additive_shift(cfg.delta)
    if kind is AttackKind.SIGN_FLIP:
        return AttackSpec.sign_flip(cfg.gain)
    return AttackSpec.value_replace(cfg.replacement)


@dataclass(frozen=True)
class CellSpec:
    """One sweep cell: a sweep value plus the malicious set and attack."""

    sweep_value: float
    malicious: tuple[int, ...]
    attack: AttackSpec


def sweep_cells(cfg: ExperimentConfig) -> tuple[CellSpec, ...]:
    """Expand the sweep axis into concrete cells."""
    if cfg.sweep.axis == "strength":
        return tuple(
            CellSpec(v, cfg.attack.malicious, _build_attack(cfg.attack, delta_override=v))
            for v in cfg.sweep.values
        )
    if cfg.sweep.axis == "rate":
        cells = []
        for v in cfg.sweep.values:
            count = int(round(v * cfg.topology.agents))
            cells.append(CellSpec(v, tuple(range(count)), _build_attack(cfg.attack)))
        return tuple(cells)
    return (CellSpec(0.0, cfg.attack.malicious, _build_attack(cfg.attack)),)


def _cell_topology(cfg: ExperimentConfig, cell: CellSpec) -> tuple[Topology, CombinationMatrix]:
    topo = build_topology(
        TopologyKind(cfg.topology.kind),
        cfg.topology.agents,
        cell.malicious,
        edge_prob=cfg.topology.edge_prob,
        seed=cfg.topology.graph_seed,
    )
    return topo, uniform_combination(topo)


def _execute(args) -> Trace:
    cfg, cell, run_index = args
    task = build_task(cfg)
    topo, A = _cell_topology(cfg, cell)
    agg = build_aggregator(cfg.aggregator)
    return run_diffusion(
        task,
        topo,
        A,
        agg,
        mu=cfg.mu,
        iters=cfg.iterations,
        seed=cfg.seed,
        attack=cell.attack,
        run_index=run_index,
        epsilon=cfg.epsilon,
        override_assumption1=True,
        window_frac=STEADY_WINDOW_FRAC,
    )


# ---------------------------------------------------------------------------
# sweep execution
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    spec: CellSpec
    assumption_ok: bool
    traces: list[Trace]

    @property
    def steady_msd(self) -> float:
        return float(np.mean([steady_state_msd(t, STEADY_WINDOW_FRAC) for t in self.traces]))

    @property
    def steady_malicious_mass(self) -> float:
        vals = []
        for t in self.traces:
            n = max(1, int(np.ceil(STEADY_WINDOW_FRAC * t.malicious_mass.size)))
            vals.append(np.nanmean(t.malicious_mass[-n:]) if np.any(np.isfinite(t.malicious_mass[-n:])) else np.nan)
        return float(np.mean(vals))

    @property
    def diverged_runs(self) -> int:
        return sum(t.diverged for t in self.traces)


@dataclass
class SweepResult:
    axis: str
    cells: list[CellResult]

    @property
    def any_diverged(self) -> bool:
        return any(c.diverged_runs for c in self.cells)


def run_config(
    cfg: ExperimentConfig, *, jobs: int = 1, override_assumption1: bool = False
) -> SweepResult:
    """Execute every (cell, run) of a config and collect traces.

    The contamination check runs per cell before anything executes; a failing
    cell raises AssumptionViolationError unless overridden, in which case the
    cell is run and recorded with a failing verdict.
    """
    cells = sweep_cells(cfg)
    verdicts = []
    for cell in cells:
        topo, _ = _cell_topology(cfg, cell)
        report = validate_assumption1(topo, cfg.epsilon)
        if not report.passed and not override_assumption1:
            raise AssumptionViolationError(
                f"sweep cell {cell.sweep_value}: contamination assumption fails "
                f"(violating agents {report.violating_agents}, "
                f"benign connected: {report.benign_connected}); "
                "use --override-assumption1 to sweep past the breakdown regime"
            )
        verdicts.append(report.passed)

    payloads = [(cfg, cell, r) for cell in cells for r in range(cfg.runs)]
    if jobs <= 1:
        results = [_execute(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute, payloads, chunksize=1))

    out = []
    for idx, cell in enumerate(cells):
        traces = results[idx * cfg.runs : (idx + 1) * cfg.runs]
        out.append(CellResult(spec=cell, assumption_ok=verdicts[idx], traces=traces))
    return SweepResult(axis=cfg.sweep.axis, cells=out)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trace_csv(result: SweepResult, path) -> None:
    """Persist every per-iteration record under the documented CSV contract."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for cell in result.cells:
            ok = "true" if cell.assumption_ok else "false"
            sv = _fmt(cell.spec.sweep_value)
            for run, trace in enumerate(cell.traces):
                for i in range(trace.msd.size):
                    fh.write(
                        f"{sv},{run},{i + 1},{_fmt(trace.msd[i])},"
                        f"{_fmt(trace.malicious_mass[i])},{ok}\n"
                    )


def format_summary(result: SweepResult) -> str:
    """Per-cell steady-state table."""
    lines = [
        f"{'sweep_value':>12}  {'steady_msd':>13}  {'malicious_mass':>14}  "
        f"{'assumption':>10}  {'diverged':>8}"
    ]
    for cell in result.cells:
        lines.append(
            f"{cell.spec.sweep_value:>12.6g}  {cell.steady_msd:>13.6g}  "
            f"{cell.steady_malicious_mass:>14.6g}  "
            f"{'ok' if cell.assumption_ok else 'VIOLATED':>10}  "
            f"{cell.diverged_runs:>8d}"
        )
    return "\n".join(lines)


def write_metadata(cfg: ExperimentConfig, result: SweepResult, path, extra=None) -> None:
    """Sidecar with the config echo and a timestamp (kept out of the CSV so
    repeat runs stay byte-identical)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "created_unix": time.time(),
        "schema_version": SCHEMA_VERSION,
        "config": dataclasses.asdict(cfg),
        "axis": result.axis,
        "cells": [
            {
                "sweep_value": c.spec.sweep_value,
                "assumption_ok": c.assumption_ok,
                "steady_msd": c.steady_msd,
                "steady_malicious_mass": c.steady_malicious_mass,
                "diverged_runs": c.diverged_runs,
            }
            for c in result.cells
        ],
    }
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# rule comparison
# ---------------------------------------------------------------------------


@dataclass
class ComparisonRow:
    label: str
    steady_msd: float
    ratio_to_baseline: float


@dataclass
class ComparisonResult:
    baseline: str
    rows: list[ComparisonRow]


def _rule_label(cfg: ExperimentConfig) -> str:
    agg = cfg.aggregator
    if agg.rule in ("m_estimator", "mm_estimator"):
        return f"{agg.rule}[{agg.loss}]"
    if agg.rule == "trimmed_mean":
        return f"trimmed_mean[{agg.trim_fraction}]"
    return agg.rule


def compare_rules(
    cfgs, *, jobs: int = 1, override_assumption1: bool = False
) -> ComparisonResult:
    """Run configs that differ only in their aggregator and tabulate paired
    steady-state MSDs with ratios to the mean rule.

    Sharing the master seed means every rule sees identical data draws, so
    the comparison is paired by construction. Output directories are allowed
    to differ; any other discrepancy is an error.
    """
    cfgs = list(cfgs)
    if not cfgs:
        raise ConfigError("compare: need at least one config")
    base = replace(cfgs[0], aggregator=AggregatorConfig(), output_dir="")
    for c in cfgs[1:]:
        if replace(c, aggregator=AggregatorConfig(), output_dir="") != base:
            raise ConfigError(
                "compare: configs must be identical outside the aggregator section"
            )
    results = [run_config(c, jobs=jobs, override_assumption1=override_assumption1) for c in cfgs]
    msds = [float(np.mean([cell.steady_msd for cell in r.cells])) for r in results]
    labels = [_rule_label(c) for c in cfgs]
    try:
        base_idx = next(i for i, c in enumerate(cfgs) if c.aggregator.rule == "mean")
    except StopIteration:
        base_idx = 0
    rows = [
        ComparisonRow(label=l, steady_msd=m, ratio_to_baseline=m / msds[base_idx])
        for l, m in zip(labels, msds)
    ]
    return ComparisonResult(baseline=labels[base_idx], rows=rows)


def format_comparison(res: ComparisonResult) -> str:
    lines = [f"{'rule':>28}  {'steady_msd':>13}  {'ratio_to_' + res.baseline:>18}"]
    for row in res.rows:
        lines.append(
            f"{row.label:>28}  {row.steady_msd:>13.6g}  {row.ratio_to_baseline:>18.6g}"
        )
    return "\n".join(lines)


def write_comparison_csv(res: ComparisonResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("rule,steady_msd,ratio_to_baseline\n")
        for row in res.rows:
            fh.write(f"{row.label},{_fmt(row.steady_msd)},{_fmt(row.ratio_to_baseline)}\n")
