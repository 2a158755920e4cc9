"""Experiment harness: allocation-cost study and policy-comparison study.

Both studies are pure functions of their documents. The comparison study
runs the full engine once per (configuration, replicate) pair; rows are
sorted before writing so replicate execution order never shows in output.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from pathlib import Path

from . import documents as doc
from .engine import RunConfig, replace_seed, run_workflow
from .errors import RunError
from .policy import Policy, Sla, parse_repository, parse_sla
from .resources import (
    LEVELS,
    AllocationCostParams,
    ResourceDescriptor,
    average_cost_table,
    cost_table_csv,
    generate_arq,
    quorum_grid_mean,
)
from .workflow import AbstractSubWorkflow, WorkflowGraph, parse_subworkflow, parse_workflow


@dataclass(frozen=True)
class WorkflowBundle:
    """A workflow graph plus every sub-workflow its nodes reference."""

    graph: WorkflowGraph
    subworkflows: dict[str, AbstractSubWorkflow]


def load_workflow_bundle(path) -> WorkflowBundle:
    """Load a workflow document and its sibling ``<subworkflow-id>.json`` files."""
    path = Path(path)
    graph = parse_workflow(doc.load_json(path))
    subworkflows = {}
    for node in graph.nodes:
        sub_id = node.payload.get("subworkflow")
        if sub_id and sub_id not in subworkflows:
            subworkflows[sub_id] = parse_subworkflow(doc.load_json(path.parent / f"{sub_id}.json"))
    return WorkflowBundle(graph, subworkflows)


# --------------------------------------------------------------------------
# Experiment specification


@dataclass(frozen=True)
class PolicySetConfig:
    name: str
    sla: Sla
    extra_policies: tuple[Policy, ...] = ()


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str  # "cost_table" or "policy_comparison"
    replicates: int = 1
    base_seed: int = 0
    configs: tuple[PolicySetConfig, ...] = ()
    horizon: int = 24

    def __post_init__(self):
        if self.kind not in ("cost_table", "policy_comparison"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.kind == "policy_comparison" and len(self.configs) < 2:
            raise ValueError("policy comparison needs at least two configurations")


def parse_experiment_spec(document) -> ExperimentSpec:
    root = doc.require_mapping(document, "experiment")
    doc.reject_unknown(root, {"kind", "replicates", "base_seed", "configs", "horizon"}, "experiment")
    kind = doc.get_str(root, "kind", "experiment")
    replicates = doc.get_int(root, "replicates", "experiment") if "replicates" in root else 1
    base_seed = doc.get_int(root, "base_seed", "experiment") if "base_seed" in root else 0
    horizon = doc.get_int(root, "horizon", "experiment") if "horizon" in root else 24

    configs = []
    seen = set()
    for i, raw in enumerate(doc.require_list(root.get("configs", []), "experiment.configs")):
        path = f"experiment.configs[{i}]"
        record = doc.require_mapping(raw, path)
        doc.reject_unknown(record, {"name", "sla", "extra_policies"}, path)
        name = doc.get_str(record, "name", path)
        if name in seen:
            raise doc.SchemaError(f"{path}.name", f"duplicate configuration name {name!r}")
        seen.add(name)
        sla = parse_sla(doc.get_required(record, "sla", path))
        extra = tuple(parse_repository(record["extra_policies"])) if "extra_policies" in record else ()
        configs.append(PolicySetConfig(name=name, sla=sla, extra_policies=extra))

    try:
        return ExperimentSpec(
            kind=kind, replicates=replicates, base_seed=base_seed, configs=tuple(configs), horizon=horizon
        )
    except ValueError as exc:
        raise doc.SchemaError("experiment", str(exc)) from exc


# --------------------------------------------------------------------------
# Allocation-cost study


@dataclass(frozen=True)
class CostStudy:
    table_csv: str  # hour x resource table, six top-ranked columns
    quorum_csv: str  # per-level quorum mean over the same grid
    level_means: tuple[tuple[str, float], ...]

    @property
    def best_level(self) -> str:
        return min(self.level_means, key=lambda pair: (pair[1], pair[0]))[0]


def run_cost_study(
    pool: list[ResourceDescriptor],
    params: AllocationCostParams = AllocationCostParams(),
    horizon: int = 24,
    samples_per_hour: int = 60,
) -> CostStudy:
    """Hourly mean allocation cost per resource, plus per-level quorum means."""
    table = average_cost_table(pool, horizon, samples_per_hour, params)
    means = []
    for level in LEVELS:
        quorum = generate_arq(pool, level, 0.0, params)
        means.append((level, quorum_grid_mean(pool, quorum, horizon, samples_per_hour, params)))
    lines = ["level,mean_ac"]
    for level, mean in means:
        lines.append(f"{level},{mean:.6f}")
    return CostStudy(cost_table_csv(table), "\n".join(lines) + "\n", tuple(means))


# --------------------------------------------------------------------------
# Policy-comparison study


@dataclass(frozen=True)
class ComparisonRow:
    config: str
    replicate: int
    seed: int
    completion: float  # seconds, already rounded to the CSV precision


@dataclass(frozen=True)
class ComparisonSummary:
    config: str
    mean: float
    stddev: float
    min: float
    max: float


@dataclass(frozen=True)
class ComparisonResult:
    rows: tuple[ComparisonRow, ...]
    summaries: tuple[ComparisonSummary, ...]
    error: str | None = None  # extra CSV row describing the aborting run


def _summarize(rows: list[ComparisonRow]) -> tuple[ComparisonSummary, ...]:
    summaries = []
    for name in sorted({row.config for row in rows}):
        values = [row.completion for row in rows if row.config == name]
        summaries.append(
            ComparisonSummary(
                config=name,
                mean=statistics.fmean(values),
                stddev=statistics.pstdev(values),
                min=min(values),
                max=max(values),
            )
        )
    return tuple(summaries)


def run_policy_comparison(
    spec: ExperimentSpec,
    bundle: WorkflowBundle,
    pool: list[ResourceDescriptor],
    repo: list[Policy],
    run_config: RunConfig,
) -> ComparisonResult:
    """Run every configuration x replicate and collect completion times.

    Replicate r of every configuration uses seed base_seed + r, so paired
    replicates see the same patient. A failing run stops the study; rows
    completed so far are kept and the failure becomes an error row.
    """
    if spec.kind != "policy_comparison":
        raise ValueError("spec is not a policy comparison")
    rows: list[ComparisonRow] = []
    for config in spec.configs:
        for replicate in range(1, spec.replicates + 1):
            seed = spec.base_seed + replicate
            run_id = f"{config.name}-r{replicate}"
            try:
                record = run_workflow(
                    bundle.graph,
                    bundle.subworkflows,
                    pool,
                    list(repo) + list(config.extra_policies),
                    config.sla,
                    replace_seed(run_config, seed),
                    run_id=run_id,
                )
            except RunError as exc:
                rows.sort(key=lambda row: (row.config, row.replicate))
                error = f"{config.name},{replicate},{seed},ERROR"
                summaries = _summarize(rows) if rows else ()
                raise ComparisonAborted(ComparisonResult(tuple(rows), summaries, error), exc) from exc
            rows.append(ComparisonRow(config.name, replicate, seed, round(record.completion_time, 6)))
    rows.sort(key=lambda row: (row.config, row.replicate))
    return ComparisonResult(tuple(rows), _summarize(rows), None)


class ComparisonAborted(RunError):
    """A comparison run failed; carries the partial result for flushing."""

    def __init__(self, partial: ComparisonResult, cause: RunError):
        self.partial = partial
        super().__init__(cause.run_id, cause.cause)


def comparison_csv(result: ComparisonResult) -> str:
    lines = ["config,replicate,seed,completion_s"]
    for row in result.rows:
        lines.append(f"{row.config},{row.replicate},{row.seed},{row.completion:.6f}")
    if result.error is not None:
        lines.append(result.error)
    return "\n".join(lines) + "\n"


def summary_csv(result: ComparisonResult) -> str:
    lines = ["config,mean,stddev,min,max"]
    for s in result.summaries:
        lines.append(f"{s.config},{s.mean:.6f},{s.stddev:.6f},{s.min:.6f},{s.max:.6f}")
    return "\n".join(lines) + "\n"
