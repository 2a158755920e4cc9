"""Low-level grid engine: catalog generation, workflow mapping, execution.

An abstract sub-workflow (tasks, data edges, input files) is mapped onto the
members of a resource quorum by a pluggable scheduler, producing a concrete
plan with per-task time estimates and the transfers needed to stage data.
Execution replays the plan on the event kernel; the estimator and the kernel
share one timing model, so estimates are exact for the default scheduler.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import InfeasibleMapping, UnknownStrategy
from .resources import Quorum, ResourceDescriptor
from .simkernel import (
    PlannedTask,
    PlannedTransfer,
    SimResult,
    Simulation,
    TaskRecord,
    exec_time,
    transfer_time,
)
from .workflow import AbstractSubWorkflow, topological_order

SCHEDULER_KINDS = ("MinEFT", "RoundRobin", "Random")


@dataclass(frozen=True)
class Catalogs:
    """Deployment catalogs derived from a sub-workflow and a quorum."""

    transformations: tuple[tuple[str, str], ...]  # (transformation, resource id)
    replicas: tuple[tuple[str, str], ...]  # (file, resource id)
    sites: tuple[tuple[str, tuple[str, ...]], ...]  # (site, member ids)

    def resources_with(self, transformation: str) -> tuple[str, ...]:
        return tuple(rid for name, rid in self.transformations if name == transformation)

    def replica_of(self, file: str) -> str:
        for name, rid in self.replicas:
            if name == file:
                return rid
        raise KeyError(file)

    def as_document(self) -> dict:
        return {
            "transformations": [{"transformation": t, "resource": r} for t, r in self.transformations],
            "replicas": [{"file": f, "resource": r} for f, r in self.replicas],
            "sites": [{"site": s, "members": list(m)} for s, m in self.sites],
        }


def generate_catalogs(subwf: AbstractSubWorkflow, quorum: Quorum, pool: dict[str, ResourceDescriptor]) -> Catalogs:
    """Build transformation, replica and site catalogs for a mapping round.

    Every distinct transformation is installed on every quorum member, and
    every input file has exactly one replica on the first (best ranked)
    member, which acts as the submit host.
    """
    names = sorted({t.transformation for t in subwf.tasks})
    member_ids = list(quorum.members)
    transformations = tuple((name, rid) for name in names for rid in member_ids)
    submit_host = member_ids[0]
    replicas = tuple((file, submit_host) for file, _, _ in subwf.inputs)
    by_site: dict[str, list[str]] = {}
    for rid in member_ids:
        by_site.setdefault(pool[rid].site, []).append(rid)
    sites = tuple((site, tuple(sorted(ids))) for site, ids in sorted(by_site.items()))
    return Catalogs(transformations, replicas, sites)


@dataclass(frozen=True)
class ConcretePlan:
    subworkflow_id: str
    scheduler: str
    quorum_level: str
    assignments: tuple[PlannedTask, ...]  # topological order
    dependencies: tuple[tuple[str, str, float], ...]
    transfers: tuple[PlannedTransfer, ...]  # stage-ins only; runtime edges derive from deps
    estimates: tuple[TaskRecord, ...]  # same order as assignments
    makespan_estimate: float

    def assignment_of(self, task_id: str) -> str:
        for planned in self.assignments:
            if planned.task_id == task_id:
                return planned.resource_id
        raise KeyError(task_id)

    def as_document(self) -> dict:
        return {
            "subworkflow": self.subworkflow_id,
            "scheduler": self.scheduler,
            "quorum_level": self.quorum_level,
            "assignments": [
                {"task": p.task_id, "resource": p.resource_id, "work": p.work} for p in self.assignments
            ],
            "transfers": [
                {
                    "file": t.file,
                    "from": t.src_resource,
                    "to": t.dst_resource,
                    "bytes": t.size_bytes,
                    "consumer": t.consumer,
                }
                for t in self.transfers
            ],
            "estimates": [
                {"task": e.task_id, "resource": e.resource_id, "start": e.start, "end": e.end}
                for e in self.estimates
            ],
            "makespan_estimate": self.makespan_estimate,
        }


class _Estimator:
    """Shared timing recurrence for candidate evaluation and final estimates.

    Mirrors the kernel exactly: single-slot resources served in plan order,
    transfers starting at producer end, stage-ins starting at time zero.
    """

    def __init__(self, subwf: AbstractSubWorkflow, pool: dict[str, ResourceDescriptor], replica_host: str):
        self._subwf = subwf
        self._pool = pool
        self._replica_host = replica_host
        self._avail: dict[str, float] = {}
        self._end: dict[str, float] = {}
        self._placed: dict[str, str] = {}
        self._stage_ins = {}
        for file, size, consumer in subwf.inputs:
            self._stage_ins.setdefault(consumer, []).append((file, size))
        self._deps_into = {}
        for producer, consumer, size in subwf.data_deps:
            self._deps_into.setdefault(consumer, []).append((producer, size))

    def ready_time(self, task_id: str, resource_id: str) -> float:
        resource = self._pool[resource_id]
        ready = 0.0
        for _, size in self._stage_ins.get(task_id, ()):
            if resource_id != self._replica_host:
                ready = max(ready, transfer_time(size, self._pool[self._replica_host], resource))
        for producer, size in self._deps_into.get(task_id, ()):
            arrival = self._end[producer]
            src = self._placed[producer]
            if src != resource_id:
                arrival += transfer_time(size, self._pool[src], resource)
            ready = max(ready, arrival)
        return ready

    def finish_time(self, task_id: str, work: float, resource_id: str) -> tuple[float, float, float]:
        ready = self.ready_time(task_id, resource_id)
        start = max(ready, self._avail.get(resource_id, 0.0))
        end = start + exec_time(work, self._pool[resource_id], start)
        return ready, start, end

    def commit(self, task_id: str, resource_id: str, end: float) -> None:
        self._placed[task_id] = resource_id
        self._end[task_id] = end
        self._avail[resource_id] = end


def map_workflow(
    subwf: AbstractSubWorkflow,
    quorum: Quorum,
    pool: dict[str, ResourceDescriptor],
    scheduler: str = "MinEFT",
    seed: int = 0,
    catalogs: Catalogs | None = None,
) -> ConcretePlan:
    """Assign every task of the sub-workflow to a quorum member.

    ``MinEFT`` greedily minimizes each task's estimated finish time (ties go
    to the lowest resource id), ``RoundRobin`` cycles through the quorum in
    rank order, and ``Random`` draws uniformly from the eligible members
    using the given seed.
    """
    if scheduler not in SCHEDULER_KINDS:
        raise UnknownStrategy(f"unknown scheduler {scheduler!r}")
    member_ids = list(quorum.members)
    missing = [m for m in member_ids if m not in pool]
    if missing:
        raise InfeasibleMapping(f"quorum members absent from pool: {missing}")
    if catalogs is None:
        catalogs = generate_catalogs(subwf, quorum, pool)
    replica_host = member_ids[0]

    order = topological_order(subwf)
    tasks = {t.id: t for t in subwf.tasks}
    estimator = _Estimator(subwf, pool, replica_host)
    rng = random.Random(seed)

    assignments = []
    estimates = []
    for index, task_id in enumerate(order):
        task = tasks[task_id]
        eligible = [rid for rid in member_ids if rid in catalogs.resources_with(task.transformation)]
        if not eligible:
            raise InfeasibleMapping(f"no resource provides transformation {task.transformation!r}")
        if scheduler == "MinEFT":
            best = None
            for rid in sorted(eligible):
                ready, start, end = estimator.finish_time(task_id, task.work, rid)
                if best is None or end < best[3]:
                    best = (rid, ready, start, end)
            rid, ready, start, end = best
        else:
            if scheduler == "RoundRobin":
                rid = member_ids[index % len(member_ids)]
                if rid not in eligible:
                    raise InfeasibleMapping(f"resource {rid!r} lacks transformation {task.transformation!r}")
            else:
                rid = eligible[rng.randrange(len(eligible))]
            ready, start, end = estimator.finish_time(task_id, task.work, rid)
        estimator.commit(task_id, rid, end)
        assignments.append(PlannedTask(task_id, task.work, rid))
        estimates.append(TaskRecord(task_id, rid, ready, start, end))

    placed = {p.task_id: p.resource_id for p in assignments}
    transfers = tuple(
        PlannedTransfer(
            file=file,
            src_resource=replica_host,
            dst_resource=placed[consumer],
            size_bytes=size,
            consumer=consumer,
            producer=None,
        )
        for file, size, consumer in subwf.inputs
        if placed[consumer] != replica_host
    )
    makespan = max((e.end for e in estimates), default=0.0)
    return ConcretePlan(
        subworkflow_id=subwf.id,
        scheduler=scheduler,
        quorum_level=quorum.level,
        assignments=tuple(assignments),
        dependencies=tuple(subwf.data_deps),
        transfers=transfers,
        estimates=tuple(estimates),
        makespan_estimate=makespan,
    )


@dataclass(frozen=True)
class SubWorkflowResult:
    plan: ConcretePlan
    sim: SimResult

    @property
    def makespan(self) -> float:
        return self.sim.makespan

    def as_document(self) -> dict:
        return {
            "plan": self.plan.as_document(),
            "tasks": [
                {
                    "task": r.task_id,
                    "resource": r.resource_id,
                    "ready": r.ready,
                    "start": r.start,
                    "end": r.end,
                }
                for r in self.sim.tasks
            ],
            "transfers": [
                {
                    "file": r.file,
                    "from": r.src_resource,
                    "to": r.dst_resource,
                    "bytes": r.size_bytes,
                    "start": r.start,
                    "end": r.end,
                }
                for r in self.sim.transfers
            ],
            "makespan": self.sim.makespan,
        }


def execute_plan(plan: ConcretePlan, pool: dict[str, ResourceDescriptor]) -> SubWorkflowResult:
    """Run a concrete plan on the event kernel."""
    sim = Simulation(
        plan=list(plan.assignments),
        dependencies=list(plan.dependencies),
        transfers=list(plan.transfers),
        resources=pool,
    )
    return SubWorkflowResult(plan=plan, sim=sim.run_to_completion())
