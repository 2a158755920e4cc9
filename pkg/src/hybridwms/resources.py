"""Simulated grid resource pool: time-varying load metrics, allocation cost,
ranking, and resource quorum generation.

Every metric evaluation is a pure function of (trace fields, t); noise is
counter-based (hash of seed and quantized t), so evaluation order can never
change a result.
"""

from __future__ import annotations

import hashlib
import math
import random
import struct
from dataclasses import dataclass

from . import documents as doc
from .errors import EmptyPool

LEVELS = ("L1", "L2", "L3")
_LEVEL_FRACTION = {"L1": 0.25, "L2": 0.5, "L3": 1.0}

#: Sentinel level for policy-driven random selection: a quorum of the same
#: size as L1 whose members are drawn uniformly instead of by cost rank.
RANDOM_LEVEL = "RANDOM"

_NOISE_TICKS_PER_SECOND = 1000  # noise value is constant within 1 ms


def _unit_normal(seed: int, t: float) -> float:
    """Deterministic standard normal derived from (seed, quantized t)."""
    tick = round(t * _NOISE_TICKS_PER_SECOND)
    raw = struct.pack("<Qq", seed & 0xFFFFFFFFFFFFFFFF, tick)
    digest = hashlib.blake2b(raw, digest_size=16).digest()
    a, b = struct.unpack("<QQ", digest)
    u1 = (a + 1) / 2.0**64  # (0, 1], keeps log finite
    u2 = b / 2.0**64
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class MetricTrace:
    base: float
    amplitude: float = 0.0
    period: float = 3600.0
    phase: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.base <= 1.0:
            raise ValueError("base must be in [0, 1]")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.period <= 0:
            raise ValueError("period must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def metric_at(trace: MetricTrace, t: float) -> float:
    """Evaluate a load trace at time t, clamped to [0, 1]."""
    value = trace.base + trace.amplitude * math.sin(2.0 * math.pi * t / trace.period + trace.phase)
    if trace.noise_sigma > 0:
        value += _unit_normal(trace.seed, t) * trace.noise_sigma
    return min(1.0, max(0.0, value))


@dataclass(frozen=True)
class AllocationCostParams:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("weights must be >= 0")
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be > 0")


@dataclass(frozen=True)
class ResourceDescriptor:
    id: str
    site: str
    cpu_rate: float  # work units per second
    net_trace: MetricTrace
    sys_trace: MetricTrace
    bandwidth: float  # bytes per second
    latency: float  # seconds

    def __post_init__(self):
        if self.cpu_rate <= 0:
            raise ValueError("cpu_rate must be > 0")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")


def allocation_cost(res: ResourceDescriptor, t: float, params: AllocationCostParams) -> float:
    """Weighted sum of the network and system load indicators at time t."""
    return params.alpha * metric_at(res.net_trace, t) + params.beta * metric_at(res.sys_trace, t)


def rank_resources(pool, t: float, params: AllocationCostParams) -> list[tuple[str, float]]:
    """Rank the pool ascending by allocation cost (lower cost performs better);
    ties break by ascending resource id."""
    if not pool:
        raise EmptyPool("cannot rank an empty pool")
    costs = [(res.id, allocation_cost(res, t, params)) for res in pool]
    return sorted(costs, key=lambda pair: (pair[1], pair[0]))


@dataclass(frozen=True)
class Quorum:
    level: str
    members: tuple[str, ...]  # ascending allocation cost at decided_at
    decided_at: float


def quorum_size(n: int, fraction: float) -> int:
    if fraction >= 1.0:
        return n
    return min(n, max(math.ceil(fraction * n), 2))


def generate_arq(pool, level: str, t: float, params: AllocationCostParams) -> Quorum:
    """Generate the available resource quorum for a resource level.

    L1 holds the top ceil(25%) of the ranking, L2 the top ceil(50%), L3 the
    whole pool; L1 and L2 never shrink below two members when the pool has at
    least two. Higher levels therefore contain every lower level.
    """
    if not pool:
        raise EmptyPool("cannot form a quorum from an empty pool")
    if level not in LEVELS:
        raise ValueError(f"unknown resource level {level!r}")
    ranking = rank_resources(pool, t, params)
    size = quorum_size(len(ranking), _LEVEL_FRACTION[level])
    return Quorum(level, tuple(rid for rid, _ in ranking[:size]), t)


def random_quorum(pool, t: float, params: AllocationCostParams, seed: int) -> Quorum:
    """Quorum of L1 size whose members are drawn uniformly, not by rank.

    Models resource selection without a resource policy. Members are still
    listed ascending by cost so downstream consumers see the usual ordering.
    """
    if not pool:
        raise EmptyPool("cannot form a quorum from an empty pool")
    size = quorum_size(len(pool), _LEVEL_FRACTION["L1"])
    rng = random.Random(seed)
    chosen = set(rng.sample([res.id for res in pool], size))
    ranked = [rid for rid, _ in rank_resources(pool, t, params) if rid in chosen]
    return Quorum(RANDOM_LEVEL, tuple(ranked), t)


@dataclass(frozen=True)
class CostTable:
    resource_ids: tuple[str, ...]  # rank order at t=0
    rows: tuple[tuple[float, ...], ...]  # one row per hour
    samples_per_hour: int


def hour_instants(hour: int, samples_per_hour: int) -> list[float]:
    step = 3600.0 / samples_per_hour
    return [hour * 3600.0 + k * step for k in range(samples_per_hour)]


def average_cost_table(pool, horizon: int, samples_per_hour: int, params: AllocationCostParams) -> CostTable:
    """Mean allocation cost per hour for the six top-ranked resources.

    Ranking is taken at t=0; pools of six or fewer keep every resource.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1 hour")
    if samples_per_hour < 1:
        raise ValueError("samples_per_hour must be >= 1")
    ranking = rank_resources(pool, 0.0, params)
    ids = [rid for rid, _ in ranking[:6]] if len(ranking) > 6 else [rid for rid, _ in ranking]
    by_id = {res.id: res for res in pool}
    rows = []
    for hour in range(horizon):
        instants = hour_instants(hour, samples_per_hour)
        row = []
        for rid in ids:
            res = by_id[rid]
            row.append(sum(allocation_cost(res, t, params) for t in instants) / len(instants))
        rows.append(tuple(row))
    return CostTable(tuple(ids), tuple(rows), samples_per_hour)


def cost_table_csv(table: CostTable) -> str:
    lines = ["hour," + ",".join(table.resource_ids)]
    for hour, row in enumerate(table.rows):
        lines.append(f"{hour}," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def quorum_grid_mean(pool, quorum: Quorum, horizon: int, samples_per_hour: int, params: AllocationCostParams) -> float:
    """Mean allocation cost of a quorum's members over the full hour grid."""
    by_id = {res.id: res for res in pool}
    total = 0.0
    count = 0
    for hour in range(horizon):
        for t in hour_instants(hour, samples_per_hour):
            for rid in quorum.members:
                total += allocation_cost(by_id[rid], t, params)
                count += 1
    return total / count


def parse_trace(raw: dict, path: str) -> MetricTrace:
    doc.reject_unknown(raw, {"base", "amplitude", "period", "phase", "noise_sigma", "seed"}, path)
    base = doc.get_number(raw, "base", path)
    trace = dict(
        base=base,
        amplitude=doc.get_number(raw, "amplitude", path) if "amplitude" in raw else 0.0,
        period=doc.get_number(raw, "period", path) if "period" in raw else 3600.0,
        phase=doc.get_number(raw, "phase", path) if "phase" in raw else 0.0,
        noise_sigma=doc.get_number(raw, "noise_sigma", path) if "noise_sigma" in raw else 0.0,
        seed=doc.get_int(raw, "seed", path) if "seed" in raw else 0,
    )
    try:
        return MetricTrace(**trace)
    except ValueError as exc:
        raise doc.SchemaError(path, str(exc)) from exc


def parse_pool(document) -> list[ResourceDescriptor]:
    """Parse a resource pool document (JSON array of resource records)."""
    raw_pool = doc.require_list(document, "pool")
    pool = []
    seen = set()
    for i, raw in enumerate(raw_pool):
        path = f"pool[{i}]"
        record = doc.require_mapping(raw, path)
        doc.reject_unknown(record, {"id", "site", "cpu_rate", "bandwidth", "latency", "net_trace", "sys_trace"}, path)
        rid = doc.get_str(record, "id", path)
        if rid in seen:
            raise doc.SchemaError(f"{path}.id", f"duplicate resource id {rid!r}")
        seen.add(rid)
        try:
            pool.append(
                ResourceDescriptor(
                    id=rid,
                    site=doc.get_str(record, "site", path),
                    cpu_rate=doc.get_number(record, "cpu_rate", path),
                    net_trace=parse_trace(doc.require_mapping(doc.get_required(record, "net_trace", path), f"{path}.net_trace"), f"{path}.net_trace"),
                    sys_trace=parse_trace(doc.require_mapping(doc.get_required(record, "sys_trace", path), f"{path}.sys_trace"), f"{path}.sys_trace"),
                    bandwidth=doc.get_number(record, "bandwidth", path),
                    latency=doc.get_number(record, "latency", path),
                )
            )
        except ValueError as exc:
            raise doc.SchemaError(path, str(exc)) from exc
    return pool
