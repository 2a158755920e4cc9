"""Two-level workflow model.

The high level is a node graph interpreted locally (user interaction, data
retrieval, decisions, loops); compute-heavy steps are abstract sub-workflow
DAGs that get mapped onto grid resources by the low-level engine. Both levels
are parsed from strict JSON documents and are immutable after construction.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

from . import documents as doc
from .errors import CycleError, SchemaError


class NodeKind(str, Enum):
    LOCAL_TASK = "LocalTask"
    GRID_SUB_WORKFLOW = "GridSubWorkflow"
    DECISION = "Decision"
    LOOP = "Loop"
    DATA_RETRIEVAL = "DataRetrieval"
    USER_INPUT = "UserInput"
    TERMINAL = "Terminal"


#: Application service levels, cheapest first. Nodes tagged with a level are
#: included only when the selected service level is at least that high.
SERVICE_LEVELS = ("EcgOnly", "EcgDetect", "EcgVhs")


def service_rank(level: str) -> int:
    return SERVICE_LEVELS.index(level)


# Required / optional payload keys per node kind, validated at parse time.
_PAYLOAD_SCHEMA = {
    NodeKind.LOCAL_TASK: ({"function"}, set()),
    NodeKind.GRID_SUB_WORKFLOW: ({"subworkflow"}, {"produces"}),
    NodeKind.DECISION: ({"rule_table", "branches"}, set()),
    NodeKind.LOOP: ({"subworkflow", "max_iterations", "tolerance"}, {"back_edge"}),
    NodeKind.DATA_RETRIEVAL: ({"key"}, set()),
    NodeKind.USER_INPUT: ({"key"}, set()),
    NodeKind.TERMINAL: (set(), set()),
}


@dataclass(frozen=True, eq=True)
class Node:
    id: str
    kind: NodeKind
    payload: dict = field(default_factory=dict)

    def __hash__(self):
        return hash(self.id)

    @property
    def min_service(self) -> str:
        return self.payload.get("min_service", SERVICE_LEVELS[0])


@dataclass(frozen=True)
class WorkflowGraph:
    id: str
    nodes: tuple[Node, ...]
    edges: tuple[tuple[str, str], ...]
    entry: str

    def node(self, node_id: str) -> Node:
        return self._by_id[node_id]

    @property
    def _by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def successors(self, node_id: str) -> list[str]:
        return [dst for src, dst in self.edges if src == node_id]


@dataclass(frozen=True)
class TaskSpec:
    id: str
    work: float
    transformation: str


@dataclass(frozen=True)
class AbstractSubWorkflow:
    id: str
    tasks: tuple[TaskSpec, ...]
    data_deps: tuple[tuple[str, str, float], ...]  # (producer, consumer, bytes)
    inputs: tuple[tuple[str, float, str], ...]  # (file id, bytes, consumer)

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)


@dataclass(frozen=True)
class Finding:
    """One validation finding; findings are data, not failures."""

    code: str
    subject: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings


def _back_edges(graph: WorkflowGraph) -> set[tuple[str, str]]:
    edges = set()
    for node in graph.nodes:
        if node.kind is NodeKind.LOOP and "back_edge" in node.payload:
            edges.add((node.id, node.payload["back_edge"]))
    return edges


def validate_graph(graph: WorkflowGraph) -> ValidationReport:
    """Check every graph invariant and report findings with node/edge ids.

    Cycles are tolerated only through edges leaving a Decision node or through
    a Loop node's declared back-edge; the rest of the graph must be acyclic.
    """
    findings: list[Finding] = []
    ids = [n.id for n in graph.nodes]
    by_id = {}
    for node in graph.nodes:
        if node.id in by_id:
            findings.append(Finding("duplicate-node", node.id, f"duplicate node id {node.id!r}"))
        by_id[node.id] = node

    for src, dst in graph.edges:
        for end in (src, dst):
            if end not in by_id:
                findings.append(Finding("dangling-edge", end, f"edge ({src!r}, {dst!r}) references unknown node {end!r}"))

    if graph.entry not in by_id:
        findings.append(Finding("entry", graph.entry, f"entry node {graph.entry!r} does not exist"))

    # Loop back-edges must be materialized in the edge list.
    back = _back_edges(graph)
    for src, dst in sorted(back):
        if (src, dst) not in graph.edges:
            findings.append(Finding("back-edge", src, f"loop {src!r} declares back-edge to {dst!r} but no such edge exists"))

    # Decision branch targets must be edge targets of the decision node.
    edge_set = set(graph.edges)
    for node in graph.nodes:
        if node.kind is NodeKind.DECISION:
            for label, target in sorted(node.payload.get("branches", {}).items()):
                if (node.id, target) not in edge_set:
                    findings.append(Finding("branch-target", node.id, f"branch {label!r} of {node.id!r} targets {target!r} without an edge"))

    # Acyclicity of the restricted graph (no decision edges, no back-edges).
    restricted: dict[str, list[str]] = {i: [] for i in ids}
    for src, dst in graph.edges:
        if src not in by_id or dst not in by_id:
            continue
        if by_id[src].kind is NodeKind.DECISION:
            continue
        if (src, dst) in back:
            continue
        restricted[src].append(dst)
    cycle = _find_cycle(restricted)
    if cycle:
        findings.append(Finding("cycle", cycle[0], "cycle through nodes: " + " -> ".join(cycle)))

    # Reachability from entry over all edges.
    if graph.entry in by_id:
        seen = {graph.entry}
        frontier = [graph.entry]
        while frontier:
            current = frontier.pop()
            for nxt in graph.successors(current):
                if nxt in by_id and nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        for node_id in ids:
            if node_id not in seen:
                findings.append(Finding("unreachable", node_id, f"node {node_id!r} is not reachable from entry"))

    return ValidationReport(tuple(findings))


def _find_cycle(adjacency: dict[str, list[str]]) -> list[str] | None:
    """Return the node ids of one cycle in insertion-deterministic order."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {v: WHITE for v in adjacency}
    stack: list[str] = []

    def visit(vertex: str) -> list[str] | None:
        color[vertex] = GRAY
        stack.append(vertex)
        for nxt in sorted(adjacency[vertex]):
            if color[nxt] == GRAY:
                return stack[stack.index(nxt):]
            if color[nxt] == WHITE:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        color[vertex] = BLACK
        return None

    for vertex in sorted(adjacency):
        if color[vertex] == WHITE:
            found = visit(vertex)
            if found:
                return found
    return None


def parse_workflow(document: dict) -> WorkflowGraph:
    """Parse and validate a workflow document.

    Raises SchemaError naming the offending field for structural problems and
    for any graph invariant violation; the returned graph always passes
    :func:`validate_graph`.
    """
    root = doc.require_mapping(document, "workflow")
    doc.reject_unknown(root, {"id", "entry", "nodes", "edges"}, "workflow")
    graph_id = doc.get_str(root, "id", "workflow")
    entry = doc.get_str(root, "entry", "workflow")

    nodes = []
    for i, raw in enumerate(doc.require_list(doc.get_required(root, "nodes", "workflow"), "workflow.nodes")):
        path = f"workflow.nodes[{i}]"
        node = doc.require_mapping(raw, path)
        doc.reject_unknown(node, {"id", "kind", "payload"}, path)
        node_id = doc.get_str(node, "id", path)
        kind_name = doc.get_str(node, "kind", path)
        try:
            kind = NodeKind(kind_name)
        except ValueError:
            raise SchemaError(f"{path}.kind", f"unknown node kind {kind_name!r}") from None
        payload = doc.require_mapping(node.get("payload", {}), f"{path}.payload")
        nodes.append(Node(node_id, kind, _parse_payload(kind, payload, f"{path}.payload")))

    edges = []
    for i, raw in enumerate(doc.require_list(doc.get_required(root, "edges", "workflow"), "workflow.edges")):
        path = f"workflow.edges[{i}]"
        pair = doc.require_list(raw, path)
        if len(pair) != 2 or not all(isinstance(p, str) for p in pair):
            raise SchemaError(path, "expected [from-node-id, to-node-id]")
        edges.append((pair[0], pair[1]))

    graph = WorkflowGraph(graph_id, tuple(nodes), tuple(edges), entry)
    report = validate_graph(graph)
    if not report.ok:
        first = report.findings[0]
        raise SchemaError(f"workflow({first.subject})", "; ".join(f.message for f in report.findings))
    return graph


def _parse_payload(kind: NodeKind, payload: dict, path: str) -> dict:
    required, optional = _PAYLOAD_SCHEMA[kind]
    doc.reject_unknown(payload, required | optional | {"min_service"}, path)
    for key in sorted(required):
        if key not in payload:
            raise SchemaError(f"{path}.{key}", f"required for kind {kind.value}")
    out = {}
    for key in sorted(payload):
        out[key] = payload[key]
    if "min_service" in out and out["min_service"] not in SERVICE_LEVELS:
        raise SchemaError(f"{path}.min_service", f"expected one of {list(SERVICE_LEVELS)}")
    if kind is NodeKind.LOOP:
        max_iter = out["max_iterations"]
        if isinstance(max_iter, bool) or not isinstance(max_iter, int) or max_iter < 1:
            raise SchemaError(f"{path}.max_iterations", "expected integer >= 1")
        tol = out["tolerance"]
        if isinstance(tol, bool) or not isinstance(tol, (int, float)) or tol <= 0:
            raise SchemaError(f"{path}.tolerance", "expected number > 0")
    for key in ("function", "subworkflow", "rule_table", "key", "produces", "back_edge"):
        if key in out and (not isinstance(out[key], str) or not out[key]):
            raise SchemaError(f"{path}.{key}", "expected non-empty string")
    if kind is NodeKind.DECISION:
        branches = doc.require_mapping(out["branches"], f"{path}.branches")
        for label, target in branches.items():
            if not isinstance(target, str) or not target:
                raise SchemaError(f"{path}.branches.{label}", "expected node id string")
    return out


def serialize_workflow(graph: WorkflowGraph) -> dict:
    return {
        "id": graph.id,
        "entry": graph.entry,
        "nodes": [{"id": n.id, "kind": n.kind.value, "payload": dict(n.payload)} for n in graph.nodes],
        "edges": [[src, dst] for src, dst in graph.edges],
    }


def parse_subworkflow(document: dict) -> AbstractSubWorkflow:
    root = doc.require_mapping(document, "subworkflow")
    doc.reject_unknown(root, {"id", "tasks", "data_deps", "inputs"}, "subworkflow")
    sub_id = doc.get_str(root, "id", "subworkflow")

    tasks = []
    seen = set()
    for i, raw in enumerate(doc.require_list(doc.get_required(root, "tasks", "subworkflow"), "subworkflow.tasks")):
        path = f"subworkflow.tasks[{i}]"
        task = doc.require_mapping(raw, path)
        doc.reject_unknown(task, {"id", "work", "transformation"}, path)
        task_id = doc.get_str(task, "id", path)
        if task_id in seen:
            raise SchemaError(f"{path}.id", f"duplicate task id {task_id!r}")
        seen.add(task_id)
        work = doc.get_number(task, "work", path)
        if work <= 0:
            raise SchemaError(f"{path}.work", "work must be > 0")
        tasks.append(TaskSpec(task_id, work, doc.get_str(task, "transformation", path)))

    deps = []
    for i, raw in enumerate(doc.require_list(root.get("data_deps", []), "subworkflow.data_deps")):
        path = f"subworkflow.data_deps[{i}]"
        triple = doc.require_list(raw, path)
        if len(triple) != 3:
            raise SchemaError(path, "expected [producer, consumer, bytes]")
        producer, consumer, size = triple
        for end in (producer, consumer):
            if end not in seen:
                raise SchemaError(path, f"unknown task {end!r}")
        if isinstance(size, bool) or not isinstance(size, (int, float)) or size < 0:
            raise SchemaError(f"{path}[2]", "bytes must be a number >= 0")
        deps.append((producer, consumer, float(size)))

    inputs = []
    for i, raw in enumerate(doc.require_list(root.get("inputs", []), "subworkflow.inputs")):
        path = f"subworkflow.inputs[{i}]"
        entry = doc.require_mapping(raw, path)
        doc.reject_unknown(entry, {"file", "bytes", "consumer"}, path)
        file_id = doc.get_str(entry, "file", path)
        size = doc.get_number(entry, "bytes", path)
        if size < 0:
            raise SchemaError(f"{path}.bytes", "bytes must be >= 0")
        consumer = doc.get_str(entry, "consumer", path)
        if consumer not in seen:
            raise SchemaError(f"{path}.consumer", f"unknown task {consumer!r}")
        inputs.append((file_id, size, consumer))

    subwf = AbstractSubWorkflow(sub_id, tuple(tasks), tuple(deps), tuple(inputs))
    topological_order(subwf)  # raises CycleError on a cyclic task DAG
    return subwf


def serialize_subworkflow(subwf: AbstractSubWorkflow) -> dict:
    return {
        "id": subwf.id,
        "tasks": [{"id": t.id, "work": t.work, "transformation": t.transformation} for t in subwf.tasks],
        "data_deps": [[p, c, size] for p, c, size in subwf.data_deps],
        "inputs": [{"file": f, "bytes": size, "consumer": c} for f, size, c in subwf.inputs],
    }


def topological_order(subwf: AbstractSubWorkflow) -> list[str]:
    """Order task ids so every producer precedes its consumers.

    Simultaneously-ready tasks are emitted in ascending id order, which makes
    the order (and everything downstream of it) deterministic.
    """
    indegree = {t.id: 0 for t in subwf.tasks}
    successors: dict[str, list[str]] = {t.id: [] for t in subwf.tasks}
    for producer, consumer, _ in subwf.data_deps:
        indegree[consumer] += 1
        successors[producer].append(consumer)

    ready = [tid for tid, deg in sorted(indegree.items()) if deg == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        current = heapq.heappop(ready)
        order.append(current)
        for nxt in successors[current]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, nxt)

    if len(order) != len(indegree):
        remaining = {tid for tid, deg in indegree.items() if tid not in order}
        adjacency = {tid: [s for s in successors[tid] if s in remaining] for tid in remaining}
        cycle = _find_cycle(adjacency)
        raise CycleError(cycle or sorted(remaining))
    return order
