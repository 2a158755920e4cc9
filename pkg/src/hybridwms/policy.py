"""SLA model, policy repository, decision point, enforcement, and the typed
property information base backing policy conditions.

A user's requirement is the triple (resource level, workflow performance,
application service level), optionally given as a natural-language soft label
that expands through a fixed table. The decision point picks one policy per
kind by condition match and priority; enforcement writes the winning actions
into a closed-schema configuration registry with full provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import documents as doc
from .errors import (
    InvalidConfigValue,
    NoMatchingPolicy,
    TypeMismatch,
    UnknownConfigKey,
    UnknownKey,
    UnknownLabel,
)
from .resources import LEVELS, RANDOM_LEVEL
from .workflow import SERVICE_LEVELS

PERFORMANCE_LEVELS = ("Fast", "Standard", "Economy")

SOFT_LABELS = {
    "High Performance": ("L1", "Fast", "EcgVhs"),
    "Low Cost": ("L3", "Economy", "EcgOnly"),
    "Balanced": ("L2", "Standard", "EcgDetect"),
}

#: SLA fields a policy condition may reference without a property prefix.
SLA_FIELDS = ("user_id", "resource_level", "performance", "service_level")

SCHEDULERS = ("MinEFT", "RoundRobin", "Random")

#: Application selector values: the three service levels plus a variant that
#: forces the simulation loop to run regardless of the diagnosis.
APP_WORKFLOWS = SERVICE_LEVELS + ("EcgVhsAlways",)


@dataclass(frozen=True)
class Sla:
    user_id: str
    resource_level: str | None = None
    performance: str | None = None
    service_level: str | None = None
    soft_label: str | None = None


def expand_soft_label(sla: Sla) -> Sla:
    """Expand a soft requirement into explicit SLA fields.

    Explicit fields already present win over the table entry. The returned
    SLA carries no soft label and is ready for policy decision.
    """
    if sla.soft_label is None:
        raise ValueError("sla has no soft label to expand")
    if sla.soft_label not in SOFT_LABELS:
        raise UnknownLabel(f"unknown soft requirement {sla.soft_label!r}")
    level, performance, service = SOFT_LABELS[sla.soft_label]
    return Sla(
        user_id=sla.user_id,
        resource_level=sla.resource_level or level,
        performance=sla.performance or performance,
        service_level=sla.service_level or service,
        soft_label=None,
    )


class PolicyKind(str, Enum):
    RESOURCE = "Resource"
    WORKFLOW = "LowLevelWorkflow"
    APP = "AppService"


@dataclass(frozen=True)
class Predicate:
    key: str
    op: str  # one of ==, !=, <=, >=
    value: object


@dataclass(frozen=True)
class Policy:
    id: str
    kind: PolicyKind
    priority: int
    condition: tuple[Predicate, ...]
    actions: tuple[tuple[str, object], ...]

    def __post_init__(self):
        if not self.actions:
            raise ValueError(f"policy {self.id!r} has no actions")


@dataclass(frozen=True)
class PolicySet:
    app: Policy
    resource: Policy
    workflow: Policy

    def __post_init__(self):
        expected = ((self.app, PolicyKind.APP), (self.resource, PolicyKind.RESOURCE), (self.workflow, PolicyKind.WORKFLOW))
        for policy, kind in expected:
            if policy.kind is not kind:
                raise ValueError(f"policy {policy.id!r} has kind {policy.kind.value}, expected {kind.value}")

    def ids(self) -> dict[str, str]:
        return {"app": self.app.id, "resource": self.resource.id, "workflow": self.workflow.id}


# --------------------------------------------------------------------------
# Property information base


@dataclass(frozen=True)
class PropertySpec:
    type: type
    default: object
    source: str  # "static" or "runtime"


@dataclass(frozen=True)
class PropertyRecord:
    key: str
    value: object
    source: str


DEFAULT_PROPERTY_SCHEMA = {
    "grid.alert": PropertySpec(bool, False, "runtime"),
    "grid.load": PropertySpec(float, 0.0, "runtime"),
    "site.maintenance": PropertySpec(bool, False, "static"),
}


class InformationBase:
    """Typed key-value store supplying auxiliary condition inputs."""

    def __init__(self, schema: dict[str, PropertySpec] | None = None, values: dict[str, object] | None = None):
        self._schema = dict(DEFAULT_PROPERTY_SCHEMA if schema is None else schema)
        self._values: dict[str, object] = {}
        for key, value in (values or {}).items():
            self.set(key, value)

    @property
    def schema(self) -> dict[str, PropertySpec]:
        return dict(self._schema)

    def _spec(self, key: str) -> PropertySpec:
        if key not in self._schema:
            raise UnknownKey(f"property {key!r} is not declared")
        return self._schema[key]

    def get(self, key: str):
        spec = self._spec(key)
        return self._values.get(key, spec.default)

    def set(self, key: str, value):
        """Replace a property value and return the previous one."""
        spec = self._spec(key)
        if not _type_ok(value, spec.type):
            raise TypeMismatch(f"property {key!r} expects {spec.type.__name__}, got {type(value).__name__}")
        previous = self.get(key)
        self._values[key] = spec.type(value) if spec.type is float else value
        return previous

    def record(self, key: str) -> PropertyRecord:
        spec = self._spec(key)
        return PropertyRecord(key, self.get(key), spec.source)


def property_get(info: InformationBase, key: str):
    return info.get(key)


def property_set(info: InformationBase, key: str, value):
    return info.set(key, value)


def _type_ok(value, expected: type) -> bool:
    if expected is bool:
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False  # bool is an int subclass; never accept it for numbers
    if expected is float:
        return isinstance(value, (int, float))
    return isinstance(value, expected)


# --------------------------------------------------------------------------
# Policy decision point


def _lookup(predicate: Predicate, sla: Sla, info: InformationBase):
    if predicate.key in SLA_FIELDS:
        return getattr(sla, predicate.key)
    return info.get(predicate.key)


def _predicate_holds(predicate: Predicate, sla: Sla, info: InformationBase) -> bool:
    actual = _lookup(predicate, sla, info)
    expected = predicate.value
    if predicate.op == "==":
        return actual == expected
    if predicate.op == "!=":
        return actual != expected
    try:
        if predicate.op == "<=":
            return actual <= expected
        if predicate.op == ">=":
            return actual >= expected
    except TypeError as exc:
        raise TypeMismatch(f"cannot compare {predicate.key}={actual!r} with {expected!r}") from exc
    raise ValueError(f"unknown operator {predicate.op!r}")


def policy_matches(policy: Policy, sla: Sla, info: InformationBase) -> bool:
    return all(_predicate_holds(p, sla, info) for p in policy.condition)


def decide_policy(sla: Sla, repo: list[Policy], info: InformationBase) -> PolicySet:
    """Select the matching policy with maximal priority for each kind.

    Ties break by ascending policy id. Property predicates read the
    information base at decision time.
    """
    if sla.soft_label is not None:
        raise ValueError("sla must be expanded before policy decision")
    chosen: dict[PolicyKind, Policy] = {}
    for kind in (PolicyKind.APP, PolicyKind.RESOURCE, PolicyKind.WORKFLOW):
        matching = [p for p in repo if p.kind is kind and policy_matches(p, sla, info)]
        if not matching:
            raise NoMatchingPolicy(kind.value)
        matching.sort(key=lambda p: (-p.priority, p.id))
        chosen[kind] = matching[0]
    return PolicySet(app=chosen[PolicyKind.APP], resource=chosen[PolicyKind.RESOURCE], workflow=chosen[PolicyKind.WORKFLOW])


# --------------------------------------------------------------------------
# Configuration registry and enforcement


@dataclass(frozen=True)
class ConfigKeySpec:
    type: type
    default: object
    domain: tuple | None = None  # closed value set, when applicable
    minimum: float | None = None


CONFIG_SCHEMA = {
    "resource.level": ConfigKeySpec(str, "L3", domain=LEVELS + (RANDOM_LEVEL,)),
    "resource.alpha": ConfigKeySpec(float, 0.5, minimum=0.0),
    "resource.beta": ConfigKeySpec(float, 0.5, minimum=0.0),
    "scheduler.kind": ConfigKeySpec(str, "MinEFT", domain=SCHEDULERS),
    "scheduler.seed": ConfigKeySpec(int, 0),
    "app.workflow": ConfigKeySpec(str, "EcgVhs", domain=APP_WORKFLOWS),
    "vhs.max_iter": ConfigKeySpec(int, 4, minimum=1),
    "vhs.tolerance": ConfigKeySpec(float, 0.1, minimum=1e-12),
}

DEFAULT_PROVENANCE = "default"


@dataclass(frozen=True)
class ConfigEntry:
    value: object
    provenance: str


class ConfigRegistry:
    """Runtime configuration written by policy enforcement.

    Every entry is traceable to the policy that wrote it or to the documented
    default it was initialized with.
    """

    def __init__(self):
        self._entries = {key: ConfigEntry(spec.default, DEFAULT_PROVENANCE) for key, spec in CONFIG_SCHEMA.items()}

    def get(self, key: str):
        return self.entry(key).value

    def entry(self, key: str) -> ConfigEntry:
        if key not in CONFIG_SCHEMA:
            raise UnknownConfigKey(f"config key {key!r} is not registered")
        return self._entries[key]

    def set(self, key: str, value, provenance: str) -> None:
        if key not in CONFIG_SCHEMA:
            raise UnknownConfigKey(f"config key {key!r} is not registered")
        spec = CONFIG_SCHEMA[key]
        if not _type_ok(value, spec.type):
            raise TypeMismatch(f"config key {key!r} expects {spec.type.__name__}, got {type(value).__name__}")
        if spec.type is float:
            value = float(value)
        if spec.domain is not None and value not in spec.domain:
            raise InvalidConfigValue(f"config key {key!r} must be one of {list(spec.domain)}, got {value!r}")
        if spec.minimum is not None and value < spec.minimum:
            raise InvalidConfigValue(f"config key {key!r} must be >= {spec.minimum}, got {value!r}")
        self._entries[key] = ConfigEntry(value, provenance)

    def snapshot(self) -> tuple:
        """Canonical, hashable view used to compare registry states."""
        return tuple((key, self._entries[key].value, self._entries[key].provenance) for key in sorted(self._entries))

    def as_dict(self) -> dict:
        return {key: {"value": entry.value, "provenance": entry.provenance} for key, entry in sorted(self._entries.items())}


@dataclass(frozen=True)
class Override:
    key: str
    overridden: str  # losing policy id
    overriding: str  # winning policy id
    old_value: object
    new_value: object


@dataclass(frozen=True)
class EnforcementReport:
    applied: tuple[tuple[str, object, str], ...]  # (key, value, policy id)
    overrides: tuple[Override, ...] = field(default=())


def enforce(policy_set: PolicySet, registry: ConfigRegistry) -> EnforcementReport:
    """Apply the decided actions to the registry.

    Actions apply in order app, resource, workflow; a later write to the same
    key wins and is reported as an override. Enforcing the same set twice
    leaves the registry unchanged.
    """
    applied = []
    overrides = []
    written_by: dict[str, tuple[str, object]] = {}
    for policy in (policy_set.app, policy_set.resource, policy_set.workflow):
        for key, value in policy.actions:
            if key in written_by:
                loser, old_value = written_by[key]
                overrides.append(Override(key, loser, policy.id, old_value, value))
            registry.set(key, value, policy.id)
            applied.append((key, value, policy.id))
            written_by[key] = (policy.id, value)
    return EnforcementReport(tuple(applied), tuple(overrides))


# --------------------------------------------------------------------------
# Document parsing


def parse_sla(document: dict) -> Sla:
    root = doc.require_mapping(document, "sla")
    doc.reject_unknown(root, {"user_id", "soft_label", "resource_level", "performance", "service_level"}, "sla")
    user_id = doc.get_str(root, "user_id", "sla")
    soft = root.get("soft_label")
    fields = {}
    for key, domain in (("resource_level", LEVELS), ("performance", PERFORMANCE_LEVELS), ("service_level", SERVICE_LEVELS)):
        if key in root:
            value = doc.get_str(root, key, "sla")
            if value not in domain:
                raise doc.SchemaError(f"sla.{key}", f"expected one of {list(domain)}")
            fields[key] = value
    if soft is not None and (not isinstance(soft, str) or not soft):
        raise doc.SchemaError("sla.soft_label", "expected non-empty string")
    if soft is None and len(fields) != 3:
        raise doc.SchemaError("sla", "needs either soft_label or all of resource_level, performance, service_level")
    return Sla(user_id=user_id, soft_label=soft, **fields)


def parse_repository(document, property_schema: dict[str, PropertySpec] | None = None) -> list[Policy]:
    """Parse a policy repository document (JSON array of policy records)."""
    schema = DEFAULT_PROPERTY_SCHEMA if property_schema is None else property_schema
    raw_repo = doc.require_list(document, "policies")
    policies = []
    seen = set()
    for i, raw in enumerate(raw_repo):
        path = f"policies[{i}]"
        record = doc.require_mapping(raw, path)
        doc.reject_unknown(record, {"id", "kind", "priority", "condition", "actions"}, path)
        pid = doc.get_str(record, "id", path)
        if pid in seen:
            raise doc.SchemaError(f"{path}.id", f"duplicate policy id {pid!r}")
        seen.add(pid)
        kind_name = doc.get_str(record, "kind", path)
        try:
            kind = PolicyKind(kind_name)
        except ValueError:
            raise doc.SchemaError(f"{path}.kind", f"unknown policy kind {kind_name!r}") from None
        priority = doc.get_int(record, "priority", path)

        condition = []
        for j, raw_pred in enumerate(doc.require_list(record.get("condition", []), f"{path}.condition")):
            pred_path = f"{path}.condition[{j}]"
            pred = doc.require_mapping(raw_pred, pred_path)
            doc.reject_unknown(pred, {"key", "op", "value"}, pred_path)
            key = doc.get_str(pred, "key", pred_path)
            if key not in SLA_FIELDS and key not in schema:
                raise doc.SchemaError(f"{pred_path}.key", f"{key!r} is neither an SLA field nor a declared property")
            op = doc.get_str(pred, "op", pred_path)
            if op not in ("==", "!=", "<=", ">="):
                raise doc.SchemaError(f"{pred_path}.op", f"unknown operator {op!r}")
            condition.append(Predicate(key, op, doc.get_required(pred, "value", pred_path)))

        actions = []
        for j, raw_action in enumerate(doc.require_list(doc.get_required(record, "actions", path), f"{path}.actions")):
            action_path = f"{path}.actions[{j}]"
            action = doc.require_mapping(raw_action, action_path)
            doc.reject_unknown(action, {"key", "value"}, action_path)
            actions.append((doc.get_str(action, "key", action_path), doc.get_required(action, "value", action_path)))
        if not actions:
            raise doc.SchemaError(f"{path}.actions", "policy needs at least one action")

        policies.append(Policy(pid, kind, priority, tuple(condition), tuple(actions)))
    return policies
