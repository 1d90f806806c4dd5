"""User function documents: parsing, limit checks and compilation.

A function document is one YAML mapping.  Four kinds are accepted::

    kind: periodic_collect      # sample a sensor every period
    kind: threshold_alert       # sample, deliver only when a comparator holds
    kind: control_rule          # drive an actuator when a condition holds
    kind: edge_compute          # run a compute task on edge devices

Parsing goes through ``yaml.compose`` rather than ``safe_load`` so that every
structural error can be reported with a character offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Union

import yaml
from yaml.constructor import SafeConstructor

from .errors import (
    EmptySelector,
    FunctionSyntaxError,
    InvalidTarget,
    UnknownField,
    UnknownKind,
    UnknownSensor,
)
from .simcore.program import Term, compare, normalize_comparator
from .simcore.topology import COMPUTE, DeviceClass, Topology

KINDS = ("periodic_collect", "threshold_alert", "control_rule", "edge_compute")
CLASS_NAMES = {c.value: c for c in DeviceClass}


# -- function model ---------------------------------------------------------

@dataclass(frozen=True)
class Selector:
    """Explicit ids, or the intersection of a class filter and a sensor filter."""

    ids: tuple[str, ...] | None = None
    device_class: str | None = None
    with_sensor: str | None = None


@dataclass(frozen=True)
class Comparison:
    sensor: str
    op: str
    value: float

    def depth(self) -> int:
        return 1

    def leaves(self) -> list["Comparison"]:
        return [self]


@dataclass(frozen=True)
class AllOf:
    conditions: tuple["Condition", ...]

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.conditions), default=0)

    def leaves(self) -> list[Comparison]:
        return [leaf for c in self.conditions for leaf in c.leaves()]


Condition = Union[Comparison, AllOf]


@dataclass(frozen=True)
class Guard:
    """Time-of-day window, hours in [0, 24); wraps past midnight when from > to."""

    from_hour: int
    to_hour: int


@dataclass(frozen=True)
class ActuatorAction:
    device: str
    actuator: str
    value: float


@dataclass(frozen=True)
class PeriodicCollect:
    selector: Selector
    sensor: str
    period_ticks: int
    window_ticks: int | None = None
    anchor_ticks: int = 0


@dataclass(frozen=True)
class ThresholdAlert:
    selector: Selector
    sensor: str
    period_ticks: int
    comparator: str
    threshold: float
    window_ticks: int | None = None
    anchor_ticks: int = 0


@dataclass(frozen=True)
class ControlRule:
    selector: Selector
    period_ticks: int
    condition: Condition
    action: ActuatorAction
    guard: Guard | None = None
    anchor_ticks: int = 0


@dataclass(frozen=True)
class EdgeCompute:
    selector: Selector
    duration_ticks: int
    period_ticks: int
    anchor_ticks: int = 0


Body = Union[PeriodicCollect, ThresholdAlert, ControlRule, EdgeCompute]
KIND_OF = {PeriodicCollect: "periodic_collect", ThresholdAlert: "threshold_alert",
           ControlRule: "control_rule", EdgeCompute: "edge_compute"}


@dataclass(frozen=True)
class FunctionSpec:
    id: str | None
    user: str | None
    tier: int
    body: Body

    @property
    def kind(self) -> str:
        return KIND_OF[type(self.body)]

    def condition_depth(self) -> int:
        if isinstance(self.body, ControlRule):
            return self.body.condition.depth()
        if isinstance(self.body, ThresholdAlert):
            return 1
        return 0


# -- parsing ----------------------------------------------------------------

def _pos(node: yaml.Node | None) -> int:
    return node.start_mark.index if node is not None and node.start_mark else 0


class _Doc:
    """Typed accessors over a composed YAML mapping with positioned errors."""

    def __init__(self, node: yaml.Node, allowed: set[str], what: str):
        if not isinstance(node, yaml.MappingNode):
            raise FunctionSyntaxError(f"{what} must be a mapping", _pos(node))
        self.node = node
        self.items: dict[str, tuple[yaml.Node, yaml.Node]] = {}
        for key_node, value_node in node.value:
            if not isinstance(key_node, yaml.ScalarNode):
                raise FunctionSyntaxError("mapping keys must be plain strings", _pos(key_node))
            key = key_node.value
            if key in self.items:
                raise FunctionSyntaxError(f"duplicate key {key!r}", _pos(key_node))
            if key not in allowed:
                raise UnknownField(f"unknown field {key!r} in {what}", _pos(key_node))
            self.items[key] = (key_node, value_node)
        self.what = what

    def has(self, key: str) -> bool:
        return key in self.items

    def node_of(self, key: str) -> yaml.Node:
        return self.items[key][1]

    def _scalar(self, key: str) -> tuple[Any, yaml.Node]:
        if key not in self.items:
            raise FunctionSyntaxError(f"{self.what} is missing {key!r}", _pos(self.node))
        node = self.items[key][1]
        if not isinstance(node, yaml.ScalarNode):
            raise FunctionSyntaxError(f"{key!r} must be a scalar", _pos(node))
        return SafeConstructor().construct_object(node), node

    def str(self, key: str, default: Any = ...) -> Any:
        if default is not ... and key not in self.items:
            return default
        value, node = self._scalar(key)
        if value is None and default is not ...:
            return default
        if not isinstance(value, str) or not value:
            raise FunctionSyntaxError(f"{key!r} must be a non-empty string", _pos(node))
        return value

    def int(self, key: str, default: Any = ...) -> Any:
        if default is not ... and key not in self.items:
            return default
        value, node = self._scalar(key)
        if value is None and default is not ...:
            return default
        if isinstance(value, bool) or not isinstance(value, int):
            raise FunctionSyntaxError(f"{key!r} must be an integer", _pos(node))
        return value

    def float(self, key: str) -> float:
        value, node = self._scalar(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FunctionSyntaxError(f"{key!r} must be a number", _pos(node))
        value = float(value)
        if not math.isfinite(value):
            raise FunctionSyntaxError(f"{key!r} must be finite", _pos(node))
        return value

    def comparator(self, key: str) -> str:
        op = self.str(key)
        try:
            return normalize_comparator(op)
        except ValueError:
            raise FunctionSyntaxError(f"unknown comparator {op!r}", _pos(self.node_of(key))) from None


_COMMON = {"id", "user", "tier", "kind"}
_FIELDS = {
    "periodic_collect": {"selector", "sensor", "period_ticks", "window_ticks", "anchor_ticks"},
    "threshold_alert": {"selector", "sensor", "period_ticks", "comparator", "threshold",
                        "window_ticks", "anchor_ticks"},
    "control_rule": {"selector", "period_ticks", "condition", "action", "guard", "anchor_ticks"},
    "edge_compute": {"selector", "duration_ticks", "period_ticks", "anchor_ticks"},
}
_ALL_FIELDS = set().union(_COMMON, *_FIELDS.values())


def _parse_selector(node: yaml.Node) -> Selector:
    if isinstance(node, yaml.ScalarNode):
        value = SafeConstructor().construct_object(node)
        if value == "all":
            return Selector()
        if isinstance(value, str) and value:
            return Selector(ids=(value,))
        raise FunctionSyntaxError("selector must be 'all', an id, a list or a mapping", _pos(node))
    if isinstance(node, yaml.SequenceNode):
        return Selector(ids=_parse_ids(node))
    doc = _Doc(node, {"ids", "class", "with_sensor"}, "selector")
    ids = _parse_ids(doc.node_of("ids")) if doc.has("ids") else None
    cls = doc.str("class", None)
    if cls is not None and cls not in CLASS_NAMES:
        raise FunctionSyntaxError(f"unknown device class {cls!r}", _pos(doc.node_of("class")))
    if ids is not None and (cls is not None or doc.has("with_sensor")):
        raise FunctionSyntaxError("selector ids cannot be combined with filters", _pos(node))
    return Selector(ids=ids, device_class=cls, with_sensor=doc.str("with_sensor", None))


def _parse_ids(node: yaml.Node) -> tuple[str, ...]:
    if not isinstance(node, yaml.SequenceNode):
        raise FunctionSyntaxError("ids must be a list", _pos(node))
    ids = []
    for item in node.value:
        value = SafeConstructor().construct_object(item) if isinstance(item, yaml.ScalarNode) else None
        if not isinstance(value, str) or not value:
            raise FunctionSyntaxError("device ids must be non-empty strings", _pos(item))
        ids.append(value)
    if not ids:
        raise FunctionSyntaxError("ids list is empty", _pos(node))
    return tuple(ids)


def _parse_condition(node: yaml.Node) -> Condition:
    if isinstance(node, yaml.MappingNode) and any(
        isinstance(k, yaml.ScalarNode) and k.value == "all" for k, _ in node.value
    ):
        doc = _Doc(node, {"all"}, "condition")
        seq = doc.node_of("all")
        if not isinstance(seq, yaml.SequenceNode) or not seq.value:
            raise FunctionSyntaxError("'all' needs a non-empty list", _pos(seq))
        return AllOf(tuple(_parse_condition(child) for child in seq.value))
    doc = _Doc(node, {"sensor", "op", "value"}, "condition")
    return Comparison(doc.str("sensor"), doc.comparator("op"), doc.float("value"))


def _parse_body(kind: str, doc: _Doc) -> Body:
    def selector() -> Selector:
        if not doc.has("selector"):
            raise FunctionSyntaxError("missing 'selector'", _pos(doc.node))
        return _parse_selector(doc.node_of("selector"))

    if kind == "periodic_collect":
        return PeriodicCollect(selector(), doc.str("sensor"), doc.int("period_ticks"),
                               doc.int("window_ticks", None), doc.int("anchor_ticks", 0))
    if kind == "threshold_alert":
        return ThresholdAlert(selector(), doc.str("sensor"), doc.int("period_ticks"),
                              doc.comparator("comparator"), doc.float("threshold"),
                              doc.int("window_ticks", None), doc.int("anchor_ticks", 0))
    if kind == "control_rule":
        if not doc.has("condition"):
            raise FunctionSyntaxError("missing 'condition'", _pos(doc.node))
        if not doc.has("action"):
            raise FunctionSyntaxError("missing 'action'", _pos(doc.node))
        cond_node = doc.node_of("condition")
        condition = _parse_condition(cond_node)
        if len({leaf.sensor for leaf in condition.leaves()}) != 1:
            raise FunctionSyntaxError("a condition must reference exactly one sensor",
                                      _pos(cond_node))
        act = _Doc(doc.node_of("action"), {"device", "actuator", "value"}, "action")
        action = ActuatorAction(act.str("device"), act.str("actuator"), act.float("value"))
        guard = None
        if doc.has("guard"):
            g = _Doc(doc.node_of("guard"), {"from_hour", "to_hour"}, "guard")
            guard = Guard(g.int("from_hour"), g.int("to_hour"))
            if not (0 <= guard.from_hour < 24 and 0 <= guard.to_hour <= 24):
                raise FunctionSyntaxError("guard hours must lie in [0, 24]",
                                          _pos(doc.node_of("guard")))
        return ControlRule(selector(), doc.int("period_ticks"), condition, action, guard,
                           doc.int("anchor_ticks", 0))
    return EdgeCompute(selector(), doc.int("duration_ticks"), doc.int("period_ticks"),
                       doc.int("anchor_ticks", 0))


def parse_function(text: str) -> FunctionSpec:
    """Parse one function document.

    Raises FunctionSyntaxError (or its UnknownField / UnknownKind subclasses)
    carrying the offset of the first defect; never anything else.
    """
    if not isinstance(text, str):
        raise FunctionSyntaxError("function document must be text", 0)
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        if root is None:
            raise FunctionSyntaxError("empty document", 0)
        top = _Doc(root, _ALL_FIELDS, "function")
        if not top.has("kind"):
            raise FunctionSyntaxError("missing 'kind'", _pos(root))
        kind = top.str("kind")
        if kind not in KINDS:
            raise UnknownKind(f"unknown kind {kind!r}", _pos(top.node_of("kind")))
        allowed = _COMMON | _FIELDS[kind]
        for key, (key_node, _) in top.items.items():
            if key not in allowed:
                raise UnknownField(f"field {key!r} not valid for {kind}", _pos(key_node))
        tier = top.int("tier", 2)
        if tier not in (1, 2, 3):
            raise FunctionSyntaxError("tier must be 1, 2 or 3", _pos(top.node_of("tier")))
        body = _parse_body(kind, top)
        return FunctionSpec(top.str("id", None), top.str("user", None), tier, body)
    except FunctionSyntaxError:
        raise
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
        position = mark.index if mark is not None else getattr(exc, "position", 0) or 0
        raise FunctionSyntaxError(f"invalid YAML: {getattr(exc, 'problem', None) or exc}",
                                  position) from None
    except (RecursionError, ValueError, TypeError, OverflowError) as exc:
        raise FunctionSyntaxError(f"malformed document: {exc}", 0) from None


# -- serialisation ----------------------------------------------------------

def _selector_doc(sel: Selector) -> Any:
    if sel.ids is not None:
        return {"ids": list(sel.ids)}
    out = {}
    if sel.device_class is not None:
        out["class"] = sel.device_class
    if sel.with_sensor is not None:
        out["with_sensor"] = sel.with_sensor
    return out or "all"


def _condition_doc(cond: Condition) -> dict:
    if isinstance(cond, AllOf):
        return {"all": [_condition_doc(c) for c in cond.conditions]}
    return {"sensor": cond.sensor, "op": cond.op, "value": cond.value}


def to_document(spec: FunctionSpec) -> dict:
    doc: dict[str, Any] = {}
    if spec.id is not None:
        doc["id"] = spec.id
    if spec.user is not None:
        doc["user"] = spec.user
    doc["tier"] = spec.tier
    doc["kind"] = spec.kind
    body = spec.body
    doc["selector"] = _selector_doc(body.selector)
    if isinstance(body, (PeriodicCollect, ThresholdAlert)):
        doc["sensor"] = body.sensor
    if isinstance(body, EdgeCompute):
        doc["duration_ticks"] = body.duration_ticks
    doc["period_ticks"] = body.period_ticks
    if isinstance(body, ThresholdAlert):
        doc["comparator"] = body.comparator
        doc["threshold"] = body.threshold
    if isinstance(body, ControlRule):
        doc["condition"] = _condition_doc(body.condition)
        doc["action"] = {"device": body.action.device, "actuator": body.action.actuator,
                         "value": body.action.value}
        if body.guard is not None:
            doc["guard"] = {"from_hour": body.guard.from_hour, "to_hour": body.guard.to_hour}
    if isinstance(body, (PeriodicCollect, ThresholdAlert)) and body.window_ticks is not None:
        doc["window_ticks"] = body.window_ticks
    if body.anchor_ticks:
        doc["anchor_ticks"] = body.anchor_ticks
    return doc


def serialize(spec: FunctionSpec) -> str:
    return yaml.safe_dump(to_document(spec), sort_keys=False, allow_unicode=True)


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class SpecLimits:
    max_functions_per_user: int = 16
    max_condition_depth: int = 2
    min_period_ticks: int = 1

    def __post_init__(self) -> None:
        if min(self.max_functions_per_user, self.max_condition_depth, self.min_period_ticks) < 1:
            raise ValueError("all limits must be >= 1")


@dataclass(frozen=True)
class UserState:
    active_functions: int = 0


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message}


def validate(spec: FunctionSpec, limits: SpecLimits = SpecLimits(),
             user_state: UserState = UserState()) -> list[Violation]:
    """Every limit the document breaks; an empty list means it is acceptable."""
    out = []
    if user_state.active_functions + 1 > limits.max_functions_per_user:
        out.append(Violation("FunctionCount",
                             f"user already holds {user_state.active_functions} functions "
                             f"(limit {limits.max_functions_per_user})"))
    depth = spec.condition_depth()
    if depth > limits.max_condition_depth:
        out.append(Violation("ConditionDepth",
                             f"condition depth {depth} exceeds {limits.max_condition_depth}"))
    body = spec.body
    if body.period_ticks < limits.min_period_ticks:
        out.append(Violation("PeriodFloor",
                             f"period {body.period_ticks} below {limits.min_period_ticks} ticks"))
    if body.anchor_ticks < 0:
        out.append(Violation("AnchorFloor", "anchor_ticks must be >= 0"))
    window = getattr(body, "window_ticks", None)
    if window is not None and window < 1:
        out.append(Violation("WindowFloor", "window_ticks must be >= 1"))
    if isinstance(body, EdgeCompute) and body.duration_ticks < 1:
        out.append(Violation("DurationFloor", "duration_ticks must be >= 1"))
    if isinstance(body, ControlRule) and body.guard is not None \
            and body.guard.from_hour == body.guard.to_hour % 24:
        out.append(Violation("GuardEmpty", "guard window is empty"))
    return out


# -- compilation ------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Subscription:
    function_id: str
    user: str
    tier: int
    node: str
    resource: str
    anchor: int
    period: int
    window: int | None = None
    trigger: tuple[tuple[str, float], ...] = ()
    deliver_only_on_trigger: bool = False
    kind: str = "periodic_collect"
    guard: tuple[int, int] | None = field(default=None, compare=False)
    action: tuple[str, str, float] | None = field(default=None, compare=False)
    duration_ticks: int | None = field(default=None, compare=False)

    @property
    def term(self) -> Term:
        end = None if self.window is None else self.anchor + self.window
        return Term(self.anchor, self.period, end)

    def demands(self, tick: int) -> bool:
        return self.term.demands(tick)

    def triggered(self, value: float, tick: int, tick_millis: int = 100,
                  fired: frozenset | None = None) -> bool:
        """Whether a reading at ``tick`` satisfies this subscription's trigger."""
        if not self.trigger:
            return True
        if fired is not None:
            ok = all(t in fired for t in self.trigger)
        else:
            ok = all(compare(op, value, v) for op, v in self.trigger)
        if ok and self.guard is not None:
            ok = _in_guard(self.guard, tick, tick_millis)
        return ok


def _in_guard(guard: tuple[int, int], tick: int, tick_millis: int) -> bool:
    minute = (tick * tick_millis // 60_000) % (24 * 60)
    start, stop = guard
    if start <= stop:
        return start <= minute < stop
    return minute >= start or minute < stop


def _resolve(selector: Selector, resource: str, topology: Topology) -> list[str]:
    if selector.ids is not None:
        for dev_id in selector.ids:
            if not topology.device(dev_id).owns(resource):
                if resource == COMPUTE:
                    raise InvalidTarget(f"{dev_id} is not an edge compute device")
                raise UnknownSensor(f"{dev_id} has no {resource!r}")
        return sorted(set(selector.ids), key=list(topology.devices).index)
    matched = [
        d for d in topology.devices.values()
        if (selector.device_class is None or d.kind is CLASS_NAMES[selector.device_class])
        and (selector.with_sensor is None or selector.with_sensor in d.sensors)
    ]
    if not matched:
        raise EmptySelector(f"selector {selector} matches no device")
    owners = [d.id for d in matched if d.owns(resource)]
    if not owners:
        if resource == COMPUTE:
            raise InvalidTarget("selector matches no edge compute device")
        raise UnknownSensor(f"no selected device has {resource!r}")
    return owners


def compile_to_subscriptions(spec: FunctionSpec, topology: Topology,
                             function_id: str | None = None,
                             user: str | None = None) -> list[Subscription]:
    """One subscription per selected device, in topology order."""
    fid = function_id or spec.id or "anonymous"
    owner = user or spec.user or "anonymous"
    body = spec.body
    common: dict[str, Any] = dict(function_id=fid, user=owner, tier=spec.tier,
                                  anchor=body.anchor_ticks, period=body.period_ticks,
                                  kind=spec.kind)
    if isinstance(body, PeriodicCollect):
        resource = body.sensor
        common["window"] = body.window_ticks
    elif isinstance(body, ThresholdAlert):
        resource = body.sensor
        common.update(window=body.window_ticks, trigger=((body.comparator, body.threshold),),
                      deliver_only_on_trigger=True)
    elif isinstance(body, ControlRule):
        leaves = body.condition.leaves()
        resource = leaves[0].sensor
        target = topology.device(body.action.device)
        if body.action.actuator not in target.actuators:
            raise UnknownSensor(f"{target.id} has no actuator {body.action.actuator!r}")
        common.update(trigger=tuple((leaf.op, leaf.value) for leaf in leaves),
                      deliver_only_on_trigger=True,
                      action=(body.action.device, body.action.actuator, body.action.value))
        if body.guard is not None:
            common["guard"] = (body.guard.from_hour * 60, body.guard.to_hour * 60)
    else:
        resource = COMPUTE
        common["duration_ticks"] = body.duration_ticks
    nodes = _resolve(body.selector, resource, topology)
    return [Subscription(node=n, resource=resource, **common) for n in nodes]


__all__ = [
    "ActuatorAction", "AllOf", "Comparison", "ControlRule", "EdgeCompute", "FunctionSpec",
    "Guard", "PeriodicCollect", "Selector", "SpecLimits", "Subscription", "ThresholdAlert",
    "UserState", "Violation", "compile_to_subscriptions", "parse_function",
    "serialize", "to_document", "validate",
]
