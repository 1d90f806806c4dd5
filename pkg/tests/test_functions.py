import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import read_sample
from wsnfaas.errors import (
    EmptySelector,
    FunctionSyntaxError,
    InvalidTarget,
    UnknownField,
    UnknownKind,
    UnknownSensor,
)
from wsnfaas.functions import (
    ActuatorAction,
    AllOf,
    Comparison,
    ControlRule,
    EdgeCompute,
    FunctionSpec,
    Guard,
    PeriodicCollect,
    Selector,
    SpecLimits,
    ThresholdAlert,
    UserState,
    compile_to_subscriptions,
    parse_function,
    serialize,
    validate,
)
from wsnfaas.simcore import ScenarioConfig, build_topology


# -- parsing ----------------------------------------------------------------

def test_parse_five_minute_collection():
    spec = parse_function(read_sample("collect_pm25.yaml"))
    assert spec.kind == "periodic_collect"
    assert spec.body.period_ticks == 3000
    assert spec.user == "alice" and spec.tier == 2


def test_parse_all_samples():
    for name in ("alert_pm25.yaml", "tidal_lane.yaml", "edge_batch.yaml"):
        spec = parse_function(read_sample(name))
        assert parse_function(serialize(spec)) == spec


def test_empty_document_is_position_zero():
    for text in ("", "   \n", "# only a comment\n"):
        with pytest.raises(FunctionSyntaxError) as err:
            parse_function(text)
        assert err.value.position == 0


def test_error_positions():
    text = "kind: periodic_collect\nsensor: pm25\nperiod_ticks: 5\nselector: all\ncolour: red\n"
    with pytest.raises(UnknownField) as err:
        parse_function(text)
    assert err.value.position == text.index("colour")
    text = "kind: teleport\n"
    with pytest.raises(UnknownKind) as err:
        parse_function(text)
    assert err.value.position == text.index("teleport")
    with pytest.raises(FunctionSyntaxError) as err:
        parse_function("kind: [unclosed\n")
    assert err.value.position > 0


def test_condition_must_name_one_sensor():
    text = """
kind: control_rule
selector: [n1]
period_ticks: 10
condition: {all: [{sensor: pm25, op: ">", value: 1}, {sensor: temperature, op: "<", value: 2}]}
action: {device: r0, actuator: lane_signal, value: 1}
"""
    with pytest.raises(FunctionSyntaxError):
        parse_function(text)


ids = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789", min_size=1, max_size=6)
sensors = st.sampled_from(["pm25", "temperature", "humidity"])
ops = st.sampled_from(["<", "<=", ">", ">="])
finite = st.floats(allow_nan=False, allow_infinity=False, width=32)
selectors = st.one_of(
    st.just(Selector()),
    st.lists(ids, min_size=1, max_size=4).map(lambda xs: Selector(ids=tuple(xs))),
    st.builds(Selector, device_class=st.one_of(st.none(), st.sampled_from(
        ["edge", "infrastructure", "constrained"])), with_sensor=st.one_of(st.none(), sensors)),
)
periods = st.integers(1, 10**6)
anchors = st.integers(0, 10**4)
windows = st.one_of(st.none(), st.integers(1, 10**6))


def conditions(sensor):
    leaf = st.builds(Comparison, st.just(sensor), ops, finite)
    return st.recursive(leaf, lambda inner: st.lists(inner, min_size=1, max_size=3)
                        .map(lambda cs: AllOf(tuple(cs))), max_leaves=5)


bodies = st.one_of(
    st.builds(PeriodicCollect, selectors, sensors, periods, windows, anchors),
    st.builds(ThresholdAlert, selectors, sensors, periods, ops, finite, windows, anchors),
    sensors.flatmap(lambda s: st.builds(
        ControlRule, selectors, periods, conditions(s),
        st.builds(ActuatorAction, ids, st.just("lane_signal"), finite),
        st.one_of(st.none(), st.builds(Guard, st.integers(0, 23), st.integers(0, 24))), anchors)),
    st.builds(EdgeCompute, selectors, st.integers(1, 1000), periods, anchors),
)
specs = st.builds(FunctionSpec, st.one_of(st.none(), ids), st.one_of(st.none(), ids),
                  st.integers(1, 3), bodies)


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(specs)
def test_round_trip(spec):
    assert parse_function(serialize(spec)) == spec


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=200))
def test_parsing_is_total(text):
    try:
        parse_function(text)
    except FunctionSyntaxError as exc:
        assert isinstance(exc.position, int) and exc.position >= 0


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from(["kind", "selector", "sensor", "period_ticks", "tier",
                                        "threshold", "comparator", "condition", "id"]),
                       st.one_of(st.integers(), st.text(max_size=5), st.lists(st.integers()),
                                 st.none(), st.floats())))
def test_parsing_is_total_on_structured_junk(doc):
    import yaml
    try:
        parse_function(yaml.safe_dump(doc))
    except FunctionSyntaxError:
        pass


# -- validation -------------------------------------------------------------

def _collect(period=3000, **kw):
    return FunctionSpec(None, "u", 2, PeriodicCollect(Selector(), "pm25", period, **kw))


def test_function_count_limit():
    limits = SpecLimits()
    # a user holding 16 functions already
    held = [_collect() for _ in range(16)]
    codes = [v.code for v in validate(_collect(), limits, UserState(len(held)))]
    assert codes == ["FunctionCount"]
    assert validate(_collect(), limits, UserState(15)) == []


def test_depth_and_period_floor():
    rule = FunctionSpec(None, "u", 1, ControlRule(
        Selector(ids=("n1",)), 10, Comparison("pm25", ">", 3.0),
        ActuatorAction("r0", "lane_signal", 1.0)))
    assert validate(rule, SpecLimits(max_condition_depth=2)) == []
    deep = FunctionSpec(None, "u", 1, ControlRule(
        Selector(ids=("n1",)), 0, AllOf((AllOf((Comparison("pm25", ">", 3.0),)),)),
        ActuatorAction("r0", "lane_signal", 1.0)))
    codes = {v.code for v in validate(deep, SpecLimits(max_condition_depth=2), UserState(99))}
    assert codes == {"ConditionDepth", "PeriodFloor", "FunctionCount"}
    assert [v.code for v in validate(_collect(period=0))] == ["PeriodFloor"]


@given(specs, st.integers(0, 20))
def test_validate_is_pure(spec, held):
    assert validate(spec, SpecLimits(), UserState(held)) == validate(spec, SpecLimits(),
                                                                     UserState(held))


# -- compilation ------------------------------------------------------------

@pytest.fixture(scope="module")
def topo():
    return build_topology(ScenarioConfig())


def test_compile_hundred_nodes(topo):
    spec = parse_function(read_sample("collect_pm25.yaml"))
    subs = compile_to_subscriptions(spec, topo, "f1")
    assert len(subs) == 100
    assert all(s.anchor == 0 and s.period == 3000 and s.resource == "pm25" for s in subs)
    alert = compile_to_subscriptions(parse_function(read_sample("alert_pm25.yaml")), topo, "f2")
    assert all(s.deliver_only_on_trigger and s.trigger == ((">=", 45.0),) for s in alert)


def test_compile_single_and_empty(topo):
    one = FunctionSpec(None, "u", 2, PeriodicCollect(Selector(ids=("n42",)), "pm25", 10))
    assert [s.node for s in compile_to_subscriptions(one, topo)] == ["n42"]
    none = FunctionSpec(None, "u", 2, PeriodicCollect(
        Selector(device_class="edge", with_sensor="pm25"), "pm25", 10))
    with pytest.raises(EmptySelector):
        compile_to_subscriptions(none, topo)
    wrong = FunctionSpec(None, "u", 2, PeriodicCollect(Selector(ids=("n1",)), "co2", 10))
    with pytest.raises(UnknownSensor):
        compile_to_subscriptions(wrong, topo)
    compute = FunctionSpec(None, "u", 3, EdgeCompute(Selector(ids=("n1",)), 5, 10))
    with pytest.raises(InvalidTarget):
        compile_to_subscriptions(compute, topo)


@settings(max_examples=50, deadline=None)
@given(selectors.filter(lambda s: s.ids is None), sensors)
def test_compile_matches_selector(topo, selector, sensor):
    spec = FunctionSpec(None, "u", 2, PeriodicCollect(selector, sensor, 10))
    matched = [d for d in topo.devices.values()
               if (selector.device_class is None or d.kind.value == selector.device_class)
               and (selector.with_sensor is None or selector.with_sensor in d.sensors)
               and sensor in d.sensors]
    try:
        subs = compile_to_subscriptions(spec, topo)
    except (EmptySelector, UnknownSensor):
        assert not matched
        return
    assert [s.node for s in subs] == [d.id for d in matched]
