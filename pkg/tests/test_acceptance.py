"""The eight headline acceptance checks, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the verdict block is printed
in the terminal summary.
"""

import contextlib
import csv
import hashlib
import io
import os
import random
import subprocess
import sys
import time
from collections import defaultdict
from decimal import Decimal
from pathlib import Path

import numpy as np
import pytest

from conftest import SAMPLES, read_sample
from oracles import brute_minute_load, brute_union
from wsnfaas.billing import invoice
from wsnfaas.functions import Subscription
from wsnfaas.lifecycle import Dist, LifecyclePlan, Phase, PhaseModel, expected_cost_single_loop, \
    point_plan, simulate_lifecycle
from wsnfaas.middleware import merge_key
from wsnfaas.monitor import (
    FIELD_REPLACE,
    NODE_SILENT,
    MonitorThresholds,
    ObservedLog,
    Packet,
    diff,
    escalation_ok,
    expected_behavior,
    maintenance_action,
)
from wsnfaas.platform import Platform
from wsnfaas.scheduler import Accepted, LoadBook, SuccessStats, admit, analytic_success, \
    execute_with_retries, tier_policies
from wsnfaas.simcore import DeviceClass, EnergyConfig, ScenarioConfig, SetSchedule, \
    build_topology, new_state, transmit
from wsnfaas.simcore.program import Term, TickProgram
from wsnfaas.simcore.signals import signal_value

HOUR = 36_000
VERDICTS: list[str] = []


@pytest.fixture(scope="module", autouse=True)
def verdict_block(request):
    yield
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    lines = ["", "acceptance:"] + VERDICTS
    for line in lines:
        if reporter is not None:
            reporter.write_line(line)
        else:
            print(line)


@contextlib.contextmanager
def criterion(name):
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        VERDICTS.append(f"FAIL  {name}: {type(exc).__name__} {exc}".splitlines()[0])
        raise
    VERDICTS.append(f"PASS  {name} ({time.perf_counter() - start:.2f}s)")


def sub(fid, period, anchor=0, node="n1", user=None, resource="pm25"):
    return Subscription(fid, user or fid, 2, node, resource, anchor, period)


def two_user_platform(config, docs=("collect_pm25.yaml", "alert_pm25.yaml")):
    platform = Platform(config)
    for doc in docs:
        assert platform.submit_function(read_sample(doc)).accepted
    return platform


def test_merge_oracle_equivalence():
    with criterion("merge oracle equivalence"):
        rng = random.Random(2024)
        start = time.perf_counter()
        for case in range(1000):
            subs = [sub(f"f{i}", rng.randint(1, 12), rng.randint(0, 30))
                    for i in range(rng.randint(1, 6))]
            sched = merge_key("n1", "pm25", subs)
            length, ticks = brute_union(subs)
            assert (sched.hyperperiod, set(sched.offsets)) == (length, ticks), case
        assert time.perf_counter() - start < 10


def test_two_user_merge_scenario(city_config):
    with criterion("two-user merge scenario, per tick over one hour"):
        platform = two_user_platform(city_config)
        summary = platform.run_scenario(HOUR)
        run = platform.last_run
        reads = defaultdict(set)
        for ev in run.events:
            if ev.kind == "reading" and ev.payload["sensor"] == "pm25":
                reads[ev.tick].add(ev.device)
        topo = build_topology(city_config)
        nodes = {d.id for d in topo.of_kind(DeviceClass.CONSTRAINED) if "pm25" in d.sensors}
        assert len(nodes) == 100
        signal = city_config.signals["pm25"]
        bob = defaultdict(set)
        for rec in platform.query_results("bob", (0, HOUR)):
            bob[rec.tick].add(rec.node)
        for tick in range(HOUR):
            assert reads.get(tick, set()) == (nodes if tick % 3000 == 0 else set()), tick
            crossing = set()
            if tick % 6000 == 0:
                crossing = {n for n in nodes if signal_value(
                    signal, city_config.seed, n, "pm25", tick, city_config.tick_millis) >= 45}
            assert bob.get(tick, set()) == crossing, tick
        assert summary["physicalAcquisitions"] == 1200
        assert len(platform.query_results("alice", (0, HOUR))) == 1200


def test_capacity_bound():
    with criterion("capacity bound W=600/min"):
        rng = random.Random(600)
        tpm = ScenarioConfig().ticks_per_minute
        periods = [1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 24, 25, 30, 40, 50, 60, 75, 100, 120,
                   150, 200, 300, 600]
        for trial in range(30):
            book = LoadBook({f"n{i}": 600 for i in range(4)}, tpm)
            for i in range(60):
                admit(sub(f"t{trial}-{i}", rng.choice(periods), rng.randrange(600),
                          node=f"n{rng.randrange(4)}", resource=rng.choice(["pm25", "temperature"])),
                      book)
            for node, subs in book.committed.items():
                assert brute_minute_load(subs, tpm) <= 600, (trial, node)
        # 50 ms ticks give 1200 one-minute slots, so a 601st distinct anchor exists
        tpm = ScenarioConfig(tick_millis=50).ticks_per_minute
        book = LoadBook({"n1": 600}, tpm)
        for i in range(600):
            assert isinstance(admit(sub(f"u{i}", tpm, anchor=i), book), Accepted)
        verdict = admit(sub("u600", tpm, anchor=600), book)
        assert verdict.reason == "CapacityExceeded" and verdict.would_be == 601


def test_tier_one_success():
    with criterion("tier-1 success at loss 0.05 with 2 retries"):
        config = ScenarioConfig(seed=11, edge=0, infrastructure=1, constrained=1,
                                loss_rates=[0.05] * 4, energy=EnergyConfig(budget_j=1e9))
        state = new_state(config)
        path = state.topology.path_to_gateway("n0")
        assert len(path) == 2
        policy = tier_policies()[1]
        assert policy.max_retries == 2
        stats = SuccessStats()
        for _ in range(100_000):
            execute_with_retries(policy, lambda: transmit(state, path, log=False), stats)
        expected = 1 - 0.05 ** 3
        assert analytic_success(0.05, 2) == pytest.approx(expected)
        rate = stats.measured_rate(1)
        assert rate >= 0.99 and abs(rate - expected) <= 0.003


def test_billing_conservation_and_dedup(city_config):
    with criterion("billing conservation and dedup neutrality"):
        both = two_user_platform(city_config)
        both.run_scenario(HOUR)
        rows = list(csv.DictReader(io.StringIO(both.render("ledger"))))
        assert len(rows) == len(both.last_run.deliveries)
        recomputed = defaultdict(Decimal)
        for r in rows:
            recomputed[r["user"]] += Decimal(r["amount"])
        for user in ("alice", "bob"):
            assert both.query_invoice(user, (0, HOUR)).total_decimal == recomputed[user]
        assert sum(invoice(both.last_run.ledger, u, (0, HOUR)).total for u in ("alice", "bob")) \
            == both.last_run.ledger.total()

        alone = {}
        for doc, user in (("collect_pm25.yaml", "alice"), ("alert_pm25.yaml", "bob")):
            p = two_user_platform(city_config, (doc,))
            summary = p.run_scenario(HOUR)
            alone[user] = summary
        merged = both.last_run.summary()
        for user in ("alice", "bob"):
            assert merged["unitsByUser"][user] == alone[user]["unitsByUser"][user]
        # per node, 10-minute ticks are a subset of 5-minute ticks: 6 shared per hour
        overlap = 100 * len(set(range(0, HOUR, 3000)) & set(range(0, HOUR, 6000)))
        naive = alone["alice"]["physicalAcquisitions"] + alone["bob"]["physicalAcquisitions"]
        assert merged["physicalAcquisitions"] == naive - overlap


def test_lifecycle_exactness_and_convergence():
    with criterion("lifecycle exactness and convergence"):
        start = time.perf_counter()
        costs = [10, 5, 5, 20, 5, 10, 10]
        report, samples = simulate_lifecycle(point_plan(costs), 1000, 3, return_samples=True)
        assert np.all(samples == float(sum(costs))) and report.mean_cost == 65.0
        plan = LifecyclePlan.load(SAMPLES / "geometric_plan.yaml")
        closed = expected_cost_single_loop(plan, Phase.DEBUGGING)
        series = sum(0.5 ** (f + 1) * (65 + 23 * f) for f in range(60))
        assert closed == pytest.approx(series)
        report = simulate_lifecycle(plan, 100_000, 2025)
        assert abs(report.mean_cost - closed) <= 0.02 * closed
        assert time.perf_counter() - start < 30


def test_monitor_correctness(samples):
    with criterion("monitor correctness"):
        rng = random.Random(5)
        for _ in range(50):
            log = [SetSchedule(f"n{i}", "pm25", TickProgram.of([Term(rng.randrange(20),
                                                                     rng.randint(1, 40))]))
                   for i in range(rng.randint(1, 5))]
            expected = expected_behavior(log, (0, 5000))
            assert diff(expected, ObservedLog.from_timeline(expected)) == []

        for dead in (0, 4500, 9000, 30000):
            expected = expected_behavior([SetSchedule("n9", "pm25", TickProgram.of([Term(0, 1500)]))],
                                         (0, HOUR))
            ticks = expected.ticks[("n9", "pm25")]
            observed = ObservedLog((0, HOUR), tuple(Packet("n9", "pm25", t) for t in ticks
                                                    if t < dead))
            silent = [a for a in diff(expected, observed) if a.kind == NODE_SILENT]
            assert silent[0].first_tick == [t for t in ticks if t >= dead][2]
            history = []
            for anomaly in silent:
                history.append(maintenance_action(anomaly, history, None, MonitorThresholds(),
                                                  anomaly.first_tick + 600))
            assert history[0].kind != FIELD_REPLACE and escalation_ok(history)

        config = ScenarioConfig.load(samples / "scenario_lossy.yaml")
        platform = two_user_platform(config, ("collect_pm25.yaml",))
        platform.run_scenario(HOUR)
        run = platform.last_run
        fault_tick = config.faults[0]["tick"]
        first = min(a.first_tick for a in run.anomalies if a.kind == NODE_SILENT and a.node == "n17")
        assert first == fault_tick + 2 * 3000
        assert escalation_ok(run.actions)
        assert [a.kind for a in run.actions if a.node == "n17"][:2] == ["Restart", "FieldReplace"]


DIGEST_SCRIPT = """
import hashlib, sys
from pathlib import Path
from wsnfaas.platform import Platform
from wsnfaas.simcore import ScenarioConfig
samples = Path(sys.argv[1])
p = Platform(ScenarioConfig.load(samples / "scenario.yaml"))
for doc in ("collect_pm25.yaml", "alert_pm25.yaml"):
    p.submit_function((samples / doc).read_text())
p.run_scenario(36000)
for kind in ("ledger", "deliveries", "anomalies"):
    print(kind, hashlib.sha256(p.render(kind).encode()).hexdigest())
"""


def test_end_to_end_determinism(city_config, tmp_path):
    with criterion("end-to-end determinism at 10/40/100 scale"):
        exports = []
        for i in range(2):
            platform = two_user_platform(city_config)
            start = time.perf_counter()
            platform.run_scenario(HOUR)
            assert time.perf_counter() - start < 60
            exports.append([platform.export(k, tmp_path / f"{i}-{k}").read_bytes()
                            for k in ("ledger", "deliveries", "anomalies")])
        assert exports[0] == exports[1]
        assert exports[0][0].count(b"\n") > 1
        here = [f"{k} {hashlib.sha256(b).hexdigest()}"
                for k, b in zip(("ledger", "deliveries", "anomalies"), exports[0])]
        for hashseed in ("1", "4242"):
            env = dict(os.environ, PYTHONHASHSEED=hashseed)
            out = subprocess.run([sys.executable, "-c", DIGEST_SCRIPT, str(SAMPLES)], env=env,
                                 capture_output=True, text=True, check=True).stdout
            assert out.splitlines() == here
