"""The serverless platform: function store, serialized commands, runs, exports.

Every mutation goes through :meth:`Platform.execute`, which hands out a
sequence number and processes commands one at a time under a lock, so any
interleaving of callers is equivalent to running them in sequence order.
Queries read immutable snapshots.

With a home directory the platform persists itself as plain files::

    home/scenario.yaml          scenario in effect
    home/functions/<id>.yaml    submitted document text
    home/functions/<id>.json    owner, status, violations
    home/users.json             registered users
    home/run/*                  exports of the last run
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Union

import yaml

from .billing import Invoice, Ledger, invoice
from .errors import (
    ConfigError,
    FunctionSyntaxError,
    UnknownDevice,
    UnknownFunction,
    UnknownUser,
    WsnError,
)
from .functions import (
    FunctionSpec,
    SpecLimits,
    Subscription,
    UserState,
    Violation,
    compile_to_subscriptions,
    parse_function,
    validate,
)
from .lifecycle import LifecyclePlan, LifecycleReport, simulate_lifecycle
from .middleware import DeliveryRecord, Key, MergedSchedule, aggregate, emit_instructions, reaggregate
from .monitor import Anomaly, MaintenanceAction
from .runner import RunResult, run_schedules
from .scheduler import Accepted, LoadBook, TierPolicy, admit, tier_policies
from .simcore import Instruction, ScenarioConfig, Topology, build_topology

log = logging.getLogger(__name__)

ACTIVE = "Active"
REJECTED = "Rejected"
CANCELLED = "Cancelled"

ARTIFACTS = {
    "ledger": "ledger.csv",
    "deliveries": "deliveries.ndjson",
    "anomalies": "anomalies.ndjson",
    "events": "events.ndjson",
    "maintenance": "maintenance.ndjson",
    "summary": "summary.yaml",
}


# -- commands ---------------------------------------------------------------

@dataclass(frozen=True)
class SubmitFunction:
    spec_text: str
    user: str | None = None


@dataclass(frozen=True)
class CancelFunction:
    function_id: str


@dataclass(frozen=True)
class RunScenario:
    config: ScenarioConfig | None
    until_tick: int


@dataclass(frozen=True)
class QueryResults:
    user: str
    window: tuple[int, int]


@dataclass(frozen=True)
class QueryInvoice:
    user: str
    window: tuple[int, int]


@dataclass(frozen=True)
class RunLifecycle:
    plan_file: str
    n: int
    seed: int


@dataclass(frozen=True)
class MonitorReport:
    window: tuple[int, int]


Command = Union[SubmitFunction, CancelFunction, RunScenario, QueryResults, QueryInvoice,
                RunLifecycle, MonitorReport]


# -- function store ---------------------------------------------------------

@dataclass
class StoredFunction:
    id: str
    spec_text: str
    owner: str
    status: str
    order: int
    violations: list[Violation] = field(default_factory=list)

    def meta(self) -> dict:
        return {"id": self.id, "owner": self.owner, "status": self.status, "order": self.order,
                "violations": [v.to_dict() for v in self.violations]}


@dataclass(frozen=True)
class SubmitResult:
    function_id: str
    status: str
    reason: str | None = None
    violations: tuple[Violation, ...] = ()
    instructions: tuple[Instruction, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.status == ACTIVE

    def to_dict(self) -> dict:
        return {"functionId": self.function_id, "status": self.status, "reason": self.reason,
                "violations": [v.to_dict() for v in self.violations],
                "instructions": len(self.instructions)}


@dataclass(frozen=True)
class MonitorView:
    window: tuple[int, int]
    anomalies: tuple[Anomaly, ...]
    actions: tuple[MaintenanceAction, ...]

    def to_ndjson(self) -> str:
        lines = [a.to_json() for a in self.anomalies]
        lines += [json.dumps({"action": a.to_dict()}, sort_keys=True, separators=(",", ":"))
                  for a in self.actions]
        return "".join(line + "\n" for line in lines)


_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]{0,63}$")


def _ndjson(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in rows)


class Platform:
    def __init__(self, config: ScenarioConfig | None = None, home: str | Path | None = None,
                 users: Iterable[str] = ()):
        self.home = Path(home) if home is not None else None
        self._lock = threading.RLock()
        self._seq = 0
        self.users: set[str] = set(users)
        self.store: dict[str, StoredFunction] = {}
        self._order = 0
        self.last_run: RunResult | None = None
        self._results: dict[str, Any] | None = None
        self._configure(config or ScenarioConfig())

    # -- state ---------------------------------------------------------------

    def _configure(self, config: ScenarioConfig) -> None:
        self.config = config
        self.topology: Topology = build_topology(config)
        self.policies: dict[int, TierPolicy] = tier_policies(config.tiers)
        self.limits = SpecLimits(**config.limits) if config.limits else SpecLimits()
        capacity = {d.id: int(config.capacity[d.kind.value])
                    for d in self.topology.devices.values()}
        self.book = LoadBook(capacity, config.ticks_per_minute)
        self.subscriptions: list[Subscription] = []
        self.schedules: dict[Key, MergedSchedule] = {}

    @property
    def sequence(self) -> int:
        return self._seq

    def register_user(self, user: str) -> None:
        with self._lock:
            self.users.add(user)
            self._save_users()

    def active_functions(self, user: str | None = None) -> list[StoredFunction]:
        return [f for f in sorted(self.store.values(), key=lambda f: f.order)
                if f.status == ACTIVE and (user is None or f.owner == user)]

    def instructions(self) -> list[Instruction]:
        """The full instruction set currently in force."""
        return emit_instructions(self.schedules)

    # -- command processing --------------------------------------------------

    def execute(self, command: Command) -> Any:
        with self._lock:
            self._seq += 1
            log.debug("command %d: %s", self._seq, type(command).__name__)
            if isinstance(command, SubmitFunction):
                return self._submit(command.spec_text, command.user)
            if isinstance(command, CancelFunction):
                return self._cancel(command.function_id)
            if isinstance(command, RunScenario):
                return self._run(command.config, command.until_tick)
            if isinstance(command, QueryResults):
                return self._query_results(command.user, command.window)
            if isinstance(command, QueryInvoice):
                return self._invoice(command.user, command.window)
            if isinstance(command, RunLifecycle):
                plan = LifecyclePlan.load(command.plan_file)
                return simulate_lifecycle(plan, command.n, command.seed)
            if isinstance(command, MonitorReport):
                return self._monitor(command.window)
            raise TypeError(f"unknown command {command!r}")

    def submit_function(self, spec_text: str, user: str | None = None) -> SubmitResult:
        return self.execute(SubmitFunction(spec_text, user))

    def cancel_function(self, function_id: str) -> list[Instruction]:
        return self.execute(CancelFunction(function_id))

    def run_scenario(self, until_tick: int, config: ScenarioConfig | None = None) -> dict:
        return self.execute(RunScenario(config, until_tick))

    def query_results(self, user: str, window: tuple[int, int]) -> list[DeliveryRecord]:
        return self.execute(QueryResults(user, window))

    def query_invoice(self, user: str, window: tuple[int, int]) -> Invoice:
        return self.execute(QueryInvoice(user, window))

    def run_lifecycle(self, plan_file: str, n: int, seed: int) -> LifecycleReport:
        return self.execute(RunLifecycle(plan_file, n, seed))

    def monitor_report(self, window: tuple[int, int]) -> MonitorView:
        return self.execute(MonitorReport(window))

    # -- submission ----------------------------------------------------------

    def _new_id(self, spec: FunctionSpec | None) -> tuple[str, Violation | None]:
        if spec is not None and spec.id:
            if spec.id in self.store:
                return self._generated_id(), Violation("DuplicateId",
                                                       f"function id {spec.id!r} already exists")
            if not _ID_RE.match(spec.id):
                return self._generated_id(), Violation("InvalidId", f"bad function id {spec.id!r}")
            return spec.id, None
        return self._generated_id(), None

    def _generated_id(self) -> str:
        n = len(self.store) + 1
        while f"fn-{n:04d}" in self.store:
            n += 1
        return f"fn-{n:04d}"

    def _record(self, fid: str, text: str, owner: str, status: str,
                violations: list[Violation]) -> StoredFunction:
        self._order += 1
        entry = StoredFunction(fid, text, owner, status, self._order, violations)
        self.store[fid] = entry
        self._save_function(entry)
        return entry

    def _reject(self, fid: str, text: str, owner: str, reason: str,
                violations: list[Violation]) -> SubmitResult:
        self._record(fid, text, owner, REJECTED, violations)
        log.info("rejected %s (%s)", fid, reason)
        return SubmitResult(fid, REJECTED, reason, tuple(violations))

    def _submit(self, text: str, user: str | None) -> SubmitResult:
        try:
            spec = parse_function(text)
        except FunctionSyntaxError as exc:
            fid, _ = self._new_id(None)
            return self._reject(fid, text, user or "anonymous", "SyntaxError",
                                [Violation(type(exc).__name__, f"{exc} at offset {exc.position}")])
        owner = user or spec.user or "anonymous"
        fid, id_problem = self._new_id(spec)
        violations = validate(spec, self.limits,
                              UserState(len(self.active_functions(owner))))
        if id_problem is not None:
            violations.insert(0, id_problem)
        if violations:
            return self._reject(fid, text, owner, "Violations", violations)
        return self._admit(fid, text, owner, spec)

    def _admit(self, fid: str, text: str, owner: str, spec: FunctionSpec,
               record: bool = True) -> SubmitResult:
        try:
            subs = compile_to_subscriptions(spec, self.topology, fid, owner)
        except (WsnError, UnknownDevice) as exc:
            return self._reject(fid, text, owner, "Violations",
                                [Violation(type(exc).__name__, str(exc))])
        trial = self.book.copy()
        for sub in subs:
            verdict = admit(sub, trial)
            if not isinstance(verdict, Accepted):
                detail = f"node {verdict.node}"
                if verdict.would_be is not None:
                    detail += f": {verdict.would_be} > {verdict.capacity} per minute"
                return self._reject(fid, text, owner, "CapacityExceeded",
                                    [Violation(verdict.reason, detail)])
        self.book = trial
        self.subscriptions.extend(subs)
        keys = {(s.node, s.resource) for s in subs}
        self.schedules = reaggregate(self.schedules, self.subscriptions, keys)
        instructions = emit_instructions(self.schedules, keys)
        self.users.add(owner)
        if record:
            self._record(fid, text, owner, ACTIVE, [])
            self._save_users()
        return SubmitResult(fid, ACTIVE, None, (), tuple(instructions))

    def _cancel(self, fid: str) -> list[Instruction]:
        entry = self.store.get(fid)
        if entry is None or entry.status != ACTIVE:
            raise UnknownFunction(f"no active function {fid!r}")
        entry.status = CANCELLED
        self._save_function(entry)
        touched_nodes = self.book.release(fid)
        keys = {(s.node, s.resource) for s in self.subscriptions if s.function_id == fid}
        self.subscriptions = [s for s in self.subscriptions if s.function_id != fid]
        self.schedules = reaggregate(self.schedules, self.subscriptions, keys)
        instructions = emit_instructions(self.schedules, keys)
        # drop keys left empty once their clearing instruction is out
        self.schedules = {k: v for k, v in self.schedules.items() if v.contributors}
        log.info("cancelled %s on %d nodes", fid, len(touched_nodes))
        return instructions

    def _replay(self) -> None:
        """Re-admit stored Active functions, in submission order, on the current scenario."""
        for entry in self.active_functions():
            try:
                spec = parse_function(entry.spec_text)
            except FunctionSyntaxError as exc:
                entry.status, entry.violations = REJECTED, [Violation("SyntaxError", str(exc))]
                self._save_function(entry)
                continue
            result = self._admit(entry.id, entry.spec_text, entry.owner, spec, record=False)
            if not result.accepted:
                # _reject re-recorded it; keep its original order
                self.store[entry.id].order = entry.order
                self._save_function(self.store[entry.id])

    # -- runs and queries ----------------------------------------------------

    def _run(self, config: ScenarioConfig | None, until: int) -> dict:
        if until < 0:
            raise ConfigError("until must be >= 0")
        if config is not None and config != self.config:
            self._configure(config)
            self._replay()
            self._save_config()
        result = run_schedules(self.config, self.schedules, self.policies, until)
        self.last_run = result
        self._results = None
        summary = result.summary(self.policies)
        if self.home is not None:
            for kind in ARTIFACTS:
                self.export(kind, self.home / "run" / ARTIFACTS[kind])
        return summary

    def _loaded_results(self) -> dict[str, Any]:
        if self.last_run is not None:
            r = self.last_run
            return {"deliveries": r.deliveries, "ledger": r.ledger, "anomalies": r.anomalies,
                    "actions": r.actions}
        if self._results is None:
            self._results = {"deliveries": [], "ledger": Ledger(), "anomalies": [], "actions": []}
            run_dir = self.home / "run" if self.home is not None else None
            if run_dir is not None and (run_dir / ARTIFACTS["ledger"]).exists():
                self._results = _read_run(run_dir)
        return self._results

    def _check_user(self, user: str) -> None:
        if user not in self.users:
            raise UnknownUser(f"unknown user {user!r}")

    def _query_results(self, user: str, window: tuple[int, int]) -> list[DeliveryRecord]:
        self._check_user(user)
        start, end = window
        return [r for r in self._loaded_results()["deliveries"]
                if r.user == user and start <= r.tick < end]

    def _invoice(self, user: str, window: tuple[int, int]) -> Invoice:
        self._check_user(user)
        return invoice(self._loaded_results()["ledger"], user, window)

    def _monitor(self, window: tuple[int, int]) -> MonitorView:
        start, end = window
        res = self._loaded_results()
        return MonitorView(window,
                           tuple(a for a in res["anomalies"] if start <= a.first_tick < end),
                           tuple(a for a in res["actions"] if start <= a.tick < end))

    # -- export --------------------------------------------------------------

    def render(self, kind: str) -> str:
        run = self.last_run
        if kind == "ledger":
            return (run.ledger if run is not None else Ledger()).to_csv()
        if kind == "deliveries":
            return _ndjson(r.to_dict() for r in (run.deliveries if run else []))
        if kind == "anomalies":
            return _ndjson(a.to_dict() for a in (run.anomalies if run else []))
        if kind == "events":
            return "".join(e.to_json() + "\n" for e in (run.events if run else []))
        if kind == "maintenance":
            rows = []
            if run is not None:
                rows = [{"action": a.to_dict()} for a in run.actions]
                rows += [{"cost": c.to_dict()} for c in run.maintenance.entries]
            return _ndjson(rows)
        if kind == "summary":
            summary = run.summary(self.policies) if run is not None else {}
            return yaml.safe_dump(summary, sort_keys=False)
        raise ValueError(f"unknown artifact {kind!r}; choose from {sorted(ARTIFACTS)}")

    def export(self, kind: str, path: str | Path) -> Path:
        text = self.render(kind)
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8", newline="")
        except OSError as exc:
            raise ConfigError(f"cannot write {path}: {exc}") from exc
        return path

    # -- persistence ---------------------------------------------------------

    def _save_function(self, entry: StoredFunction) -> None:
        if self.home is None:
            return
        folder = self.home / "functions"
        folder.mkdir(parents=True, exist_ok=True)
        (folder / f"{entry.id}.yaml").write_text(entry.spec_text, encoding="utf-8")
        (folder / f"{entry.id}.json").write_text(json.dumps(entry.meta(), indent=2, sort_keys=True),
                                                 encoding="utf-8")

    def _save_users(self) -> None:
        if self.home is None:
            return
        self.home.mkdir(parents=True, exist_ok=True)
        (self.home / "users.json").write_text(json.dumps(sorted(self.users)), encoding="utf-8")

    def _save_config(self) -> None:
        if self.home is None:
            return
        self.home.mkdir(parents=True, exist_ok=True)
        (self.home / "scenario.yaml").write_text(
            yaml.safe_dump(self.config.to_dict(), sort_keys=False), encoding="utf-8")

    @classmethod
    def open(cls, home: str | Path, config: ScenarioConfig | None = None) -> "Platform":
        """Load a platform from ``home``, replaying its active functions."""
        home = Path(home)
        if config is None and (home / "scenario.yaml").exists():
            config = ScenarioConfig.load(home / "scenario.yaml")
        users = []
        if (home / "users.json").exists():
            users = json.loads((home / "users.json").read_text(encoding="utf-8"))
        platform = cls(config, home=None, users=users)
        folder = home / "functions"
        entries = []
        if folder.exists():
            for meta_path in sorted(folder.glob("*.json")):
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
                text = (folder / f"{meta['id']}.yaml").read_text(encoding="utf-8")
                entries.append(StoredFunction(
                    meta["id"], text, meta["owner"], meta["status"], meta["order"],
                    [Violation(v["code"], v["message"]) for v in meta.get("violations", [])]))
        for entry in sorted(entries, key=lambda e: e.order):
            platform.store[entry.id] = entry
            platform._order = max(platform._order, entry.order)
        platform.home = home
        platform._replay()
        platform._save_config()
        return platform


def _read_run(run_dir: Path) -> dict[str, Any]:
    ledger = Ledger.from_csv((run_dir / ARTIFACTS["ledger"]).read_text(encoding="utf-8"))
    deliveries = []
    path = run_dir / ARTIFACTS["deliveries"]
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            d = json.loads(line)
            deliveries.append(DeliveryRecord(d["functionId"], d["user"], d["tier"], d["node"],
                                             d["sensor"], d["tick"], d["deliveredTick"],
                                             d["value"], d["kind"], d["billedUnits"]))
    anomalies = []
    path = run_dir / ARTIFACTS["anomalies"]
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            d = json.loads(line)
            anomalies.append(Anomaly(d["kind"], d["node"], d["firstTick"], d["evidence"]))
    actions = []
    path = run_dir / ARTIFACTS["maintenance"]
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            d = json.loads(line)
            if "action" in d:
                a = d["action"]
                actions.append(MaintenanceAction(a["kind"], a["node"], a["tick"], a["reason"]))
    return {"deliveries": deliveries, "ledger": ledger, "anomalies": anomalies,
            "actions": actions}
