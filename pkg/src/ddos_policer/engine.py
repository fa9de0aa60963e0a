"""Deterministic tick-driven simulation of the victim's interdomain link.

Senders emit packets every tick. Packets are classified into the fair-queued
link; while the defense is active, traffic bound for the policed queue first
passes the congestion policer. Each tick the link serves the queues, senders
learn what was delivered or lost (one tick later), and one metrics row is
recorded.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .model import PACKET_BITS, FlowTable, PacketRecord, PolicerParams, admit_flows, load_allowlist, parse_source
from .policer import process_burst
from .scheduler import (
    BLOCK,
    Action,
    ClassifierRule,
    Layer,
    Match,
    QueueSpec,
    SchedulerConfig,
    SchedulerState,
    amplification_rules,
    classify,
    default_buffer,
    serve_tick,
)
from .traffic import (
    Feedback,
    OracleView,
    PopulationSpec,
    RateDistribution,
    SenderKind,
    attack_demand,
    build_population,
    offered_load,
)

SCHEMA_VERSION = 1
CLASSES = ("legit", "attack", "premium", "udp")


class ConfigError(ValueError):
    """A scenario failed validation; ``problems`` lists every violation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(self.problems))


class PolicerState(enum.IntEnum):
    IDLE = 0
    ACTIVE = 1


@dataclass
class ActivationConfig:
    utilization_threshold: float = 0.9
    loss_threshold: float = 0.01  # mean over the hold window
    hold_ticks: int = 100
    activate_at: Optional[int] = None
    deactivate_at: Optional[int] = None
    auto: bool = True

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.utilization_threshold <= 1:
            out.append("activation.utilization_threshold must be in (0, 1]")
        if not 0 <= self.loss_threshold < 1:
            out.append("activation.loss_threshold must be in [0, 1)")
        if self.hold_ticks < 1:
            out.append("activation.hold_ticks must be >= 1")
        return out


@dataclass
class ActivationController:
    """Hysteresis switch between idle and active policing."""

    config: ActivationConfig
    state: PolicerState = PolicerState.IDLE
    streak: int = 0
    # per-tick loss over the current streak; AIMD loss comes in bursts, so
    # it is judged on average rather than tick by tick
    losses: deque = field(default_factory=deque, repr=False)

    def _reset(self, state: PolicerState) -> None:
        self.state, self.streak = state, 0
        self.losses.clear()

    @property
    def active(self) -> bool:
        return self.state is PolicerState.ACTIVE


def activation_step(ctrl: ActivationController, utilization: float, loss: float,
                    t: Optional[int] = None) -> PolicerState:
    """Advance the controller by one tick of observed utilization and loss.

    Utilization must be past its threshold on each of ``hold_ticks`` ticks in
    a row, and the mean loss over those ticks past the loss threshold (below
    both to switch back off). Victim-forced switch times win over the automatic rule.
    """
    cfg = ctrl.config
    if t is not None and cfg.activate_at is not None and t == cfg.activate_at:
        ctrl._reset(PolicerState.ACTIVE)
        return ctrl.state
    if t is not None and cfg.deactivate_at is not None and t == cfg.deactivate_at:
        ctrl._reset(PolicerState.IDLE)
        return ctrl.state
    if not cfg.auto:
        return ctrl.state
    idle = ctrl.state is PolicerState.IDLE
    qualifies = utilization > cfg.utilization_threshold if idle else utilization < cfg.utilization_threshold
    if not qualifies:
        ctrl._reset(ctrl.state)
        return ctrl.state
    ctrl.streak += 1
    ctrl.losses.append(loss)
    if ctrl.streak >= cfg.hold_ticks:
        mean_loss = sum(ctrl.losses) / len(ctrl.losses)
        if idle and mean_loss > cfg.loss_threshold:
            ctrl._reset(PolicerState.ACTIVE)
        elif not idle and mean_loss < cfg.loss_threshold:
            ctrl._reset(PolicerState.IDLE)
        else:
            ctrl.losses.popleft()  # slide the window
            ctrl.streak -= 1
    return ctrl.state


@dataclass
class PolicerConfig:
    period: float = 5.0  # seconds
    loss_weight: float = 0.5
    loss_threshold: float = 0.05
    syn_budget_fraction: float = 0.05
    idle_eviction_periods: Optional[int] = 64


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    duration: int = 3000
    tick_length: float = 0.01
    link_bps: float = 1e9
    queues: list[QueueSpec] = field(default_factory=lambda: [QueueSpec("tcp", 0.9), QueueSpec("udp", 0.1)])
    rules: Optional[list[ClassifierRule]] = None
    policed_queue: str = "tcp"
    policer: PolicerConfig = field(default_factory=PolicerConfig)
    population: PopulationSpec = field(default_factory=PopulationSpec)
    activation: ActivationConfig = field(default_factory=ActivationConfig)
    allowlist: Optional[list[int]] = None  # None admits every generated sender
    queue_delay: float = 0.2
    steady_fraction: float = 0.2
    seed: int = 0

    @property
    def link_capacity(self) -> float:
        """Link rate in packets per tick."""
        return self.link_bps * self.tick_length / PACKET_BITS

    @property
    def period_ticks(self) -> int:
        return max(1, round(self.policer.period / self.tick_length))

    @property
    def policed_weight(self) -> float:
        for q in self.queues:
            if q.name == self.policed_queue:
                return q.weight
        return 0.0

    @property
    def layer_bandwidth(self) -> float:
        """Bandwidth of the policed queue in packets per detection period."""
        return self.policed_weight * self.link_capacity * self.period_ticks

    def queue_capacity(self, q: QueueSpec) -> int:
        """Buffer size of ``q`` in packets: explicit, or ``queue_delay`` worth of its share."""
        if q.buffer_capacity is not None:
            return q.buffer_capacity
        return default_buffer(q.weight, self.link_capacity, self.tick_length, self.queue_delay)

    def scheduler_config(self) -> SchedulerConfig:
        rules = list(self.rules) if self.rules is not None else default_rules(self.queues, self.policed_queue)
        return SchedulerConfig(list(self.queues), rules, self.link_capacity, self.policed_queue)

    def policer_params(self) -> PolicerParams:
        p = self.policer
        return PolicerParams(
            period=self.period_ticks,
            loss_weight=p.loss_weight,
            loss_threshold=p.loss_threshold,
            bandwidth=self.layer_bandwidth,
            syn_budget_fraction=p.syn_budget_fraction,
            idle_eviction_periods=p.idle_eviction_periods,
        )

    def problems(self) -> list[str]:
        out = []
        if self.duration <= 0:
            out.append("duration must be > 0 ticks")
        if self.tick_length <= 0:
            out.append("tick_length must be > 0 seconds")
        if self.link_bps <= 0:
            out.append("link_bps must be > 0")
        if self.queue_delay <= 0:
            out.append("queue_delay must be > 0 seconds")
        if not 0 < self.steady_fraction <= 1:
            out.append("steady_fraction must be in (0, 1]")
        if self.tick_length > 0 and self.link_bps > 0:
            out.extend(self.scheduler_config().problems())
        if self.policed_queue not in {q.name for q in self.queues}:
            out.append(f"policed_queue {self.policed_queue!r} is not a queue")
        p = self.policer
        if p.period <= 0:
            out.append("policer.period must be > 0 seconds")
        elif self.tick_length > 0 and p.period < self.tick_length:
            out.append("policer.period is shorter than one tick")
        try:
            if self.layer_bandwidth > 0:
                PolicerParams(period=max(1, self.period_ticks), loss_weight=p.loss_weight,
                              loss_threshold=p.loss_threshold, bandwidth=self.layer_bandwidth,
                              syn_budget_fraction=p.syn_budget_fraction,
                              idle_eviction_periods=p.idle_eviction_periods)
        except ValueError as exc:
            out.extend(f"PolicerParams: {m}" for m in str(exc).split("; "))
        out.extend(self.population.problems())
        out.extend(self.activation.problems())
        return out

    def validate(self) -> "ScenarioConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    # --- JSON round trip -------------------------------------------------

    def to_dict(self) -> dict:
        pop = asdict(self.population)
        pop["rate_distribution"] = self.population.rate_distribution.value
        pop["attack_kind"] = self.population.attack_kind.value
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "duration": self.duration,
            "tick_length": self.tick_length,
            "link_bps": self.link_bps,
            "queue_delay": self.queue_delay,
            "steady_fraction": self.steady_fraction,
            "scheduler": {
                "queues": [q.to_dict() for q in self.queues],
                "rules": None if self.rules is None else [r.to_dict() for r in self.rules],
                "policed_queue": self.policed_queue,
            },
            "policer": asdict(self.policer),
            "population": pop,
            "activation": asdict(self.activation),
            "allowlist": self.allowlist,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "ScenarioConfig":
        problems: list[str] = []
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            problems.append(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        known = {"schema_version", "name", "seed", "duration", "tick_length", "link_bps", "queue_delay",
                 "steady_fraction", "scheduler", "policer", "population", "activation", "allowlist"}
        for key in d:
            if key not in known:
                problems.append(f"unknown top-level key {key!r}")

        def section(name, klass, convert=None):
            raw = dict(d.get(name) or {})
            names = {f.name for f in fields(klass)}
            for key in raw:
                if key not in names:
                    problems.append(f"{name}: unknown key {key!r}")
            raw = {k: v for k, v in raw.items() if k in names}
            if convert:
                raw = convert(raw)
            try:
                return klass(**raw)
            except (TypeError, ValueError) as exc:
                problems.append(f"{name}: {exc}")
                return klass()

        def pop_convert(raw):
            try:
                if "rate_distribution" in raw:
                    raw["rate_distribution"] = RateDistribution(raw["rate_distribution"])
                if "attack_kind" in raw:
                    raw["attack_kind"] = SenderKind(raw["attack_kind"])
            except ValueError as exc:
                problems.append(f"population: {exc}")
                raw.pop("rate_distribution", None)
                raw.pop("attack_kind", None)
            return raw

        sched = d.get("scheduler") or {}
        queues, rules = [], None
        try:
            queues = [QueueSpec.from_dict(q) for q in sched.get("queues", [])] or ScenarioConfig().queues
            if sched.get("rules") is not None:
                rules = [ClassifierRule.from_dict(r) for r in sched["rules"]]
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"scheduler: {exc!r}")

        allowlist = d.get("allowlist")
        if isinstance(allowlist, str):
            path = Path(allowlist)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            try:
                allowlist = sorted(load_allowlist(path))
            except (OSError, ValueError) as exc:
                problems.append(f"allowlist: {exc}")
                allowlist = None
        elif isinstance(allowlist, list):
            try:
                allowlist = sorted(parse_source(str(s)) for s in allowlist)
            except ValueError as exc:
                problems.append(f"allowlist: {exc}")
                allowlist = None

        cfg = cls(
            name=str(d.get("name", "scenario")),
            seed=int(d.get("seed", 0)),
            duration=int(d.get("duration", 3000)),
            tick_length=float(d.get("tick_length", 0.01)),
            link_bps=float(d.get("link_bps", 1e9)),
            queue_delay=float(d.get("queue_delay", 0.2)),
            steady_fraction=float(d.get("steady_fraction", 0.2)),
            queues=queues,
            rules=rules,
            policed_queue=str(sched.get("policed_queue", "tcp")),
            policer=section("policer", PolicerConfig),
            population=section("population", PopulationSpec, pop_convert),
            activation=section("activation", ActivationConfig),
            allowlist=allowlist,
        )
        problems.extend(cfg.problems())
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: not valid JSON ({exc})"]) from None
        if not isinstance(raw, dict):
            raise ConfigError([f"{path}: top level must be an object"])
        return cls.from_dict(raw, base_dir=path.parent)


def default_rules(queues: list[QueueSpec], default_queue: str) -> list[ClassifierRule]:
    names = {q.name for q in queues}
    rules = amplification_rules("udp") if "udp" in names else []
    rules.append(ClassifierRule(Match(), default_queue, Action.QUEUE, Layer.DEFAULT))
    return rules


@dataclass
class TimeSeries:
    columns: list[str]
    rows: list[tuple]

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self, stream: io.TextIOBase) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow(_fmt(v) for v in row)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            self.to_csv(fh)


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 9))
    return v


@dataclass
class RunResult:
    config: ScenarioConfig
    series: TimeSeries
    counts: dict[str, int]
    activated_at: Optional[int]
    decisions: int = 0
    sender_goodput: dict[int, int] = field(default_factory=dict)
    sender_class: dict[int, str] = field(default_factory=dict)

    def summary(self) -> dict:
        return summarize(self)


def run(config: ScenarioConfig, decision_hook=None) -> RunResult:
    """Simulate ``config`` for ``config.duration`` ticks."""
    config.validate()
    sched = config.scheduler_config()
    state = SchedulerState.build(sched, config.tick_length)
    for q in sched.queues:
        state.queues[q.name].capacity = config.queue_capacity(q)
    params = config.policer_params()
    policed = config.policed_queue
    policed_fifo = state.queues[policed]

    senders = build_population(config.population, sched.link_capacity, config.seed)
    senders.sort(key=lambda s: s.id)
    sender_class = {s.id: s.traffic_class for s in senders}
    allow = set(config.allowlist) if config.allowlist is not None else set(sender_class)
    table = FlowTable(allowlist=allow)

    route = {True: {}, False: {}}
    for s in senders:
        pkt = PacketRecord(s.id, 0, s.packet_kind, s.service)
        for active in (True, False):
            route[active][s.id] = classify(sched.rules, pkt, active)

    ctrl = ActivationController(config.activation)
    rng = np.random.default_rng([config.seed, 7])
    phase_rng = np.random.default_rng([config.seed, 11])
    qnames = [q.name for q in sched.queues]
    columns = (["t", "state"] + [f"offered_{c}" for c in CLASSES] + [f"goodput_{c}" for c in CLASSES]
               + ["drop_window", "drop_queue", "drop_denied", "drop_filter", "queued", "queued_delta",
                  "utilization", "window_total", "n_flows"]
               + [f"q_{n}_tx" for n in qnames] + [f"q_{n}_drop" for n in qnames])
    rows = []
    counts = {k: 0 for k in ("offered", "delivered", "drop_window", "drop_queue", "drop_denied", "drop_filter")}
    goodput_by_sender = {s.id: 0 for s in senders}
    last_emit: dict[int, int] = {}
    delivered_prev: dict[int, int] = {}
    lost_prev: dict[int, int] = {}
    backlog: dict[int, int] = {}
    no_fb = Feedback()
    capacity = sched.link_capacity
    activated_at = None
    decisions = 0
    queued_prev = 0
    period = params.period
    lth = params.loss_threshold

    def hook(t, d):
        nonlocal decisions
        decisions += 1
        if decision_hook is not None:
            decision_hook(t, d)

    for t in range(config.duration):
        active = ctrl.state is PolicerState.ACTIVE
        routes = route[active]
        offered = dict.fromkeys(CLASSES, 0)
        goodput = dict.fromkeys(CLASSES, 0)
        d_window = d_queue = d_denied = d_filter = 0
        lost: dict[int, int] = {}
        q_drop_before = {n: q.dropped for n, q in state.queues.items()}

        emissions = []
        for s in senders:
            sid = s.id
            if s.kind is SenderKind.ORACLE and active:
                e = table.entries.get(sid)
                view = OracleView(e.window, period, lth) if e is not None else None
            else:
                view = None
            d = delivered_prev.get(sid, 0)
            lo = lost_prev.get(sid, 0)
            qd = backlog.get(sid, 0)
            fb = Feedback(d, lo, qd) if (d or lo or qd) else no_fb
            n = offered_load(s, t, fb, view)
            if n:
                emissions.append((s, n))
                last_emit[sid] = t
                offered[s.traffic_class] += n

        if len(emissions) > 1:
            order = rng.permutation(len(emissions))
        else:
            order = range(len(emissions))
        for idx in order:
            s, n = emissions[idx]
            sid = s.id
            qname = routes[sid]
            if qname == BLOCK:
                d_filter += n
                lost[sid] = n
                continue
            if active and qname == policed:
                r = process_burst(table, policed_fifo, sid, n, t, params, s.packet_kind, None, hook)
                d_window += r.window_dropped
                d_queue += r.queue_dropped
                d_denied += r.denied
                miss = n - r.enqueued
            else:
                acc = state.queues[qname].push(sid, n, t)
                miss = n - acc
                d_queue += miss
            if miss:
                lost[sid] = miss
            if n > miss:
                backlog[sid] = backlog.get(sid, 0) + n - miss

        served = serve_tick(sched, state)
        delivered: dict[int, int] = {}
        q_tx = dict.fromkeys(qnames, 0)
        for qname, runs in served.items():
            for src, k in runs:
                delivered[src] = delivered.get(src, 0) + k
                goodput[sender_class[src]] += k
                q_tx[qname] += k
        for src, k in delivered.items():
            goodput_by_sender[src] += k
            left = backlog[src] - k
            if left:
                backlog[src] = left
            else:
                del backlog[src]

        queued = state.backlog
        total_offered = sum(offered.values())
        total_tx = sum(q_tx.values())
        drops = d_window + d_queue + d_denied + d_filter
        utilization = total_tx / capacity
        row = ([t, int(ctrl.state)] + [offered[c] for c in CLASSES] + [goodput[c] for c in CLASSES]
               + [d_window, d_queue, d_denied, d_filter, queued, queued - queued_prev, utilization,
                  table.window_total, len(table)]
               + [q_tx[n] for n in qnames]
               + [state.queues[n].dropped - q_drop_before[n] for n in qnames])
        rows.append(tuple(row))
        counts["offered"] += total_offered
        counts["delivered"] += total_tx
        counts["drop_window"] += d_window
        counts["drop_queue"] += d_queue
        counts["drop_denied"] += d_denied
        counts["drop_filter"] += d_filter
        queued_prev = queued
        delivered_prev, lost_prev = delivered, lost

        loss = drops / total_offered if total_offered else 0.0
        before = ctrl.state
        after = activation_step(ctrl, utilization, loss, t + 1)
        if before is PolicerState.IDLE and after is PolicerState.ACTIVE:
            activated_at = t + 1 if activated_at is None else activated_at
            # the monitoring view: everyone who sent during the last period
            recent = [sid for sid, last in last_emit.items()
                      if t - last < period and routes_to(route[True], sid, policed)]
            # Each source's period starts at its own first packet; spread
            # the batch so period budgets don't all refill on the same tick.
            for e in admit_flows(table, sorted(recent), params, t + 1):
                e.period_start = t + 1 - int(phase_rng.integers(0, max(1, period)))
        elif before is PolicerState.ACTIVE and after is PolicerState.IDLE:
            table.clear()
            params.fair_share = params.bandwidth
        elif after is PolicerState.ACTIVE and t % period == 0 and len(table):
            table.evict_idle(t, params)

    series = TimeSeries(columns, rows)
    return RunResult(config, series, counts, activated_at, decisions, goodput_by_sender, sender_class)


def routes_to(routes: dict[int, str], sid: int, queue: str) -> bool:
    return routes.get(sid) == queue


@dataclass(frozen=True)
class Bounds:
    fair: float
    attacker_cap: float
    legit_floor: float


def fair_share_bound(n_legit: int, n_attack: int, bandwidth: float, loss_threshold: float) -> Bounds:
    """Per-sender fair share and the attacker ceiling / legitimate floor."""
    n = n_legit + n_attack
    if n < 1:
        raise ValueError("need at least one flow")
    fair = bandwidth / n
    return Bounds(fair, (1 + loss_threshold) * n_attack * fair, (1 + loss_threshold) * fair)


def steady_slice(result: RunResult) -> slice:
    n = len(result.series.rows)
    start = n - max(1, int(round(n * result.config.steady_fraction)))
    return slice(start, n)


def period_sums(series: TimeSeries, column: str, start: int, period: int) -> np.ndarray:
    """Sum ``column`` over consecutive ``period``-tick windows starting at ``start``."""
    values = series.column(column)[start:]
    k = len(values) // period
    return values[: k * period].reshape(k, period).sum(axis=1)


def summarize(result: RunResult) -> dict:
    cfg = result.config
    series = result.series
    sl = steady_slice(result)
    ticks = sl.stop - sl.start
    period = cfg.period_ticks
    link = cfg.link_capacity
    per_tick_b = cfg.policed_weight * link  # layer bandwidth in packets/tick

    by_class: dict[str, list[int]] = {c: [] for c in CLASSES}
    for sid, c in result.sender_class.items():
        by_class[c].append(sid)
    n_l = len(by_class["legit"])
    n_a = len(by_class["attack"])

    steady = {}
    for c in CLASSES:
        g = series.column(f"goodput_{c}")[sl]
        o = series.column(f"offered_{c}")[sl]
        n = len(by_class[c])
        steady[c] = {
            "senders": n,
            "goodput_per_tick": float(g.mean()),
            "offered_per_tick": float(o.mean()),
            "goodput_per_sender": float(g.mean() / n) if n else 0.0,
            "share_of_layer": float(g.mean() / per_tick_b) if per_tick_b else 0.0,
            "share_of_link": float(g.mean() / link),
        }
    out: dict[str, Any] = {
        "name": cfg.name,
        "seed": cfg.seed,
        "duration_ticks": cfg.duration,
        "tick_length": cfg.tick_length,
        "link_packets_per_tick": link,
        "layer_packets_per_tick": per_tick_b,
        "period_ticks": period,
        "activated_at": result.activated_at,
        "decisions": result.decisions,
        "steady_ticks": ticks,
        "steady": steady,
        "totals": result.counts,
        "attack_demand_per_tick": attack_demand(cfg.population, link, cfg.seed),
        "config": cfg.to_dict(),  # enough to rerun this exact scenario
        "dedicated_queue_drops": {q.name: int(series.column(f"q_{q.name}_drop").sum())
                                  for q in cfg.queues if q.dedicated},
    }
    if n_l + n_a:
        b = fair_share_bound(n_l, n_a, per_tick_b, cfg.policer.loss_threshold)
        legit = steady["legit"]["goodput_per_sender"]
        attack_total = steady["attack"]["goodput_per_tick"]
        # a sender asking for less than the fair share is owed only its demand
        demand = cfg.population.legit_demand * link / n_l if n_l else 0.0
        owed = min(b.fair, demand)
        out["bounds"] = {
            "n_legit": n_l,
            "n_attack": n_a,
            "fair_share_per_tick": b.fair,
            "legit_demand_per_tick": demand,
            "attacker_cap_per_tick": b.attacker_cap,
            "legit_floor_per_tick": b.legit_floor,
            "legit_over_fair": legit / b.fair if b.fair else None,
            "attack_over_cap": attack_total / b.attacker_cap if b.attacker_cap else None,
            "theorem1_ok": bool(n_l == 0 or legit >= 0.98 * owed),
            "lemma1_ok": bool(lemma1_periods_ok(result, b)),
        }
    return out


def lemma1_transient(result: RunResult) -> float:
    """Slack for packets admitted in one period but delivered in the next.

    At most a full policed-queue buffer can straddle a period edge.
    """
    cfg = result.config
    for q in cfg.queues:
        if q.name == cfg.policed_queue:
            return float(cfg.queue_capacity(q))
    return 0.0


def attacker_period_goodput(result: RunResult) -> np.ndarray:
    """Attack goodput per detection period, from the first full period after activation."""
    if result.activated_at is None:
        return np.zeros(0)
    period = result.config.period_ticks
    start = result.activated_at + period
    return period_sums(result.series, "goodput_attack", start, period)


def lemma1_periods_ok(result: RunResult, b: Bounds) -> bool:
    sums = attacker_period_goodput(result)
    if sums.size == 0:
        return True
    cap = b.attacker_cap * result.config.period_ticks + lemma1_transient(result)
    return bool((sums <= cap).all())


def write_outputs(result: RunResult, out_dir: str | Path, stem: Optional[str] = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or result.config.name
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.summary.json"
    result.series.write_csv(csv_path)
    json_path.write_text(json.dumps(summarize(result), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def with_overrides(config: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(config, **changes)
