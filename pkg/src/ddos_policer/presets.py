"""Named experiment presets and sweep expansion.

A preset expands to one or more named points, each a complete
``ScenarioConfig``. ``--set key=value`` overrides address the scenario's JSON
form with dotted keys (``population.n_attack=50``) and apply to every point.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from .engine import (
    ActivationConfig,
    ConfigError,
    ScenarioConfig,
    default_rules,
    run,
    summarize,
    write_outputs,
)
from .scheduler import Action, ClassifierRule, Layer, Match, QueueSpec
from .traffic import PREMIUM_NET, PopulationSpec, RateDistribution, SenderKind

log = logging.getLogger(__name__)

SHREW_OFF_RATIOS = (0.0, 2.0, 6.0, 18.0)
SHREW_SCALES = (1, 5, 10)
AGGRESSIVENESS_SWEEP = (0.9, 2.0, 4.0)
STRATEGY_KINDS = (SenderKind.COMPLIANT_AIMD, SenderKind.ORACLE)

# Strategic-attack experiments: 50 ms ticks, 5 s detection periods, 100
# legitimate senders each running two parallel Reno connections.
SWEEP_TICK = 0.05
SWEEP_N_LEGIT = 100
SWEEP_SENDER = dict(rtt=2, rto=2, max_backoff=1, connections=2)


@dataclass
class Point:
    name: str
    config: ScenarioConfig
    swept: dict[str, Any] = field(default_factory=dict)


def _testbed(name: str, duration: int, population: PopulationSpec, **kw) -> ScenarioConfig:
    """1 Gbps link, 10 ms ticks, victim switches the defense on at 4 s."""
    return ScenarioConfig(
        name=name, duration=duration, tick_length=0.01, link_bps=1e9, population=population,
        activation=ActivationConfig(activate_at=400, auto=False), seed=1, **kw,
    )


def fig5a() -> list[Point]:
    pop = PopulationSpec(n_legit=1, n_attack=6, aggressiveness=6.0, attack_service="ntp", legit_demand=0.7, rtt=1)
    return [Point("fig5a", _testbed("fig5a", 3000, pop))]


def fig5b() -> list[Point]:
    pop = PopulationSpec(n_legit=1, n_attack=6, aggressiveness=6.0, legit_demand=0.7, rtt=1)
    return [Point("fig5b", _testbed("fig5b", 6000, pop))]


def fig5c() -> list[Point]:
    queues = [QueueSpec("premium", 0.2, dedicated=True), QueueSpec("tcp", 0.7), QueueSpec("udp", 0.1)]
    rules = [ClassifierRule(Match(networks=(PREMIUM_NET,)), "premium", Action.QUEUE, Layer.USER)]
    rules += default_rules(queues, "tcp")
    pop = PopulationSpec(n_legit=1, n_attack=5, aggressiveness=5.0, legit_demand=0.5, rtt=1,
                         n_premium=1, premium_demand=0.2)
    return [Point("fig5c", _testbed("fig5c", 3000, pop, queues=queues, rules=rules))]


def baseline() -> list[Point]:
    pop = PopulationSpec(n_legit=4, n_attack=0, legit_demand=0.7, rtt=1)
    cfg = ScenarioConfig(name="baseline", duration=1000, tick_length=0.01, link_bps=1e9, population=pop, seed=1)
    return [Point("baseline", cfg)]


def _sweep_config(name: str, *, n_attack: int, kind: SenderKind, aggressiveness: float, off_ratio: float,
                  link_bps: float, legit_demand: float) -> ScenarioConfig:
    period = 5.0
    seconds = max(150.0, 8 * period * (1 + off_ratio))  # at least eight on/off cycles
    pop = PopulationSpec(
        n_legit=SWEEP_N_LEGIT, n_attack=n_attack, aggressiveness=aggressiveness, attack_kind=kind,
        rate_distribution=RateDistribution.GAUSSIAN, legit_demand=legit_demand,
        on_len=round(period / SWEEP_TICK), off_ratio=off_ratio, **SWEEP_SENDER,
    )
    return ScenarioConfig(
        name=name, duration=round(seconds / SWEEP_TICK), tick_length=SWEEP_TICK, link_bps=link_bps,
        queues=[QueueSpec("tcp", 1.0)], population=pop,
        activation=ActivationConfig(hold_ticks=round(1 / SWEEP_TICK), activate_at=round(2 / SWEEP_TICK), auto=False),
        seed=1,
    )


def _ratio_label(x: float) -> str:
    return f"{x:g}".replace(".", "p")


def fig6a() -> list[Point]:
    out = []
    for r in SHREW_OFF_RATIOS:
        for k in SHREW_SCALES:
            na = k * SWEEP_N_LEGIT
            name = f"fig6a_R{_ratio_label(r)}_NA{na}"
            cfg = _sweep_config(name, n_attack=na, kind=SenderKind.ON_OFF, aggressiveness=2.0, off_ratio=r,
                                link_bps=1e10, legit_demand=1.0)
            out.append(Point(name, cfg, {"off_ratio": r, "n_attack": na}))
    return out


def fig6b() -> list[Point]:
    out = []
    for af in AGGRESSIVENESS_SWEEP:
        name = f"fig6b_Af{_ratio_label(af)}"
        cfg = _sweep_config(name, n_attack=5 * SWEEP_N_LEGIT, kind=SenderKind.FLAT_RATE, aggressiveness=af,
                            off_ratio=0.0, link_bps=1e10, legit_demand=1.0)
        out.append(Point(name, cfg, {"aggressiveness": af}))
    return out


def fig6c() -> list[Point]:
    # legit per-sender demand matches the attackers': 0.4 / 100 == 2.0 / 500
    out = []
    for kind in STRATEGY_KINDS:
        name = f"fig6c_{kind.value}"
        cfg = _sweep_config(name, n_attack=5 * SWEEP_N_LEGIT, kind=kind, aggressiveness=2.0, off_ratio=0.0,
                            link_bps=1.2e9, legit_demand=0.4)
        out.append(Point(name, cfg, {"attack_kind": kind.value}))
    return out


PRESETS: dict[str, Callable[[], list[Point]]] = {
    "fig5a": fig5a,
    "fig5b": fig5b,
    "fig5c": fig5c,
    "fig6a": fig6a,
    "fig6b": fig6b,
    "fig6c": fig6c,
    "baseline": baseline,
}


class UnknownPreset(KeyError):
    pass


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b=3`` -> (["a", "b"], 3). Values are JSON when they parse, else strings."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError([f"override {text!r} is not key=value"])
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(config: ScenarioConfig, overrides: Iterable[str]) -> ScenarioConfig:
    overrides = list(overrides)
    if not overrides:
        return config
    d = config.to_dict()
    for text in overrides:
        path, value = parse_override(text)
        node = d
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError([f"override {text!r}: {part!r} is not a section"])
            node = node[part]
        node[path[-1]] = value
    return ScenarioConfig.from_dict(d)


def expand(name: str, overrides: Iterable[str] = ()) -> list[Point]:
    try:
        build = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    overrides = list(overrides)
    points = build()
    for p in points:
        p.config = apply_overrides(p.config, overrides)
    return points


SWEEP_COLUMNS = (
    "point", "swept", "n_legit", "n_attack", "fair_share_per_tick", "attacker_cap_per_tick",
    "legit_floor_per_tick", "legit_goodput_per_sender", "legit_over_fair", "attack_goodput_per_tick",
    "attack_share_of_layer", "attack_over_cap", "theorem1_ok", "lemma1_ok", "runtime_s",
)


def sweep_row(point: Point, summary: dict, runtime: float) -> dict:
    b = summary.get("bounds", {})
    st = summary["steady"]
    return {
        "point": point.name,
        "swept": json.dumps(point.swept, sort_keys=True),
        "n_legit": b.get("n_legit", st["legit"]["senders"]),
        "n_attack": b.get("n_attack", st["attack"]["senders"]),
        "fair_share_per_tick": b.get("fair_share_per_tick"),
        "attacker_cap_per_tick": b.get("attacker_cap_per_tick"),
        "legit_floor_per_tick": b.get("legit_floor_per_tick"),
        "legit_goodput_per_sender": st["legit"]["goodput_per_sender"],
        "legit_over_fair": b.get("legit_over_fair"),
        "attack_goodput_per_tick": st["attack"]["goodput_per_tick"],
        "attack_share_of_layer": st["attack"]["share_of_layer"],
        "attack_over_cap": b.get("attack_over_cap"),
        "theorem1_ok": b.get("theorem1_ok"),
        "lemma1_ok": b.get("lemma1_ok"),
        "runtime_s": round(runtime, 3),
    }


@dataclass
class PointResult:
    point: Point
    result: Any  # RunResult
    summary: dict
    runtime: float


def run_points(points: list[Point], out_dir: Optional[str | Path] = None,
               sweep_name: Optional[str] = None) -> list[PointResult]:
    """Run every point in order; with ``out_dir`` write per-point files and a sweep summary."""
    results = []
    for p in points:
        log.info("running %s", p.name)
        t0 = time.perf_counter()
        res = run(p.config)
        elapsed = time.perf_counter() - t0
        summary = summarize(res)
        summary["runtime_s"] = elapsed
        log.info("%s done in %.1f s", p.name, elapsed)
        if out_dir is not None:
            write_outputs(res, out_dir, p.name)
        results.append(PointResult(p, res, summary, elapsed))
    if out_dir is not None and sweep_name is not None:
        write_sweep(results, Path(out_dir) / f"{sweep_name}.sweep.csv")
    return results


def write_sweep(results: list[PointResult], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow(sweep_row(r.point, r.summary, r.runtime))
