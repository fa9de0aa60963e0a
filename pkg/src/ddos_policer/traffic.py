"""Per-tick offered load for each sender class.

Rates are in packets per tick. Fractional rates are emitted through an error
accumulator so long-run averages are exact.
"""

from __future__ import annotations

import enum
import ipaddress
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import PacketKind


class SenderKind(enum.Enum):
    LEGIT_AIMD = "legit_aimd"
    FLAT_RATE = "flat_rate"
    ON_OFF = "on_off"
    COMPLIANT_AIMD = "compliant_aimd"
    ORACLE = "oracle"


AIMD_KINDS = (SenderKind.LEGIT_AIMD, SenderKind.COMPLIANT_AIMD)


@dataclass(frozen=True)
class Feedback:
    delivered: int = 0
    lost: int = 0
    queued: int = 0  # own packets still waiting in a link queue


@dataclass(frozen=True)
class OracleView:
    """What the oracle attacker may read from its own flow entry."""

    window: float
    period: int
    loss_threshold: float


@dataclass
class SenderModel:
    id: int
    kind: SenderKind
    demand: float
    rtt: int = 10
    on_len: int = 500
    off_ratio: float = 0.0
    phase: int = 0
    traffic_class: str = "legit"
    packet_kind: PacketKind = PacketKind.REGULAR
    service: Optional[str] = None
    rto: int = 0  # probe timeout in ticks; 0 means 2 * rtt
    max_backoff: int = 6
    abort_ticks: int = 0  # silence after which the connection restarts; 0 never
    connections: int = 1  # parallel AIMD connections aggregated under this source

    # AIMD state
    cwnd: float = field(default=1.0, repr=False)
    ssthresh: float = field(default=math.inf, repr=False)
    last_cut: int = field(default=-(10**9), repr=False)
    rto_at: Optional[int] = field(default=None, repr=False)
    backoff: int = field(default=0, repr=False)
    silent_since: int = field(default=0, repr=False)
    acc: float = field(default=0.0, repr=False)

    def __post_init__(self):
        if self.demand <= 0:
            raise ValueError(f"sender {self.id}: demand must be positive")
        if self.off_ratio < 0:
            raise ValueError(f"sender {self.id}: off_ratio must be >= 0")
        if self.kind is SenderKind.ON_OFF and self.on_len <= 0:
            raise ValueError(f"sender {self.id}: on_len must be positive")
        if self.rtt < 1:
            raise ValueError(f"sender {self.id}: rtt must be at least one tick")
        if self.rto < 0 or self.max_backoff < 0 or self.abort_ticks < 0:
            raise ValueError(f"sender {self.id}: rto, max_backoff and abort_ticks must be >= 0")
        if self.connections < 1:
            raise ValueError(f"sender {self.id}: connections must be >= 1")
        self.cwnd = max(self.cwnd, float(self.connections))  # one packet per connection

    @property
    def rate(self) -> float:
        """Current intended sending rate in packets per tick."""
        if self.kind in AIMD_KINDS:
            return 0.0 if self.rto_at is not None else min(self.demand, self.cwnd / self.rtt)
        return self.demand

    @property
    def probe_timeout(self) -> int:
        return self.rto if self.rto > 0 else 2 * self.rtt

    def is_on(self, t: int) -> bool:
        if t < self.phase:
            return False
        cycle = (1.0 + self.off_ratio) * self.on_len
        return (t - self.phase) % cycle < self.on_len


def _aimd_step(m: SenderModel, t: int, fb: Feedback) -> float:
    """Update congestion state from last tick's feedback; return this tick's rate.

    Packets still sitting in a queue count against the window, so the rate
    self-clocks to what the bottleneck delivers. The window is the sum over
    ``connections`` parallel Reno connections: additive increase is one packet
    per connection per round trip, and partial loss halves one connection's
    share, at most once per round trip. A tick where everything was lost and
    nothing acknowledged is a retransmission timeout: the sender goes quiet
    and probes with single packets at exponentially backed-off intervals.
    After ``abort_ticks`` of silence the connection is considered reset and
    restarts with an unbounded slow-start threshold.
    """
    n = m.connections
    # enough window to send at demand with its own backlog still queued
    cap = max(m.demand * m.rtt + fb.queued, float(n))
    if m.rto_at is not None:
        if fb.delivered > 0:
            m.rto_at = None
            m.backoff = 0
            m.cwnd = float(n)
        elif t >= m.rto_at:
            m.backoff += 1
            if m.abort_ticks and t - m.silent_since >= m.abort_ticks:
                m.ssthresh = math.inf
            m.rto_at = t + m.probe_timeout * 2 ** min(m.backoff, m.max_backoff)
            return math.inf  # one probe packet
        else:
            return 0.0
    elif fb.lost > 0:
        if fb.delivered == 0:
            if t - m.last_cut >= m.rtt:  # not already cut in this loss episode
                m.ssthresh = max(2.0 * n, m.cwnd / 2.0)
            m.cwnd = float(n)
            m.rto_at = t + m.probe_timeout
            m.backoff = 0
            m.silent_since = t
            m.last_cut = t
            return 0.0
        if t - m.last_cut >= m.rtt:
            # one of n connections takes the hit
            m.cwnd = max(float(n), m.cwnd * (1.0 - 0.5 / n))
            m.ssthresh = m.cwnd
            m.last_cut = t
    elif fb.delivered > 0:
        if m.cwnd < m.ssthresh:
            m.cwnd = min(m.cwnd * 2.0 ** (1.0 / m.rtt), m.ssthresh)
        else:
            m.cwnd += n / m.rtt
        m.cwnd = min(m.cwnd, cap)
    return min(m.demand, max(0.0, m.cwnd - fb.queued) / m.rtt)


def offered_load(model: SenderModel, t: int, feedback: Feedback = Feedback(),
                 oracle: Optional[OracleView] = None) -> int:
    """Packets ``model`` emits during tick ``t``.

    ``feedback`` holds the previous tick's delivered/lost counts for this
    sender; only the AIMD kinds look at it.
    """
    kind = model.kind
    if kind in AIMD_KINDS:
        rate = _aimd_step(model, t, feedback)
        if rate == math.inf:
            return 1
    elif kind is SenderKind.FLAT_RATE:
        rate = model.demand
    elif kind is SenderKind.ON_OFF:
        rate = model.demand if model.is_on(t) else 0.0
    elif kind is SenderKind.ORACLE:
        if oracle is None:
            rate = model.demand
        else:
            rate = (1.0 + oracle.loss_threshold) * oracle.window / oracle.period
    else:  # pragma: no cover
        raise ValueError(kind)
    model.acc += rate
    n = math.floor(model.acc + 1e-9)
    model.acc -= n
    return n


class RateDistribution(enum.Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"


LEGIT_NET = ipaddress.IPv4Network("10.0.0.0/12")
ATTACK_NET = ipaddress.IPv4Network("10.16.0.0/12")
PREMIUM_NET = ipaddress.IPv4Network("10.32.0.0/12")


@dataclass
class PopulationSpec:
    n_legit: int = 1
    n_attack: int = 0
    aggressiveness: float = 0.0
    rate_distribution: RateDistribution = RateDistribution.UNIFORM
    gaussian_std: float = 1.0
    attack_kind: SenderKind = SenderKind.FLAT_RATE
    attack_service: Optional[str] = None  # UDP service tag; None means TCP-looking traffic
    legit_demand: float = 0.7  # total, as a fraction of link capacity
    rtt: int = 10
    rto: int = 0
    max_backoff: int = 6
    abort_ticks: int = 0
    connections: int = 1
    on_len: int = 500
    off_ratio: float = 0.0
    phase_jitter: int = 0
    n_premium: int = 0
    premium_demand: float = 0.0  # total, fraction of link capacity

    def problems(self) -> list[str]:
        out = []
        if self.n_legit < 0 or self.n_attack < 0 or self.n_premium < 0:
            out.append("PopulationSpec counts must be non-negative")
        if self.n_legit + self.n_attack + self.n_premium < 1:
            out.append("PopulationSpec needs at least one sender")
        if self.aggressiveness < 0:
            out.append("PopulationSpec aggressiveness must be >= 0")
        if self.aggressiveness > 0 and self.n_attack == 0:
            out.append("PopulationSpec aggressiveness > 0 needs n_attack > 0")
        if self.n_attack > 0 and self.aggressiveness <= 0:
            out.append("PopulationSpec n_attack > 0 needs aggressiveness > 0")
        if self.n_legit > 0 and self.legit_demand <= 0:
            out.append("PopulationSpec legit_demand must be positive")
        if self.n_premium > 0 and self.premium_demand <= 0:
            out.append("PopulationSpec premium_demand must be positive")
        if self.off_ratio < 0:
            out.append("PopulationSpec off_ratio must be >= 0")
        if self.on_len <= 0:
            out.append("PopulationSpec on_len must be positive")
        if self.rtt < 1:
            out.append("PopulationSpec rtt must be >= 1 tick")
        if self.rto < 0 or self.max_backoff < 0 or self.abort_ticks < 0:
            out.append("PopulationSpec rto, max_backoff and abort_ticks must be >= 0")
        if self.connections < 1:
            out.append("PopulationSpec connections must be >= 1")
        if self.gaussian_std < 0:
            out.append("PopulationSpec gaussian_std must be >= 0")
        for net, n in ((LEGIT_NET, self.n_legit), (ATTACK_NET, self.n_attack), (PREMIUM_NET, self.n_premium)):
            if n > net.num_addresses - 1:
                out.append(f"PopulationSpec: at most {net.num_addresses - 1} senders per class")
        return out


def _addr(net: ipaddress.IPv4Network, i: int) -> int:
    return int(net.network_address) + 1 + i


def build_population(spec: PopulationSpec, link: float, seed: int) -> list[SenderModel]:
    """Instantiate every sender of ``spec`` on a link of ``link`` packets/tick.

    Attack rates add up to ``aggressiveness * link`` before clipping at zero.
    """
    problems = spec.problems()
    if problems:
        raise ValueError("; ".join(problems))
    rng = np.random.default_rng(seed)
    out: list[SenderModel] = []
    tcp = dict(rtt=spec.rtt, rto=spec.rto, max_backoff=spec.max_backoff, abort_ticks=spec.abort_ticks,
               connections=spec.connections)

    for i in range(spec.n_legit):
        out.append(SenderModel(_addr(LEGIT_NET, i), SenderKind.LEGIT_AIMD, spec.legit_demand * link / spec.n_legit,
                               traffic_class="legit", **tcp))
    for i in range(spec.n_premium):
        out.append(SenderModel(_addr(PREMIUM_NET, i), SenderKind.LEGIT_AIMD,
                               spec.premium_demand * link / spec.n_premium, traffic_class="premium", **tcp))

    if spec.n_attack:
        total = spec.aggressiveness * link
        mean = total / spec.n_attack
        if spec.rate_distribution is RateDistribution.GAUSSIAN:
            rates = np.clip(rng.normal(mean, spec.gaussian_std, spec.n_attack), 0.0, None)
        else:
            rates = np.full(spec.n_attack, mean)
        phases = rng.integers(0, spec.phase_jitter + 1, spec.n_attack) if spec.phase_jitter else np.zeros(spec.n_attack, int)
        udp = spec.attack_service is not None
        for i in range(spec.n_attack):
            rate = float(rates[i])
            if rate <= 0:
                continue
            out.append(SenderModel(
                _addr(ATTACK_NET, i), spec.attack_kind, rate, on_len=spec.on_len, **tcp,
                off_ratio=spec.off_ratio, phase=int(phases[i]),
                traffic_class="udp" if udp else "attack",
                packet_kind=PacketKind.UDP_SERVICE if udp else PacketKind.REGULAR,
                service=spec.attack_service,
            ))
    return out


def attack_demand(spec: PopulationSpec, link: float, seed: int) -> dict[str, float]:
    """Configured vs generated total attack rate; Gaussian draws clipped at zero push it up."""
    target = spec.aggressiveness * link
    total = math.fsum(s.demand for s in build_population(spec, link, seed) if s.traffic_class in ("attack", "udp"))
    return {"target": target, "total": total, "clipping_error": total / target - 1.0 if target else 0.0}
