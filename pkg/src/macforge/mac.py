"""Composable per-node MAC built from DCF blocks.

Carrier sensing, the backoff discipline, slot time, minimum contention
window, RTS/CTS and the data rate are switched independently through a
:class:`MacConfig`. Every network is one AP sending downlink traffic to one
STA; STAs only answer with CTS/ACK.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import TextIO

from . import desim
from .desim import Simulator
from .phy import (CONTROL_RATE, RATES_MBPS, ChannelModel, FrameAir, Topology, dbm_to_mw,
                  decodes, frame_duration_ns)
from .seeding import derive_seed
from .traffic import TrafficSpec, next_interarrival, refill_saturated

SLOTS_US = (5, 9, 20)
BACKOFFS = ("off", "eied", "beb", "constant")
CW_MINS = (15, 31, 63)
FIXED = "fixed"
AARF = "aarf"


@dataclass(frozen=True)
class MacConfig:
    cs_enabled: bool = True
    slot_us: int = 9
    backoff: str = "beb"
    cw_min: int = 15
    rtscts: bool = True
    rate_mbps: float = 6.5
    rate_control: str = AARF  # with aarf, rate_mbps is the starting rate

    def __post_init__(self):
        if self.slot_us not in SLOTS_US:
            raise ValueError(f"slot_us must be one of {SLOTS_US}")
        if self.backoff not in BACKOFFS:
            raise ValueError(f"backoff must be one of {BACKOFFS}")
        if self.cw_min not in CW_MINS:
            raise ValueError(f"cw_min must be one of {CW_MINS}")
        if float(self.rate_mbps) not in RATES_MBPS:
            raise ValueError(f"rate_mbps must be one of {RATES_MBPS}")
        if self.rate_control not in (FIXED, AARF):
            raise ValueError("rate_control must be 'fixed' or 'aarf'")
        object.__setattr__(self, "rate_mbps", float(self.rate_mbps))
        object.__setattr__(self, "cs_enabled", bool(self.cs_enabled))
        object.__setattr__(self, "rtscts", bool(self.rtscts))

    def to_json(self) -> dict:
        return {"carrier_sensing": self.cs_enabled, "slot_us": self.slot_us,
                "backoff": self.backoff, "cw_min": self.cw_min, "rtscts": self.rtscts,
                "data_rate": self.rate_mbps, "rate_control": self.rate_control}

    @classmethod
    def from_json(cls, d: dict) -> "MacConfig":
        keys = {"carrier_sensing", "slot_us", "backoff", "cw_min", "rtscts", "data_rate",
                "rate_control"}
        missing, unknown = keys - set(d), set(d) - keys
        if missing or unknown:
            raise ValueError(f"bad MacConfig keys: missing={sorted(missing)} unknown={sorted(unknown)}")
        return cls(bool(d["carrier_sensing"]), int(d["slot_us"]), d["backoff"], int(d["cw_min"]),
                   bool(d["rtscts"]), float(d["data_rate"]), d["rate_control"])

    def label(self) -> str:
        rate = "aarf" if self.rate_control == AARF else f"{self.rate_mbps:g}"
        return (f"cs={'on' if self.cs_enabled else 'off'} slot={self.slot_us} "
                f"bo={self.backoff} cw={self.cw_min} rts={'on' if self.rtscts else 'off'} rate={rate}")


# legacy 802.11ac DCF used as the reward reference
LEGACY_BASELINE = MacConfig(True, 9, "beb", 15, True, 6.5, AARF)


@dataclass(frozen=True)
class TimingConstants:
    sifs_ns: int = 16_000
    cw_max: int = 1023
    retry_limit: int = 7
    queue_capacity: int = 100

    def difs_ns(self, slot_us: int) -> int:
        return self.sifs_ns + 2 * slot_us * 1000


def backoff_update_on_failure(kind: str, cw_current: int, cw_min: int, cw_max: int = 1023) -> int:
    if kind in ("beb", "eied"):
        return min(2 * (cw_current + 1) - 1, cw_max)
    if kind == "constant":
        return cw_current
    raise ValueError(f"no window update for backoff {kind!r}")


def backoff_update_on_success(kind: str, cw_current: int, cw_min: int) -> int:
    if kind == "eied":
        return max((cw_current + 1) // 2 - 1, cw_min)
    if kind in ("beb", "constant"):
        return cw_min
    raise ValueError(f"no window update for backoff {kind!r}")


@dataclass(frozen=True)
class AarfState:
    index: int = 0
    successes: int = 0
    failures: int = 0
    threshold: int = 10
    probing: bool = False


AARF_MIN_THRESHOLD = 10
AARF_MAX_THRESHOLD = 50


def aarf_on_result(state: AarfState, success: bool, n_rates: int = len(RATES_MBPS)) -> tuple[AarfState, int]:
    if success:
        successes = state.successes + 1
        if successes >= state.threshold and state.index < n_rates - 1:
            return AarfState(state.index + 1, 0, 0, state.threshold, True), state.index + 1
        return replace(state, successes=successes, failures=0, probing=False), state.index
    if state.probing:
        idx = max(state.index - 1, 0)
        thr = min(2 * state.threshold, AARF_MAX_THRESHOLD)
        return AarfState(idx, 0, 0, thr, False), idx
    failures = state.failures + 1
    if failures >= 2:
        idx = max(state.index - 1, 0)
        return AarfState(idx, 0, 0, AARF_MIN_THRESHOLD, False), idx
    return replace(state, successes=0, failures=failures), state.index


@dataclass
class NodeStats:
    arrived: int = 0
    delivered: int = 0
    dropped_queue: int = 0
    dropped_retry: int = 0
    delivered_bits: int = 0
    delays: list[int] = field(default_factory=list)
    attempts: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_queue + self.dropped_retry


def collect_metrics(stats: NodeStats, duration_ns: int) -> tuple[float, float | None]:
    """Throughput in bit/s and mean delay in ns (``None`` if nothing was delivered)."""
    thr = stats.delivered_bits / (duration_ns * 1e-9)
    if not stats.delays:
        return thr, None
    return thr, sum(stats.delays) / len(stats.delays)


class Medium:
    """Frames on air, carrier-sense state and reception decisions."""

    def __init__(self, sim: Simulator, topology: Topology, channel: ChannelModel):
        self.sim = sim
        self.channel = channel
        self.power = topology.rx_power_mw(channel)
        self.cca_mw = dbm_to_mw(channel.cca_dbm)
        # weakest signal any bystander could decode; prunes the NAV scan
        self.decode_floor_mw = min(self.cca_mw, dbm_to_mw(channel.noise_dbm + channel.thresholds_db[0]))
        self.nodes: list = []
        self.active: list[FrameAir] = []
        self.busy: list[bool] = [False] * topology.n_nodes

    def _p(self, tx: int, rx: int) -> float:
        return self.power[tx][rx]

    def transmit(self, frame: FrameAir) -> None:
        frame.start = self.sim.now
        for f in self.active:
            f.overlaps.append(frame)
            frame.overlaps.append(f)
        self.active.append(frame)
        self.sim.schedule(frame.end, desim.FRAME_END, frame.tx_node, self._end, frame)
        self._update_cca()

    def _end(self, frame: FrameAir) -> None:
        self.active.remove(frame)
        nodes = self.nodes
        if frame.kind in ("RTS", "CTS"):
            row = self.power[frame.tx_node]
            floor = self.decode_floor_mw
            for k in range(len(nodes)):
                if k == frame.tx_node or k == frame.rx_node or row[k] < floor:
                    continue
                if decodes(frame, k, frame.overlaps, self.channel, self._p):
                    nodes[k].set_nav(self.sim.now + frame.nav_ns)
        ok = decodes(frame, frame.rx_node, frame.overlaps, self.channel, self._p)
        nodes[frame.rx_node].on_frame(frame, ok)
        nodes[frame.tx_node].on_tx_end(frame)
        self._update_cca()

    def _update_cca(self) -> None:
        active = self.active
        power = self.power
        thr = self.cca_mw
        busy = self.busy
        for k, node in enumerate(self.nodes):
            s = 0.0
            for f in active:
                if f.tx_node != k:
                    s += power[f.tx_node][k]
            b = s >= thr
            if b != busy[k]:
                busy[k] = b
                node.on_cca(b)


class Station:
    """Downlink receiver: answers RTS with CTS and DATA with ACK after SIFS."""

    def __init__(self, node_id: int, net: "MacSimulation"):
        self.id = node_id
        self.net = net
        self.ap_id = node_id - 1
        self.nav_until = 0
        self.tx_until = 0

    def set_nav(self, until: int) -> None:
        if until > self.nav_until:
            self.nav_until = until

    def on_cca(self, busy: bool) -> None:
        pass

    def on_tx_end(self, frame: FrameAir) -> None:
        pass

    def on_frame(self, frame: FrameAir, ok: bool) -> None:
        if not ok or frame.tx_node != self.ap_id:
            return
        net = self.net
        now = net.sim.now
        if frame.kind == "RTS":
            if self.nav_until > now:
                return
            nav = frame.nav_ns - net.sifs - net.cts_ns
            net.sim.schedule(now + net.sifs, desim.FRAME_START, self.id, self._respond, "CTS", nav)
        elif frame.kind == "DATA":
            net.sim.schedule(now + net.sifs, desim.FRAME_START, self.id, self._respond, "ACK", 0)

    def _respond(self, kind: str, nav: int) -> None:
        net = self.net
        if self.tx_until > net.sim.now:
            return
        dur = net.cts_ns if kind == "CTS" else net.ack_ns
        self.tx_until = net.sim.now + dur
        net.medium.transmit(FrameAir(self.id, self.ap_id, CONTROL_RATE, 0, dur, kind, max(nav, 0)))


class AccessPoint:
    """Contending sender; owns the queue, backoff, retries and rate control."""

    def __init__(self, node_id: int, net: "MacSimulation", traffic: TrafficSpec,
                 mac_rng: random.Random, traffic_rng: random.Random):
        self.id = node_id
        self.net = net
        self.cfg = net.config
        self.sta_id = node_id + 1
        self.traffic = traffic
        self.rng = mac_rng
        self.traffic_rng = traffic_rng
        self.queue: deque[int] = deque()
        self.stats = NodeStats()
        self.cw = self.cfg.cw_min
        self.backoff_remaining: int | None = None
        self.retry_count = 0
        self.nav_until = 0
        self.busy = False
        self.in_exchange = False
        self.aarf = AarfState(index=RATES_MBPS.index(self.cfg.rate_mbps))
        self._difs_ev = None
        self._countdown_ev = None
        self._countdown_start = 0
        self._nav_ev = None
        self._timeout_ev = None
        self._awaiting: str | None = None
        self._data_ns = 0

    # queue and traffic

    def enqueue(self, now: int) -> bool:
        self.stats.arrived += 1
        if len(self.queue) >= self.net.timing.queue_capacity:
            self.stats.dropped_queue += 1
            return False
        self.queue.append(now)
        return True

    def start(self) -> None:
        if self.traffic.saturated:
            refill_saturated(self, 0)
            self._try_access()
        else:
            self.net.sim.schedule(next_interarrival(self.traffic, self.traffic_rng),
                                  desim.ARRIVAL, self.id, self._on_arrival)

    def _on_arrival(self) -> None:
        sim = self.net.sim
        self.on_packet_arrival(sim.now)
        sim.schedule(sim.now + next_interarrival(self.traffic, self.traffic_rng),
                     desim.ARRIVAL, self.id, self._on_arrival)

    def on_packet_arrival(self, now: int) -> None:
        if self.enqueue(now):
            self._try_access()

    # channel access

    @property
    def slot_ns(self) -> int:
        return self.cfg.slot_us * 1000

    def _access_pending(self) -> bool:
        return self._difs_ev is not None or self._countdown_ev is not None or self._nav_ev is not None

    def _draw_backoff(self) -> None:
        if self.backoff_remaining is None:
            self.backoff_remaining = self.rng.randint(0, self.cw)

    def _try_access(self) -> None:
        if self.in_exchange or not self.queue or self._access_pending():
            return
        sim = self.net.sim
        now = sim.now
        if self.cfg.cs_enabled:
            if self.busy or self.nav_until > now:
                return
            self._difs_ev = sim.schedule(now + self.net.difs, desim.TIMER, self.id, self._difs_done)
            return
        if self.cfg.backoff == "off":
            self._ready()
            return
        self._draw_backoff()
        self._start_countdown()

    def _start_countdown(self) -> None:
        if self.backoff_remaining == 0:
            self._ready()
            return
        sim = self.net.sim
        if self.cfg.cs_enabled and (self.busy or self.nav_until > sim.now):
            # DIFS ended on the same instant the medium went busy
            return
        self._countdown_start = sim.now
        self._countdown_ev = sim.schedule(sim.now + self.backoff_remaining * self.slot_ns,
                                          desim.TIMER, self.id, self._countdown_done)

    def _difs_done(self) -> None:
        self._difs_ev = None
        if self.cfg.backoff == "off":
            self._ready()
            return
        self._draw_backoff()
        self._start_countdown()

    def _countdown_done(self) -> None:
        self._countdown_ev = None
        self.backoff_remaining = 0
        self._ready()

    def _ready(self) -> None:
        sim = self.net.sim
        if self.nav_until > sim.now:
            # only reachable with sensing off: hold the frame until the reservation ends
            self._nav_ev = sim.schedule(self.nav_until, desim.TIMER, self.id, self._nav_expired)
            return
        self.backoff_remaining = None
        self._start_exchange()

    def _nav_expired(self) -> None:
        self._nav_ev = None
        if self.nav_until <= self.net.sim.now and not (self.cfg.cs_enabled and self.busy):
            self._try_access()

    def _freeze(self) -> None:
        now = self.net.sim.now
        if self._difs_ev is not None and self._difs_ev.time > now:
            self._difs_ev.cancel()
            self._difs_ev = None
        ev = self._countdown_ev
        if ev is not None and ev.time > now:
            elapsed = (now - self._countdown_start) // self.slot_ns
            self.backoff_remaining -= elapsed
            ev.cancel()
            self._countdown_ev = None

    def on_cca(self, busy: bool) -> None:
        self.busy = busy
        if not self.cfg.cs_enabled:
            return
        if busy:
            self._freeze()
        elif self.nav_until <= self.net.sim.now:
            self._try_access()

    def set_nav(self, until: int) -> None:
        if until <= self.nav_until:
            return
        self.nav_until = until
        sim = self.net.sim
        if self.cfg.cs_enabled:
            self._freeze()
            if self._nav_ev is not None:
                self._nav_ev.cancel()
            self._nav_ev = sim.schedule(until, desim.TIMER, self.id, self._nav_expired)
        elif self._nav_ev is not None:
            self._nav_ev.cancel()
            self._nav_ev = sim.schedule(until, desim.TIMER, self.id, self._nav_expired)

    # frame exchange

    def data_rate(self) -> float:
        if self.cfg.rate_control == AARF:
            return RATES_MBPS[self.aarf.index]
        return self.cfg.rate_mbps

    def _start_exchange(self) -> None:
        net = self.net
        self.in_exchange = True
        self.stats.attempts += 1
        rate = self.data_rate()
        self._rate = rate
        self._data_ns = frame_duration_ns("DATA", self.traffic.payload_bytes, rate)
        if self.cfg.rtscts:
            nav = 3 * net.sifs + net.cts_ns + self._data_ns + net.ack_ns
            self._send("RTS", CONTROL_RATE, net.rts_ns, nav, "CTS", net.cts_ns)
        else:
            self._send("DATA", rate, self._data_ns, 0, "ACK", net.ack_ns)

    def _send(self, kind: str, rate: float, dur: int, nav: int, expect: str, resp_ns: int) -> None:
        net = self.net
        sim = net.sim
        self._awaiting = expect
        self._timeout_ev = sim.schedule(sim.now + dur + net.sifs + resp_ns + self.slot_ns,
                                        desim.TIMER, self.id, self._on_timeout)
        net.medium.transmit(FrameAir(self.id, self.sta_id, rate, 0, dur, kind, nav))

    def _send_data(self) -> None:
        self._send("DATA", self._rate, self._data_ns, 0, "ACK", self.net.ack_ns)

    def on_tx_end(self, frame: FrameAir) -> None:
        pass

    def on_frame(self, frame: FrameAir, ok: bool) -> None:
        if not ok or frame.tx_node != self.sta_id or frame.kind != self._awaiting:
            return
        self._timeout_ev.cancel()
        self._timeout_ev = None
        self._awaiting = None
        sim = self.net.sim
        if frame.kind == "CTS":
            sim.schedule(sim.now + self.net.sifs, desim.FRAME_START, self.id, self._send_data)
        else:
            self._on_success()

    def _on_success(self) -> None:
        now = self.net.sim.now
        arrival = self.queue.popleft()
        st = self.stats
        st.delivered += 1
        st.delivered_bits += self.traffic.payload_bytes * 8
        st.delays.append(now - arrival)
        if self.cfg.backoff != "off":
            self.cw = backoff_update_on_success(self.cfg.backoff, self.cw, self.cfg.cw_min)
        if self.cfg.rate_control == AARF:
            self.aarf, _ = aarf_on_result(self.aarf, True)
        self._finish_exchange()

    def _on_timeout(self) -> None:
        self._timeout_ev = None
        failed = self._awaiting
        self._awaiting = None
        if failed == "ACK" and self.cfg.rate_control == AARF:
            self.aarf, _ = aarf_on_result(self.aarf, False)
        timing = self.net.timing
        if self.retry_count >= timing.retry_limit:
            self.queue.popleft()
            self.stats.dropped_retry += 1
            self.retry_count = 0
            self.cw = self.cfg.cw_min
        else:
            self.retry_count += 1
            if self.cfg.backoff != "off":
                self.cw = backoff_update_on_failure(self.cfg.backoff, self.cw, self.cfg.cw_min,
                                                    timing.cw_max)
            self._finish_exchange(keep_retry=True)
            return
        self._finish_exchange()

    def _finish_exchange(self, keep_retry: bool = False) -> None:
        if not keep_retry:
            self.retry_count = 0
        self.in_exchange = False
        self.backoff_remaining = None
        if self.traffic.saturated:
            refill_saturated(self, self.net.sim.now)
        self._try_access()


@dataclass
class RunResult:
    stats: list[NodeStats]
    duration_ns: int
    events: int

    def metrics(self) -> list[tuple[float, float | None]]:
        return [collect_metrics(s, self.duration_ns) for s in self.stats]


class MacSimulation:
    """One replication: ``nn`` networks sharing ``config`` on a common channel."""

    def __init__(self, config: MacConfig, topology: Topology, channel: ChannelModel,
                 traffic: TrafficSpec, seed: int, duration_ns: int,
                 timing: TimingConstants | None = None, trace: TextIO | None = None,
                 max_events: int = 10_000_000):
        self.config = config
        self.timing = timing or TimingConstants()
        self.duration_ns = duration_ns
        self.sim = Simulator(max_events=max_events, trace=trace)
        self.medium = Medium(self.sim, topology, channel)
        self.sifs = self.timing.sifs_ns
        self.difs = self.timing.difs_ns(config.slot_us)
        self.rts_ns = frame_duration_ns("RTS", 0, CONTROL_RATE)
        self.cts_ns = frame_duration_ns("CTS", 0, CONTROL_RATE)
        self.ack_ns = frame_duration_ns("ACK", 0, CONTROL_RATE)
        if topology.n_nodes % 2:
            raise ValueError("topology must hold AP/STA pairs")
        nodes: list = []
        self.aps: list[AccessPoint] = []
        for i in range(topology.n_nodes // 2):
            ap = AccessPoint(2 * i, self, traffic,
                             random.Random(derive_seed(seed, "mac", i)),
                             random.Random(derive_seed(seed, "traffic", i)))
            self.aps.append(ap)
            nodes += [ap, Station(2 * i + 1, self)]
        self.medium.nodes = nodes

    def run(self) -> RunResult:
        for ap in self.aps:
            ap.start()
        events = self.sim.run_until(self.duration_ns)
        return RunResult([ap.stats for ap in self.aps], self.duration_ns, events)
