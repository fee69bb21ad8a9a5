"""Radio abstraction: placement, log-distance path loss, reception and airtime."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

RATES_MBPS = (6.5, 13.0, 19.5, 26.0, 39.0, 52.0, 58.5, 65.0, 78.0)
# rates in units of 100 kbit/s, keeps airtime arithmetic in integers
_RATE_100K = {r: int(round(r * 10)) for r in RATES_MBPS}
CONTROL_RATE = 6.5

PREAMBLE_NS = 20_000
MAC_HEADER_BYTES = 28
CONTROL_BYTES = {"RTS": 20, "CTS": 14, "ACK": 14}

TX_POWER_DBM = 23.0
CCA_THRESHOLD_DBM = -82.0

SINR = "sinr"
HARD = "hard-collision"


def free_space_ref_db(freq_hz: float = 5e9) -> float:
    """Free-space loss at 1 m."""
    return 20.0 * math.log10(4.0 * math.pi * freq_hz / 299_792_458.0)


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


@dataclass(frozen=True)
class ChannelModel:
    ref_loss_db: float = 46.4
    exponent: float = 3.0
    noise_dbm: float = -94.0
    mode: str = SINR
    thresholds_db: tuple[float, ...] = (2.0, 5.0, 8.0, 11.0, 15.0, 19.0, 21.0, 23.0, 27.0)
    tx_power_dbm: float = TX_POWER_DBM
    cca_dbm: float = CCA_THRESHOLD_DBM

    def __post_init__(self):
        if self.mode not in (SINR, HARD):
            raise ValueError(f"unknown channel mode {self.mode!r}")
        if self.exponent < 2.0:
            raise ValueError("pathloss exponent must be >= 2")
        if len(self.thresholds_db) != len(RATES_MBPS):
            raise ValueError(f"need {len(RATES_MBPS)} SINR thresholds, got {len(self.thresholds_db)}")
        if any(b <= a for a, b in zip(self.thresholds_db, self.thresholds_db[1:])):
            raise ValueError("SINR thresholds must be strictly increasing with MCS")
        object.__setattr__(self, "thresholds_db", tuple(float(x) for x in self.thresholds_db))

    def threshold_for(self, mcs_mbps: float) -> float:
        return self.thresholds_db[RATES_MBPS.index(mcs_mbps)]

    def to_json(self) -> dict:
        return {"ref_loss_db": self.ref_loss_db, "exponent": self.exponent,
                "noise_dbm": self.noise_dbm, "mode": self.mode,
                "thresholds_db": list(self.thresholds_db)}

    @classmethod
    def from_json(cls, d: dict | None) -> "ChannelModel":
        d = dict(d or {})
        allowed = {"ref_loss_db", "exponent", "noise_dbm", "mode", "thresholds_db"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown channel keys: {sorted(unknown)}")
        if "thresholds_db" in d:
            d["thresholds_db"] = tuple(d["thresholds_db"])
        return cls(**d)


def path_loss_db(distance: float, model: ChannelModel | None = None) -> float:
    model = model or ChannelModel()
    d = max(distance, 1.0)
    return model.ref_loss_db + 10.0 * model.exponent * math.log10(d)


@dataclass
class Topology:
    """Node positions; node ``2i`` is the AP of network ``i`` and ``2i+1`` its STA."""
    positions: list[tuple[float, float]]
    area: tuple[float, float] = (150.0, 150.0)

    def __post_init__(self):
        w, h = self.area
        for x, y in self.positions:
            if not (0.0 <= x <= w and 0.0 <= y <= h):
                raise ValueError(f"node at ({x}, {y}) outside {w}x{h} area")

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    def distance(self, a: int, b: int) -> float:
        (xa, ya), (xb, yb) = self.positions[a], self.positions[b]
        return math.hypot(xa - xb, ya - yb)

    def rx_power_mw(self, model: ChannelModel) -> list[list[float]]:
        """Matrix ``P[tx][rx]`` of received power in mW (0 on the diagonal)."""
        n = self.n_nodes
        out = [[0.0] * n for _ in range(n)]
        for a in range(n):
            for b in range(a + 1, n):
                p = dbm_to_mw(model.tx_power_dbm - path_loss_db(self.distance(a, b), model))
                out[a][b] = out[b][a] = p
        return out


def place_networks(nn: int, seed: int, area: float = 150.0, sta_radius: float = 20.0) -> Topology:
    """APs uniform over the square; each STA uniform on the disc of ``sta_radius`` around its AP."""
    rng = random.Random(seed)
    pos: list[tuple[float, float]] = []
    for _ in range(nn):
        ax, ay = rng.uniform(0.0, area), rng.uniform(0.0, area)
        r = sta_radius * math.sqrt(rng.random())
        th = rng.uniform(0.0, 2.0 * math.pi)
        sx = min(max(ax + r * math.cos(th), 0.0), area)
        sy = min(max(ay + r * math.sin(th), 0.0), area)
        pos += [(ax, ay), (sx, sy)]
    return Topology(pos, (area, area))


def frame_bits(kind: str, payload_bytes: int = 0) -> int:
    if kind == "DATA":
        return (payload_bytes + MAC_HEADER_BYTES) * 8
    return CONTROL_BYTES[kind] * 8


def frame_duration_ns(kind: str, payload_bytes: int, mcs_mbps: float) -> int:
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be >= 0")
    bits = frame_bits(kind, payload_bytes)
    r = _RATE_100K[mcs_mbps]
    # bits / (r * 1e5 bit/s) in ns == bits * 1e4 / r, rounded up
    return PREAMBLE_NS + -(-bits * 10_000 // r)


@dataclass(eq=False)
class FrameAir:
    tx_node: int
    rx_node: int
    mcs_mbps: float
    start: int
    duration: int
    kind: str
    nav_ns: int = 0
    overlaps: list = field(default_factory=list, repr=False)

    @property
    def end(self) -> int:
        return self.start + self.duration


def _max_interference(frame: FrameAir, interferers: Sequence[FrameAir], power) -> float:
    """Largest summed interference power over the sub-intervals of ``frame``."""
    if not interferers:
        return 0.0
    if len(interferers) == 1:
        return power(interferers[0])
    points = []
    for f in interferers:
        p = power(f)
        points.append((max(f.start, frame.start), p))
        points.append((min(f.end, frame.end), -p))
    # ends sort before starts at the same instant: touching frames do not overlap
    points.sort(key=lambda tp: (tp[0], tp[1]))
    level = best = 0.0
    for _, dp in points:
        level += dp
        if level > best:
            best = level
    return best


def _overlapping(frame: FrameAir, others: Sequence[FrameAir]) -> list[FrameAir]:
    return [f for f in others if f is not frame and f.start < frame.end and f.end > frame.start]


def decodes(frame: FrameAir, rx: int, overlaps: Sequence[FrameAir], model: ChannelModel,
            rx_power_mw) -> bool:
    """Whether node ``rx`` (addressee or bystander) decodes ``frame``."""
    interferers = _overlapping(frame, overlaps)
    for f in interferers:
        if f.tx_node == rx:
            return False
    signal = rx_power_mw(frame.tx_node, rx)
    if model.mode == HARD:
        floor = dbm_to_mw(model.cca_dbm)
        if signal < floor:
            return False
        return not any(rx_power_mw(f.tx_node, rx) >= floor for f in interferers)
    noise = dbm_to_mw(model.noise_dbm)
    interference = _max_interference(frame, interferers, lambda f: rx_power_mw(f.tx_node, rx))
    if signal <= 0.0:
        return False
    return 10.0 * math.log10(signal / (noise + interference)) >= model.threshold_for(frame.mcs_mbps)


def frame_outcome(frame: FrameAir, interferers: Sequence[FrameAir], model: ChannelModel,
                  rx_power_mw) -> bool:
    """Decide reception of ``frame`` at ``frame.rx_node``.

    ``rx_power_mw(tx, rx)`` gives received power in mW. Interferers that do
    not overlap ``frame`` for a positive time are ignored; one sent by the
    receiver itself (half duplex) always destroys the frame. In
    hard-collision mode only interferers audible above the CCA level count.
    """
    return decodes(frame, frame.rx_node, interferers, model, rx_power_mw)
