"""Closed-form reference models used to validate the simulator.

The Bianchi model gives DCF saturation throughput from a fixed point in the
per-slot transmission probability; the ALOHA formulas give channel
throughput under Poisson offered load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .phy import CONTROL_BYTES, MAC_HEADER_BYTES, PREAMBLE_NS


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class BianchiParams:
    n: int
    w: int = 16
    m: int = 6
    slot_us: float = 9.0
    sifs_us: float = 16.0
    difs_us: float | None = None
    payload_bits: int = 8000
    data_rate: float = 13.0  # Mbit/s
    ctrl_rate: float = 6.5
    ack_bits: int = CONTROL_BYTES["ACK"] * 8
    header_bits: int = MAC_HEADER_BYTES * 8
    rts_mode: bool = False
    preamble_us: float = PREAMBLE_NS / 1000.0
    rts_bits: int = CONTROL_BYTES["RTS"] * 8
    cts_bits: int = CONTROL_BYTES["CTS"] * 8

    def __post_init__(self):
        if self.n < 1 or self.w < 2 or self.m < 0:
            raise ValueError("need n >= 1, w >= 2, m >= 0")

    @property
    def difs(self) -> float:
        return self.difs_us if self.difs_us is not None else self.sifs_us + 2 * self.slot_us

    def airtime_us(self, bits: int, rate_mbps: float) -> float:
        # whole-ns ceiling, as the simulator does
        ns = -(-bits * 10_000 // int(round(rate_mbps * 10)))
        return self.preamble_us + ns / 1000.0

    def slot_durations(self) -> tuple[float, float]:
        """(T_s, T_c) in microseconds."""
        data = self.airtime_us(self.payload_bits + self.header_bits, self.data_rate)
        ack = self.airtime_us(self.ack_bits, self.ctrl_rate)
        if not self.rts_mode:
            return data + self.sifs_us + ack + self.difs, data + self.difs
        rts = self.airtime_us(self.rts_bits, self.ctrl_rate)
        cts = self.airtime_us(self.cts_bits, self.ctrl_rate)
        ts = rts + self.sifs_us + cts + self.sifs_us + data + self.sifs_us + ack + self.difs
        return ts, rts + self.difs


def _tau_of_p(p: float, w: int, m: int) -> float:
    # 2(1-2p)/((1-2p)(W+1) + pW(1-(2p)^m)) with the (1-2p) factor cancelled
    series = sum((2.0 * p) ** k for k in range(m))
    return 2.0 / (w + 1 + p * w * series)


def _p_of_tau(tau: float, n: int) -> float:
    return 1.0 - (1.0 - tau) ** (n - 1)


def bianchi_tau_p(params: BianchiParams, tol: float = 1e-10, max_iter: int = 200) -> tuple[float, float]:
    """Solve the coupled attempt/collision probabilities by bisection on tau."""
    n, w, m = params.n, params.w, params.m
    if n == 1:
        return 2.0 / (w + 1), 0.0
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid - _tau_of_p(_p_of_tau(mid, n), w, m) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol:
            tau = 0.5 * (lo + hi)
            return tau, _p_of_tau(tau, n)
    raise OracleError("bisection did not converge")


@dataclass(frozen=True)
class BianchiResult:
    tau: float
    p: float
    normalized: float  # payload fraction of channel time
    throughput_bps: float


def bianchi_throughput(params: BianchiParams) -> BianchiResult:
    tau, p = bianchi_tau_p(params)
    n = params.n
    p_tr = 1.0 - (1.0 - tau) ** n
    p_s = n * tau * (1.0 - tau) ** (n - 1) / p_tr
    ts, tc = params.slot_durations()
    mean_slot = (1.0 - p_tr) * params.slot_us + p_tr * p_s * ts + p_tr * (1.0 - p_s) * tc
    bits_per_us = p_s * p_tr * params.payload_bits / mean_slot
    return BianchiResult(tau, p, bits_per_us / params.data_rate, bits_per_us * 1e6)


def aloha_throughput(g: float, slotted: bool = False) -> float:
    if g < 0:
        raise ValueError("offered load must be >= 0")
    return g * math.exp(-g) if slotted else g * math.exp(-2.0 * g)
