"""Downlink traffic sources: Poisson arrivals or a saturated queue."""

from __future__ import annotations

import random
from dataclasses import dataclass

POISSON = "poisson"
SATURATED = "saturated"

DEFAULT_PAYLOAD = 1000


@dataclass(frozen=True)
class TrafficSpec:
    kind: str = POISSON
    lam: float | None = 100.0  # packets/s
    payload_bytes: int = DEFAULT_PAYLOAD

    def __post_init__(self):
        if self.kind == POISSON:
            if self.lam is None or not self.lam > 0:
                raise ValueError("poisson traffic needs lambda > 0")
        elif self.kind == SATURATED:
            object.__setattr__(self, "lam", None)
        else:
            raise ValueError(f"unknown traffic kind {self.kind!r}")
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be >= 0")

    @property
    def saturated(self) -> bool:
        return self.kind == SATURATED

    def label(self) -> str:
        return "saturated" if self.saturated else f"{self.lam:g}"

    def to_json(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "payload_bytes": self.payload_bytes}

    @classmethod
    def from_json(cls, d: dict) -> "TrafficSpec":
        d = dict(d)
        unknown = set(d) - {"kind", "lambda", "payload_bytes"}
        if unknown:
            raise ValueError(f"unknown traffic keys: {sorted(unknown)}")
        return cls(kind=d.get("kind", POISSON), lam=d.get("lambda"),
                   payload_bytes=int(d.get("payload_bytes", DEFAULT_PAYLOAD)))

    @classmethod
    def poisson(cls, lam: float, payload_bytes: int = DEFAULT_PAYLOAD) -> "TrafficSpec":
        return cls(POISSON, lam, payload_bytes)

    @classmethod
    def saturated_spec(cls, payload_bytes: int = DEFAULT_PAYLOAD) -> "TrafficSpec":
        return cls(SATURATED, None, payload_bytes)


def next_interarrival(spec: TrafficSpec, rng: random.Random) -> int:
    """Exponential gap with mean ``1/lambda``, in whole nanoseconds (at least 1)."""
    if spec.kind != POISSON:
        raise ValueError("inter-arrival times exist only for poisson traffic")
    return max(1, int(rng.expovariate(spec.lam) * 1e9))


def refill_saturated(node, now: int) -> None:
    """Top up a saturated node so its queue is never empty."""
    if not node.queue:
        node.enqueue(now)
