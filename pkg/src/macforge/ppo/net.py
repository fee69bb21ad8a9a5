"""Shared-trunk actor-critic MLP with hand-written backpropagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PARAM_ORDER = ("W1", "b1", "W2", "b2", "Wa", "ba", "Wv", "bv")


@dataclass(frozen=True)
class Architecture:
    obs_dim: int = 8
    hidden: tuple[int, int] = (64, 64)
    heads: tuple[int, ...] = (2, 3, 4, 3, 2, 9)

    @property
    def n_logits(self) -> int:
        return sum(self.heads)

    def head_slices(self) -> list[slice]:
        out, start = [], 0
        for k in self.heads:
            out.append(slice(start, start + k))
            start += k
        return out

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h1, h2 = self.hidden
        return {"W1": (self.obs_dim, h1), "b1": (h1,), "W2": (h1, h2), "b2": (h2,),
                "Wa": (h2, self.n_logits), "ba": (self.n_logits,), "Wv": (h2, 1), "bv": (1,)}

    def to_json(self) -> dict:
        return {"obs_dim": self.obs_dim, "hidden": list(self.hidden), "heads": list(self.heads)}

    @classmethod
    def from_json(cls, d: dict) -> "Architecture":
        return cls(int(d["obs_dim"]), tuple(int(h) for h in d["hidden"]), tuple(int(k) for k in d["heads"]))


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


def init_params(arch: Architecture, rng: np.random.Generator,
                actor_gain: float = 0.01) -> dict[str, np.ndarray]:
    """Orthogonal weights scaled to unit gain per fan-in; near-uniform initial policy."""
    s = arch.shapes()
    p = {}
    fan_in, fan_out = s["W1"]
    # a wide first layer has short orthonormal columns; rescale them to unit norm
    p["W1"] = _orthogonal(rng, s["W1"], np.sqrt(max(1.0, fan_out / fan_in)))
    p["W2"] = _orthogonal(rng, s["W2"], 1.0)
    p["Wa"] = _orthogonal(rng, s["Wa"], actor_gain)
    p["Wv"] = _orthogonal(rng, s["Wv"], 1.0)
    for b in ("b1", "b2", "ba", "bv"):
        p[b] = np.zeros(s[b])
    return p


def zeros_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def forward(params: dict[str, np.ndarray], obs: np.ndarray):
    """Return ``(logits, values, cache)`` for a batch ``obs`` of shape (B, obs_dim)."""
    x = np.atleast_2d(obs)
    h1 = np.tanh(x @ params["W1"] + params["b1"])
    h2 = np.tanh(h1 @ params["W2"] + params["b2"])
    logits = h2 @ params["Wa"] + params["ba"]
    values = (h2 @ params["Wv"] + params["bv"])[:, 0]
    return logits, values, (x, h1, h2)


def backward(params: dict[str, np.ndarray], cache, d_logits: np.ndarray,
             d_values: np.ndarray) -> dict[str, np.ndarray]:
    x, h1, h2 = cache
    dv = d_values[:, None]
    g = {"Wa": h2.T @ d_logits, "ba": d_logits.sum(0),
         "Wv": h2.T @ dv, "bv": dv.sum(0)}
    dh2 = d_logits @ params["Wa"].T + dv @ params["Wv"].T
    dz2 = dh2 * (1.0 - h2 * h2)
    g["W2"] = h1.T @ dz2
    g["b2"] = dz2.sum(0)
    dh1 = dz2 @ params["W2"].T
    dz1 = dh1 * (1.0 - h1 * h1)
    g["W1"] = x.T @ dz1
    g["b1"] = dz1.sum(0)
    return g


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def split_heads(logits: np.ndarray, arch: Architecture) -> list[np.ndarray]:
    return [logits[..., sl] for sl in arch.head_slices()]
