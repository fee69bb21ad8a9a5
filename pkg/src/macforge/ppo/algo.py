"""Clipped-surrogate actor-critic training over a multi-discrete action space."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .net import Architecture, backward, forward, init_params, log_softmax, split_heads, zeros_like

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, params=None, dump=None):
        super().__init__(msg)
        self.params = params
        self.dump = dump


@dataclass(frozen=True)
class PpoHyper:
    lr: float = 0.007
    clip_eps: float = 0.2
    c1: float = 0.5
    c2: float = 0.02
    gamma: float = 0.99
    minibatch: int = 64
    rollout_len: int = 256
    epochs_per_update: int = 4
    total_steps: int = 50_000
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.minibatch < 1 or self.rollout_len < 1 or self.epochs_per_update < 1:
            raise ValueError("minibatch, rollout_len and epochs_per_update must be positive")

    def to_json(self) -> dict:
        return asdict(self)


# -- distributions ----------------------------------------------------------

def head_logprobs(logits: np.ndarray, arch: Architecture) -> list[np.ndarray]:
    return [log_softmax(z) for z in split_heads(logits, arch)]


def sample_action(logits: np.ndarray, rng: np.random.Generator,
                  arch: Architecture = Architecture()) -> tuple[tuple[int, ...], float]:
    """Draw each head independently; return the action and its joint log-probability."""
    action, logp = [], 0.0
    u = rng.random(len(arch.heads))
    for k, lp in enumerate(head_logprobs(np.asarray(logits, dtype=np.float64).reshape(-1), arch)):
        cdf = np.cumsum(np.exp(lp))
        idx = min(int(np.searchsorted(cdf, u[k] * cdf[-1], side="right")), len(cdf) - 1)
        action.append(idx)
        logp += float(lp[idx])
    return tuple(action), logp


def greedy_action(logits: np.ndarray, arch: Architecture = Architecture()) -> tuple[int, ...]:
    return tuple(int(np.argmax(z)) for z in split_heads(np.asarray(logits).reshape(-1), arch))


def joint_logprob(logits: np.ndarray, actions: np.ndarray, arch: Architecture) -> np.ndarray:
    logits = np.atleast_2d(logits)
    actions = np.atleast_2d(actions)
    rows = np.arange(logits.shape[0])
    return sum(lp[rows, actions[:, k]] for k, lp in enumerate(head_logprobs(logits, arch)))


def entropy(logits: np.ndarray, arch: Architecture = Architecture()):
    """Summed per-head entropy; a scalar for one logit vector, an array for a batch."""
    z = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for lp in head_logprobs(z, arch):
        total = total - (np.exp(lp) * lp).sum(axis=-1)
    return float(total) if z.ndim == 1 else total


# -- returns and advantages -------------------------------------------------

@dataclass
class Trajectory:
    obs: np.ndarray
    actions: np.ndarray
    logps: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)
    norm_advantages: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.rewards)


def discounted_returns(rewards: np.ndarray, dones: np.ndarray, gamma: float) -> np.ndarray:
    """Reward-to-go, restarted after every terminal step and truncated at the rollout end."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            acc = 0.0
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def compute_advantages(traj: Trajectory, gamma: float, normalize: bool = True) -> Trajectory:
    mc = discounted_returns(traj.rewards, traj.dones, gamma)
    traj.advantages = mc - traj.values
    traj.returns = traj.advantages + traj.values
    adv = traj.advantages
    if normalize and len(adv) > 1:
        traj.norm_advantages = (adv - adv.mean()) / (adv.std() + 1e-8)
    else:
        traj.norm_advantages = adv.copy()
    return traj


# -- loss -------------------------------------------------------------------

def ppo_loss(params: dict, arch: Architecture, obs: np.ndarray, actions: np.ndarray,
             old_logps: np.ndarray, advantages: np.ndarray, returns: np.ndarray,
             hyper: PpoHyper):
    """Negated total objective ``L_clip - c1*L_vf + c2*S`` and its gradient.

    Returns ``(loss, grads, info)`` with ``info`` holding the three terms.
    """
    m = len(advantages)
    logits, values, cache = forward(params, obs)
    rows = np.arange(m)
    lps = head_logprobs(logits, arch)
    new_logp = sum(lp[rows, actions[:, k]] for k, lp in enumerate(lps))
    ratio = np.exp(new_logp - old_logps)
    eps = hyper.clip_eps
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
    l_clip = np.minimum(surr1, surr2).mean()
    err = returns - values
    l_vf = (err ** 2).sum() / (2.0 * m)

    d_logits = np.empty_like(logits)
    ent = np.zeros(m)
    # d(-L_clip)/d(logp): only the unclipped branch carries gradient
    d_logp = -np.where(surr1 <= surr2, surr1, 0.0) / m
    for k, (sl, lp) in enumerate(zip(arch.head_slices(), lps)):
        p = np.exp(lp)
        h = -(p * lp).sum(axis=1)
        ent += h
        onehot = np.zeros_like(p)
        onehot[rows, actions[:, k]] = 1.0
        g = d_logp[:, None] * (onehot - p)
        # d(-c2*S)/dz = c2 * p * (log p + H) / m
        g += hyper.c2 * p * (lp + h[:, None]) / m
        d_logits[:, sl] = g
    s = ent.mean()
    loss = -(l_clip - hyper.c1 * l_vf + hyper.c2 * s)
    d_values = hyper.c1 * (values - returns) / m
    grads = backward(params, cache, d_logits, d_values)
    info = {"l_clip": float(l_clip), "l_vf": float(l_vf), "entropy": float(s)}
    return float(loss), grads, info


# -- optimiser --------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: dict) -> "AdamState":
        return cls(zeros_like(params), zeros_like(params))


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> tuple[dict, AdamState]:
    """One Adam update; inputs are left untouched."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


# -- training loop ----------------------------------------------------------

@dataclass
class CurveRow:
    step: int
    episode_mean_reward: float
    entropy: float
    value_loss: float


@dataclass
class TrainResult:
    params: dict
    adam: AdamState
    curve: list[CurveRow]
    arch: Architecture
    steps: int


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def collect_rollout(env, params: dict, arch: Architecture, rng: np.random.Generator,
                    obs: np.ndarray, n: int) -> tuple[Trajectory, np.ndarray]:
    obs_buf = np.zeros((n, arch.obs_dim))
    act_buf = np.zeros((n, len(arch.heads)), dtype=np.int64)
    logp_buf, rew_buf, val_buf = np.zeros(n), np.zeros(n), np.zeros(n)
    done_buf = np.zeros(n, dtype=bool)
    for t in range(n):
        logits, value, _ = forward(params, obs)
        if not _finite(logits, value):
            raise TrainingDiverged("non-finite policy output", params)
        action, logp = sample_action(logits[0], rng, arch)
        next_obs, r, done = env.step(action)
        obs_buf[t], act_buf[t] = obs, action
        logp_buf[t], rew_buf[t], val_buf[t], done_buf[t] = logp, r, value[0], done
        obs = env.reset()[0] if done else next_obs
    return Trajectory(obs_buf, act_buf, logp_buf, rew_buf, val_buf, done_buf), obs


def train(env, hyper: PpoHyper, rng: np.random.Generator, arch: Architecture = Architecture(),
          params: dict | None = None, adam: AdamState | None = None, start_step: int = 0,
          on_update=None) -> TrainResult:
    """Collect ``rollout_len`` steps, then run minibatch epochs, until ``total_steps``.

    ``on_update(result)`` is called after each update (checkpointing hook).
    """
    if params is None:
        params = init_params(arch, rng)
    adam = adam or AdamState.fresh(params)
    curve: list[CurveRow] = []
    obs = env.reset()[0]
    step = start_step
    while step + hyper.rollout_len <= hyper.total_steps:
        traj, obs = collect_rollout(env, params, arch, rng, obs, hyper.rollout_len)
        step += hyper.rollout_len
        compute_advantages(traj, hyper.gamma, hyper.normalize_advantages)
        n = len(traj)
        vf_losses, entropies = [], []
        for _ in range(hyper.epochs_per_update):
            order = rng.permutation(n)
            for lo in range(0, n, hyper.minibatch):
                idx = order[lo:lo + hyper.minibatch]
                loss, grads, info = ppo_loss(params, arch, traj.obs[idx], traj.actions[idx],
                                             traj.logps[idx], traj.norm_advantages[idx],
                                             traj.returns[idx], hyper)
                if not (np.isfinite(loss) and _finite(*grads.values())):
                    raise TrainingDiverged(f"non-finite loss at step {step}", params,
                                           dump={"rewards": traj.rewards.tolist(),
                                                 "actions": traj.actions.tolist()})
                params, adam = adam_step(params, grads, adam, hyper.lr)
                vf_losses.append(info["l_vf"])
                entropies.append(info["entropy"])
        row = CurveRow(step, float(traj.rewards.mean()), float(np.mean(entropies)),
                       float(np.mean(vf_losses)))
        curve.append(row)
        log.info("step %d reward %.4f entropy %.3f vf %.4f", row.step, row.episode_mean_reward,
                 row.entropy, row.value_loss)
        result = TrainResult(params, adam, curve, arch, step)
        if on_update is not None:
            on_update(result)
    return TrainResult(params, adam, curve, arch, step)


def greedy_policy_action(params: dict, obs: np.ndarray, arch: Architecture = Architecture()) -> tuple[int, ...]:
    logits, _, _ = forward(params, obs)
    return greedy_action(logits[0], arch)
