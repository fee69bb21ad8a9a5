import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from macforge.ppo.algo import (AdamState, PpoHyper, Trajectory, adam_step, compute_advantages,
                               discounted_returns, entropy, greedy_action, head_logprobs,
                               joint_logprob, ppo_loss, sample_action, train)
from macforge.ppo.net import Architecture, forward, init_params, split_heads

ARCH = Architecture()
LN_SIZES = sum(math.log(k) for k in ARCH.heads)  # ln 1296


def zero_params(arch=ARCH):
    return {k: np.zeros(s) for k, s in arch.shapes().items()}


# -- network and distributions ------------------------------------------------

def test_zero_weights_give_uniform_heads():
    logits, values, _ = forward(zero_params(), np.ones(8))
    assert np.all(logits == 0.0)
    assert values[0] == 0.0
    for lp, k in zip(head_logprobs(logits[0], ARCH), ARCH.heads):
        assert np.allclose(np.exp(lp), 1.0 / k)


def test_forward_is_deterministic():
    p = init_params(ARCH, np.random.default_rng(0))
    obs = np.random.default_rng(1).random((5, 8))
    a, b = forward(p, obs), forward(p, obs)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_uniform_two_way_sampling():
    rng = np.random.default_rng(2)
    logits = np.zeros(ARCH.n_logits)
    draws = np.array([sample_action(logits, rng)[0][0] for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) < 0.01


def test_uniform_joint_logprob():
    _, logp = sample_action(np.zeros(ARCH.n_logits), np.random.default_rng(0))
    assert logp == pytest.approx(-LN_SIZES)
    assert LN_SIZES == pytest.approx(math.log(1296))
    assert LN_SIZES == pytest.approx(7.1670, abs=1e-4)


def test_saturated_logit_wins():
    logits = np.zeros(ARCH.n_logits)
    logits[ARCH.head_slices()[5].start + 4] = 50.0
    rng = np.random.default_rng(0)
    assert all(sample_action(logits, rng)[0][5] == 4 for _ in range(200))
    assert greedy_action(logits)[5] == 4


def test_entropy_cases():
    assert entropy(np.zeros(ARCH.n_logits)) == pytest.approx(LN_SIZES)
    four = Architecture(obs_dim=2, hidden=(4, 4), heads=(4,))
    assert entropy(np.zeros(4), four) == pytest.approx(math.log(4))
    peaked = np.array([60.0, 0.0, 0.0, 0.0])
    assert entropy(peaked, four) == pytest.approx(0.0, abs=1e-20)


logit_vectors = arrays(np.float64, ARCH.n_logits, elements=st.floats(-30, 30, allow_nan=False))


@settings(max_examples=1000, deadline=None)
@given(logit_vectors)
def test_head_softmax_sums_to_one(z):
    for lp in head_logprobs(z, ARCH):
        assert abs(np.exp(lp).sum() - 1.0) < 1e-9


@settings(max_examples=1000, deadline=None)
@given(logit_vectors, st.integers(0, 2 ** 32 - 1))
def test_joint_logprob_is_sum_of_heads(z, seed):
    action, logp = sample_action(z, np.random.default_rng(seed))
    per_head = sum(lp[a] for lp, a in zip(head_logprobs(z, ARCH), action))
    assert logp == pytest.approx(per_head, abs=1e-9)
    assert joint_logprob(z, np.array(action), ARCH)[0] == pytest.approx(per_head, abs=1e-9)
    for a, k in zip(action, ARCH.heads):
        assert 0 <= a < k


# -- returns and advantages -----------------------------------------------------

def _traj(rewards, values, dones=None):
    n = len(rewards)
    return Trajectory(np.zeros((n, 8)), np.zeros((n, 6), dtype=int), np.zeros(n),
                      np.asarray(rewards, float), np.asarray(values, float),
                      np.zeros(n, bool) if dones is None else np.asarray(dones, bool))


def test_geometric_returns():
    t = compute_advantages(_traj([1.0, 1.0, 1.0], [0.0, 0.0, 0.0]), 0.99)
    assert t.returns.tolist() == pytest.approx([2.9701, 1.99, 1.0])


def test_myopic_returns():
    r = [3.0, -1.0, 7.5]
    assert discounted_returns(np.array(r), np.zeros(3, bool), 0.0).tolist() == r


def test_perfect_critic_zero_advantage():
    g = discounted_returns(np.array([1.0, 2.0, 3.0]), np.zeros(3, bool), 0.9)
    t = compute_advantages(_traj([1.0, 2.0, 3.0], g), 0.9)
    assert np.allclose(t.advantages, 0.0)


def test_returns_restart_after_done():
    g = discounted_returns(np.array([1.0, 1.0, 1.0, 1.0]), np.array([False, True, False, False]), 0.5)
    assert g.tolist() == [1.5, 1.0, 1.5, 1.0]


floats = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=1000, deadline=None)
@given(st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(floats, min_size=n, max_size=n), st.lists(floats, min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n))), st.floats(0.0, 1.0))
def test_return_equals_advantage_plus_value(data, gamma):
    rewards, values, dones = data
    t = compute_advantages(_traj(rewards, values, dones), gamma)
    assert np.allclose(t.returns, t.advantages + t.values, rtol=0, atol=1e-9)
    if len(rewards) > 1 and t.advantages.std() > 1e-3:
        assert abs(t.norm_advantages.mean()) < 1e-6
        assert abs(t.norm_advantages.std() - 1.0) < 1e-4


# -- clipped objective -----------------------------------------------------------

def _one_step_clip(ratio, adv, eps=0.2):
    return min(ratio * adv, float(np.clip(ratio, 1 - eps, 1 + eps)) * adv)


def test_clip_examples():
    assert _one_step_clip(1.5, 1.0) == pytest.approx(1.2)
    assert _one_step_clip(0.5, -1.0) == pytest.approx(-0.8)


def _batch(rng, m=16, arch=ARCH):
    obs = rng.random((m, arch.obs_dim))
    actions = np.stack([rng.integers(0, k, m) for k in arch.heads], axis=1)
    return obs, actions


def test_loss_on_policy_identity():
    rng = np.random.default_rng(3)
    p = init_params(ARCH, rng)
    obs, actions = _batch(rng)
    logits, values, _ = forward(p, obs)
    old = joint_logprob(logits, actions, ARCH)
    adv = rng.standard_normal(16)
    _, _, info = ppo_loss(p, ARCH, obs, actions, old, adv, values.copy(), PpoHyper())
    assert info["l_clip"] == pytest.approx(adv.mean())
    assert info["l_vf"] == 0.0


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_clip_bound_for_positive_advantages(seed):
    rng = np.random.default_rng(seed)
    p = init_params(ARCH, rng)
    obs, actions = _batch(rng)
    logits, values, _ = forward(p, obs)
    old = joint_logprob(logits, actions, ARCH) + rng.normal(0, 0.5, 16)
    adv = np.abs(rng.standard_normal(16))
    _, _, info = ppo_loss(p, ARCH, obs, actions, old, adv, values, PpoHyper())
    ratio = np.exp(joint_logprob(logits, actions, ARCH) - old)
    assert info["l_clip"] <= (ratio * adv).mean() + 1e-12


TINY = Architecture(obs_dim=4, hidden=(8, 8), heads=(2, 3))


def _flat_grad_check(seed):
    rng = np.random.default_rng(seed)
    p = init_params(TINY, rng, actor_gain=1.0)
    for k in p:
        p[k] = p[k] + rng.normal(0, 0.3, p[k].shape)
    obs, actions = _batch(rng, 12, TINY)
    old = joint_logprob(forward(p, obs)[0], actions, TINY) + rng.normal(0, 0.1, 12)
    adv, ret = rng.standard_normal(12), rng.standard_normal(12)
    hyper = PpoHyper(clip_eps=0.2)
    _, grads, _ = ppo_loss(p, TINY, obs, actions, old, adv, ret, hyper)
    worst = 0.0
    h = 1e-6
    for k in p:
        for idx in np.ndindex(p[k].shape):
            orig = p[k][idx]
            p[k][idx] = orig + h
            up = ppo_loss(p, TINY, obs, actions, old, adv, ret, hyper)[0]
            p[k][idx] = orig - h
            dn = ppo_loss(p, TINY, obs, actions, old, adv, ret, hyper)[0]
            p[k][idx] = orig
            num = (up - dn) / (2 * h)
            ana = grads[k][idx]
            denom = max(abs(num), abs(ana), 1e-7)
            worst = max(worst, abs(num - ana) / denom)
    return worst


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    assert _flat_grad_check(seed) < 1e-4


# -- optimiser ---------------------------------------------------------------------

def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(p, {"w": np.zeros(2)}, AdamState.fresh(p), 0.01)
    assert np.array_equal(new["w"], p["w"])
    assert state.t == 1


def test_adam_first_step_closed_form():
    p = {"w": np.array([0.5, 0.5, 0.5])}
    g = {"w": np.array([2.0, -0.3, 1e-3])}
    new, _ = adam_step(p, g, AdamState.fresh(p), 0.007)
    # m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps)
    expected = 0.5 - 0.007 * g["w"] / (np.abs(g["w"]) + 1e-8)
    assert np.allclose(new["w"], expected, rtol=0, atol=1e-15)


def test_adam_is_pure():
    p = {"w": np.array([0.1])}
    g = {"w": np.array([0.4])}
    s = AdamState.fresh(p)
    a, sa = adam_step(p, g, s, 0.1)
    b, sb = adam_step(p, g, s, 0.1)
    assert np.array_equal(a["w"], b["w"]) and np.array_equal(sa.m["w"], sb.m["w"])
    assert p["w"][0] == 0.1 and s.t == 0


def test_hyper_validation():
    with pytest.raises(ValueError):
        PpoHyper(clip_eps=1.0)
    with pytest.raises(ValueError):
        PpoHyper(gamma=0.0)
    assert PpoHyper().lr == 0.007


# -- training loop -------------------------------------------------------------------

class Bandit:
    """One-step bandit: reward 1 when every head picks index 0."""

    def __init__(self):
        self.obs = np.zeros(8)

    def reset(self, rng=None):
        return self.obs, None

    def step(self, action):
        return self.obs, float(all(a == 0 for a in action)) + 0.1 * (action[5] == 0), True


def _p_best(params):
    logits = forward(params, np.zeros(8))[0][0]
    return float(np.exp(joint_logprob(logits, np.zeros(6, int), ARCH))[0])


@pytest.mark.parametrize("seed", range(3))
def test_entropy_bonus_slows_collapse(seed):
    hyper = dict(total_steps=1024, rollout_len=256, gamma=0.99)
    no_bonus = train(Bandit(), PpoHyper(c2=0.0, **hyper), np.random.default_rng(seed))
    bonus = train(Bandit(), PpoHyper(c2=0.02, **hyper), np.random.default_rng(seed))
    assert no_bonus.curve[-1].entropy < bonus.curve[-1].entropy
    assert _p_best(no_bonus.params) > _p_best(bonus.params)


def test_curve_rows_per_update():
    res = train(Bandit(), PpoHyper(total_steps=1000, rollout_len=256), np.random.default_rng(1))
    assert [r.step for r in res.curve] == [256, 512, 768]
    assert res.steps == 768


def test_training_is_deterministic():
    a = train(Bandit(), PpoHyper(total_steps=512), np.random.default_rng(5))
    b = train(Bandit(), PpoHyper(total_steps=512), np.random.default_rng(5))
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    assert a.curve == b.curve


def test_split_heads_shapes():
    z = np.arange(ARCH.n_logits, dtype=float)
    assert [len(h) for h in split_heads(z, ARCH)] == list(ARCH.heads)
