import math
from dataclasses import replace

import numpy as np
import pytest

from mpac.diffnet import make_optimizer, apply_step
from mpac.envs import Chain, make_env
from mpac.errors import InvalidState
from mpac.policy import make_actor_critic
from mpac.rollout import (RolloutBatch, a2c_loss, collect, compute_returns, discounted_returns)

from conftest import assert_grad_close, central_diff, off_kink


def brute_force_returns(rewards, dones, bootstrap, gamma):
    """Sum gamma^k r_{t+k} forward until the first done or the segment end."""
    n_envs, n_steps = rewards.shape
    out = np.zeros_like(rewards)
    for e in range(n_envs):
        for t in range(n_steps):
            total, k = 0.0, 0
            while True:
                total += gamma ** k * rewards[e, t + k]
                if dones[e, t + k]:
                    break
                if t + k == n_steps - 1:
                    total += gamma ** (k + 1) * bootstrap[e]
                    break
                k += 1
            out[e, t] = total
    return out


def chain_batch(actions, rewards=None, dones=None, advantages=None, returns=None, n_cells=4):
    actions = np.atleast_2d(actions)
    n_envs, n_steps = actions.shape
    obs = np.zeros((n_envs, n_steps, n_cells))
    obs[..., 0] = 1.0
    z = np.zeros((n_envs, n_steps))
    return RolloutBatch(obs, actions, z if rewards is None else rewards, obs.copy(),
                        np.zeros_like(z, bool) if dones is None else dones, z.copy(),
                        returns=returns, advantages=advantages, values=z.copy())


class TestCollect:
    def test_matches_direct_stepping(self):
        ac = make_actor_critic(8, 2, (8,), seed=0)
        forced = [1, 1, 0, 1, 1]
        env = make_env("chain-8")
        env.reset()
        batch = collect(ac, [env], 5, [np.random.default_rng(0)], action_fn=lambda obs, t: [forced[t]])
        ref = make_env("chain-8")
        ref.reset()
        for tr, a in zip(batch.transitions(), forced):
            expected_obs = ref.obs
            res = ref.step(a)
            assert np.array_equal(tr.obs, expected_obs) and tr.action == a
            assert tr.reward == res.reward and np.array_equal(tr.next_obs, res.obs)
            assert tr.log_prob <= 0

    def test_shape(self):
        envs = [make_env("chain-8", i) for i in range(8)]
        for env in envs:
            env.reset()
        ac = make_actor_critic(8, 2, (8,), seed=0)
        batch = collect(ac, envs, 4, [np.random.default_rng(i) for i in range(8)])
        assert len(batch) == 32 and batch.obs.shape == (8, 4, 8)

    def test_deterministic(self):
        def run():
            envs = [make_env("pendulum-disc9", i) for i in range(3)]
            for env in envs:
                env.reset()
            ac = make_actor_critic(3, 9, (16,), seed=4)
            return collect(ac, envs, 6, [np.random.default_rng(i) for i in range(3)])
        a, b = run(), run()
        for name in ("obs", "actions", "rewards", "next_obs", "dones", "log_probs"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_resets_inline(self):
        env = Chain(4)
        env.reset()
        ac = make_actor_critic(4, 2, (4,), seed=0)
        batch = collect(ac, [env], 55, [np.random.default_rng(0)])
        assert batch.dones[0].tolist().count(True) == 1 and batch.dones[0, 49]
        assert batch.obs[0, 50].tolist() == [1.0, 0.0, 0.0, 0.0]


class TestReturns:
    def test_geometric(self):
        b = chain_batch([[0, 0, 0]], rewards=np.ones((1, 3)), dones=np.array([[False, False, True]]))
        out = compute_returns(b, lambda obs: np.zeros(len(obs)), 0.5)
        assert out.returns[0].tolist() == [1.75, 1.5, 1.0]

    def test_single_step_advantage(self):
        b = chain_batch([[1]], rewards=np.ones((1, 1)))
        out = compute_returns(b, lambda obs: np.zeros(len(obs)), 0.99)
        assert out.advantages[0, 0] == 1.0

    def test_mid_segment_done_against_brute_force(self):
        r = np.random.default_rng(0)
        rewards = r.standard_normal((2, 6))
        dones = np.zeros((2, 6), bool)
        dones[0, 2] = True
        bootstrap = np.array([0.7, -1.3])
        np.testing.assert_allclose(discounted_returns(rewards, dones, bootstrap, 0.9),
                                   brute_force_returns(rewards, dones, bootstrap, 0.9), rtol=0, atol=1e-12)

    def test_value_function_plumbing(self):
        r = np.random.default_rng(1)
        b = chain_batch(np.zeros((2, 3), int), rewards=r.standard_normal((2, 3)))
        vals = {0: 2.0}
        out = compute_returns(b, lambda obs: np.full(len(obs), vals[0]), 0.9)
        np.testing.assert_allclose(out.bootstrap, [2.0, 2.0])
        np.testing.assert_allclose(out.advantages, out.returns - 2.0)
        np.testing.assert_allclose(out.returns,
                                   brute_force_returns(b.rewards, b.dones, out.bootstrap, 0.9), atol=1e-12)

    def test_gamma_range(self):
        with pytest.raises(ValueError):
            compute_returns(chain_batch([[0]]), lambda o: np.zeros(len(o)), 1.0)


class TestA2CLoss:
    def test_null_signal(self):
        ac = make_actor_critic(4, 2, (6,), seed=0)
        b = chain_batch([[0, 1, 1]], advantages=np.zeros((1, 3)), returns=np.zeros((1, 3)))
        b = compute_returns(b, ac.values, 0.9)
        b = replace(b, advantages=np.zeros((1, 3)), returns=b.values)
        loss, grads, _ = a2c_loss(b, ac, beta=0.0)
        assert loss == 0.0
        assert all(not a.any() for g in grads.values() for a in g.arrays())

    def test_uniform_policy_term(self):
        ac = make_actor_critic(4, 4, (6,), seed=0)
        for a in ac.policy.arrays():
            a[...] = 0
        b = chain_batch([[2]], advantages=np.ones((1, 1)), returns=np.zeros((1, 1)))
        loss, _, comp = a2c_loss(b, ac, beta=0.0, value_coef=0.0)
        assert loss == pytest.approx(math.log(4), abs=1e-12)
        assert comp["policy_loss"] == pytest.approx(math.log(4), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("shared", [False, True])
    def test_finite_differences(self, seed, shared):
        r = np.random.default_rng(seed)
        ac = make_actor_critic(3, 4, (7, 5), seed=seed, shared=shared)
        off_kink(*ac.nets().values(), seed=seed)
        b = RolloutBatch(r.standard_normal((2, 3, 3)), r.integers(0, 4, (2, 3)), np.zeros((2, 3)),
                         r.standard_normal((2, 3, 3)), np.zeros((2, 3), bool), np.zeros((2, 3)),
                         advantages=r.standard_normal((2, 3)), returns=r.standard_normal((2, 3)))
        loss, grads, _ = a2c_loss(b, ac, beta=0.3, value_coef=0.5)
        nets = list(ac.nets().values())
        numeric = central_diff(lambda: a2c_loss(b, ac, 0.3, 0.5)[0], nets)
        for (name, _), num in zip(ac.nets().items(), numeric):
            assert_grad_close(grads[name].flat(), num)

    def test_non_finite_loss(self):
        ac = make_actor_critic(4, 2, (4,), seed=0)
        b = chain_batch([[0]], advantages=np.array([[np.inf]]), returns=np.zeros((1, 1)))
        with pytest.raises(InvalidState):
            a2c_loss(b, ac, 0.1)

    def test_step_raises_probability_of_advantaged_action(self):
        ac = make_actor_critic(8, 2, (16,), seed=3)
        env = make_env("chain-8")
        env.reset()
        batch = collect(ac, [env], 12, [np.random.default_rng(0)], action_fn=lambda o, t: [1])
        batch = replace(batch, advantages=np.ones((1, 12)), returns=np.zeros((1, 12)))
        states = batch.flat_obs()
        before = ac.action_dist(states).probs[:, 1]
        _, grads, _ = a2c_loss(batch, ac, beta=0.0, value_coef=0.0)
        apply_step(ac.policy, grads["policy"], make_optimizer(ac.policy, "sgd", 0.1))
        after = ac.action_dist(states).probs[:, 1]
        assert np.all(after > before)

    def test_advantages_are_detached(self):
        r = np.random.default_rng(7)
        ac = make_actor_critic(3, 4, (8,), seed=7)
        other = ac.copy()
        for a in other.value.arrays():
            a += r.standard_normal(a.shape)
        b = RolloutBatch(r.standard_normal((1, 4, 3)), r.integers(0, 4, (1, 4)), r.standard_normal((1, 4)),
                         r.standard_normal((1, 4, 3)), np.zeros((1, 4), bool), np.zeros((1, 4)))
        live = compute_returns(b, ac.values, 0.9)
        assert not np.allclose(live.advantages, compute_returns(b, other.values, 0.9).advantages)
        g_live = a2c_loss(live, ac, 0.1)[1]["policy"].flat()
        g_other = a2c_loss(live, other, 0.1)[1]["policy"].flat()
        assert np.array_equal(g_live, g_other)


def test_return_recursion_oracle_many_segments():
    r = np.random.default_rng(2024)
    for _ in range(200):
        n_envs, n_steps = r.integers(1, 4), r.integers(1, 9)
        rewards = r.standard_normal((n_envs, n_steps))
        dones = r.random((n_envs, n_steps)) < 0.2
        boot = r.standard_normal(n_envs)
        gamma = r.uniform(0.5, 0.999)
        np.testing.assert_allclose(discounted_returns(rewards, dones, boot, gamma),
                                   brute_force_returns(rewards, dones, boot, gamma), rtol=0, atol=1e-10)
