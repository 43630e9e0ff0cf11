"""PPO stack tests: forward passes, GAE, losses, gradients, determinism."""

import math

import numpy as np
import pytest

from auvsim.env import EnvConfig, control_stream
from auvsim.errors import ParameterError, TrainingDiverged
from auvsim.hydro import VehicleParams
from auvsim.ppo import (
    Adam,
    PolicyNet,
    PpoConfig,
    RolloutBuffer,
    gae_advantages,
    gaussian_entropy,
    gaussian_log_prob,
    load_checkpoint,
    normalize_advantages,
    policy_forward,
    ppo_loss_and_grads,
    ppo_update,
    sample_action,
    save_checkpoint,
    train,
)


def tiny_net(obs_dim=4, act_dim=2, hidden=3, seed=0):
    return PolicyNet(obs_dim, act_dim, hidden, log_std_init=-0.3,
                     rng=np.random.default_rng(seed))


class TestPolicyForward:
    def test_zero_output_layer_gives_zero_mean(self):
        net = tiny_net()
        net.a_w3[:] = 0.0
        net.a_b3[:] = 0.0
        rng = np.random.default_rng(1)
        for _ in range(10):
            mean, _, _ = policy_forward(rng.standard_normal(4), net)
            assert not mean.any()

    def test_hand_computed_single_hidden_unit(self):
        net = PolicyNet(obs_dim=2, act_dim=1, hidden=1, rng=np.random.default_rng(0))
        net.a_w1[:] = np.array([[0.5], [-0.25]])
        net.a_b1[:] = 0.1
        net.a_w2[:] = np.array([[2.0]])
        net.a_b2[:] = -0.2
        net.a_w3[:] = np.array([[1.5]])
        net.a_b3[:] = 0.05
        net.c_w1[:] = np.array([[1.0], [1.0]])
        net.c_b1[:] = 0.0
        net.c_w2[:] = np.array([[1.0]])
        net.c_b2[:] = 0.0
        net.c_w3[:] = np.array([[2.0]])
        net.c_b3[:] = 0.5
        obs = np.array([0.4, 0.8])
        h1 = math.tanh(0.5 * 0.4 - 0.25 * 0.8 + 0.1)
        mean_expected = 1.5 * math.tanh(2.0 * h1 - 0.2) + 0.05
        v1 = math.tanh(0.4 + 0.8)
        value_expected = 2.0 * math.tanh(v1) + 0.5
        mean, log_std, value = policy_forward(obs, net)
        assert abs(mean[0] - mean_expected) < 1e-12
        assert abs(value - value_expected) < 1e-12
        assert np.array_equal(log_std, net.log_std)

    def test_purity(self):
        net = tiny_net()
        obs = np.random.default_rng(2).standard_normal(4)
        a = policy_forward(obs, net)
        b = policy_forward(obs, net)
        assert np.array_equal(a[0], b[0]) and a[2] == b[2]

    def test_nonfinite_params_raise(self):
        net = tiny_net()
        net.a_w2[0, 0] = np.nan
        with pytest.raises(TrainingDiverged):
            policy_forward(np.zeros(4), net)


class TestSampleAction:
    def test_tiny_std_returns_mean(self):
        rng = np.random.default_rng(3)
        mean = np.array([[0.2, -0.4, 0.1, 0.0, 0.3, -0.2]])
        action, _ = sample_action(mean, np.full(6, -5.0), rng)
        assert np.abs(action - mean).max() < 0.05

    def test_log_prob_standard_normal_at_zero(self):
        lp = gaussian_log_prob(np.zeros(6), np.zeros(6), np.zeros(6))
        assert abs(lp - (-5.513631199228036)) < 1e-12

    def test_empirical_mean(self):
        rng = np.random.default_rng(4)
        mean = np.array([0.5, -0.25, 0.0, 1.0, -1.0, 0.1])
        n = 100_000
        samples, _ = sample_action(np.tile(mean, (n, 1)), np.zeros(6), rng)
        se = 1.0 / math.sqrt(n)
        assert np.all(np.abs(samples.mean(axis=0) - mean) < 4.0 * se)

    def test_log_prob_matches_sample(self):
        rng = np.random.default_rng(5)
        mean = rng.standard_normal((10, 6))
        log_std = rng.uniform(-1, 0.5, 6)
        action, lp = sample_action(mean, log_std, rng)
        np.testing.assert_allclose(lp, gaussian_log_prob(action, mean, log_std), atol=0)

    def test_density_integrates_to_one(self):
        log_std = np.array([0.3])
        sigma = math.exp(0.3)
        xs = np.linspace(-8 * sigma, 8 * sigma, 20_001)[:, None]
        densities = np.exp(gaussian_log_prob(xs, np.zeros(1), log_std))
        integral = np.trapezoid(densities, dx=xs[1, 0] - xs[0, 0])
        assert abs(integral - 1.0) < 1e-3


class TestGae:
    def _buffer(self, rewards, values, dones):
        steps = len(rewards)
        buf = RolloutBuffer(steps, 1, obs_dim=1, act_dim=1)
        for t in range(steps):
            buf.add(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1),
                    np.array([rewards[t]]), np.array([values[t]]),
                    np.array([dones[t]]))
        return buf

    def test_monte_carlo_limit(self):
        buf = self._buffer([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [False, False, True])
        adv, ret = gae_advantages(buf, 1.0, 1.0, np.zeros(1))
        np.testing.assert_array_equal(adv[:, 0], [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(ret[:, 0], [3.0, 2.0, 1.0])

    def test_single_terminal_step(self):
        buf = self._buffer([1.0], [0.0], [True])
        adv, _ = gae_advantages(buf, 0.99, 0.95, np.zeros(1))
        assert adv[0, 0] == 1.0

    def test_zero_td_error_fixed_point(self):
        buf = self._buffer([0.0] * 4, [2.0] * 4, [False] * 4)
        adv, _ = gae_advantages(buf, 1.0, 0.7, np.full(1, 2.0))
        np.testing.assert_allclose(adv, 0.0, atol=1e-14)

    def test_five_step_monte_carlo_with_arbitrary_values(self):
        rng = np.random.default_rng(6)
        rewards = rng.standard_normal(5)
        values = rng.standard_normal(5)
        buf = self._buffer(rewards, values, [False] * 4 + [True])
        adv, ret = gae_advantages(buf, 1.0, 1.0, rng.standard_normal(1))
        # terminal at the end: the recursion telescopes to A_t = sum_{s>=t} r_s - V_t
        tail = np.cumsum(rewards[::-1])[::-1]
        np.testing.assert_allclose(adv[:, 0], tail - values, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(ret[:, 0], tail, rtol=1e-12, atol=1e-12)

    def test_done_masks_bootstrap(self):
        buf = self._buffer([1.0, 1.0], [0.5, 0.5], [True, True])
        adv, _ = gae_advantages(buf, 0.9, 0.9, np.full(1, 100.0))
        np.testing.assert_allclose(adv[:, 0], [0.5, 0.5], atol=1e-14)

    def test_requires_full_buffer(self):
        buf = RolloutBuffer(3, 1)
        with pytest.raises(ParameterError):
            gae_advantages(buf, 0.99, 0.95, np.zeros(1))


class TestNormalizeAdvantages:
    def test_moments(self):
        rng = np.random.default_rng(7)
        adv = normalize_advantages(rng.standard_normal(4096) * 7 + 3)
        assert abs(adv.mean()) < 1e-9
        assert abs(adv.var() - 1.0) < 1e-6


class TestLossAndGradients:
    def _batch(self, net, size, seed):
        rng = np.random.default_rng(seed)
        obs = rng.standard_normal((size, net.obs_dim))
        actions = rng.standard_normal((size, net.act_dim))
        mean, _ = net.actor_mean(obs)
        old_lp = gaussian_log_prob(actions, mean, net.log_std) + 0.1 * rng.standard_normal(size)
        adv = rng.standard_normal(size)
        ret = rng.standard_normal(size)
        return obs, actions, old_lp, adv, ret

    def test_gradient_check_against_finite_differences(self):
        net = tiny_net()
        cfg = PpoConfig()
        batch = self._batch(net, 12, seed=8)
        _, grads = ppo_loss_and_grads(net, *batch, cfg)
        h = 1e-6
        worst = 0.0
        for name, arr in net.parameters().items():
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                up, _ = ppo_loss_and_grads(net, *batch, cfg, compute_grads=False)
                arr[idx] = orig - h
                dn, _ = ppo_loss_and_grads(net, *batch, cfg, compute_grads=False)
                arr[idx] = orig
                fd = (up["total_loss"] - dn["total_loss"]) / (2 * h)
                worst = max(worst, abs(fd - grads[name][idx]) / max(1.0, abs(fd)))
        assert worst < 1e-5

    def test_identical_params_give_unit_ratio_and_vanilla_gradient(self):
        net = tiny_net(seed=9)
        cfg = PpoConfig()
        rng = np.random.default_rng(10)
        obs = rng.standard_normal((16, 4))
        actions = rng.standard_normal((16, 2))
        mean, _ = net.actor_mean(obs)
        old_lp = gaussian_log_prob(actions, mean, net.log_std)
        adv = rng.standard_normal(16)
        ret = rng.standard_normal(16)
        stats, _ = ppo_loss_and_grads(net, obs, actions, old_lp, adv, ret, cfg)
        assert stats["ratio_max_dev"] == 0.0
        assert stats["clip_fraction"] == 0.0
        # surrogate at ratio 1 equals -mean(adv)
        assert abs(stats["policy_loss"] - (-adv.mean())) < 1e-12

    def test_clipped_branch_hand_computed(self):
        net = tiny_net(seed=11)
        cfg = PpoConfig(clip_ratio=0.2)
        obs = np.zeros((1, 4))
        action = np.zeros((1, 2))
        mean, _ = net.actor_mean(obs)
        new_lp = gaussian_log_prob(action, mean, net.log_std)
        advantage = np.array([2.0])
        # force ratio = 1 + 2*eps: old log-prob shifted down by log(1.4)
        old_lp = new_lp - math.log(1.0 + 2 * cfg.clip_ratio)
        stats, grads = ppo_loss_and_grads(net, obs, action, old_lp, advantage,
                                          np.zeros(1), cfg)
        assert abs(stats["policy_loss"] - (-(1.0 + cfg.clip_ratio) * 2.0)) < 1e-9
        assert stats["clip_fraction"] == 1.0
        # clipped branch: no gradient flows into the actor
        assert not grads["a_w1"].any() and not grads["a_w3"].any()

    def test_entropy_value(self):
        log_std = np.array([0.0, -1.0])
        expected = (0.0 - 1.0) + 2 * 0.5 * (1.0 + math.log(2 * math.pi))
        assert abs(gaussian_entropy(log_std) - expected) < 1e-12


class TestAdam:
    def test_minimizes_quadratic(self):
        params = {"x": np.array([5.0, -3.0])}
        opt = Adam(0.1)
        for _ in range(500):
            opt.step(params, {"x": 2.0 * params["x"]})
        assert np.abs(params["x"]).max() < 1e-3


def _small_cfg(**overrides):
    base = dict(iterations=3, num_envs=4, steps_per_iteration=60, hidden=16,
                epochs=2, minibatches=2)
    base.update(overrides)
    return PpoConfig(**base)


class TestTraining:
    def test_deterministic_curves(self):
        cfg = _small_cfg()
        a = train(cfg, VehicleParams(), EnvConfig(), seed=123)
        b = train(cfg, VehicleParams(), EnvConfig(), seed=123)
        assert a.curve == b.curve
        for name in PolicyNet.PARAM_NAMES:
            assert np.array_equal(getattr(a.net, name), getattr(b.net, name))
        c = train(cfg, VehicleParams(), EnvConfig(), seed=124)
        assert a.curve != c.curve

    def test_ratio_unit_on_first_minibatch_every_iteration(self):
        cfg = _small_cfg()
        result = train(cfg, VehicleParams(), EnvConfig(), seed=5)
        assert all(s["first_ratio_max_dev"] == 0.0 for s in result.stats_history)

    def test_zero_learning_rate_leaves_params(self):
        cfg = _small_cfg(learning_rate=0.0)
        init = PolicyNet(17, 6, cfg.hidden, cfg.log_std_init,
                         rng=control_stream(7, tag=1))
        result = train(cfg, VehicleParams(), EnvConfig(), seed=7)
        for name in PolicyNet.PARAM_NAMES:
            assert np.array_equal(getattr(result.net, name), getattr(init, name))

    def test_divergent_rewards_raise_with_last_checkpoint(self):
        net = tiny_net()
        buf = RolloutBuffer(2, 1, obs_dim=4, act_dim=2)
        for t in range(2):
            buf.add(np.zeros((1, 4)), np.zeros((1, 2)), np.zeros(1),
                    np.array([np.inf]), np.zeros(1), np.array([t == 1]))
        with pytest.raises(TrainingDiverged):
            ppo_update(net, buf, PpoConfig(), Adam(1e-3),
                       np.random.default_rng(0), np.zeros(1))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = PolicyNet(rng=np.random.default_rng(12))
        path = tmp_path / "ckpt.npz"
        save_checkpoint(net, path, seed=42, config_hash="abc123")
        loaded, meta = load_checkpoint(path)
        for name in PolicyNet.PARAM_NAMES:
            assert np.array_equal(getattr(net, name), getattr(loaded, name))
        assert meta["seed"] == 42
        assert meta["config_hash"] == "abc123"

    def test_interface_mismatch_rejected(self, tmp_path):
        net = PolicyNet(obs_dim=16, act_dim=6, rng=np.random.default_rng(13))
        path = tmp_path / "bad.npz"
        save_checkpoint(net, path, seed=0)
        with pytest.raises(ParameterError, match="16/6"):
            load_checkpoint(path)
