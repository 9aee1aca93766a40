"""PPO learner against brute-force oracles and arithmetic checks."""

import numpy as np
import pytest

import plls.nn as nn
import plls.ppo as ppo
import plls.tensor as T
from plls import envs, rollout
from plls.tensor import Tensor


class TestConfig:
    def test_defaults_valid(self):
        cfg = ppo.PpoConfig()
        assert cfg.horizon == 512 and cfg.n_envs == 32

    def test_validation(self):
        with pytest.raises(ValueError):
            ppo.PpoConfig(gamma=0.0)
        with pytest.raises(ValueError):
            ppo.PpoConfig(lam=1.5)
        with pytest.raises(ValueError):
            ppo.PpoConfig(clip_eps=0.0)
        with pytest.raises(ValueError):
            ppo.PpoConfig(horizon=10, n_envs=3, minibatch_size=7)


class TestReturns:
    def test_undiscounted_sum(self):
        assert ppo.returns([1.0, 2.0, 3.0], 1.0) == 6.0

    def test_discounted_oracle(self):
        rewards = [1.0, 0.0, 2.0, -1.0]
        gamma = 0.9
        expected = sum(r * gamma**t for t, r in enumerate(rewards))
        np.testing.assert_allclose(ppo.returns(rewards, gamma), expected)

    def test_invalid_gamma(self):
        with pytest.raises(ValueError):
            ppo.returns([1.0], 0.0)


def _gae_brute_force(rewards, values, dones, bootstrap, gamma, lam):
    horizon = len(rewards)
    vnext = list(values[1:]) + [bootstrap]
    deltas = [
        rewards[t] + gamma * vnext[t] * (1 - dones[t]) - values[t]
        for t in range(horizon)
    ]
    adv = np.zeros(horizon)
    for t in range(horizon):
        acc = 0.0
        scale = 1.0
        for k in range(t, horizon):
            acc += scale * deltas[k]
            if dones[k]:
                break
            scale *= gamma * lam
        adv[t] = acc
    return adv, adv + np.asarray(values)


class TestGae:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        horizon = 10
        rewards = rng.standard_normal(horizon)
        values = rng.standard_normal(horizon)
        dones = rng.random(horizon) < 0.25
        bootstrap = rng.standard_normal()
        adv, targets = ppo.gae(rewards, values, dones, bootstrap, 0.95, 0.8)
        adv_ref, targets_ref = _gae_brute_force(
            rewards, values, dones, bootstrap, 0.95, 0.8
        )
        np.testing.assert_allclose(adv, adv_ref, atol=1e-12)
        np.testing.assert_allclose(targets, targets_ref, atol=1e-12)

    def test_single_step(self):
        adv, targets = ppo.gae([1.0], [0.5], [False], 2.0, 0.9, 0.95)
        np.testing.assert_allclose(adv, [1.0 + 0.9 * 2.0 - 0.5])
        np.testing.assert_allclose(targets, adv + 0.5)

    def test_done_blocks_bootstrap(self):
        adv, _ = ppo.gae([1.0], [0.0], [True], 100.0, 0.9, 0.95)
        np.testing.assert_allclose(adv, [1.0])

    def test_batched_matches_per_env(self, rng):
        rewards = rng.standard_normal((3, 8))
        values = rng.standard_normal((3, 8))
        dones = rng.random((3, 8)) < 0.2
        bootstrap = rng.standard_normal(3)
        adv, targets = ppo.gae(rewards, values, dones, bootstrap, 0.99, 0.95)
        for i in range(3):
            a, t = ppo.gae(rewards[i], values[i], dones[i], bootstrap[i], 0.99, 0.95)
            np.testing.assert_allclose(adv[i], a)
            np.testing.assert_allclose(targets[i], t)

    def test_misaligned_shapes(self):
        with pytest.raises(ValueError, match="misaligned"):
            ppo.gae(np.zeros(4), np.zeros(5), np.zeros(4), 0.0, 0.99, 0.95)


class TestNormalizeAdvantages:
    def test_zero_mean_unit_std(self, rng):
        adv = ppo.normalize_advantages(rng.standard_normal(1000) * 5 + 3)
        np.testing.assert_allclose(adv.mean(), 0.0, atol=1e-12)
        np.testing.assert_allclose(adv.std(), 1.0, rtol=1e-12)

    def test_constant_input_no_blowup(self):
        adv = ppo.normalize_advantages(np.full(10, 3.0))
        np.testing.assert_allclose(adv, 0.0)


def _vector_model(action_dim=2, input_dim=3, seed=0, **spec_kw):
    spec = ppo.ActorCriticSpec(
        action_dim=action_dim, input_dim=input_dim, trunk_widths=[8], **spec_kw
    )
    model = ppo.ActorCritic(spec)
    nn.init_weights(model, seed)
    return model


class TestActorCritic:
    def test_output_shapes(self, rng):
        model = _vector_model()
        params, value = model(Tensor(rng.standard_normal((5, 3))))
        assert params.mean.shape == (5, 2)
        assert value.shape == (5,)

    def test_policy_mean_init_small(self):
        model = _vector_model()
        assert np.max(np.abs(model.policy_mean.weights.data)) < 0.01

    def test_init_log_std(self):
        model = _vector_model(init_log_std=1.0)
        np.testing.assert_allclose(model.log_std.data, 1.0)

    def test_act_deterministic_uses_mean(self, rng):
        model = _vector_model()
        x = rng.standard_normal((4, 3))
        e, logp, value = model.act(x, stochastic=False)
        params, _ = model(Tensor(x))
        np.testing.assert_allclose(e, params.mean.data)
        assert logp.shape == (4,) and value.shape == (4,)

    def test_act_stochastic_statistics(self, rng):
        model = _vector_model(init_log_std=np.log(2.0))
        x = np.tile(rng.standard_normal(3), (20000, 1))
        e, _, _ = model.act(x, rng=rng, stochastic=True)
        np.testing.assert_allclose(e.std(axis=0), 2.0, rtol=0.05)

    def test_pixel_trunk(self, rng):
        spec = ppo.ActorCriticSpec(
            action_dim=3,
            input_shape=(3, 32, 32),
            trunk_widths=[16],
            conv_trunk=[(8, 4, 2), (16, 4, 2)],
        )
        model = ppo.ActorCritic(spec)
        nn.init_weights(model, 0)
        params, value = model(Tensor(rng.standard_normal((2, 3, 32, 32))))
        assert params.mean.shape == (2, 3) and value.shape == (2,)

    def test_requires_one_input_spec(self):
        with pytest.raises(ValueError):
            ppo.ActorCriticSpec(action_dim=2)

    def test_save_load_round_trip(self, tmp_path, rng):
        model = _vector_model(init_log_std=0.3)
        path = tmp_path / "policy.ckpt"
        ppo.save_actor_critic(model, path)
        back = ppo.load_actor_critic(path)
        x = rng.standard_normal((3, 3))
        p1, v1 = model(Tensor(x))
        p2, v2 = back(Tensor(x))
        np.testing.assert_array_equal(p1.mean.data, p2.mean.data)
        np.testing.assert_array_equal(v1.data, v2.data)
        assert back.spec.init_log_std == 0.3


class TestPpoLoss:
    def _setup(self, rng, n=16):
        model = _vector_model()
        inputs = rng.standard_normal((n, 3))
        actions = rng.standard_normal((n, 2))
        adv = ppo.normalize_advantages(rng.standard_normal(n))
        targets = rng.standard_normal(n)
        old_logp, _ = self._logp_value(model, inputs, actions)
        return model, inputs, actions, old_logp, adv, targets

    @staticmethod
    def _logp_value(model, inputs, actions):
        params, value = model(Tensor(inputs))
        lp = nn.gaussian_log_prob(params, actions)
        return lp.data.copy(), value.data.copy()

    def test_components_against_numpy(self, rng):
        cfg = ppo.PpoConfig(minibatch_size=16, horizon=16, n_envs=1)
        model, inputs, actions, old_logp, adv, targets = self._setup(rng)
        # shift old log probs so ratios differ from 1
        old_logp = old_logp - rng.standard_normal(len(old_logp)) * 0.3
        total, pol, val, ent = ppo.ppo_loss(
            model, inputs, actions, old_logp, adv, targets, cfg
        )
        new_logp, value = self._logp_value(model, inputs, actions)
        ratio = np.exp(new_logp - old_logp)
        clipped = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps)
        pol_ref = -np.mean(np.minimum(ratio * adv, clipped * adv))
        val_ref = np.mean((value - targets) ** 2)
        ent_ref = np.sum(model.log_std.data + 0.5 * (1 + np.log(2 * np.pi)))
        np.testing.assert_allclose(pol.item(), pol_ref, rtol=1e-10)
        np.testing.assert_allclose(val.item(), val_ref, rtol=1e-10)
        np.testing.assert_allclose(ent.item(), ent_ref, rtol=1e-10)
        np.testing.assert_allclose(
            total.item(),
            pol_ref + cfg.vf_coeff * val_ref - cfg.entropy_coeff * ent_ref,
            rtol=1e-10,
        )

    def test_fresh_policy_loss_is_neutral(self, rng):
        # ratio == 1 everywhere: policy term is -mean(adv) and no clipping
        cfg = ppo.PpoConfig(minibatch_size=16, horizon=16, n_envs=1)
        model, inputs, actions, old_logp, adv, targets = self._setup(rng)
        _, pol, _, _ = ppo.ppo_loss(model, inputs, actions, old_logp, adv, targets, cfg)
        np.testing.assert_allclose(pol.item(), -np.mean(adv), atol=1e-10)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_non_finite_ratio_reported(self, rng):
        cfg = ppo.PpoConfig(minibatch_size=16, horizon=16, n_envs=1)
        model, inputs, actions, old_logp, adv, targets = self._setup(rng)
        old_logp[3] = -1e6
        with pytest.raises(FloatingPointError, match="transition 3"):
            ppo.ppo_loss(model, inputs, actions, old_logp, adv, targets, cfg)

    def test_gradients_flow_to_all_params(self, rng):
        cfg = ppo.PpoConfig(minibatch_size=16, horizon=16, n_envs=1)
        model, inputs, actions, old_logp, adv, targets = self._setup(rng)
        old_logp = old_logp + 0.1
        total, _, _, _ = ppo.ppo_loss(
            model, inputs, actions, old_logp, adv, targets, cfg
        )
        total.backward()
        for p in model.parameters():
            assert p.grad is not None


class TestPpoUpdate:
    def _batch(self, model, n_envs=2, horizon=8, seed=0):
        pool = [envs.make_env("mountaincar") for _ in range(n_envs)]
        rng = np.random.default_rng(seed)

        def act_fn(obs):
            scaled = np.asarray(obs) * np.array([1.0, 1.0 / 0.07])
            e, logp, value = model.act(scaled, rng=rng, stochastic=True)
            a = np.clip(e[:, :1], -1, 1)
            return a, scaled, e, logp, value

        return rollout.collect_policy(pool, act_fn, horizon, seed=seed)

    def test_update_changes_params_and_reports_stats(self):
        model = _vector_model(action_dim=2, input_dim=2)
        cfg = ppo.PpoConfig(horizon=8, n_envs=2, minibatch_size=8, n_epochs=2)
        opt = nn.Adam(model.parameters(), cfg.learning_rate)
        batch = self._batch(model)
        before = [p.data.copy() for p in model.parameters()]
        stats = ppo.ppo_update(batch, model, opt, cfg, np.random.default_rng(0))
        changed = any(
            not np.array_equal(b, p.data)
            for b, p in zip(before, model.parameters())
        )
        assert changed
        for key in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction"):
            assert np.isfinite(stats[key])
        assert 0.0 <= stats["clip_fraction"] <= 1.0

    def test_value_loss_decreases_on_fixed_batch(self):
        model = _vector_model(action_dim=2, input_dim=2)
        cfg = ppo.PpoConfig(
            horizon=32, n_envs=2, minibatch_size=32, n_epochs=10, learning_rate=1e-2
        )
        opt = nn.Adam(model.parameters(), cfg.learning_rate)
        batch = self._batch(model, horizon=32)
        first = ppo.ppo_update(batch, model, opt, cfg, np.random.default_rng(0))
        second = ppo.ppo_update(batch, model, opt, cfg, np.random.default_rng(0))
        assert second["value_loss"] < first["value_loss"]
