"""Latent-pipeline orchestration: ablation modes, acting path, training loop."""

import json
import os

import numpy as np
import pytest

import plls.pipeline as pipeline
import plls.ppo as ppo
import plls.vae as vae
from plls import envs, rollout


@pytest.fixture(scope="module")
def action_model():
    ds = rollout.collect_random(lambda: envs.make_env("mountaincar"), 2, 300, seed=0)
    config = vae.VaeConfig(
        latent_dim=3,
        encoder_widths=[16, 8],
        decoder_widths=[8, 16],
        epochs=3,
        seed=0,
        input_dim=1,
        output_activation="tanh",
        kl_weight=0.01,
    )
    model, _ = vae.train_vae(ds.actions[:500], ds.actions[500:], config)
    return model


class TestAblationMode:
    def test_values(self):
        assert pipeline.AblationMode("both").uses_state_model
        assert pipeline.AblationMode("both").uses_action_model
        assert not pipeline.AblationMode("state_only").uses_action_model
        assert not pipeline.AblationMode("action_only").uses_state_model
        neither = pipeline.AblationMode("neither")
        assert not neither.uses_state_model and not neither.uses_action_model

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            pipeline.AblationMode("everything")


class TestBuildPolicy:
    def test_action_only_dims(self, action_model):
        policy = pipeline.build_policy(
            "mountaincar", pipeline.AblationMode.ACTION_ONLY, None, action_model
        )
        assert policy.spec.action_dim == 3  # latent actions
        assert policy.spec.input_dim == 2  # raw observation

    def test_neither_dims(self):
        policy = pipeline.build_policy(
            "mountaincar", pipeline.AblationMode.NEITHER, None, None
        )
        assert policy.spec.action_dim == 1
        assert policy.spec.init_log_std == 0.0

    def test_latent_action_policy_starts_broad(self, action_model):
        policy = pipeline.build_policy(
            "mountaincar", pipeline.AblationMode.ACTION_ONLY, None, action_model
        )
        assert np.all(policy.log_std.data == 1.0)


class TestActPath:
    def test_single_and_batch(self, action_model):
        policy = pipeline.build_policy(
            "mountaincar", pipeline.AblationMode.ACTION_ONLY, None, action_model
        )
        pipe = pipeline.LatentPipeline("mountaincar", policy, None, action_model)
        obs = np.array([-0.5, 0.01])
        a, z, e, logp, value = pipeline.act(pipe, obs, stochastic=False)
        assert a.shape == (1,) and e.shape == (3,) and np.isscalar(float(value))
        ab, zb, eb, logpb, vb = pipeline.act(pipe, np.tile(obs, (4, 1)), stochastic=False)
        assert ab.shape == (4, 1) and eb.shape == (4, 3)
        np.testing.assert_allclose(ab[0], a)

    def test_actions_respect_box(self, action_model, rng):
        policy = pipeline.build_policy(
            "mountaincar", pipeline.AblationMode.ACTION_ONLY, None, action_model
        )
        pipe = pipeline.LatentPipeline("mountaincar", policy, None, action_model)
        obs = rng.uniform(-1, 1, (50, 2))
        a, _, _, _, _ = pipeline.act(pipe, obs, rng=rng)
        assert np.all(a >= -1.0) and np.all(a <= 1.0)

    def test_observation_scaling_without_state_model(self, action_model):
        policy = pipeline.build_policy(
            "mountaincar", pipeline.AblationMode.ACTION_ONLY, None, action_model
        )
        pipe = pipeline.LatentPipeline("mountaincar", policy, None, action_model)
        z = pipe.encode_state(np.array([[-0.5, 0.07]]))
        np.testing.assert_allclose(z, [[-0.5, 1.0]])

    def test_identity_decode_without_action_model(self):
        policy = pipeline.build_policy(
            "mountaincar", pipeline.AblationMode.NEITHER, None, None
        )
        pipe = pipeline.LatentPipeline("mountaincar", policy, None, None)
        np.testing.assert_allclose(pipe.decode_action(np.array([[0.3]])), [[0.3]])
        np.testing.assert_allclose(pipe.decode_action(np.array([[7.0]])), [[1.0]])


class TestEvaluate:
    def test_deterministic_given_seed(self, action_model):
        policy = pipeline.build_policy(
            "mountaincar", pipeline.AblationMode.ACTION_ONLY, None, action_model
        )
        pipe = pipeline.LatentPipeline("mountaincar", policy, None, action_model)
        r1 = pipeline.evaluate(pipe, n_episodes=2, seed=3, max_steps=50)
        r2 = pipeline.evaluate(pipe, n_episodes=2, seed=3, max_steps=50)
        assert r1 == r2


class TestTrainPolicy:
    def _run(self, tmp_path, action_model, iterations=2, resume=False, out=None):
        policy = pipeline.build_policy(
            "mountaincar", pipeline.AblationMode.ACTION_ONLY, None, action_model, seed=0
        )
        pipe = pipeline.LatentPipeline("mountaincar", policy, None, action_model)
        cfg = ppo.PpoConfig(
            horizon=16, n_envs=2, minibatch_size=16, n_epochs=1,
            total_iterations=iterations, seed=0,
        )
        settings = pipeline.TrainSettings(
            out_dir=str(out or tmp_path / "run"), eval_every=2, eval_episodes=1,
            save_every=2,
        )
        # keep the smoke run fast: tiny eval episodes via max_steps is not
        # exposed, so just accept the 999-step eval at this scale
        curve = pipeline.train_policy(pipe, cfg, settings, resume=resume)
        return curve, settings.out_dir

    def test_artifacts_written(self, tmp_path, action_model):
        curve, out = self._run(tmp_path, action_model)
        for name in (
            "metrics.csv", "eval.csv", "policy_last.ckpt",
            "optimizer_last.ckpt", "state.json", "run.log",
        ):
            assert os.path.exists(os.path.join(out, name)), name
        metrics = open(os.path.join(out, "metrics.csv")).read().splitlines()
        assert metrics[0].startswith("iteration,mean_return,policy_loss")
        assert len(metrics) == 3
        assert json.load(open(os.path.join(out, "state.json")))["iteration"] == 2
        assert len(curve) == 1  # eval at iteration 2

    def test_resume_continues(self, tmp_path, action_model):
        out = tmp_path / "resume_run"
        self._run(tmp_path, action_model, iterations=2, out=out)
        curve, _ = self._run(tmp_path, action_model, iterations=4, resume=True, out=out)
        state = json.load(open(os.path.join(out, "state.json")))
        assert state["iteration"] == 4
        metrics = open(os.path.join(out, "metrics.csv")).read().splitlines()
        assert len(metrics) == 5  # header + 4 iterations appended across runs

    def test_resume_requires_checkpoint(self, tmp_path, action_model):
        with pytest.raises(FileNotFoundError):
            self._run(tmp_path, action_model, resume=True, out=tmp_path / "missing")

    def test_resume_at_final_iteration_is_noop(self, tmp_path, action_model):
        out = tmp_path / "done_run"
        self._run(tmp_path, action_model, iterations=2, out=out)
        curve, _ = self._run(tmp_path, action_model, iterations=2, resume=True, out=out)
        assert curve == []

    def test_frozen_representation_not_updated(self, tmp_path, action_model):
        before = [p.data.copy() for p in action_model.parameters()]
        self._run(tmp_path, action_model)
        for b, p in zip(before, action_model.parameters()):
            np.testing.assert_array_equal(b, p.data)


class TestOptimizerCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        import plls.nn as nn
        from plls.tensor import Tensor

        params = [Tensor(rng.standard_normal(4), requires_grad=True)]
        opt = nn.Adam(params, lr=0.01)
        params[0].grad = rng.standard_normal(4)
        opt.step()
        path = tmp_path / "opt.ckpt"
        pipeline.save_optimizer(opt, path)
        fresh = nn.Adam([Tensor(np.zeros(4), requires_grad=True)], lr=0.01)
        pipeline.load_optimizer(fresh, path)
        np.testing.assert_array_equal(
            fresh.state.first_moment[0], opt.state.first_moment[0]
        )
        np.testing.assert_array_equal(
            fresh.state.second_moment[0], opt.state.second_moment[0]
        )
        assert fresh.state.step_count == 1

    def test_wrong_kind_rejected(self, tmp_path, action_model):
        import plls.nn as nn
        from plls import checkpoint

        vae.save_vae(action_model, tmp_path / "m.ckpt")
        opt = nn.Adam(action_model.parameters(), 0.1)
        with pytest.raises(checkpoint.CheckpointError):
            pipeline.load_optimizer(opt, tmp_path / "m.ckpt")
