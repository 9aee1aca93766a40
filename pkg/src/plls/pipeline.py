"""Latent-pipeline orchestration: encode state, act in latent space,
decode action, and the full train/evaluate loops with ablation modes.

The acting path is: z = state-encoder mean of the observation (or the
raw observation when the state model is identity), the policy emits a
Gaussian over latent actions, a sampled/mean latent action is decoded to
an executable action and clamped to the environment's box. Raw-mode
(``neither``) is exactly plain PPO.
"""

from __future__ import annotations

import enum
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint, envs, nn, ppo, rollout, vae
from .tensor import Tensor


class AblationMode(enum.Enum):
    BOTH = "both"
    STATE_ONLY = "state_only"
    ACTION_ONLY = "action_only"
    NEITHER = "neither"

    @property
    def uses_state_model(self):
        return self in (AblationMode.BOTH, AblationMode.STATE_ONLY)

    @property
    def uses_action_model(self):
        return self in (AblationMode.BOTH, AblationMode.ACTION_ONLY)


# raw-state normalization when the state model is identity; mountain-car
# velocity spans +-0.07 and needs rescaling to O(1) for the policy trunk
OBS_SCALE = {"mountaincar": np.array([1.0, 1.0 / envs.MC_MAX_SPEED])}


@dataclass
class LatentPipeline:
    env_name: str
    policy: ppo.ActorCritic
    state_model: vae.VaeModel | None = None
    action_model: vae.VaeModel | None = None
    resolution: int = 64
    _bounds: tuple | None = None

    def encode_state(self, obs):
        """Policy input for a batch (or single) observation."""
        obs = np.asarray(obs, dtype=np.float64)
        if self.state_model is not None:
            return vae.encode_mean(self.state_model, obs)
        scale = OBS_SCALE.get(self.env_name)
        return obs * scale if scale is not None else obs

    def decode_action(self, e):
        if self._bounds is None:
            env_cls = envs.MountainCar if self.env_name == "mountaincar" else envs.PixelRacer
            self._bounds = (env_cls.action_low, env_cls.action_high)
        if self.action_model is not None:
            a = vae.decode_action(self.action_model, e)
        else:
            a = np.asarray(e, dtype=np.float64)
        return np.clip(a, self._bounds[0], self._bounds[1])


def act(pipeline, observation, stochastic=True, rng=None):
    """Full acting path; returns (action, z, e, log_prob_e, value).

    Accepts a single observation or a batch with a leading axis.
    """
    obs = np.asarray(observation, dtype=np.float64)
    base_ndim = 3 if pipeline.policy.spec.input_shape and pipeline.state_model is None else None
    if pipeline.state_model is not None:
        single = obs.ndim == (4 if pipeline.state_model.config.is_conv else 2) - 1
    else:
        single = obs.ndim == (base_ndim or 1)
    batch = obs[None] if single else obs
    z = pipeline.encode_state(batch)
    e, logp, value = pipeline.policy.act(z, rng=rng, stochastic=stochastic)
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(value))):
        raise FloatingPointError("policy produced non-finite outputs")
    a = pipeline.decode_action(e)
    if single:
        return a[0], z[0], e[0], logp[0], value[0]
    return a, z, e, logp, value


def evaluate(pipeline, n_episodes=10, seed=0, max_steps=None):
    """Mean and (population) std of deterministic-action episode returns."""
    rng = np.random.default_rng(seed)
    totals = []
    env = envs.make_env(pipeline.env_name, pipeline.resolution)
    limit = max_steps or (
        envs.MC_STEP_LIMIT if pipeline.env_name == "mountaincar" else envs.RACER_STEP_LIMIT
    )
    for _ in range(n_episodes):
        obs = env.reset(int(rng.integers(0, 2**31 - 1)))
        total = 0.0
        for _ in range(limit):
            a, _, _, _, _ = act(pipeline, obs, stochastic=False)
            res = env.step(a)
            total += res.reward
            obs = res.next_observation
            if res.done:
                break
        totals.append(total)
    return float(np.mean(totals)), float(np.std(totals))


@dataclass
class TrainSettings:
    """Everything the policy-learning loop needs beyond the PPO config."""

    out_dir: str
    eval_every: int = 10
    eval_episodes: int = 10
    save_every: int = 50
    stop_at_return: float | None = None
    resolution: int = 64
    policy_trunk_widths: list | None = None
    workers: int = 1  # reserved; collection is synchronous lockstep


def build_policy(env_name, mode, state_model, action_model, resolution=64, trunk_widths=None, seed=0):
    env = envs.make_env(env_name, resolution)
    action_dim = action_model.latent_dim if mode.uses_action_model else env.action_dim
    # policies over latent actions start broad: overshooting the encoder's
    # mean range saturates the bounded decoder, which is what produces the
    # aggressive early exploration this action space is good at
    init_log_std = 1.0 if mode.uses_action_model else 0.0
    if mode.uses_state_model:
        spec = ppo.ActorCriticSpec(
            action_dim=action_dim,
            input_dim=state_model.latent_dim,
            trunk_widths=trunk_widths or [32],
            init_log_std=init_log_std,
        )
    elif env_name == "pixelracer":
        spec = ppo.ActorCriticSpec(
            action_dim=action_dim,
            input_shape=env.observation_shape,
            trunk_widths=trunk_widths or [512],
            init_log_std=init_log_std,
        )
    else:
        spec = ppo.ActorCriticSpec(
            action_dim=action_dim,
            input_dim=env.observation_dim,
            trunk_widths=trunk_widths or [128, 64],
            init_log_std=init_log_std,
        )
    policy = ppo.ActorCritic(spec)
    nn.init_weights(policy, seed)
    return policy


def _log(out_dir, message):
    # timestamps live only here so every other artifact is byte-deterministic
    with open(os.path.join(out_dir, "run.log"), "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%d %H:%M:%S')} {message}\n")


def save_optimizer(opt, path):
    arrays = opt.state.first_moment + opt.state.second_moment
    tensors = [Tensor(a) for a in arrays] + [Tensor([float(opt.state.step_count)])]
    checkpoint.save_params(path, {"kind": "adam", "n_params": len(opt.params)}, tensors)


def load_optimizer(opt, path):
    desc, buffers = checkpoint.load_params(path)
    if desc.get("kind") != "adam":
        raise checkpoint.CheckpointError(f"{path}: not an optimizer checkpoint")
    k = desc["n_params"]
    for m, buf in zip(opt.state.first_moment, buffers[:k]):
        m[...] = buf.reshape(m.shape)
    for v, buf in zip(opt.state.second_moment, buffers[k : 2 * k]):
        v[...] = buf.reshape(v.shape)
    opt.state.step_count = int(buffers[2 * k][0])


def train_policy(pipeline, ppo_config, settings, resume=False):
    """PPO loop over the (frozen-representation) latent pipeline.

    Emits metrics.csv / eval.csv rows per iteration and periodic policy
    checkpoints under ``settings.out_dir``. Returns the evaluation curve
    as a list of (iteration, mean_return, std_return).
    """
    out = settings.out_dir
    os.makedirs(out, exist_ok=True)
    for model in (pipeline.state_model, pipeline.action_model):
        if model is not None:
            nn.freeze(model)

    metrics_path = os.path.join(out, "metrics.csv")
    eval_path = os.path.join(out, "eval.csv")
    opt = nn.Adam(pipeline.policy.parameters(), ppo_config.learning_rate)
    start_iter = 0
    if resume:
        policy_ckpt = os.path.join(out, "policy_last.ckpt")
        if not os.path.exists(policy_ckpt):
            raise FileNotFoundError(f"cannot resume: {policy_ckpt} missing")
        _, buffers = checkpoint.load_params(policy_ckpt)
        checkpoint.assign_params(pipeline.policy.parameters(), buffers)
        load_optimizer(opt, os.path.join(out, "optimizer_last.ckpt"))
        with open(os.path.join(out, "state.json")) as fh:
            start_iter = json.load(fh)["iteration"]
    else:
        with open(metrics_path, "w") as fh:
            fh.write(
                "iteration,mean_return,policy_loss,value_loss,entropy,kl,clip_fraction\n"
            )
        with open(eval_path, "w") as fh:
            fh.write("iteration,mean_return,std_return\n")

    rng = np.random.default_rng(ppo_config.seed)
    collector = rollout.Collector(
        [
            envs.make_env(pipeline.env_name, settings.resolution)
            for _ in range(ppo_config.n_envs)
        ],
        seed=int(rng.integers(0, 2**31 - 1)),
    )
    eval_curve = []
    _log(out, f"training start at iteration {start_iter}")
    iteration = start_iter - 1
    for iteration in range(start_iter, ppo_config.total_iterations):
        def act_fn(obs_batch):
            a, z, e, logp, value = act(pipeline, obs_batch, stochastic=True, rng=rng)
            return a, z, e, logp, value

        batch = collector.collect(act_fn, ppo_config.horizon)
        stats = ppo.ppo_update(batch, pipeline.policy, opt, ppo_config, rng)
        mean_ret = (
            float(np.mean(batch.episode_returns)) if batch.episode_returns else float("nan")
        )
        with open(metrics_path, "a") as fh:
            fh.write(
                f"{iteration},{mean_ret:.6g},{stats['policy_loss']:.6g},"
                f"{stats['value_loss']:.6g},{stats['entropy']:.6g},"
                f"{stats['approx_kl']:.6g},{stats['clip_fraction']:.6g}\n"
            )

        stop = False
        if (iteration + 1) % settings.eval_every == 0 or iteration + 1 == ppo_config.total_iterations:
            mean, std = evaluate(
                pipeline, settings.eval_episodes, seed=ppo_config.seed + 977_000 + iteration
            )
            eval_curve.append((iteration, mean, std))
            with open(eval_path, "a") as fh:
                fh.write(f"{iteration},{mean:.6g},{std:.6g}\n")
            _log(out, f"iteration {iteration} eval return {mean:.3f} +- {std:.3f}")
            if settings.stop_at_return is not None and mean > settings.stop_at_return:
                stop = True

        if (iteration + 1) % settings.save_every == 0 or stop or iteration + 1 == ppo_config.total_iterations:
            ppo.save_actor_critic(pipeline.policy, os.path.join(out, "policy_last.ckpt"))
            save_optimizer(opt, os.path.join(out, "optimizer_last.ckpt"))
            with open(os.path.join(out, "state.json"), "w") as fh:
                json.dump({"iteration": iteration + 1}, fh)
        if stop:
            _log(out, f"stop threshold reached at iteration {iteration}")
            break
    ppo.save_actor_critic(pipeline.policy, os.path.join(out, "policy_last.ckpt"))
    save_optimizer(opt, os.path.join(out, "optimizer_last.ckpt"))
    with open(os.path.join(out, "state.json"), "w") as fh:
        json.dump({"iteration": iteration + 1}, fh)
    return eval_curve
