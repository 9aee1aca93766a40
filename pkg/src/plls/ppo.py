"""PPO learner: returns, GAE, clipped surrogate objective, minibatch epochs.

Shared by the plain baseline (raw observations in, raw actions out) and
the latent pipeline (latent states in, latent actions out); the learner
only ever sees the policy's own input/action spaces.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint, nn
from . import tensor as T
from .nn import DenseLayer, GaussianParams
from .tensor import Tensor


@dataclass
class PpoConfig:
    horizon: int = 512
    learning_rate: float = 4e-4
    n_epochs: int = 10
    minibatch_size: int = 128
    n_envs: int = 32
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    vf_coeff: float = 0.5
    entropy_coeff: float = 0.01
    total_iterations: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lam must be in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        batch = self.horizon * self.n_envs
        if batch % self.minibatch_size != 0:
            raise ValueError(
                f"minibatch_size {self.minibatch_size} must divide batch size {batch}"
            )


@dataclass
class ActorCriticSpec:
    action_dim: int
    input_dim: int | None = None  # vector policies
    input_shape: tuple | None = None  # pixel policies (C, H, W)
    trunk_widths: list = field(default_factory=lambda: [128, 64])
    conv_trunk: list = field(default_factory=list)  # (out_ch, kernel, stride)
    init_log_std: float = 0.0

    def __post_init__(self):
        if (self.input_dim is None) == (self.input_shape is None):
            raise ValueError("exactly one of input_dim / input_shape is required")


class ActorCritic:
    """Shared trunk feeding a Gaussian policy head and a scalar value head.

    The policy log-std is a state-independent trainable vector; the final
    policy-mean layer is initialized small so the initial policy sits near
    the prior mean.
    """

    def __init__(self, spec: ActorCriticSpec):
        self.spec = spec
        if spec.input_shape is not None:
            conv_spec = spec.conv_trunk or [(32, 4, 2), (64, 4, 2), (128, 4, 2), (256, 4, 2)]
            self._conv_layers = []
            c, h, w = spec.input_shape
            for out_ch, kernel, stride in conv_spec:
                self._conv_layers.append(nn.ConvLayer(c, out_ch, kernel, stride, "relu"))
                c = out_ch
                h = (h - kernel) // stride + 1
                w = (w - kernel) // stride + 1
            flat = c * h * w
            widths = spec.trunk_widths or [512]
            self._dense_layers = []
            prev = flat
            for width in widths:
                self._dense_layers.append(DenseLayer(prev, width, "relu"))
                prev = width
        else:
            self._conv_layers = []
            self._dense_layers = []
            prev = spec.input_dim
            for width in spec.trunk_widths:
                self._dense_layers.append(DenseLayer(prev, width, "tanh"))
                prev = width
        self.policy_mean = DenseLayer(prev, spec.action_dim, "linear")
        self.log_std = Tensor(np.zeros(spec.action_dim), requires_grad=True)
        self.value_head = DenseLayer(prev, 1, "linear")

    def trunk(self, x):
        for layer in self._conv_layers:
            x = layer(x)
        if self._conv_layers:
            x = x.reshape(x.shape[0], -1)
        for layer in self._dense_layers:
            x = layer(x)
        return x

    def __call__(self, x):
        """x: Tensor [batch, ...]; returns (GaussianParams, value [batch])."""
        h = self.trunk(x)
        mean = self.policy_mean(h)
        value = self.value_head(h).reshape(h.shape[0])
        return GaussianParams(mean, self.log_std), value

    def parameters(self):
        out = []
        for layer in self._conv_layers + self._dense_layers:
            out.extend(layer.parameters())
        out.extend(self.policy_mean.parameters())
        out.append(self.log_std)
        out.extend(self.value_head.parameters())
        return out

    def init(self, rng, scale=1.0):
        for layer in self._conv_layers + self._dense_layers:
            layer.init(rng, scale)
        self.policy_mean.init(rng, 0.01 * scale)
        self.log_std.data[...] = self.spec.init_log_std
        self.value_head.init(rng, scale)

    def act(self, inputs, rng=None, stochastic=True):
        """Plain-array policy evaluation: (action, log_prob, value)."""
        x = Tensor(np.asarray(inputs, dtype=T.DTYPE))
        params, value = self(x)
        mean = params.mean.data
        log_std = np.broadcast_to(self.log_std.data, mean.shape)
        if stochastic:
            eps = rng.standard_normal(mean.shape)
            e = mean + np.exp(log_std) * eps
        else:
            e = mean.copy()
        z = (e - mean) * np.exp(-log_std)
        logp = np.sum(-0.5 * z * z - log_std - 0.5 * T.LOG_2PI, axis=-1)
        return e, logp, value.data.copy()

    def describe(self):
        return {"kind": "actor_critic", **asdict(self.spec)}


def save_actor_critic(model, path):
    checkpoint.save_params(path, model.describe(), model.parameters())


def load_actor_critic(path):
    desc, buffers = checkpoint.load_params(path)
    if desc.get("kind") != "actor_critic":
        raise checkpoint.CheckpointError(f"{path}: not an actor-critic checkpoint")
    desc = {k: v for k, v in desc.items() if k != "kind"}
    if desc.get("input_shape"):
        desc["input_shape"] = tuple(desc["input_shape"])
    desc["conv_trunk"] = [tuple(s) for s in desc.get("conv_trunk", [])]
    model = ActorCritic(ActorCriticSpec(**desc))
    checkpoint.assign_params(model.parameters(), buffers)
    return model


def returns(rewards, gamma):
    """Discounted return sum_t gamma^(t-1) r_t of one reward sequence."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return total


def gae(rewards, values, dones, bootstrap, gamma, lam):
    """GAE advantages and value targets for [T] or [n_envs, T] arrays."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    squeeze = rewards.ndim == 1
    if squeeze:
        rewards, values, dones = rewards[None], values[None], dones[None]
        bootstrap = np.atleast_1d(np.asarray(bootstrap, dtype=np.float64))
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError(
            f"misaligned inputs: rewards {rewards.shape}, values {values.shape}, "
            f"dones {dones.shape}"
        )
    n, horizon = rewards.shape
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap, dtype=np.float64)
    next_adv = np.zeros(n)
    for t in range(horizon - 1, -1, -1):
        notdone = 1.0 - dones[:, t]
        delta = rewards[:, t] + gamma * next_value * notdone - values[:, t]
        next_adv = delta + gamma * lam * notdone * next_adv
        adv[:, t] = next_adv
        next_value = values[:, t]
    targets = adv + values
    if squeeze:
        return adv[0], targets[0]
    return adv, targets


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    std = adv.std()
    return (adv - adv.mean()) / max(std, 1e-8)


def ppo_loss(model, inputs, latent_actions, old_log_probs, advantages, value_targets, config):
    """Clipped-surrogate total loss and its three components.

    ``advantages`` must already be normalized per batch. Returns
    (total, policy_term, value_term, entropy_term) as graph tensors.
    """
    x = Tensor(np.asarray(inputs, dtype=T.DTYPE))
    params, value = model(x)
    new_logp = nn.gaussian_log_prob(params, np.asarray(latent_actions, dtype=T.DTYPE))
    log_ratio = new_logp - Tensor(np.asarray(old_log_probs, dtype=T.DTYPE))
    ratio = T.exp(log_ratio)
    if not np.all(np.isfinite(ratio.data)):
        bad = int(np.argmax(~np.isfinite(ratio.data)))
        raise FloatingPointError(
            f"non-finite importance ratio at transition {bad}: "
            f"log-ratio {log_ratio.data.reshape(-1)[bad]}"
        )
    adv = Tensor(np.asarray(advantages, dtype=T.DTYPE))
    unclipped = ratio * adv
    clipped = T.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv
    policy_term = -1.0 * T.minimum(unclipped, clipped).mean()
    value_term = ((value - Tensor(np.asarray(value_targets, dtype=T.DTYPE))) ** 2).mean()
    entropy_term = nn.gaussian_entropy(params).mean()
    total = (
        policy_term
        + config.vf_coeff * value_term
        - config.entropy_coeff * entropy_term
    )
    return total, policy_term, value_term, entropy_term


def ppo_update(batch, model, optimizer, config, rng):
    """Run ``n_epochs`` of shuffled minibatch updates over one batch.

    ``batch`` is a RolloutBatch; returns summary statistics including the
    approximate KL(old||new) and the clip fraction after the update.
    """
    n = batch.n_envs * batch.horizon
    adv, targets = gae(
        batch.rewards,
        batch.values,
        batch.dones,
        batch.bootstrap_values,
        config.gamma,
        config.lam,
    )
    adv = normalize_advantages(adv).reshape(n)
    targets = targets.reshape(n)
    inputs = batch.policy_inputs.reshape((n,) + batch.policy_inputs.shape[2:])
    lat = batch.latent_actions.reshape(n, -1)
    old_logp = batch.log_probs.reshape(n)

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "total_loss": 0.0}
    n_steps = 0
    for _ in range(config.n_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            total, pol, val, ent = ppo_loss(
                model, inputs[idx], lat[idx], old_logp[idx], adv[idx], targets[idx], config
            )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            stats["policy_loss"] += pol.item()
            stats["value_loss"] += val.item()
            stats["entropy"] += ent.item()
            stats["total_loss"] += total.item()
            n_steps += 1
    for k in stats:
        stats[k] /= max(n_steps, 1)

    # post-update diagnostics over the full batch
    x = Tensor(np.asarray(inputs, dtype=T.DTYPE))
    params, _ = model(x)
    new_logp = nn.gaussian_log_prob(params, np.asarray(lat, dtype=T.DTYPE)).data
    log_ratio = new_logp - old_logp
    stats["approx_kl"] = float(np.mean(-log_ratio))
    stats["clip_fraction"] = float(
        np.mean(np.abs(np.exp(log_ratio) - 1.0) > config.clip_eps)
    )
    return stats
