"""Trajectory collection and dataset persistence.

Random collection feeds VAE pretraining; policy collection produces the
fixed-horizon batches PPO consumes. Collection across parallel
environments is synchronous (lockstep), which keeps runs reproducible.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PLLS"
VERSION = 1


class DatasetFormatError(RuntimeError):
    """File is not a recognizable dataset."""


class DatasetVersionError(DatasetFormatError):
    """Dataset format version is not supported."""


class DatasetTruncatedError(DatasetFormatError):
    """File ends before the declared payload."""


class DatasetChecksumError(DatasetFormatError):
    """Payload checksum does not match the stored value."""


@dataclass
class Dataset:
    env_name: str
    observations: np.ndarray  # [N, ...]
    actions: np.ndarray  # [N, action_dim]
    rewards: np.ndarray  # [N]
    dones: np.ndarray  # [N] bool

    def __len__(self):
        return len(self.actions)


def collect_random(env_factory, n_trajectories, max_len, seed, progress=None):
    """Roll out uniform-random actions for ``n_trajectories`` episodes."""
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    rng = np.random.default_rng(seed)
    env = env_factory()
    obs_list, act_list, rew_list, done_list = [], [], [], []
    env_name = None
    for traj in range(n_trajectories):
        obs = env.reset(int(rng.integers(0, 2**31 - 1)))
        env_name = getattr(env, "name", type(env).__name__.lower())
        for _ in range(max_len):
            a = rng.uniform(env.action_low, env.action_high)
            res = env.step(a)
            obs_list.append(obs)
            act_list.append(a)
            rew_list.append(res.reward)
            done_list.append(res.done)
            obs = res.next_observation
            if res.done:
                break
        if progress is not None:
            progress(traj + 1, n_trajectories)
    return Dataset(
        env_name=env_name,
        observations=np.asarray(obs_list),
        actions=np.asarray(act_list),
        rewards=np.asarray(rew_list),
        dones=np.asarray(done_list, dtype=bool),
    )


def save_dataset(dataset, path, quantize_observations=False):
    """Write the dataset; pixel observations may be stored 8-bit quantized."""
    obs = dataset.observations
    if quantize_observations:
        obs_payload = np.clip(np.round(obs * 255.0), 0, 255).astype(np.uint8)
        obs_dtype = "u1"
    else:
        obs_payload = np.ascontiguousarray(obs, dtype="<f8")
        obs_dtype = "f8"
    header = {
        "env": dataset.env_name,
        "count": len(dataset),
        "obs_shape": list(obs.shape[1:]),
        "obs_dtype": obs_dtype,
        "action_dim": int(dataset.actions.shape[1]),
    }
    payload = b"".join(
        [
            obs_payload.tobytes(),
            np.ascontiguousarray(dataset.actions, dtype="<f8").tobytes(),
            np.ascontiguousarray(dataset.rewards, dtype="<f8").tobytes(),
            dataset.dones.astype("u1").tobytes(),
        ]
    )
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic bytes {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise DatasetVersionError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    if offset + 8 > len(raw):
        raise DatasetTruncatedError(f"{path}: missing payload header")
    (plen,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    if offset + plen + 4 > len(raw):
        raise DatasetTruncatedError(f"{path}: payload shorter than declared")
    payload = raw[offset : offset + plen]
    (crc,) = struct.unpack_from("<I", raw, offset + plen)
    if zlib.crc32(payload) != crc:
        raise DatasetChecksumError(f"{path}: checksum mismatch")

    n = header["count"]
    obs_shape = tuple(header["obs_shape"])
    obs_count = n * int(np.prod(obs_shape, dtype=np.int64))
    pos = 0
    if header["obs_dtype"] == "u1":
        obs = np.frombuffer(payload, dtype="u1", count=obs_count, offset=pos)
        obs = obs.reshape((n,) + obs_shape).astype(np.float64) / 255.0
        pos += obs_count
    else:
        obs = np.frombuffer(payload, dtype="<f8", count=obs_count, offset=pos)
        obs = obs.reshape((n,) + obs_shape).astype(np.float64)
        pos += obs_count * 8
    adim = header["action_dim"]
    actions = np.frombuffer(payload, dtype="<f8", count=n * adim, offset=pos)
    actions = actions.reshape(n, adim).astype(np.float64)
    pos += n * adim * 8
    rewards = np.frombuffer(payload, dtype="<f8", count=n, offset=pos).astype(
        np.float64
    )
    pos += n * 8
    dones = np.frombuffer(payload, dtype="u1", count=n, offset=pos).astype(bool)
    return Dataset(header["env"], obs, actions, rewards, dones)


@dataclass
class RolloutBatch:
    """Fixed-horizon lockstep batch laid out [n_envs, horizon, ...].

    ``policy_inputs`` is whatever the acting function consumed (latent
    states for the latent pipeline, raw/scaled observations otherwise);
    ``latent_actions`` is what ``log_probs`` is a density over.
    """

    policy_inputs: np.ndarray
    latent_actions: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    bootstrap_values: np.ndarray  # [n_envs]
    episode_returns: list = field(default_factory=list)  # completed episodes

    @property
    def n_envs(self):
        return self.rewards.shape[0]

    @property
    def horizon(self):
        return self.rewards.shape[1]

    def __len__(self):
        return self.rewards.size


class Collector:
    """Lockstep stepping of an env pool that persists episodes across batches.

    Episodes routinely outlive one fixed-horizon batch; the pool keeps the
    current observations and running returns so that later batches resume
    instead of restarting every episode.
    """

    def __init__(self, envs, seed):
        self.envs = envs
        self.rng = np.random.default_rng(seed)
        self.obs = [env.reset(int(self.rng.integers(0, 2**31 - 1))) for env in envs]
        self.running_return = np.zeros(len(envs))

    def collect(self, act_fn, horizon):
        """Step all envs ``horizon`` times under ``act_fn``.

        ``act_fn(obs_batch)`` returns (actions, policy_inputs,
        latent_actions, log_probs, values) as arrays with a leading
        n_envs axis; the values entry of one extra call bootstraps
        non-terminal tails.
        """
        n = len(self.envs)
        episode_returns = []
        cols = {k: [] for k in ("pi", "e", "a", "r", "d", "lp", "v")}
        for _ in range(horizon):
            actions, pol_in, lat_act, log_probs, values = act_fn(np.asarray(self.obs))
            if not (
                np.all(np.isfinite(actions))
                and np.all(np.isfinite(log_probs))
                and np.all(np.isfinite(values))
            ):
                raise ValueError("act_fn produced non-finite outputs")
            rewards = np.zeros(n)
            dones = np.zeros(n, dtype=bool)
            for i, env in enumerate(self.envs):
                res = env.step(actions[i])
                rewards[i] = res.reward
                dones[i] = res.done
                self.running_return[i] += res.reward
                if res.done:
                    episode_returns.append(self.running_return[i])
                    self.running_return[i] = 0.0
                    self.obs[i] = env.reset(int(self.rng.integers(0, 2**31 - 1)))
                else:
                    self.obs[i] = res.next_observation
            store_dtype = np.float32 if np.asarray(pol_in).ndim >= 3 else np.float64
            cols["pi"].append(np.asarray(pol_in, dtype=store_dtype))
            cols["e"].append(np.asarray(lat_act))
            cols["a"].append(np.asarray(actions))
            cols["r"].append(rewards)
            cols["d"].append(dones)
            cols["lp"].append(np.asarray(log_probs))
            cols["v"].append(np.asarray(values))
        _, _, _, _, bootstrap = act_fn(np.asarray(self.obs))
        stack = {k: np.stack(v, axis=1) for k, v in cols.items()}  # [n_envs, horizon, ...]
        return RolloutBatch(
            policy_inputs=stack["pi"],
            latent_actions=stack["e"],
            actions=stack["a"],
            rewards=stack["r"],
            dones=stack["d"],
            log_probs=stack["lp"],
            values=stack["v"],
            bootstrap_values=np.asarray(bootstrap, dtype=np.float64),
            episode_returns=episode_returns,
        )


def collect_policy(envs, act_fn, horizon, seed):
    """One-shot collection: fresh episodes, then a single batch."""
    return Collector(envs, seed).collect(act_fn, horizon)
