"""Latent-space exploration experiments, efficiency accounting, and
learning-curve aggregation. All outputs are plain CSV; plotting is left
to downstream tools.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import envs, nn, vae


@dataclass
class LatentRecord:
    action: np.ndarray
    latent: np.ndarray
    reconstruction: np.ndarray
    color: np.ndarray  # normalized RGB from the first three latent dims
    label: str = ""


@dataclass
class EfficiencyRow:
    name: str
    total_parameters: int
    trainable_parameters: int
    samples_to_convergence: int | None


def _pad3(arr):
    """Zero-pad trailing latent dims so color/CSV columns always exist."""
    arr = np.atleast_2d(arr)
    if arr.shape[1] >= 3:
        return arr
    return np.pad(arr, ((0, 0), (0, 3 - arr.shape[1])))


def _normalize_colors(latents):
    """Affine per-dimension min->0 / max->1 over the exported batch."""
    first3 = _pad3(latents)[:, :3]
    lo = first3.min(axis=0)
    span = first3.max(axis=0) - lo
    span[span == 0] = 1.0
    return np.clip((first3 - lo) / span, 0.0, 1.0)


def _records(actions, latents, recons, labels=None):
    colors = _normalize_colors(latents)
    labels = labels if labels is not None else [""] * len(actions)
    return [
        LatentRecord(np.atleast_1d(a), z, np.atleast_1d(r), c, lab)
        for a, z, r, c, lab in zip(actions, latents, recons, colors, labels)
    ]


def _encode_sample(action_model, actions, rng):
    params = vae.encode(action_model, actions)
    eps = rng.standard_normal(params.mean.shape)
    return params.mean.data + np.exp(params.log_std.data) * eps


def _mc_trace(action_seq, start=(-1.2, 0.0)):
    env = envs.MountainCar()
    env.state = envs.McState(*start)
    trace = [list(start)]
    for a in action_seq:
        res = env.step(float(a))
        trace.append([env.state.position, env.state.velocity])
        if res.done:
            break
    return np.array(trace)


def explore_multi_step(action_model, n=1000, seed=0):
    """Sequential execution of sampled vs reconstructed action sequences.

    Returns (records, raw_trace, recon_trace); traces start at the same
    initial state (-1.2, 0) and list (x, xdot) per step.
    """
    rng = np.random.default_rng(seed)
    actions = rng.uniform(-1.0, 1.0, (n, 1))
    latents = _encode_sample(action_model, actions, rng)
    recons = vae.decode_action(action_model, latents)
    raw_trace = _mc_trace(actions[:, 0])
    recon_trace = _mc_trace(recons[:, 0])
    return _records(actions, latents, recons), raw_trace, recon_trace


def explore_one_step(action_model, n=1000, seed=0, start=(-0.5233, 0.0)):
    """Sign-split one-step exploration from the valley bottom.

    Half the actions are drawn from [-1, 0), half from (0, 1]; each is
    executed for a single step from ``start``, for both the raw and the
    reconstructed action. Returns (records, transitions) where each
    transition row is (action, recon, x_raw, xdot_raw, x_rec, xdot_rec).
    """
    rng = np.random.default_rng(seed)
    half = n // 2
    neg = rng.uniform(-1.0, 0.0, (half, 1))
    pos = rng.uniform(0.0, 1.0, (n - half, 1))
    pos[pos == 0.0] = 1e-9
    actions = np.concatenate([neg, pos], axis=0)
    labels = ["neg"] * half + ["pos"] * (n - half)
    latents = _encode_sample(action_model, actions, rng)
    recons = vae.decode_action(action_model, latents)
    transitions = []
    for a, r in zip(actions[:, 0], recons[:, 0]):
        xr, vr, _, _ = envs.mc_step_values(start[0], start[1], a)
        xc, vc, _, _ = envs.mc_step_values(start[0], start[1], r)
        transitions.append([a, r, xr, vr, xc, vc])
    return _records(actions, latents, recons, labels), np.array(transitions)


def neighbor_generalization(action_model, n_bases_per_sign=5, k=10, seed=0, start=(-0.5233, 0.0)):
    """Fan of k reparameterized decodings around each base action.

    Returns a list of dicts: base action, its latent mean/std, the k
    decoded actions, and their one-step state effects from ``start``.
    """
    rng = np.random.default_rng(seed)
    neg = rng.uniform(-1.0, 0.0, n_bases_per_sign)
    pos = rng.uniform(0.0, 1.0, n_bases_per_sign)
    fans = []
    for base in np.concatenate([neg, pos]):
        params = vae.encode(action_model, np.array([[base]]))
        mean = params.mean.data[0]
        std = np.exp(params.log_std.data[0])
        draws = mean + std * rng.standard_normal((k, len(mean)))
        decoded = vae.decode_action(action_model, draws)[:, 0]
        effects = np.array(
            [envs.mc_step_values(start[0], start[1], d)[:2] for d in decoded]
        )
        fans.append(
            {
                "base_action": float(base),
                "latent_mean": mean,
                "latent_std": std,
                "latents": draws,
                "decoded": decoded,
                "effects": effects,
            }
        )
    return fans


def convergence_iteration(values, window=10, rel_change=0.02):
    """First index where the length-``window`` moving average plateaus.

    Plateau: relative change between consecutive window averages drops
    below ``rel_change``. Returns None if it never does.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2 * window:
        return None
    ma = np.convolve(values, np.ones(window) / window, mode="valid")
    for t in range(window, len(ma)):
        prev, cur = ma[t - window], ma[t]
        if abs(cur - prev) < rel_change * max(abs(prev), 1e-8):
            return t + window - 1
    return None


def efficiency_report(models, eval_returns=None, window=10, rel_change=0.02):
    """Parameter and sample-efficiency accounting per model.

    ``models`` maps name -> parameters() bundle; ``eval_returns`` maps
    name -> per-iteration evaluation returns (optional). Samples to
    convergence counts rollout batches consumed until the moving-average
    plateau.
    """
    rows = []
    for name, model in models.items():
        counts = nn.param_count(model)
        samples = None
        if eval_returns and name in eval_returns:
            it = convergence_iteration(eval_returns[name], window, rel_change)
            samples = None if it is None else it + 1
        rows.append(EfficiencyRow(name, counts.total, counts.trainable, samples))
    return rows


def aggregate_curves(run_dirs):
    """Per-iteration mean and population std of eval returns across runs.

    Raises ValueError listing the lengths if iteration grids differ.
    """
    curves = []
    for d in run_dirs:
        path = os.path.join(d, "eval.csv")
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        curves.append(rows)
    lengths = [len(c) for c in curves]
    if len(set(lengths)) > 1:
        raise ValueError(f"misaligned iteration grids across runs: lengths {lengths}")
    its = curves[0][:, 0]
    for c in curves[1:]:
        if not np.array_equal(c[:, 0], its):
            raise ValueError("iteration grids differ between runs")
    returns = np.stack([c[:, 1] for c in curves])
    return np.stack([its, returns.mean(axis=0), returns.std(axis=0)], axis=1)


# -- CSV exports -------------------------------------------------------


def write_latent_records(path, records):
    with open(path, "w") as fh:
        fh.write("action,l,m,n,recon,class,R,G,B\n")
        for rec in records:
            lat = _pad3(rec.latent)[0]
            fh.write(
                f"{rec.action[0]:.8g},{lat[0]:.8g},{lat[1]:.8g},{lat[2]:.8g},"
                f"{rec.reconstruction[0]:.8g},{rec.label},"
                f"{rec.color[0]:.6g},{rec.color[1]:.6g},{rec.color[2]:.6g}\n"
            )


def write_traces(path, traces):
    """traces: dict variant-name -> array of (x, xdot) rows."""
    with open(path, "w") as fh:
        fh.write("t,x,xdot,variant\n")
        for variant, arr in traces.items():
            for t, (x, v) in enumerate(arr):
                fh.write(f"{t},{x:.8g},{v:.8g},{variant}\n")


def write_aggregate(path, table):
    with open(path, "w") as fh:
        # std column uses the population convention
        fh.write("iteration,mean_return,std_return\n")
        for it, mean, std in table:
            fh.write(f"{int(it)},{mean:.6g},{std:.6g}\n")


def write_efficiency(path, rows):
    with open(path, "w") as fh:
        fh.write("model,total_parameters,trainable_parameters,samples_to_convergence\n")
        for r in rows:
            samples = "" if r.samples_to_convergence is None else r.samples_to_convergence
            fh.write(f"{r.name},{r.total_parameters},{r.trainable_parameters},{samples}\n")
