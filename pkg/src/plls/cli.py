"""Command-line front end: collect, train-vae, train-policy, eval, explore, report.

Configuration is an INI file with sectioned key-value pairs; the named
presets (``mountaincar-plls``, ``pixelracer-plls``, ``pixelracer-ppo``)
ship the full hyperparameter tables. Exit codes: 0 success, 1 runtime
failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import configparser
import io
import os
import sys

import numpy as np

from . import analysis, envs, pipeline, ppo, rollout, vae

OUT_ROOT_VAR = "PLLS_OUT_ROOT"

ENV_NAMES = ("mountaincar", "pixelracer")


class ConfigError(Exception):
    pass


PRESETS = {
    "mountaincar-plls": {
        "run": {"env": "mountaincar", "mode": "plls", "ablation": "action_only"},
        "collect": {"trajectories": "12", "max_len": "999", "seed": "0"},
        "action_vae": {
            "latent_dim": "3",
            "encoder_widths": "32,16,8",
            "decoder_widths": "8,16,32",
            "learning_rate": "0.001",
            "batch_size": "64",
            "epochs": "15",
            "kl_weight": "0.01",
            "output_activation": "tanh",
            "train_count": "8400",
        },
        "ppo": {
            "horizon": "512",
            "learning_rate": "4e-4",
            "n_epochs": "10",
            "minibatch_size": "128",
            "n_envs": "32",
            "gamma": "0.99",
            "lam": "0.95",
            "clip_eps": "0.2",
            "vf_coeff": "0.5",
            "entropy_coeff": "0.01",
            "total_iterations": "2000",
        },
        "train": {
            "eval_every": "10",
            "eval_episodes": "10",
            "save_every": "50",
            "stop_at_return": "90",
            "policy_trunk_widths": "128,64",
        },
    },
    "pixelracer-plls": {
        "run": {
            "env": "pixelracer",
            "mode": "plls",
            "ablation": "both",
            "resolution": "64",
        },
        "collect": {"trajectories": "57", "max_len": "1000", "seed": "0"},
        "state_vae": {
            "latent_dim": "32",
            "learning_rate": "1e-4",
            "batch_size": "32",
            "epochs": "5",
            "kl_weight": "1.0",
            "train_count": "54000",
        },
        "action_vae": {
            "latent_dim": "32",
            "encoder_widths": "10",
            "decoder_widths": "10",
            "learning_rate": "1e-4",
            "batch_size": "64",
            "epochs": "15",
            "kl_weight": "1.0",
            "output_activation": "tanh,sigmoid,sigmoid",
            "split": "0.9",
        },
        "ppo": {
            "horizon": "1000",
            "learning_rate": "1e-4",
            "n_epochs": "10",
            "minibatch_size": "1000",
            "n_envs": "16",
            "gamma": "0.99",
            "lam": "0.95",
            "clip_eps": "0.2",
            "vf_coeff": "0.5",
            "entropy_coeff": "0.01",
            "total_iterations": "500",
        },
        "train": {
            "eval_every": "10",
            "eval_episodes": "10",
            "save_every": "50",
            "policy_trunk_widths": "32",
        },
    },
}
PRESETS["pixelracer-ppo"] = {
    **{k: dict(v) for k, v in PRESETS["pixelracer-plls"].items()},
    "run": {"env": "pixelracer", "mode": "ppo", "ablation": "neither", "resolution": "64"},
    "train": {
        "eval_every": "10",
        "eval_episodes": "10",
        "save_every": "50",
        "policy_trunk_widths": "512",
    },
}

_ALLOWED_KEYS = {
    "run": {"env", "mode", "ablation", "resolution", "seeds", "out_dir"},
    "collect": {"trajectories", "max_len", "seed", "quantize"},
    "state_vae": {
        "latent_dim", "encoder_widths", "decoder_widths", "learning_rate",
        "batch_size", "epochs", "kl_weight", "output_activation", "train_count",
        "split", "seed",
    },
    "action_vae": {
        "latent_dim", "encoder_widths", "decoder_widths", "learning_rate",
        "batch_size", "epochs", "kl_weight", "output_activation", "train_count",
        "split", "seed",
    },
    "ppo": {
        "horizon", "learning_rate", "n_epochs", "minibatch_size", "n_envs",
        "gamma", "lam", "clip_eps", "vf_coeff", "entropy_coeff",
        "total_iterations", "seed",
    },
    "train": {
        "eval_every", "eval_episodes", "save_every", "stop_at_return",
        "policy_trunk_widths",
    },
}


def load_config(source):
    """Load a preset by name or an INI file; returns nested str dicts."""
    if source in PRESETS:
        return {k: dict(v) for k, v in PRESETS[source].items()}
    if not os.path.exists(source):
        raise ConfigError(
            f"config {source!r} is neither a file nor a preset "
            f"(presets: {', '.join(sorted(PRESETS))})"
        )
    parser = configparser.ConfigParser()
    parser.read(source)
    cfg = {s: dict(parser.items(s)) for s in parser.sections()}
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    for section, values in cfg.items():
        if section not in _ALLOWED_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(values) - _ALLOWED_KEYS[section]
        if unknown:
            raise ConfigError(
                f"unknown keys in [{section}]: {', '.join(sorted(unknown))}"
            )
    env = cfg.get("run", {}).get("env")
    if env is not None and env not in ENV_NAMES:
        raise ConfigError(f"unknown env {env!r}; valid: {', '.join(ENV_NAMES)}")


def config_text(cfg):
    parser = configparser.ConfigParser()
    for section, values in cfg.items():
        parser[section] = {k: str(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _ints(text):
    return [int(v) for v in str(text).split(",") if v != ""]


def _acts(text):
    parts = [p.strip() for p in str(text).split(",")]
    return parts[0] if len(parts) == 1 else parts


def build_vae_config(section, kind, env_name, resolution=64, seed=0):
    seed = int(section.get("seed", seed))
    if kind == "state" and env_name == "pixelracer":
        return vae.pixel_state_config(
            resolution=resolution,
            latent_dim=int(section.get("latent_dim", 32)),
            learning_rate=float(section.get("learning_rate", 1e-4)),
            batch_size=int(section.get("batch_size", 32)),
            epochs=int(section.get("epochs", 5)),
            seed=seed,
            kl_weight=float(section.get("kl_weight", 1.0)),
        )
    env = envs.make_env(env_name, resolution)
    input_dim = env.action_dim if kind == "action" else env.observation_dim
    default_act = "tanh" if kind == "action" else "linear"
    return vae.VaeConfig(
        latent_dim=int(section["latent_dim"]),
        encoder_widths=_ints(section.get("encoder_widths", "32,16,8")),
        decoder_widths=_ints(section.get("decoder_widths", "8,16,32")),
        learning_rate=float(section.get("learning_rate", 1e-3)),
        batch_size=int(section.get("batch_size", 64)),
        epochs=int(section.get("epochs", 15)),
        seed=seed,
        kl_weight=float(section.get("kl_weight", 1.0)),
        input_dim=input_dim,
        output_activation=_acts(section.get("output_activation", default_act)),
    )


def split_counts(section, n):
    if "train_count" in section:
        train = int(section["train_count"])
    else:
        train = int(round(float(section.get("split", 0.9)) * n))
    train = min(train, n)
    return train, n - train


def build_ppo_config(section, seed=0):
    return ppo.PpoConfig(
        horizon=int(section.get("horizon", 512)),
        learning_rate=float(section.get("learning_rate", 4e-4)),
        n_epochs=int(section.get("n_epochs", 10)),
        minibatch_size=int(section.get("minibatch_size", 128)),
        n_envs=int(section.get("n_envs", 32)),
        gamma=float(section.get("gamma", 0.99)),
        lam=float(section.get("lam", 0.95)),
        clip_eps=float(section.get("clip_eps", 0.2)),
        vf_coeff=float(section.get("vf_coeff", 0.5)),
        entropy_coeff=float(section.get("entropy_coeff", 0.01)),
        total_iterations=int(section.get("total_iterations", 2000)),
        seed=seed,
    )


# -- subcommands -------------------------------------------------------


def cmd_collect(args):
    if args.env not in ENV_NAMES:
        raise ConfigError(f"unknown env {args.env!r}; valid: {', '.join(ENV_NAMES)}")
    env_factory = lambda: envs.make_env(args.env, args.resolution)
    dataset = rollout.collect_random(
        env_factory, args.episodes, args.max_len, args.seed
    )
    rollout.save_dataset(dataset, args.out, quantize_observations=args.quantize)
    print(f"wrote {len(dataset)} transitions to {args.out}")
    return 0


def cmd_train_vae(args):
    cfg = load_config(args.config)
    section = cfg.get(f"{args.kind}_vae", {})
    if not section:
        raise ConfigError(f"config has no [{args.kind}_vae] section")
    if not os.path.exists(args.data):
        raise FileNotFoundError(f"dataset not found: {args.data}")
    dataset = rollout.load_dataset(args.data)
    env_name = dataset.env_name
    data = dataset.actions if args.kind == "action" else dataset.observations
    resolution = data.shape[-1] if data.ndim == 4 else 64
    n_train, n_test = split_counts(section, len(data))
    vcfg = build_vae_config(section, args.kind, env_name, resolution=resolution)
    model, curve = vae.train_vae(data[:n_train], data[n_train:], vcfg)
    vae.save_vae(model, args.out)
    if args.curve:
        vae.write_loss_curve(args.curve, curve)
    mean, std = vae.recon_mse(model, data[n_train:], n_eval_draws=10, seed=vcfg.seed)
    print(f"trained {args.kind} model on {n_train} samples ({n_test} held out)")
    print(f"test reconstruction MSE: {mean:.6g} +- {std:.6g}")
    return 0


def _prepare_representations(cfg, mode, out_dir, env_name, resolution, args):
    """Algorithm steps 1-3: random collection, then the two VAE fits."""
    state_model = action_model = None
    if not (mode.uses_state_model or mode.uses_action_model):
        return None, None
    state_path = args.state_vae or os.path.join(out_dir, "state_vae.ckpt")
    action_path = args.action_vae or os.path.join(out_dir, "action_vae.ckpt")
    need_state = mode.uses_state_model and not os.path.exists(state_path)
    need_action = mode.uses_action_model and not os.path.exists(action_path)
    if need_state or need_action:
        if args.skip_pretrain:
            missing = state_path if need_state else action_path
            raise FileNotFoundError(
                f"--skip-pretrain set but checkpoint missing: {missing}"
            )
        col = cfg.get("collect", {})
        dataset = rollout.collect_random(
            lambda: envs.make_env(env_name, resolution),
            int(col.get("trajectories", 12)),
            int(col.get("max_len", 999)),
            int(col.get("seed", 0)),
        )
        if need_state:
            section = cfg.get("state_vae", {})
            n_train, _ = split_counts(section, len(dataset))
            vcfg = build_vae_config(section, "state", env_name, resolution)
            model, curve = vae.train_vae(
                dataset.observations[:n_train], dataset.observations[n_train:], vcfg
            )
            vae.save_vae(model, state_path)
            vae.write_loss_curve(os.path.join(out_dir, "state_vae_loss.csv"), curve)
        if need_action:
            section = cfg.get("action_vae", {})
            n_train, _ = split_counts(section, len(dataset))
            vcfg = build_vae_config(section, "action", env_name, resolution)
            model, curve = vae.train_vae(
                dataset.actions[:n_train], dataset.actions[n_train:], vcfg
            )
            vae.save_vae(model, action_path)
            vae.write_loss_curve(os.path.join(out_dir, "action_vae_loss.csv"), curve)
    if mode.uses_state_model:
        state_model = vae.load_vae(state_path)
    if mode.uses_action_model:
        action_model = vae.load_vae(action_path)
    return state_model, action_model


def _default_out(cfg, args):
    if args.out:
        return args.out
    if cfg.get("run", {}).get("out_dir"):
        return cfg["run"]["out_dir"]
    root = os.environ.get(OUT_ROOT_VAR, "runs")
    name = f"{cfg['run'].get('env', 'run')}-{cfg['run'].get('mode', 'plls')}-seed{args.seed}"
    return os.path.join(root, name)


def cmd_train_policy(args):
    cfg = load_config(args.config)
    validate_config(cfg)
    run = cfg.get("run", {})
    env_name = run.get("env", "mountaincar")
    mode_name = args.ablation or run.get("ablation", "both")
    cli_mode = args.mode or run.get("mode", "plls")
    if cli_mode == "ppo":
        if mode_name not in ("neither", None):
            print("warning: --mode ppo ignores VAE blocks and ablation", file=sys.stderr)
        mode_name = "neither"
    mode = pipeline.AblationMode(mode_name)
    resolution = int(run.get("resolution", 64))
    out_dir = _default_out(cfg, args)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        snapshot = {k: dict(v) for k, v in cfg.items()}
        snapshot.setdefault("run", {})["ablation"] = mode.value
        snapshot["run"]["mode"] = "ppo" if mode is pipeline.AblationMode.NEITHER else "plls"
        fh.write(config_text(snapshot))

    state_model, action_model = _prepare_representations(
        cfg, mode, out_dir, env_name, resolution, args
    )
    train = cfg.get("train", {})
    trunk = _ints(train["policy_trunk_widths"]) if "policy_trunk_widths" in train else None
    policy = pipeline.build_policy(
        env_name, mode, state_model, action_model, resolution, trunk, seed=args.seed
    )
    pipe = pipeline.LatentPipeline(
        env_name=env_name,
        policy=policy,
        state_model=state_model,
        action_model=action_model,
        resolution=resolution,
    )
    ppo_cfg = build_ppo_config(cfg.get("ppo", {}), seed=args.seed)
    stop = train.get("stop_at_return")
    settings = pipeline.TrainSettings(
        out_dir=out_dir,
        eval_every=int(train.get("eval_every", 10)),
        eval_episodes=int(train.get("eval_episodes", 10)),
        save_every=int(train.get("save_every", 50)),
        stop_at_return=float(stop) if stop not in (None, "") else None,
        resolution=resolution,
    )
    curve = pipeline.train_policy(pipe, ppo_cfg, settings, resume=args.resume)
    if curve:
        it, mean, std = curve[-1]
        print(f"final evaluation return: {mean:.3f} +- {std:.3f} (iteration {it})")
    print(f"run artifacts in {out_dir}")
    return 0


def _load_run(run_dir):
    cfg = load_config(os.path.join(run_dir, "config.ini"))
    run = cfg["run"]
    mode = pipeline.AblationMode(run.get("ablation", "both"))
    resolution = int(run.get("resolution", 64))
    state_model = action_model = None
    if mode.uses_state_model:
        state_model = vae.load_vae(os.path.join(run_dir, "state_vae.ckpt"))
    if mode.uses_action_model:
        action_model = vae.load_vae(os.path.join(run_dir, "action_vae.ckpt"))
    policy = ppo.load_actor_critic(os.path.join(run_dir, "policy_last.ckpt"))
    return pipeline.LatentPipeline(
        env_name=run["env"],
        policy=policy,
        state_model=state_model,
        action_model=action_model,
        resolution=resolution,
    )


def cmd_eval(args):
    pipe = _load_run(args.run)
    mean, std = pipeline.evaluate(pipe, n_episodes=args.episodes, seed=args.seed)
    print(f"evaluation return over {args.episodes} episodes: {mean:.3f} +- {std:.3f}")
    return 0


def cmd_explore(args):
    model = vae.load_vae(args.action_vae)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.explore_mode == "multi-step":
        records, raw_trace, recon_trace = analysis.explore_multi_step(
            model, n=args.samples, seed=args.seed
        )
        analysis.write_latent_records(
            os.path.join(args.out_dir, "multi_step_latents.csv"), records
        )
        analysis.write_traces(
            os.path.join(args.out_dir, "multi_step_traces.csv"),
            {"raw": raw_trace, "reconstructed": recon_trace},
        )
    elif args.explore_mode == "one-step":
        records, transitions = analysis.explore_one_step(
            model, n=args.samples, seed=args.seed
        )
        analysis.write_latent_records(
            os.path.join(args.out_dir, "one_step_latents.csv"), records
        )
        with open(os.path.join(args.out_dir, "one_step_transitions.csv"), "w") as fh:
            fh.write("action,recon,x_raw,xdot_raw,x_recon,xdot_recon\n")
            for row in transitions:
                fh.write(",".join(f"{v:.8g}" for v in row) + "\n")
    else:
        fans = analysis.neighbor_generalization(model, seed=args.seed)
        with open(os.path.join(args.out_dir, "neighbor_fans.csv"), "w") as fh:
            fh.write("base_action,draw,decoded,x,xdot\n")
            for fan in fans:
                for j, (d, eff) in enumerate(zip(fan["decoded"], fan["effects"])):
                    fh.write(
                        f"{fan['base_action']:.8g},{j},{d:.8g},"
                        f"{eff[0]:.8g},{eff[1]:.8g}\n"
                    )
    print(f"exploration CSVs written to {args.out_dir}")
    return 0


def cmd_report(args):
    table = analysis.aggregate_curves(args.runs)
    analysis.write_aggregate(args.out, table)
    print(f"aggregated {len(args.runs)} runs -> {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plls", description="policy learning in latent state/action spaces"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="collect a random-policy dataset")
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=int, default=12)
    p.add_argument("--max-len", type=int, default=999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--quantize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("train-vae", help="fit a state or action representation model")
    p.add_argument("--kind", choices=("state", "action"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", default=None)
    p.set_defaults(fn=cmd_train_vae)

    p = sub.add_parser("train-policy", help="run representation pretraining + PPO")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("ppo", "plls"), default=None)
    p.add_argument(
        "--ablation", choices=[m.value for m in pipeline.AblationMode], default=None
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--state-vae", default=None, help="existing state checkpoint")
    p.add_argument("--action-vae", default=None, help="existing action checkpoint")
    p.add_argument("--skip-pretrain", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_train_policy)

    p = sub.add_parser("eval", help="evaluate a trained run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("explore", help="latent-space exploration exports")
    p.add_argument("--action-vae", required=True)
    p.add_argument(
        "--mode",
        dest="explore_mode",
        choices=("multi-step", "one-step", "neighbors"),
        required=True,
    )
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_explore)

    p = sub.add_parser("report", help="aggregate eval curves across runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
