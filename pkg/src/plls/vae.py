"""Variational autoencoders for state and action representations.

One generic model with two specializations: an MLP variant (actions, or
low-dimensional states) and a conv variant (pixel states). The loss is
KL-to-standard-normal plus a fixed-variance Gaussian reconstruction term
(sum of squared errors over data dimensions).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint, nn
from . import tensor as T
from .nn import ConvLayer, DeconvLayer, DenseLayer, GaussianParams
from .tensor import Tensor

OUTPUT_ACTIVATIONS = ("sigmoid", "tanh", "linear")


@dataclass
class VaeConfig:
    latent_dim: int
    encoder_widths: list = field(default_factory=list)
    decoder_widths: list = field(default_factory=list)
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    kl_weight: float = 1.0
    # MLP variant
    input_dim: int | None = None
    # conv variant: (channels, height, width); widths are ignored and the
    # conv/deconv stacks below are used instead
    input_shape: tuple | None = None
    conv_encoder: list = field(default_factory=list)  # (out_ch, kernel, stride)
    conv_decoder: list = field(default_factory=list)
    decoder_seed_hw: int = 1
    # str, or per-output-dim list of str for mixed heads (MLP only)
    output_activation: object = "linear"

    def __post_init__(self):
        if self.latent_dim <= 0:
            raise ValueError("latent_dim must be positive")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        for name in ("learning_rate", "batch_size", "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if (self.input_dim is None) == (self.input_shape is None):
            raise ValueError("exactly one of input_dim / input_shape is required")
        acts = (
            self.output_activation
            if isinstance(self.output_activation, (list, tuple))
            else [self.output_activation]
        )
        for a in acts:
            if a not in OUTPUT_ACTIVATIONS:
                raise ValueError(f"unknown output activation {a!r}")

    @property
    def is_conv(self):
        return self.input_shape is not None


class _ConvEncoder:
    def __init__(self, input_shape, conv_spec, latent_dim):
        c, h, w = input_shape
        self.layers = []
        for out_ch, kernel, stride in conv_spec:
            self.layers.append(ConvLayer(c, out_ch, kernel, stride, "relu"))
            c = out_ch
            h = (h - kernel) // stride + 1
            w = (w - kernel) // stride + 1
        self.flat_dim = c * h * w
        self.head = DenseLayer(self.flat_dim, 2 * latent_dim, "linear")

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return self.head(x.reshape(x.shape[0], -1))

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out + self.head.parameters()

    def init(self, rng, scale=1.0):
        for layer in self.layers:
            layer.init(rng, scale)
        self.head.init(rng, scale)


class _ConvDecoder:
    def __init__(self, latent_dim, seed_channels, seed_hw, deconv_spec):
        self.seed_shape = (seed_channels, seed_hw, seed_hw)
        self.dense = DenseLayer(latent_dim, seed_channels * seed_hw * seed_hw, "linear")
        self.layers = []
        c = seed_channels
        for i, (out_ch, kernel, stride) in enumerate(deconv_spec):
            act = "linear" if i == len(deconv_spec) - 1 else "relu"
            self.layers.append(DeconvLayer(c, out_ch, kernel, stride, act))
            c = out_ch

    def __call__(self, z):
        x = self.dense(z).reshape(z.shape[0], *self.seed_shape)
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self):
        out = self.dense.parameters()
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def init(self, rng, scale=1.0):
        self.dense.init(rng, scale)
        for layer in self.layers:
            layer.init(rng, scale)


class _MlpNet:
    def __init__(self, in_dim, widths, out_dim):
        dims = [in_dim] + list(widths)
        self.layers = [
            DenseLayer(dims[i], dims[i + 1], "relu") for i in range(len(dims) - 1)
        ]
        self.layers.append(DenseLayer(dims[-1], out_dim, "linear"))

    def __call__(self, x):
        return nn.forward_mlp(self.layers, x)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def init(self, rng, scale=1.0):
        for layer in self.layers:
            layer.init(rng, scale)


class VaeModel:
    """Encoder producing diagonal-Gaussian latent params, plus a decoder."""

    def __init__(self, config: VaeConfig):
        self.config = config
        self.latent_dim = config.latent_dim
        self.output_activation = config.output_activation
        if config.is_conv:
            enc_spec = config.conv_encoder or [(32, 4, 2), (64, 4, 2), (128, 4, 2), (256, 4, 2)]
            dec_spec = config.conv_decoder
            if not dec_spec:
                raise ValueError("conv VAE requires a conv_decoder spec")
            self.encoder = _ConvEncoder(config.input_shape, enc_spec, config.latent_dim)
            self.decoder = _ConvDecoder(
                config.latent_dim,
                self.encoder.flat_dim // (config.decoder_seed_hw**2),
                config.decoder_seed_hw,
                dec_spec,
            )
        else:
            self.encoder = _MlpNet(
                config.input_dim, config.encoder_widths, 2 * config.latent_dim
            )
            self.decoder = _MlpNet(
                config.latent_dim, config.decoder_widths, config.input_dim
            )

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def init(self, rng, scale=1.0):
        self.encoder.init(rng, scale)
        self.decoder.init(rng, scale)

    def describe(self):
        return {"kind": "vae", **asdict(self.config)}


def _apply_output_activation(x, spec):
    if isinstance(spec, str):
        if spec == "linear":
            return x
        return T.elementwise(spec, x)
    # per-dim mixed head over the last axis
    cols = []
    for i, name in enumerate(spec):
        col = x[..., i : i + 1]
        cols.append(col if name == "linear" else T.elementwise(name, col))
    return T.concat(cols, axis=-1)


def _as_batch(model, x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    expected_ndim = 4 if model.config.is_conv else 2
    single = x.ndim == expected_ndim - 1
    if single:
        x = x.reshape(1, *x.shape)
    if x.ndim != expected_ndim:
        raise T.ShapeError(f"unexpected input shape {x.shape} for this VAE")
    return x, single


def encode(model, x):
    """Map inputs to diagonal-Gaussian latent parameters."""
    xb, single = _as_batch(model, x)
    h = model.encoder(xb)
    L = model.latent_dim
    mean = h[:, :L]
    log_std = h[:, L:]
    if single:
        mean = mean.reshape(L)
        log_std = log_std.reshape(L)
    return GaussianParams(mean, log_std)


def decode(model, z):
    z = z if isinstance(z, Tensor) else Tensor(z)
    single = z.ndim == 1
    if single:
        z = z.reshape(1, -1)
    out = _apply_output_activation(model.decoder(z), model.output_activation)
    if single:
        out = out.reshape(*out.shape[1:])
    return out


def reparameterize(params, epsilon):
    """z = mean + exp(log_std) * epsilon; no gradient flows into epsilon."""
    eps = epsilon.detach() if isinstance(epsilon, Tensor) else Tensor(epsilon)
    return params.mean + T.exp(params.log_std) * eps


def kl_standard_normal(params):
    """KL(N(mean, std) || N(0, I)), summed over the last axis."""
    var = T.exp(2.0 * params.log_std)
    per_dim = 0.5 * (params.mean**2 + var - 1.0) - params.log_std
    return per_dim.sum(axis=-1)


def vae_loss(model, x, epsilon, kl_weight=None):
    """Return (total, kl, recon) loss tensors, averaged over the batch.

    recon is the squared reconstruction error summed over data dimensions
    (Gaussian likelihood with fixed unit variance, constants dropped).
    """
    if kl_weight is None:
        kl_weight = model.config.kl_weight
    xb, _ = _as_batch(model, x)
    batch = xb.shape[0]
    params = encode(model, xb)
    z = reparameterize(params, epsilon)
    recon_x = decode(model, z)
    sq = (recon_x - xb) ** 2
    recon = sq.sum() * (1.0 / batch)
    kl = kl_standard_normal(params).sum() * (1.0 / batch)
    total = kl_weight * kl + recon
    return total, kl, recon


def _eval_loss(model, x, rng):
    eps_shape = (x.shape[0], model.latent_dim)
    eps = Tensor(rng.standard_normal(eps_shape))
    total, kl, recon = vae_loss(model, Tensor(x), eps)
    return total.item(), kl.item(), recon.item()


def train_vae(train_x, val_x, config: VaeConfig):
    """Mini-batch Adam training; returns (model, per-epoch loss curve)."""
    train_x = np.asarray(train_x, dtype=T.DTYPE)
    val_x = np.asarray(val_x, dtype=T.DTYPE)
    if len(train_x) == 0:
        raise ValueError("empty training dataset")
    model = VaeModel(config)
    nn.init_weights(model, config.seed)
    rng = np.random.default_rng(config.seed + 1)
    opt = nn.Adam(model.parameters(), config.learning_rate)
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_x))
        epoch_total = 0.0
        n_batches = 0
        for start in range(0, len(train_x), config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = Tensor(train_x[idx])
            eps = Tensor(rng.standard_normal((len(idx), config.latent_dim)))
            total, _, _ = vae_loss(model, xb, eps)
            opt.zero_grad()
            total.backward()
            opt.step()
            epoch_total += total.item()
            n_batches += 1
        val_total, val_kl, val_recon = _eval_loss(model, val_x, rng) if len(val_x) else (
            float("nan"),
        ) * 3
        curve.append(
            {
                "epoch": epoch,
                "train_loss": epoch_total / max(n_batches, 1),
                "val_loss": val_total,
                "kl": val_kl,
                "recon": val_recon,
            }
        )
    return model, curve


def recon_mse(model, testset, n_eval_draws=10, seed=0):
    """Per-sample MSE (mean over data dims) averaged over the testset.

    Returns (mean, std) across ``n_eval_draws`` independent epsilon draws.
    """
    testset = np.asarray(testset, dtype=T.DTYPE)
    if len(testset) == 0:
        raise ValueError("empty testset")
    rng = np.random.default_rng(seed)
    xb = Tensor(testset)
    per_draw = []
    for _ in range(n_eval_draws):
        params = encode(model, xb)
        eps = Tensor(rng.standard_normal((len(testset), model.latent_dim)))
        recon_x = decode(model, reparameterize(params, eps))
        err = (recon_x.data - xb.data).reshape(len(testset), -1)
        per_draw.append(float(np.mean(err**2)))
    return float(np.mean(per_draw)), float(np.std(per_draw))


def encode_mean(model, x):
    """Deterministic latent (encoder mean) as a plain array."""
    return encode(model, x).mean.data.copy()


def decode_action(model, e):
    """Deterministic decoding (decoder mean) as a plain array."""
    return decode(model, e).data.copy()


def write_loss_curve(path, curve):
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,kl,recon\n")
        for row in curve:
            fh.write(
                f"{row['epoch']},{row['train_loss']:.8g},{row['val_loss']:.8g},"
                f"{row['kl']:.8g},{row['recon']:.8g}\n"
            )


# encoder stack is 4 stride-2 valid convs (widths 32/64/128/256, kernel 4);
# the deconv mirror kernels below invert the floored conv sizes exactly
_DECODER_SPECS = {
    64: (1, [(128, 5, 2), (64, 5, 2), (32, 6, 2), (3, 6, 2)]),
    96: (4, [(128, 4, 2), (64, 4, 2), (32, 4, 2), (3, 6, 2)]),
}


def pixel_state_config(
    resolution=64,
    latent_dim=32,
    learning_rate=1e-4,
    batch_size=32,
    epochs=5,
    seed=0,
    kl_weight=1.0,
):
    """Conv-VAE config for pixel observations at 64x64 or 96x96."""
    if resolution not in _DECODER_SPECS:
        raise ValueError(f"unsupported resolution {resolution}; choose 64 or 96")
    seed_hw, dec_spec = _DECODER_SPECS[resolution]
    return VaeConfig(
        latent_dim=latent_dim,
        learning_rate=learning_rate,
        batch_size=batch_size,
        epochs=epochs,
        seed=seed,
        kl_weight=kl_weight,
        input_shape=(3, resolution, resolution),
        conv_encoder=[(32, 4, 2), (64, 4, 2), (128, 4, 2), (256, 4, 2)],
        conv_decoder=dec_spec,
        decoder_seed_hw=seed_hw,
        output_activation="sigmoid",
    )


def save_vae(model, path):
    checkpoint.save_params(path, model.describe(), model.parameters())


def load_vae(path):
    desc, buffers = checkpoint.load_params(path)
    if desc.get("kind") != "vae":
        raise checkpoint.CheckpointError(f"{path}: not a VAE checkpoint")
    desc = {k: v for k, v in desc.items() if k != "kind"}
    desc["input_shape"] = tuple(desc["input_shape"]) if desc["input_shape"] else None
    model = VaeModel(VaeConfig(**desc))
    checkpoint.assign_params(model.parameters(), buffers)
    return model
