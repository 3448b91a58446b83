"""Top-down hierarchical VAE with partial reconstruction.

Layers are numbered 1 (finest resolution) to L (coarsest). The generative
pass runs L -> 1; each layer's latent is sampled either from its posterior
(conditioned on bottom-up features) or from its top-down prior, split at a
layer index k: posterior strictly above k, prior at and below k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOGVAR_MIN, LOGVAR_MAX = -14.0, 14.0
LOG_2PI = math.log(2.0 * math.pi)


class HvaeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


# ------------------------------------------------------------------
# configuration and latent-path records
# ------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    channels: int
    resolution: int


@dataclass(frozen=True)
class HvaeConfig:
    """Model shape; layers[0] is layer 1 (finest), layers[-1] is layer L."""

    image_shape: tuple  # (C, H, W)
    layers: tuple       # tuple[LayerSpec]
    hidden_channels: int = 32
    obs_logvar_mode: str = "learned"  # or "fixed"
    obs_logvar_init: float = -2.5

    def __post_init__(self):
        c, h, w = self.image_shape
        if min(c, h, w) < 1:
            raise HvaeError("image extents must be positive")
        if not self.layers:
            raise HvaeError("need at least one stochastic layer")
        if self.hidden_channels < 1:
            raise HvaeError("hidden_channels must be positive")
        if self.obs_logvar_mode not in ("learned", "fixed"):
            raise HvaeError(f"bad obs_logvar_mode {self.obs_logvar_mode!r}")
        prev = None
        for i, spec in enumerate(self.layers):
            if spec.channels < 1 or spec.resolution < 1:
                raise HvaeError(f"layer {i + 1}: extents must be positive")
            r = spec.resolution
            if h % r or w % r:
                raise HvaeError(f"layer {i + 1}: resolution {r} must divide image size")
            if (h // r) & (h // r - 1) or (w // r) & (w // r - 1):
                raise HvaeError(f"layer {i + 1}: image/resolution ratio must be a power of two")
            if prev is not None and r > prev:
                raise HvaeError("layer resolutions must be non-increasing from layer 1 up")
            prev = r

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def to_dict(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "layers": [{"channels": s.channels, "resolution": s.resolution}
                       for s in self.layers],
            "hidden_channels": self.hidden_channels,
            "obs_logvar_mode": self.obs_logvar_mode,
            "obs_logvar_init": self.obs_logvar_init,
        }

    @staticmethod
    def from_dict(d: dict) -> "HvaeConfig":
        return HvaeConfig(
            image_shape=tuple(d["image_shape"]),
            layers=tuple(LayerSpec(int(s["channels"]), int(s["resolution"]))
                         for s in d["layers"]),
            hidden_channels=int(d["hidden_channels"]),
            obs_logvar_mode=d["obs_logvar_mode"],
            obs_logvar_init=float(d["obs_logvar_init"]),
        )


@dataclass
class GaussianParams:
    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise HvaeError("mean and log_var must share shape")


@dataclass
class LayerLatent:
    prior: GaussianParams
    posterior: Optional[GaussianParams]
    sample: np.ndarray
    source: str  # "posterior" | "prior"

    def __post_init__(self):
        if self.source not in ("posterior", "prior"):
            raise HvaeError(f"bad source {self.source!r}")
        if self.source == "posterior" and self.posterior is None:
            raise HvaeError("posterior source requires posterior params")


@dataclass
class LatentPath:
    """Per-layer record, index 0 = layer 1 (finest) ... index L-1 = layer L."""

    layers: list

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]


@dataclass
class ReconState:
    mean: np.ndarray          # image-shaped, in [0, 1]
    obs_log_var: float
    latent_path: LatentPath


@dataclass
class HvaeCheckpoint:
    config: HvaeConfig
    params: dict              # name -> float64 ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class ElboResult:
    elbo: float
    recon: float
    layer_kls: list           # index 0 = layer 1


# ------------------------------------------------------------------
# parameters
# ------------------------------------------------------------------

def _conv_param_shapes(config: HvaeConfig) -> dict:
    """name -> (c_out, c_in, kh, kw) for convs, or raw shape for others."""
    c, h, w = config.image_shape
    hc = config.hidden_channels
    L = config.num_layers
    shapes = {}

    shapes["enc.stem.w"] = (hc, c, 3, 3)
    shapes["enc.stem.b"] = (hc, 1, 1)
    distinct = sorted({s.resolution for s in config.layers}, reverse=True)
    res = h
    for r in distinct:
        while res > r:
            shapes[f"enc.down{res}.w"] = (hc, hc, 3, 3)
            shapes[f"enc.down{res}.b"] = (hc, 1, 1)
            res //= 2
        shapes[f"enc.ref{r}.w"] = (hc, hc, 3, 3)
        shapes[f"enc.ref{r}.b"] = (hc, 1, 1)

    r_top = config.layers[-1].resolution
    shapes["dec.seed"] = (hc, r_top, r_top)
    for l in range(L, 0, -1):
        spec = config.layers[l - 1]
        cl = spec.channels
        shapes[f"enc.post{l}.w"] = (2 * cl, 2 * hc, 3, 3)
        shapes[f"enc.post{l}.b"] = (2 * cl, 1, 1)
        if l < L:
            shapes[f"dec.prior{l}.w"] = (2 * cl, hc, 3, 3)
            shapes[f"dec.prior{l}.b"] = (2 * cl, 1, 1)
        shapes[f"dec.zin{l}.w"] = (hc, cl, 1, 1)
        shapes[f"dec.zin{l}.b"] = (hc, 1, 1)
        shapes[f"dec.blk{l}.w"] = (hc, hc, 3, 3)
        shapes[f"dec.blk{l}.b"] = (hc, 1, 1)

    # upsample convs: every resolution reached on the way from r_top to image size
    res = r_top
    seen = {r_top}
    targets = [s.resolution for s in reversed(config.layers)] + [h]
    for t in targets:
        while res < t:
            res *= 2
            if res not in seen:
                shapes[f"dec.up{res}.w"] = (hc, hc, 3, 3)
                shapes[f"dec.up{res}.b"] = (hc, 1, 1)
                seen.add(res)

    oh = max(4, hc // 2)
    shapes["dec.out1.w"] = (oh, hc, 3, 3)
    shapes["dec.out1.b"] = (oh, 1, 1)
    shapes["dec.out2.w"] = (c, oh, 3, 3)
    shapes["dec.out2.b"] = (c, 1, 1)
    if config.obs_logvar_mode == "learned":
        shapes["dec.obs_logvar"] = ()
    return shapes


def init_params(config: HvaeConfig, seed: int) -> dict:
    """He-style init; Gaussian-parameter heads start near zero so the
    posterior and prior coincide at step 0 and KL starts at ~0."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0FFEE]))
    params = {}
    for name, shape in _conv_param_shapes(config).items():
        if name == "dec.obs_logvar":
            params[name] = np.array(config.obs_logvar_init)
        elif name == "dec.seed":
            params[name] = np.zeros(shape)
        elif name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            std = math.sqrt(2.0 / fan_in)
            if ".post" in name or ".prior" in name or name.startswith("dec.out2"):
                std *= 0.01
            params[name] = rng.normal(0.0, std, size=shape)
    return params


def theta_names(params: dict) -> list:
    """Generative (top-down) parameter names."""
    return sorted(n for n in params if n.startswith("dec."))


def phi_names(params: dict) -> list:
    """Inference (bottom-up) parameter names."""
    return sorted(n for n in params if n.startswith("enc."))


# ------------------------------------------------------------------
# network passes (shared by training and inference)
# ------------------------------------------------------------------

class _Net:
    """Parameter dict viewed as Tensors, optionally attached to a tape."""

    def __init__(self, params, config, tape=None):
        self.config = config
        if tape is None:
            self.p = {k: (v if isinstance(v, Tensor) else Tensor(v))
                      for k, v in params.items()}
        else:
            self.p = {k: tape.leaf(v) for k, v in params.items()}

    def conv(self, name, x, stride=1, padding=1):
        out = T.conv2d(x, self.p[f"{name}.w"], stride=stride, padding=padding)
        return T.add(out, self.p[f"{name}.b"])


def _check_image_batch(config, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != tuple(config.image_shape):
        raise HvaeError(f"image shape {x.shape[1:]} != config {config.image_shape}")
    return x


def _encode(net: _Net, x: Tensor) -> dict:
    """Bottom-up features keyed by resolution."""
    cfg = net.config
    _, h, _ = cfg.image_shape
    distinct = sorted({s.resolution for s in cfg.layers}, reverse=True)
    state = T.relu(net.conv("enc.stem", x))
    res = h
    feats = {}
    for r in distinct:
        while res > r:
            state = T.relu(net.conv(f"enc.down{res}", state, stride=2))
            res //= 2
        state = T.relu(net.conv(f"enc.ref{r}", state))
        feats[r] = state
    return feats


def _split_gauss(t: Tensor, channels: int):
    mu = T.slice_axis(t, 1, 0, channels)
    lv = T.clamp(T.slice_axis(t, 1, channels, 2 * channels), LOGVAR_MIN, LOGVAR_MAX)
    return mu, lv


def _top_down(net: _Net, feats, k: int, rng, deterministic: bool, batch: int):
    """Run the generative ladder; returns per-layer tensors and the decoder mean.

    feats may be None only when k == L (all-prior / unconditional).
    """
    cfg = net.config
    L = cfg.num_layers
    if not 0 <= k <= L:
        raise HvaeError(f"k must be in [0, {L}], got {k}")
    if feats is None and k < L:
        raise HvaeError("bottom-up features required when any layer uses the posterior")

    c_img, h_img, _ = cfg.image_shape
    r_top = cfg.layers[-1].resolution
    zeros = Tensor(np.zeros((batch, cfg.hidden_channels, r_top, r_top)))
    s = T.add(zeros, net.p["dec.seed"])
    res = r_top
    layers = []
    for l in range(L, 0, -1):
        spec = cfg.layers[l - 1]
        while res < spec.resolution:
            res *= 2
            s = T.relu(net.conv(f"dec.up{res}", T.resample(s, 2, "up")))
        sr = T.relu(s)
        if l == L:
            mu_p = Tensor(np.zeros((batch, spec.channels, res, res)))
            lv_p = Tensor(np.zeros((batch, spec.channels, res, res)))
        else:
            mu_p, lv_p = _split_gauss(net.conv(f"dec.prior{l}", sr), spec.channels)
        mu_q = lv_q = None
        if feats is not None:
            qin = T.concat([sr, feats[spec.resolution]], axis=1)
            mu_q, lv_q = _split_gauss(net.conv(f"enc.post{l}", qin), spec.channels)
        use_posterior = l > k
        mu, lv = (mu_q, lv_q) if use_posterior else (mu_p, lv_p)
        if deterministic:
            z = mu
        else:
            eps = rng.standard_normal(mu.shape)
            z = T.add(mu, T.mul(T.exp(T.scale(lv, 0.5)), Tensor(eps)))
        layers.append({
            "layer": l, "mu_p": mu_p, "lv_p": lv_p,
            "mu_q": mu_q, "lv_q": lv_q, "z": z,
            "source": "posterior" if use_posterior else "prior",
        })
        s = T.add(s, net.conv(f"dec.zin{l}", z, padding=0))
        s = T.add(s, net.conv(f"dec.blk{l}", T.relu(s)))

    while res < h_img:
        res *= 2
        s = T.relu(net.conv(f"dec.up{res}", T.resample(s, 2, "up")))
    o = T.relu(net.conv("dec.out1", s))
    mean = T.sigmoid(net.conv("dec.out2", o))
    layers.reverse()  # index 0 = layer 1
    return layers, mean


def _obs_logvar(net: _Net):
    if net.config.obs_logvar_mode == "learned":
        return T.clamp(net.p["dec.obs_logvar"], LOGVAR_MIN, LOGVAR_MAX)
    return Tensor(net.config.obs_logvar_init)


def _kl_terms(layers):
    """Analytic diagonal-Gaussian KL per layer, summed over batch and dims."""
    kls = []
    for rec in layers:
        mu_q, lv_q, mu_p, lv_p = rec["mu_q"], rec["lv_q"], rec["mu_p"], rec["lv_p"]
        if mu_q is None:
            kls.append(None)
            continue
        dmu = T.sub(mu_q, mu_p)
        inv_vp = T.exp(T.negate(lv_p))
        term = T.add(T.sub(lv_p, lv_q),
                     T.mul(T.add(T.exp(lv_q), T.mul(dmu, dmu)), inv_vp))
        kls.append(T.scale(T.sum_all(T.add(term, Tensor(-1.0))), 0.5))
    return kls


def elbo_graph(net: _Net, x_batch: np.ndarray, rng, prior_below: int = 0):
    """Single-sample ELBO pieces, each summed over the batch.

    Returns (recon_term, kl_terms) where kl_terms[l-1] is layer l's KL
    (None for layers at or below prior_below, which sample from the prior
    and contribute no KL).
    """
    cfg = net.config
    xt = Tensor(x_batch)
    feats = _encode(net, xt)
    layers, mean = _top_down(net, feats, prior_below, rng, False, x_batch.shape[0])
    lv_obs = _obs_logvar(net)
    diff = T.sub(xt, mean)
    sq = T.sum_all(T.mul(diff, diff))
    d_total = float(x_batch.size)
    recon = T.scale(
        T.add(T.mul(sq, T.exp(T.negate(lv_obs))),
              T.scale(T.add(lv_obs, Tensor(LOG_2PI)), d_total)),
        -0.5)
    kls = _kl_terms(layers)
    for l in range(1, prior_below + 1):
        kls[l - 1] = None
    return recon, kls


# ------------------------------------------------------------------
# public operations
# ------------------------------------------------------------------

def encode_bottom_up(checkpoint: HvaeCheckpoint, x) -> list:
    """Deterministic bottom-up pass; one feature array per layer (1..L)."""
    cfg = checkpoint.config
    xb = _check_image_batch(cfg, x)
    if np.min(xb) < -1e-9 or np.max(xb) > 1 + 1e-9:
        raise HvaeError("image values must lie in [0, 1]")
    net = _Net(checkpoint.params, cfg)
    feats = _encode(net, Tensor(xb))
    return [feats[s.resolution].data[0] for s in cfg.layers]


def _gauss_from(rec, which, batch_idx=0):
    mu, lv = rec[f"mu_{which}"], rec[f"lv_{which}"]
    if mu is None:
        return None
    return GaussianParams(mean=mu.data[batch_idx].copy(),
                          log_var=lv.data[batch_idx].copy())


def top_down_pass(checkpoint: HvaeCheckpoint, features, k: int, rng,
                  deterministic: bool = False):
    """Generative pass with the posterior/prior split at k.

    features: output of encode_bottom_up (required when k < L), or None.
    Returns (LatentPath, ReconState).
    """
    cfg = checkpoint.config
    net = _Net(checkpoint.params, cfg)
    feats = None
    if features is not None:
        feats = {cfg.layers[i].resolution: Tensor(features[i][None])
                 for i in range(cfg.num_layers)}
    layers, mean = _top_down(net, feats, k, rng, deterministic, 1)
    path = LatentPath([
        LayerLatent(prior=_gauss_from(rec, "p"),
                    posterior=_gauss_from(rec, "q"),
                    sample=rec["z"].data[0].copy(),
                    source=rec["source"])
        for rec in layers
    ])
    state = ReconState(mean=np.clip(mean.data[0], 0.0, 1.0),
                       obs_log_var=float(_obs_logvar(net).data),
                       latent_path=path)
    return path, state


def elbo(checkpoint: HvaeCheckpoint, x, rng) -> ElboResult:
    """Single-sample ELBO with analytic per-layer KL (one image)."""
    cfg = checkpoint.config
    xb = _check_image_batch(cfg, x)
    net = _Net(checkpoint.params, cfg)
    recon, kls = elbo_graph(net, xb, rng)
    recon_v = float(recon.data)
    kl_vs = [float(k.data) for k in kls]
    return ElboResult(elbo=recon_v - sum(kl_vs), recon=recon_v, layer_kls=kl_vs)


def elbo_prior_below(checkpoint: HvaeCheckpoint, x, k: int, rng) -> float:
    """ELBO variant with layers <= k sampled from the prior and excluded
    from the KL sum (used by the log-likelihood-ratio baseline)."""
    cfg = checkpoint.config
    if not 0 <= k <= cfg.num_layers - 1:
        raise HvaeError(f"k must be in [0, {cfg.num_layers - 1}], got {k}")
    xb = _check_image_batch(cfg, x)
    net = _Net(checkpoint.params, cfg)
    recon, kls = elbo_graph(net, xb, rng, prior_below=k)
    return float(recon.data) - sum(float(t.data) for t in kls if t is not None)


def partial_reconstruct(checkpoint: HvaeCheckpoint, x, k: int, rng,
                        n_samples: int = 1) -> ReconState:
    """Reconstruction using posterior samples above k and prior samples below.

    The returned image is the observation mean (averaged over n_samples
    generative passes), clamped to [0, 1]; no observation noise is added.
    """
    cfg = checkpoint.config
    L = cfg.num_layers
    if not 0 <= k <= L - 1:
        raise HvaeError(f"k must be in [0, {L - 1}], got {k}")
    if n_samples < 1:
        raise HvaeError("n_samples must be >= 1")
    xb = _check_image_batch(cfg, x)
    features = encode_bottom_up(checkpoint, xb[0])
    first = None
    acc = None
    for _ in range(n_samples):
        path, state = top_down_pass(checkpoint, features, k, rng)
        if first is None:
            first = state
        acc = state.mean if acc is None else acc + state.mean
    mean = np.clip(acc / n_samples, 0.0, 1.0)
    return ReconState(mean=mean, obs_log_var=first.obs_log_var,
                      latent_path=first.latent_path)


def reconstruct(checkpoint: HvaeCheckpoint, x, rng, n_samples: int = 1) -> ReconState:
    """Full reconstruction: partial reconstruction with k = 0."""
    return partial_reconstruct(checkpoint, x, 0, rng, n_samples)


def infer_posteriors(checkpoint: HvaeCheckpoint, x) -> list:
    """Posterior params per layer from the deterministic-mean pass
    (every layer conditioned on the posterior mean of the layer above)."""
    features = encode_bottom_up(checkpoint, x)
    path, _ = top_down_pass(checkpoint, features, 0, None, deterministic=True)
    return [rec.posterior for rec in path.layers]


# ------------------------------------------------------------------
# Monte-Carlo bounds (used by tests and the IWAE tightness check)
# ------------------------------------------------------------------

def sample_elbo_terms(checkpoint: HvaeCheckpoint, x, rng, n_samples: int,
                      chunk: int = 4096) -> dict:
    """Per-sample single-draw bound estimates, batched over the sample axis.

    Returns arrays of length n_samples:
      'analytic'    recon + analytic KL form of the ELBO estimate
      'monte_carlo' recon + log p(z) - log q(z|x) from the same draws
    """
    cfg = checkpoint.config
    xb = _check_image_batch(cfg, x)
    net = _Net(checkpoint.params, cfg)
    feats1 = _encode(net, Tensor(xb))
    lv_obs = float(_obs_logvar(net).data)
    analytic, monte = [], []
    done = 0
    while done < n_samples:
        b = min(chunk, n_samples - done)
        feats = {r: Tensor(np.broadcast_to(t.data, (b,) + t.data.shape[1:]))
                 for r, t in feats1.items()}
        layers, mean = _top_down(net, feats, 0, rng, False, b)
        diff = xb[0][None] - mean.data
        recon = -0.5 * (np.sum(diff * diff, axis=(1, 2, 3)) / math.exp(lv_obs)
                        + xb[0].size * (lv_obs + LOG_2PI))
        kl = np.zeros(b)
        logratio = np.zeros(b)
        for rec in layers:
            mu_q, lv_q = rec["mu_q"].data, rec["lv_q"].data
            mu_p, lv_p = rec["mu_p"].data, rec["lv_p"].data
            z = rec["z"].data
            axes = (1, 2, 3)
            kl += 0.5 * np.sum(lv_p - lv_q + (np.exp(lv_q) + (mu_q - mu_p) ** 2)
                               / np.exp(lv_p) - 1.0, axis=axes)
            logratio += -0.5 * np.sum((z - mu_p) ** 2 / np.exp(lv_p) + lv_p + LOG_2PI,
                                      axis=axes)
            logratio -= -0.5 * np.sum((z - mu_q) ** 2 / np.exp(lv_q) + lv_q + LOG_2PI,
                                      axis=axes)
        analytic.append(recon - kl)
        monte.append(recon + logratio)
        done += b
    return {"analytic": np.concatenate(analytic),
            "monte_carlo": np.concatenate(monte)}


def iwae_bound(checkpoint: HvaeCheckpoint, x, rng, n_samples: int = 64) -> float:
    """Importance-weighted bound; tighter than the single-sample ELBO."""
    logs = sample_elbo_terms(checkpoint, x, rng, n_samples)["monte_carlo"]
    m = logs.max()
    return float(m + np.log(np.mean(np.exp(logs - m))))


# ------------------------------------------------------------------
# training
# ------------------------------------------------------------------

@dataclass
class TrainParams:
    lr: float = 2e-3
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    kl_warmup_epochs: int = 0   # linear beta ramp over the first N epochs
    grad_clip: float = 0.0      # global-norm clip, 0 = off


def train(dataset: np.ndarray, config: HvaeConfig, hp: TrainParams,
          on_epoch=None) -> HvaeCheckpoint:
    """Stochastic gradient ascent on the ELBO with Adam.

    dataset: (N, C, H, W) array of clean images in [0, 1]. Fully
    deterministic given hp.seed; per-epoch mean negative ELBO is recorded
    in checkpoint meta (and passed to on_epoch when given).
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 4 or data.shape[0] == 0:
        raise HvaeError("dataset must be a non-empty (N,C,H,W) array")
    if data.shape[1:] != tuple(config.image_shape):
        raise HvaeError(f"dataset shape {data.shape[1:]} != config {config.image_shape}")

    params = init_params(config, hp.seed)
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    noise_rng = np.random.default_rng(np.random.SeedSequence([hp.seed, 1]))
    order_rng = np.random.default_rng(np.random.SeedSequence([hp.seed, 2]))
    n = data.shape[0]
    bs = min(hp.batch_size, n)
    history = []

    for epoch in range(hp.epochs):
        if hp.kl_warmup_epochs > 0:
            beta = min(1.0, (epoch + 1) / hp.kl_warmup_epochs)
        else:
            beta = 1.0
        perm = order_rng.permutation(n)
        epoch_neg_elbo = 0.0
        seen = 0
        for start in range(0, n - bs + 1, bs):
            xb = data[perm[start:start + bs]]
            tape = T.Tape()
            net = _Net(params, config, tape=tape)
            recon, kls = elbo_graph(net, xb, noise_rng)
            kl_sum = None
            for t in kls:
                kl_sum = t if kl_sum is None else T.add(kl_sum, t)
            loss = T.scale(T.sub(T.scale(kl_sum, beta), recon), 1.0 / xb.shape[0])
            loss_v = float(loss.data)
            true_neg_elbo = (sum(float(t.data) for t in kls) - float(recon.data)) / xb.shape[0]
            if not np.isfinite(loss_v):
                raise TrainingDiverged(
                    f"non-finite loss {loss_v} at epoch {epoch} step {step}")
            T.backward(tape, loss)
            grads = {k: net.p[k].grad for k in params}
            if hp.grad_clip > 0.0:
                gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if gnorm > hp.grad_clip:
                    sc = hp.grad_clip / gnorm
                    grads = {k: g * sc for k, g in grads.items()}
            step += 1
            corr = math.sqrt(1 - b2 ** step) / (1 - b1 ** step)
            for k in params:
                g = grads[k]
                adam_m[k] = b1 * adam_m[k] + (1 - b1) * g
                adam_v[k] = b2 * adam_v[k] + (1 - b2) * g * g
                params[k] = params[k] - hp.lr * corr * adam_m[k] / (np.sqrt(adam_v[k]) + eps)
            epoch_neg_elbo += true_neg_elbo * xb.shape[0]
            seen += xb.shape[0]
        mean_neg = epoch_neg_elbo / max(seen, 1)
        history.append(mean_neg)
        if on_epoch is not None:
            on_epoch(epoch, mean_neg)

    meta = {
        "seed": hp.seed,
        "epochs": hp.epochs,
        "lr": hp.lr,
        "batch_size": bs,
        "kl_warmup_epochs": hp.kl_warmup_epochs,
        "grad_clip": hp.grad_clip,
        "final_loss": history[-1] if history else None,
        "loss_history": history,
        "num_images": int(n),
    }
    return HvaeCheckpoint(config=config, params=params, meta=meta)
