"""Action-conditioned stochastic pixel-flow prediction.

A flow field assigns every pixel a normalized kernel over motion offsets; it
acts as a Markov transition operator on the pixel lattice. Images are
advected by gathering (each output pixel is a kernel-weighted average of
source pixels), pixel distributions by scattering (mass moves along offsets,
conserving total mass). Two predictors share this interface: an oracle that
reads true per-pixel motion out of the simulator, and a small trainable model
that produces per-pixel compositing masks and per-channel motion kernels from
image patches, pusher state and the commanded action, trained end to end with
a mean squared error on recursively predicted frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import pushsim
from .errors import DimensionMismatch, NonFiniteLoss, ZeroMass
from .imgrid import (CHECKPOINT_MAGIC, FlowField, Image, PixelDistribution,
                     load_arrays, normalize, save_arrays)

DEFAULT_KAPPA = 2
DEFAULT_CHANNELS = 5


@dataclass(frozen=True)
class KernelBank:
    """C motion kernels, each a normalized (2k+1)x(2k+1) grid of weights."""

    kernels: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.kernels, dtype=np.float64)
        if a.ndim != 3 or a.shape[1] != a.shape[2] or a.shape[1] % 2 == 0:
            raise DimensionMismatch(f"kernel bank must be (C, 2k+1, 2k+1), got {a.shape}")
        sums = a.sum(axis=(1, 2))
        if a.min() < -1e-9 or np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("kernel bank channels must be nonnegative and sum to 1")
        a = np.maximum(a, 0.0)
        a.flags.writeable = False
        object.__setattr__(self, "kernels", a)

    @property
    def channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def kappa(self) -> int:
        return (self.kernels.shape[1] - 1) // 2


@dataclass(frozen=True)
class MaskField:
    """Per-pixel convex weights over C channels, shape (H, W, C)."""

    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.weights, dtype=np.float64)
        if a.ndim != 3:
            raise DimensionMismatch(f"mask field must be (H, W, C), got {a.shape}")
        sums = a.sum(axis=2)
        if a.min() < -1e-9 or np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("mask weights must be nonnegative and sum to 1 per pixel")
        a = np.maximum(a, 0.0)
        a.flags.writeable = False
        object.__setattr__(self, "weights", a)

    @property
    def channels(self) -> int:
        return self.weights.shape[2]


def composite_flow(masks: MaskField, kernels: KernelBank) -> FlowField:
    """Blend channel kernels into one per-pixel kernel using the masks."""
    if masks.channels != kernels.channels:
        raise DimensionMismatch(
            f"{masks.channels} mask channels vs {kernels.channels} kernel channels")
    side = kernels.kernels.shape[1]
    h, w, c = masks.weights.shape
    flat = masks.weights.reshape(h * w, c) @ kernels.kernels.reshape(c, side * side)
    return FlowField(flat.reshape(h, w, side, side))


# ---------------------------------------------------------------------------
# Advection. Cached per-grid index maps:
#   src[s, n]: flattened source index pulled by output pixel n at offset s
#   dst[s, n]: flattened destination receiving pixel n's mass at offset s
# with s = (dy + kappa) * (2*kappa+1) + (dx + kappa), edge-clamped.
# ---------------------------------------------------------------------------

_INDEX_CACHE: dict = {}


def _index_maps(h: int, w: int, kappa: int):
    key = (h, w, kappa)
    if key not in _INDEX_CACHE:
        side = 2 * kappa + 1
        ys, xs = np.mgrid[0:h, 0:w]
        src = np.empty((side * side, h * w), dtype=np.int64)
        dst = np.empty((side * side, h * w), dtype=np.int64)
        for dy in range(-kappa, kappa + 1):
            for dx in range(-kappa, kappa + 1):
                s = (dy + kappa) * side + (dx + kappa)
                src[s] = (np.clip(ys - dy, 0, h - 1) * w + np.clip(xs - dx, 0, w - 1)).ravel()
                dst[s] = (np.clip(ys + dy, 0, h - 1) * w + np.clip(xs + dx, 0, w - 1)).ravel()
        src.flags.writeable = False
        dst.flags.writeable = False
        _INDEX_CACHE[key] = (src, dst)
    return _INDEX_CACHE[key]


def _advect_grid(kernels: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Gather semantics on a raw (H, W) grid."""
    h, w, side = kernels.shape[0], kernels.shape[1], kernels.shape[2]
    kappa = (side - 1) // 2
    src, _ = _index_maps(h, w, kappa)
    flat = kernels.reshape(h * w, side * side)
    gathered = grid.ravel()[src]  # (S2, N)
    return np.einsum("ns,sn->n", flat, gathered).reshape(h, w)


def _scatter_grid(kernels: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Scatter semantics on a raw (H, W) mass grid (mass-conserving)."""
    h, w, side = kernels.shape[0], kernels.shape[1], kernels.shape[2]
    kappa = (side - 1) // 2
    _, dst = _index_maps(h, w, kappa)
    flat = kernels.reshape(h * w, side * side)
    weights = flat * grid.ravel()[:, None]  # (N, S2)
    return np.bincount(dst.ravel(), weights=weights.T.ravel(),
                       minlength=h * w).reshape(h, w)


def _check_grid_match(flow: FlowField, h: int, w: int):
    if (flow.height, flow.width) != (h, w):
        raise DimensionMismatch(
            f"flow grid {(flow.height, flow.width)} != data grid {(h, w)}")


def advect_image(flow: FlowField, img: Image) -> Image:
    """Predict the next image: out(x,y) = sum_k,l F(x,y,k,l) * in(x-k, y-l),
    with out-of-bounds sources clamped to the nearest edge pixel."""
    _check_grid_match(flow, img.height, img.width)
    return Image(_advect_grid(flow.kernels, img.data))


def advect_distribution(flow: FlowField, dist: PixelDistribution,
                        mode: str = "scatter") -> PixelDistribution:
    """Propagate designated-pixel mass one step through the flow.

    scatter (default): mass at (x,y) moves to (x+k, y+l) with weight
    F(x,y,k,l), destinations clamped to the grid edge; mass is conserved
    exactly, then renormalized (a float-level no-op). gather: the advect_image
    linear map applied to the mass grid, then renormalized.
    """
    _check_grid_match(flow, dist.height, dist.width)
    if mode == "scatter":
        out = _scatter_grid(flow.kernels, dist.mass)
        return normalize(PixelDistribution(out))
    if mode == "gather":
        out = _advect_grid(flow.kernels, dist.mass)
        if out.sum() <= 1e-12:
            raise ZeroMass("gather advection removed all mass")
        return normalize(PixelDistribution(out))
    raise ValueError(f"unknown advection mode {mode!r}")


def mse_loss(pred, truth) -> float:
    """Mean squared intensity error over all steps and pixels."""
    if len(pred) != len(truth):
        raise DimensionMismatch(f"{len(pred)} predictions vs {len(truth)} targets")
    if not pred:
        return 0.0
    total = 0.0
    for p, t in zip(pred, truth):
        if p.data.shape != t.data.shape:
            raise DimensionMismatch(f"image shapes {p.data.shape} vs {t.data.shape}")
        total += float(np.mean((p.data - t.data) ** 2))
    return total / len(pred)


def image_log_likelihood(pred: Image, obs: Image, sigma2: float = 1.0) -> float:
    """Log-density of obs under the per-pixel Gaussian around the predicted
    mean with constant diagonal covariance sigma2."""
    diff = obs.data - pred.data
    n = diff.size
    return float(-0.5 * (np.sum(diff * diff) / sigma2 + n * math.log(2 * math.pi * sigma2)))


def advance_pusher(x, action, v_max: float = pushsim.V_MAX) -> np.ndarray:
    """Model-side pusher kinematics: servo toward the commanded target."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(action, dtype=float)
    d = a - x
    dist = float(np.hypot(*d))
    if dist <= v_max:
        return a.copy()
    return x + d * (v_max / dist)


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------

class OraclePredictor:
    """Flow model computed from ground-truth simulator dynamics.

    Must be bound to the world state matching the current observation before
    a rollout; bind_world returns a new bound instance (predictors stay pure).
    """

    def __init__(self, kappa: int = DEFAULT_KAPPA, state: pushsim.WorldState | None = None,
                 sigma2: float = 1.0):
        self.kappa = kappa
        self.sigma2 = sigma2
        self._state = state

    def bind_world(self, state: pushsim.WorldState) -> "OraclePredictor":
        return OraclePredictor(self.kappa, state, self.sigma2)

    def start_rollout(self):
        if self._state is None:
            raise RuntimeError("oracle predictor is not bound to a world state")
        return self._state

    def predict(self, ctx, img_prev, img_cur, x_prev, x_cur, action):
        act = pushsim.Action((float(action[0]), float(action[1])))
        flow = pushsim.ground_truth_flow(ctx, act, self.kappa)
        return flow, None, None, pushsim.step(ctx, act)


@dataclass(frozen=True)
class ModelParams:
    """Weights of the trainable flow predictor.

    A shared hidden layer maps per-pixel features (image patches from the
    current and previous frame, normalized pusher states, action, pixel
    coordinates) through tanh; one head emits per-pixel mask logits, another
    maps the pixel-pooled hidden mean to per-channel kernel logits. Softmax
    keeps masks and kernels normalized by construction. sigma2 is the fixed
    observation variance; it scales likelihoods only and is never trained.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    patch_radius: int = 3
    kappa: int = DEFAULT_KAPPA
    channels: int = DEFAULT_CHANNELS
    sigma2: float = 1.0

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @staticmethod
    def feature_dim(patch_radius: int) -> int:
        return 2 * (2 * patch_radius + 1) ** 2 + 6

    @staticmethod
    def global_dim(hidden: int) -> int:
        # pooled hidden mean plus the (identical-per-pixel) state/action
        # scalars, so the kernel head sees actuation directly
        return hidden + 6

    @classmethod
    def initialize(cls, seed: int = 0, channels: int = DEFAULT_CHANNELS,
                   kappa: int = DEFAULT_KAPPA, patch_radius: int = 3,
                   hidden: int = 32, sigma2: float = 1.0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        d = cls.feature_dim(patch_radius)
        side = 2 * kappa + 1
        b3 = np.zeros(channels * side * side)
        # bias kernels toward the identity offset so training starts near
        # "nothing moves", which is true for most pixels
        center = (kappa * side + kappa)
        b3[center::side * side] = 2.0
        gd = cls.global_dim(hidden)
        return cls(
            w1=rng.normal(0.0, 1.0 / math.sqrt(d), size=(hidden, d)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(channels, hidden)),
            b2=np.zeros(channels),
            w3=rng.normal(0.0, 1.0 / math.sqrt(gd), size=(channels * side * side, gd)),
            b3=b3,
            patch_radius=patch_radius, kappa=kappa, channels=channels, sigma2=sigma2,
        )

    def arrays(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "w3": self.w3, "b3": self.b3}


PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


def save_params(params: ModelParams, path) -> None:
    meta = {"patch_radius": params.patch_radius, "kappa": params.kappa,
            "channels": params.channels, "hidden": params.hidden}
    arrays = dict(params.arrays())
    arrays["sigma2"] = np.array([params.sigma2])
    save_arrays(path, CHECKPOINT_MAGIC, meta, arrays)


def load_params(path) -> ModelParams:
    meta, arrays = load_arrays(path, CHECKPOINT_MAGIC)
    return ModelParams(
        w1=np.asarray(arrays["w1"], dtype=np.float64),
        b1=np.asarray(arrays["b1"], dtype=np.float64),
        w2=np.asarray(arrays["w2"], dtype=np.float64),
        b2=np.asarray(arrays["b2"], dtype=np.float64),
        w3=np.asarray(arrays["w3"], dtype=np.float64),
        b3=np.asarray(arrays["b3"], dtype=np.float64),
        patch_radius=int(meta["patch_radius"]), kappa=int(meta["kappa"]),
        channels=int(meta["channels"]), sigma2=float(arrays["sigma2"][0]),
    )


def _patches(img: np.ndarray, radius: int) -> np.ndarray:
    """(H, W, (2r+1)^2) zero-padded local patches."""
    padded = np.pad(img, radius)
    win = np.lib.stride_tricks.sliding_window_view(padded, (2 * radius + 1, 2 * radius + 1))
    h, w = img.shape
    return win.reshape(h, w, -1)


def _features(params: ModelParams, img_prev: np.ndarray, img_cur: np.ndarray,
              x_prev, x_cur, action) -> np.ndarray:
    h, w = img_cur.shape
    sx, sy = w - 1.0, h - 1.0
    cur = _patches(img_cur, params.patch_radius)
    prev = _patches(img_prev, params.patch_radius)
    ys, xs = np.mgrid[0:h, 0:w]
    scalars = np.array([x_prev[0] / sx, x_prev[1] / sy,
                        x_cur[0] / sx, x_cur[1] / sy,
                        action[0] / sx, action[1] / sy])
    n = h * w
    feat = np.empty((n, ModelParams.feature_dim(params.patch_radius)))
    p2 = cur.shape[2]
    feat[:, :p2] = cur.reshape(n, p2)
    feat[:, p2:2 * p2] = prev.reshape(n, p2)
    feat[:, 2 * p2:2 * p2 + 6] = scalars
    feat[:, -2] = (xs / sx).ravel()
    feat[:, -1] = (ys / sy).ravel()
    return feat


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_single(params: ModelParams, img_prev, img_cur, x_prev, x_cur, action):
    """One prediction step; returns all intermediates needed for backprop."""
    h, w = img_cur.shape
    side = 2 * params.kappa + 1
    sx, sy = w - 1.0, h - 1.0
    feat = _features(params, img_prev, img_cur, x_prev, x_cur, action)
    zpre = feat @ params.w1.T + params.b1
    z = np.tanh(zpre)
    masks = _softmax_rows(z @ params.w2.T + params.b2)          # (N, C)
    scalars = np.array([x_prev[0] / sx, x_prev[1] / sy, x_cur[0] / sx,
                        x_cur[1] / sy, action[0] / sx, action[1] / sy])
    g = np.concatenate([z.mean(axis=0), scalars])
    kern_logits = (params.w3 @ g + params.b3).reshape(params.channels, side * side)
    kern = _softmax_rows(kern_logits)                           # (C, S2)
    flow_flat = masks @ kern                                    # (N, S2)
    src, _ = _index_maps(h, w, params.kappa)
    gathered = img_cur.ravel()[src]                             # (S2, N)
    out = np.einsum("ns,sn->n", flow_flat, gathered).reshape(h, w)
    return {"feat": feat, "z": z, "masks": masks, "g": g, "kern": kern,
            "flow": flow_flat, "gathered": gathered, "out": out,
            "img_prev": img_prev, "img_cur": img_cur, "shape": (h, w)}


def _zero_grads(params: ModelParams) -> dict:
    return {name: np.zeros_like(arr) for name, arr in params.arrays().items()}


def _backward_single(params: ModelParams, fwd: dict, d_out: np.ndarray, grads: dict):
    """Backprop one step. Returns (d_img_cur, d_img_prev)."""
    h, w = fwd["shape"]
    n = h * w
    side = 2 * params.kappa + 1
    rho = params.patch_radius
    src, _ = _index_maps(h, w, params.kappa)
    d_out_flat = d_out.ravel()

    d_flow = d_out_flat[:, None] * fwd["gathered"].T            # (N, S2)
    # gradient into the advected source image
    weights = d_out_flat[:, None] * fwd["flow"]                 # (N, S2)
    d_img_cur = np.bincount(src.ravel(), weights=weights.T.ravel(),
                            minlength=n).reshape(h, w)

    d_masks = d_flow @ fwd["kern"].T                            # (N, C)
    d_kern = fwd["masks"].T @ d_flow                            # (C, S2)

    m = fwd["masks"]
    d_lm = m * (d_masks - (d_masks * m).sum(axis=1, keepdims=True))
    k = fwd["kern"]
    d_lk = (k * (d_kern - (d_kern * k).sum(axis=1, keepdims=True))).ravel()

    z = fwd["z"]
    hidden = params.hidden
    grads["w3"] += np.outer(d_lk, fwd["g"])
    grads["b3"] += d_lk
    d_g = params.w3.T @ d_lk
    d_z = d_lm @ params.w2 + d_g[:hidden] / n  # scalar tail of g is an input
    grads["w2"] += d_lm.T @ z
    grads["b2"] += d_lm.sum(axis=0)

    d_zpre = d_z * (1.0 - z * z)
    grads["w1"] += d_zpre.T @ fwd["feat"]
    grads["b1"] += d_zpre.sum(axis=0)
    d_feat = d_zpre @ params.w1                                 # (N, D)

    p2 = (2 * rho + 1) ** 2
    d_cur_p = d_feat[:, :p2].reshape(h, w, p2)
    d_prev_p = d_feat[:, p2:2 * p2].reshape(h, w, p2)
    d_img_prev = np.zeros((h, w))
    pad_cur = np.zeros((h + 2 * rho, w + 2 * rho))
    pad_prev = np.zeros((h + 2 * rho, w + 2 * rho))
    i = 0
    for dy in range(-rho, rho + 1):
        for dx in range(-rho, rho + 1):
            pad_cur[rho + dy:rho + dy + h, rho + dx:rho + dx + w] += d_cur_p[:, :, i]
            pad_prev[rho + dy:rho + dy + h, rho + dx:rho + dx + w] += d_prev_p[:, :, i]
            i += 1
    d_img_cur += pad_cur[rho:rho + h, rho:rho + w]
    d_img_prev += pad_prev[rho:rho + h, rho:rho + w]
    return d_img_cur, d_img_prev


def rollout_loss_and_grads(params: ModelParams, img_prev, img_cur, x_prev, x_cur,
                           actions, targets, v_max: float = pushsim.V_MAX,
                           want_grads: bool = True):
    """Recursive multi-step MSE and its analytic gradient for one sample.

    Predicted frames are fed back as the image pair of the next step, so
    gradients flow through the advection, the compositing, the softmax maps
    and the patch features of every later step.
    """
    hp = len(actions)
    a_img, b_img = np.asarray(img_prev, float), np.asarray(img_cur, float)
    xp, xc = np.asarray(x_prev, float), np.asarray(x_cur, float)
    fwds = []
    loss = 0.0
    n_px = b_img.size
    for j in range(hp):
        fwd = _forward_single(params, a_img, b_img, xp, xc, actions[j])
        fwds.append(fwd)
        diff = fwd["out"] - targets[j]
        loss += float(np.sum(diff * diff))
        a_img, b_img = b_img, fwd["out"]
        xp, xc = xc, advance_pusher(xc, actions[j], v_max)
    loss /= hp * n_px
    if not want_grads:
        return loss, None
    grads = _zero_grads(params)
    d_outs = [2.0 * (fwds[j]["out"] - targets[j]) / (hp * n_px) for j in range(hp)]
    for j in range(hp - 1, -1, -1):
        d_cur, d_prev = _backward_single(params, fwds[j], d_outs[j], grads)
        if j >= 1:
            d_outs[j - 1] += d_cur
        if j >= 2:
            d_outs[j - 2] += d_prev
    return loss, grads


class LearnedPredictor:
    """Trainable predictor around ModelParams; pure once constructed."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.kappa = params.kappa
        self.sigma2 = params.sigma2

    def bind_world(self, state) -> "LearnedPredictor":
        return self

    def start_rollout(self):
        return None

    def predict(self, ctx, img_prev, img_cur, x_prev, x_cur, action):
        fwd = _forward_single(self.params, np.asarray(img_prev, float),
                              np.asarray(img_cur, float),
                              np.asarray(x_prev, float), np.asarray(x_cur, float),
                              np.asarray(action, float))
        h, w = fwd["shape"]
        side = 2 * self.params.kappa + 1
        flow = FlowField(fwd["flow"].reshape(h, w, side, side))
        masks = MaskField(fwd["masks"].reshape(h, w, self.params.channels))
        kern = KernelBank(fwd["kern"].reshape(self.params.channels, side, side))
        return flow, masks, kern, None


def predict_rollout(predictor, img_prev: Image, img_cur: Image, x_prev, x_cur,
                    actions, v_max: float = pushsim.V_MAX):
    """Roll the predictor H steps forward, feeding predictions back.

    Returns (flows, images): H flow fields and the H predicted mean frames.
    """
    if len(actions) < 1:
        raise ValueError("rollout needs at least one action")
    ctx = predictor.start_rollout()
    a_img, b_img = img_prev, img_cur
    xp = np.asarray(x_prev, float)
    xc = np.asarray(x_cur, float)
    flows, images = [], []
    for action in actions:
        act = np.asarray(action, dtype=float)
        flow, _, _, ctx = predictor.predict(ctx, a_img.data, b_img.data, xp, xc, act)
        nxt = advect_image(flow, b_img)
        flows.append(flow)
        images.append(nxt)
        a_img, b_img = b_img, nxt
        xp, xc = xc, advance_pusher(xc, act, v_max)
    return flows, images


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    horizon: int = 3
    batch_size: int = 8
    updates: int = 1500
    lr: float = 3e-3
    lr_final: float | None = None  # cosine-decay target; None = constant lr
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    v_max: float = pushsim.V_MAX
    motion_oversample: int = 4   # duplication factor for anchors whose target
                                 # frames contain non-pusher motion

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def dataset_samples(ds, horizon: int, motion_oversample: int = 1):
    """All (episode, anchor t) pairs usable for a horizon-step rollout.

    Contact dynamics are rare in random-push data; anchors whose target
    window contains object motion can be duplicated so minibatches see them
    more often (the loss itself is unchanged).
    """
    samples = []
    for e_idx, ep in enumerate(ds.episodes):
        imgs = ep.images
        for t in range(1, ep.steps - horizon):
            samples.append((e_idx, t))
            if motion_oversample > 1:
                a = imgs[t:t + horizon]
                b = imgs[t + 1:t + 1 + horizon]
                moved = (a != b) & (a != 1.0) & (b != 1.0) & ((a > 0) | (b > 0))
                if moved.any():
                    samples.extend([(e_idx, t)] * (motion_oversample - 1))
    return samples


def _sample_tensors(ds, e_idx: int, t: int, horizon: int):
    ep = ds.episodes[e_idx]
    imgs = ep.images.astype(np.float64)
    states = ep.states.astype(np.float64)
    actions = ep.actions.astype(np.float64)
    return (imgs[t - 1], imgs[t], states[t - 1], states[t],
            actions[t:t + horizon], imgs[t + 1:t + 1 + horizon])


def train(params: ModelParams, ds, cfg: TrainConfig):
    """Minibatch Adam on the recursive multi-step MSE.

    Returns (trained params, loss curve). The curve records every update's
    minibatch loss in order; it is not forced to be monotone.
    """
    samples = dataset_samples(ds, cfg.horizon, cfg.motion_oversample)
    if not samples:
        raise ValueError(f"dataset has no episodes of length >= {cfg.horizon + 1}")
    rng = np.random.default_rng(cfg.seed)
    values = {k: v.copy() for k, v in params.arrays().items()}
    mom = {k: np.zeros_like(v) for k, v in values.items()}
    vel = {k: np.zeros_like(v) for k, v in values.items()}
    curve = []
    cur = params
    for step_i in range(1, cfg.updates + 1):
        idx = rng.integers(0, len(samples), size=cfg.batch_size)
        batch_loss = 0.0
        batch_grads = _zero_grads(cur)
        for i in idx:
            e_idx, t = samples[int(i)]
            loss, grads = rollout_loss_and_grads(
                cur, *_sample_tensors(ds, e_idx, t, cfg.horizon), v_max=cfg.v_max)
            batch_loss += loss
            for k in batch_grads:
                batch_grads[k] += grads[k]
        batch_loss /= cfg.batch_size
        if not math.isfinite(batch_loss):
            raise NonFiniteLoss(f"loss became {batch_loss} at update {step_i}")
        curve.append(batch_loss)
        if cfg.lr_final is None:
            lr = cfg.lr
        else:
            frac = (step_i - 1) / max(cfg.updates - 1, 1)
            lr = cfg.lr_final + (cfg.lr - cfg.lr_final) * 0.5 * (1 + math.cos(math.pi * frac))
        for k in values:
            gk = batch_grads[k] / cfg.batch_size
            mom[k] = cfg.beta1 * mom[k] + (1 - cfg.beta1) * gk
            vel[k] = cfg.beta2 * vel[k] + (1 - cfg.beta2) * gk * gk
            m_hat = mom[k] / (1 - cfg.beta1 ** step_i)
            v_hat = vel[k] / (1 - cfg.beta2 ** step_i)
            values[k] = values[k] - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        cur = replace(cur, **values)
    return cur, curve


def validation_mse(params: ModelParams, ds, horizon: int = 1,
                   v_max: float = pushsim.V_MAX, limit: int | None = None) -> float:
    samples = dataset_samples(ds, horizon)
    if limit is not None:
        samples = samples[:limit]
    total = 0.0
    for e_idx, t in samples:
        loss, _ = rollout_loss_and_grads(params, *_sample_tensors(ds, e_idx, t, horizon),
                                         v_max=v_max, want_grads=False)
        total += loss
    return total / len(samples)


def grad_check(params: ModelParams, batch, n_coords: int = 200, fd_step: float = 1e-4,
               seed: int = 0, coords=None, corrupt=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    batch: list of (img_prev, img_cur, x_prev, x_cur, actions, targets).
    coords: explicit [(name, flat_index)] to probe; random sample otherwise.
    corrupt: optional (name, flat_index, factor) applied to the analytic
    gradient, for planted-fault detection tests.
    """
    def batch_loss(p: ModelParams) -> float:
        return sum(rollout_loss_and_grads(p, *s, want_grads=False)[0]
                   for s in batch) / len(batch)

    grads = _zero_grads(params)
    for s in batch:
        _, g = rollout_loss_and_grads(params, *s)
        for k in grads:
            grads[k] += g[k] / len(batch)
    if corrupt is not None:
        name, flat_index, factor = corrupt
        grads[name].ravel()[flat_index] *= factor

    if coords is None:
        rng = np.random.default_rng(seed)
        sizes = {k: v.size for k, v in params.arrays().items()}
        names = list(sizes)
        coords = []
        for _ in range(n_coords):
            name = names[int(rng.integers(0, len(names)))]
            coords.append((name, int(rng.integers(0, sizes[name]))))

    values = {k: v.copy() for k, v in params.arrays().items()}
    worst = 0.0
    for name, flat_index in coords:
        orig = values[name].ravel()[flat_index]
        values[name].ravel()[flat_index] = orig + fd_step
        hi = batch_loss(replace(params, **values))
        values[name].ravel()[flat_index] = orig - fd_step
        lo = batch_loss(replace(params, **values))
        values[name].ravel()[flat_index] = orig
        fd = (hi - lo) / (2 * fd_step)
        an = grads[name].ravel()[flat_index]
        err = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
        worst = max(worst, err)
    return worst
