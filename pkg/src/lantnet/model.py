"""LANTNet: convolutional stem, layer attention, classification head, losses, training.

Shapes for a batch of B patches of side R (N = 4 layers, C = 32 channels):

    x (B, 3, R, R)
    F0 = relu(conv1x1 3->16)         F1..F3 = relu(conv3x3 -> 32)
    X  = stack(relu(lift 16->32)(F0), F1, F2, F3)            (B, 4, 32, R, R)
    Xh = diag(attn_diag) @ reshape(X, (4, 32 R R))
    A  = softmax_rows(Xh @ Xh^T)                             (B, 4, 4)
    Y  = reshape(A @ Xh) + X
    p  = softmax(fc(flatten(relu(conv1x1 128->32)(reshape(Y, (128, R, R))))))
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .patches import SampleSet, channel_stack, extract_patches
from .raster_io import ChangeMap

log = logging.getLogger(__name__)

N_LAYERS = 4
STEM_CH = 16
FEAT_CH = 32
N_CLASSES = 2
PROB_FLOOR = 1e-12

CONV_LAYERS = {
    # name: (c_out, c_in, k)
    "stem0": (STEM_CH, 3, 1),
    "stem1": (FEAT_CH, STEM_CH, 3),
    "stem2": (FEAT_CH, FEAT_CH, 3),
    "stem3": (FEAT_CH, FEAT_CH, 3),
    "lift0": (FEAT_CH, STEM_CH, 1),
    "reduce": (FEAT_CH, N_LAYERS * FEAT_CH, 1),
}


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.9

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError(f"loss weights need alpha, beta >= 0 and alpha + beta > 0, got {self}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    flip_rate: float = 0.0
    attention: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr >= 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.flip_rate < 1.0:
            raise ValueError(f"flip_rate must be in [0, 1), got {self.flip_rate}")


@dataclass
class ModelParams:
    r: int
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(self.r, {k: v.copy() for k, v in self.tensors.items()})

    def n_weights(self) -> int:
        return sum(v.size for v in self.tensors.values())


def param_shapes(r: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name, (cout, cin, k) in CONV_LAYERS.items():
        shapes[f"{name}_w"] = (cout, cin, k, k)
        shapes[f"{name}_b"] = (cout,)
    shapes["attn_diag"] = (N_LAYERS,)
    shapes["fc_w"] = (N_CLASSES, FEAT_CH * r * r)
    shapes["fc_b"] = (N_CLASSES,)
    return shapes


def init_params(r: int, seed: int = 0) -> ModelParams:
    """U(-s, s) weights with s = sqrt(1 / fan_in), zero biases, attention diagonal = 1."""
    if r % 2 != 1 or r < 1:
        raise ValueError(f"patch size must be odd, got {r}")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(r).items():
        if name == "attn_diag":
            tensors[name] = np.ones(shape)
        elif name.endswith("_b"):
            tensors[name] = np.zeros(shape)
        else:
            s = np.sqrt(1.0 / int(np.prod(shape[1:])))
            tensors[name] = rng.uniform(-s, s, size=shape)
    return ModelParams(r, tensors)


# ---------------------------------------------------------------- forward pieces


def stem_forward(params: ModelParams, x):
    """Patches (B, 3, R, R) or (3, R, R) -> feature group X (B, 4, 32, R, R) plus cache.

    Convolutions run on channel-major (C, B, R, R) activations internally.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (3, params.r, params.r):
        raise T.ShapeError(f"expected patches of shape (3, {params.r}, {params.r}), got {x.shape[1:]}")
    p = params.tensors
    cache = {}
    h = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    feats = []
    for i in range(4):
        a, cache[f"conv{i}"] = T.conv2d_cb(h, p[f"stem{i}_w"], p[f"stem{i}_b"])
        h, cache[f"relu{i}"] = T.relu(a)
        feats.append(h)
    a, cache["conv_lift"] = T.conv2d_cb(feats[0], p["lift0_w"], p["lift0_b"])
    lifted, cache["relu_lift"] = T.relu(a)
    X = np.ascontiguousarray(np.stack([lifted, feats[1], feats[2], feats[3]]).transpose(2, 0, 1, 3, 4))
    return (X[0] if single else X), cache


def stem_backward(params: ModelParams, cache, dX):
    grads = {}
    dX = np.asarray(dX)
    if dX.ndim == 4:
        dX = dX[None]
    dXc = np.ascontiguousarray(dX.transpose(1, 2, 0, 3, 4))  # (4, 32, B, R, R)
    dl = T.relu_backward(cache["relu_lift"], dXc[0])
    df0_lift, grads["lift0_w"], grads["lift0_b"] = T.conv2d_cb_backward(cache["conv_lift"], dl)
    dh = dXc[3]
    for i in (3, 2, 1):
        da = T.relu_backward(cache[f"relu{i}"], dh)
        dprev, grads[f"stem{i}_w"], grads[f"stem{i}_b"] = T.conv2d_cb_backward(cache[f"conv{i}"], da)
        dh = dprev + (dXc[i - 1] if i > 1 else df0_lift)
    da = T.relu_backward(cache["relu0"], dh)
    _, grads["stem0_w"], grads["stem0_b"] = T.conv2d_cb_backward(cache["conv0"], da, need_input_grad=False)
    return grads


def layer_attention_forward(X, attn_diag):
    """Y = reshape(softmax_rows(Xh Xh^T) Xh) + X with Xh = diag(attn_diag) Xm.

    Accepts (N, C, R, R) or a batch (B, N, C, R, R).  Returns (Y, cache); the cache
    also exposes Xh and A for inspection.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 4
    Xb = X[None] if single else X
    b, n = Xb.shape[:2]
    d = np.asarray(attn_diag, dtype=np.float64)
    if d.shape != (n,):
        raise T.ShapeError(f"attn_diag must have length {n}, got shape {d.shape}")
    Xm, c_reshape = T.reshape(Xb, (b, n, Xb[0, 0].size))
    Xh = d[None, :, None] * Xm
    G, c_gram = T.matmul(Xh, np.swapaxes(Xh, 1, 2))
    A, c_soft = T.softmax_rows(G)
    Z, c_mix = T.matmul(A, Xh)
    Y = (Z + Xm).reshape(Xb.shape)
    cache = {"Xm": Xm, "Xh": Xh, "A": A, "G": G, "d": d, "gram": c_gram, "soft": c_soft, "mix": c_mix,
             "reshape": c_reshape, "single": single}
    return (Y[0] if single else Y), cache


def layer_attention_backward(cache, dY):
    """Returns (dX, d_attn_diag).  Only the diagonal of W receives a gradient."""
    dY = np.asarray(dY)
    if cache["single"]:
        dY = dY[None]
    b, n = dY.shape[:2]
    dZ = dY.reshape(b, n, -1)
    dA, dXh = T.matmul_backward(cache["mix"], dZ)
    dG = T.softmax_rows_backward(cache["soft"], dA)
    dXh_l, dXhT = T.matmul_backward(cache["gram"], dG)
    dXh = dXh + dXh_l + np.swapaxes(dXhT, 1, 2)
    d_diag = np.einsum("bnj,bnj->n", dXh, cache["Xm"])
    dXm = dZ + cache["d"][None, :, None] * dXh
    dX = T.reshape_backward(cache["reshape"], dXm)
    return (dX[0] if cache["single"] else dX), d_diag


def head_forward(params: ModelParams, Y):
    """(B, 4, 32, R, R) -> class probabilities (B, 2)."""
    Y = np.asarray(Y, dtype=np.float64)
    single = Y.ndim == 4
    Yb = Y[None] if single else Y
    b = Yb.shape[0]
    r = params.r
    if Yb.shape[1:] != (N_LAYERS, FEAT_CH, r, r):
        raise T.ShapeError(f"expected features of shape {(N_LAYERS, FEAT_CH, r, r)}, got {Yb.shape[1:]}")
    p = params.tensors
    H = np.ascontiguousarray(Yb.reshape(b, N_LAYERS * FEAT_CH, r, r).transpose(1, 0, 2, 3))
    a, c_red = T.conv2d_cb(H, p["reduce_w"], p["reduce_b"])
    h, c_relu = T.relu(a)
    flat = np.ascontiguousarray(h.transpose(1, 0, 2, 3)).reshape(b, -1)
    logits = flat @ p["fc_w"].T + p["fc_b"]
    probs, c_soft = T.softmax_rows(logits)
    cache = {"reduce": c_red, "relu": c_relu, "flat": flat, "soft": c_soft, "shape": Yb.shape}
    return (probs[0] if single else probs), cache


def head_backward(params: ModelParams, cache, dprobs):
    dprobs = np.atleast_2d(dprobs)
    grads = {}
    dlogits = T.softmax_rows_backward(cache["soft"], dprobs)
    grads["fc_w"] = dlogits.T @ cache["flat"]
    grads["fc_b"] = dlogits.sum(axis=0)
    dflat = dlogits @ params["fc_w"]
    c, b, r, _ = cache["relu"][1].shape
    dh = np.ascontiguousarray(dflat.reshape(b, c, r, r).transpose(1, 0, 2, 3))
    da = T.relu_backward(cache["relu"], dh)
    dH, grads["reduce_w"], grads["reduce_b"] = T.conv2d_cb_backward(cache["reduce"], da)
    dY = dH.reshape(N_LAYERS, FEAT_CH, b, r, r).transpose(2, 0, 1, 3, 4)
    return np.ascontiguousarray(dY).reshape(cache["shape"]), grads


def forward(params: ModelParams, x, attention: bool = True):
    """Full network on a batch of patches; returns (probs (B, 2), cache)."""
    X, c_stem = stem_forward(params, x)
    if X.ndim == 4:
        X = X[None]
    if attention:
        Y, c_attn = layer_attention_forward(X, params["attn_diag"])
    else:
        Y, c_attn = X, None
    probs, c_head = head_forward(params, Y)
    return probs, {"stem": c_stem, "attn": c_attn, "head": c_head}


def backward(params: ModelParams, cache, dprobs) -> dict[str, np.ndarray]:
    dY, grads = head_backward(params, cache["head"], dprobs)
    if cache["attn"] is not None:
        dX, grads["attn_diag"] = layer_attention_backward(cache["attn"], dY)
    else:
        dX, grads["attn_diag"] = dY, np.zeros(N_LAYERS)
    grads.update(stem_backward(params, cache["stem"], dX))
    return {name: grads[name] for name in params.tensors}


# ---------------------------------------------------------------- losses


def _check_probs(f):
    f = np.asarray(f, dtype=np.float64)
    if (
        f.shape[-1] != N_CLASSES
        or not np.all(np.isfinite(f))
        or np.any(f < 0)
        or np.any(np.abs(f.sum(axis=-1) - 1.0) > 1e-6)
    ):
        raise T.NumericError("invalid probability vector")
    return f


def _one_hot(y, k=N_CLASSES):
    y = np.asarray(y, dtype=np.int64)
    return np.eye(k)[y]


def mae_loss(f, y):
    """||e_y - f||_1 and its gradient -sign(e_y - f).  Works on (2,) or (B, 2)."""
    f = _check_probs(f)
    diff = _one_hot(y) - f
    return np.abs(diff).sum(axis=-1), -np.sign(diff)


def ce_loss(f, y):
    """-ln f_y with f_y floored at 1e-12; the gradient is zero where the floor is active."""
    f = _check_probs(f)
    y = np.asarray(y, dtype=np.int64)
    fy = np.take_along_axis(np.atleast_2d(f), np.atleast_1d(y)[:, None], axis=-1)[:, 0]
    loss = -np.log(np.maximum(fy, PROB_FLOOR))
    g = np.zeros(np.atleast_2d(f).shape)
    live = fy >= PROB_FLOOR
    g[np.flatnonzero(live), np.atleast_1d(y)[live]] = -1.0 / fy[live]
    if f.ndim == 1:
        return float(loss[0]), g[0]
    return loss, g


def combined_loss(f, y, w: LossWeights = LossWeights()):
    """alpha * CE + beta * MAE, value and gradient w.r.t. the probabilities."""
    lc, gc = ce_loss(f, y)
    lm, gm = mae_loss(f, y)
    return w.alpha * lc + w.beta * lm, w.alpha * gc + w.beta * gm


def loss_and_grads(params: ModelParams, x, y, w: LossWeights = LossWeights(), attention: bool = True):
    """Mean combined loss over a batch and its gradient for every parameter tensor."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    probs, cache = forward(params, x, attention)
    losses, dF = combined_loss(probs, y, w)
    b = x.shape[0]
    grads = backward(params, cache, dF / b)
    return float(np.mean(losses)), grads, probs


# ---------------------------------------------------------------- training / inference


@dataclass
class TrainResult:
    params: ModelParams
    loss_trace: list[float]
    config: TrainConfig


def train(samples: SampleSet, cfg: TrainConfig = TrainConfig(), init: ModelParams | None = None) -> TrainResult:
    """Mini-batch Adam on the mean combined loss; epoch order is shuffled from cfg.seed."""
    n = len(samples)
    if n == 0:
        raise ValueError("training set is empty")
    neg, pos = samples.class_counts()
    if neg == 0 or pos == 0:
        raise ValueError("training set must contain both classes")
    params = init.copy() if init is not None else init_params(samples.r, cfg.seed)
    if params.r != samples.r:
        raise ValueError(f"model patch size {params.r} != sample patch size {samples.r}")
    state = T.AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads, _ = loss_and_grads(
                params, samples.patches[idx], samples.labels[idx], cfg.loss_weights, cfg.attention
            )
            total += loss * len(idx)
            if cfg.lr > 0:
                T.adam_step(params.tensors, grads, state)
        trace.append(total / n)
        log.info("epoch %d/%d  loss %.6f", epoch + 1, cfg.epochs, trace[-1])
    return TrainResult(params, trace, cfg)


def predict_proba(params: ModelParams, patches, attention: bool = True, batch_size: int = 512) -> np.ndarray:
    out = np.empty((len(patches), N_CLASSES))
    for start in range(0, len(patches), batch_size):
        out[start : start + batch_size] = forward(params, patches[start : start + batch_size], attention)[0]
    return out


def predict_map(params: ModelParams, i1, i2, di, r: int | None = None, attention: bool = True,
                batch_size: int = 512) -> ChangeMap:
    """Classify every pixel; an exact 0.5 / 0.5 tie is unchanged."""
    r = params.r if r is None else r
    if r != params.r:
        raise ValueError(f"model was built for R={params.r}, asked to predict with R={r}")
    stack = channel_stack(i1, i2, di)
    h, w = i1.shape
    labels = np.empty(h * w, dtype=np.uint8)
    rows, cols = np.divmod(np.arange(h * w), w)
    for start in range(0, h * w, batch_size):
        sl = slice(start, start + batch_size)
        patches = extract_patches(stack, rows[sl], cols[sl], r)
        probs = forward(params, patches, attention)[0]
        labels[sl] = probs[:, 1] > probs[:, 0]
    return ChangeMap(labels.reshape(h, w))


# ---------------------------------------------------------------- checkpoint
#
# Layout (all integers little-endian):
#   8 bytes   magic b"LANTCKPT"
#   u32       format version (1)
#   u32       header length L
#   L bytes   UTF-8 JSON header, sorted keys:
#             {"r": R, "config": {...}, "tensors": [{"name": ..., "shape": [...]}, ...]}
#   then each tensor in header order as float64 little-endian, row-major.

CKPT_MAGIC = b"LANTCKPT"
CKPT_VERSION = 1


def _config_dict(cfg: TrainConfig | None) -> dict:
    return {} if cfg is None else asdict(cfg)


def encode_checkpoint(params: ModelParams, cfg: TrainConfig | None = None) -> bytes:
    header = {
        "r": params.r,
        "config": _config_dict(cfg),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors.items()],
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(hb)), hb]
    parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.tensors.values()]
    return b"".join(parts)


def decode_checkpoint(buf: bytes, r: int | None = None) -> tuple[ModelParams, TrainConfig | None]:
    if buf[:8] != CKPT_MAGIC:
        raise CheckpointError("not a LANTNet checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", buf[8:16])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(buf[16 : 16 + hlen].decode("utf-8"))
    if r is not None and header["r"] != r:
        raise CheckpointError(f"checkpoint was trained with R={header['r']}, requested R={r}")
    pos = 16 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape))
        if pos + nbytes > len(buf):
            raise CheckpointError("truncated checkpoint")
        tensors[entry["name"]] = np.frombuffer(buf[pos : pos + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
        pos += nbytes
    expected = param_shapes(header["r"])
    if {k: v.shape for k, v in tensors.items()} != expected:
        raise CheckpointError("checkpoint tensors do not match the LANTNet layout")
    cfg = None
    if header["config"]:
        c = dict(header["config"])
        c["loss_weights"] = LossWeights(**c["loss_weights"])
        cfg = TrainConfig(**c)
    return ModelParams(header["r"], tensors), cfg


def save_checkpoint(path, params: ModelParams, cfg: TrainConfig | None = None) -> None:
    from .raster_io import _atomic_write

    _atomic_write(path, encode_checkpoint(params, cfg))


def load_checkpoint(path, r: int | None = None):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), r)


# ---------------------------------------------------------------- gradient verification


def _probe(params: ModelParams, x, y, attention: bool):
    """Logit margins z_other - z_y per sample and the forward pass's branch signature.

    Two parameter vectors with the same signature lie on the same smooth piece of
    the loss (ReLU masks and the MAE sign pattern agree).
    """
    probs, cache = forward(params, x, attention)
    st = cache["stem"]
    masks = [st[f"relu{i}"][1] for i in range(4)] + [st["relu_lift"][1], cache["head"]["relu"][1]]
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    signs = np.sign(_one_hot(y) - probs)
    sig = b"".join(np.packbits(m).tobytes() for m in masks) + signs.astype(np.int8).tobytes()
    z = cache["head"]["flat"] @ params["fc_w"].T + params["fc_b"]
    rows = np.arange(len(y))
    return z[rows, 1 - y] - z[rows, y], probs[rows, y], sig


def activation_pattern(params: ModelParams, x, y, attention: bool = True) -> bytes:
    return _probe(params, x, y, attention)[2]


def loss_difference(d_plus, d_minus, w: LossWeights) -> float:
    """Mean of L(d_plus) - L(d_minus) for the two-class combined loss written in the margin d.

    With d = z_other - z_y:  CE = softplus(d),  MAE = 2 * sigmoid(d).  Differences are
    formed with expm1/log1p so that nearby margins do not cancel catastrophically.
    """
    d_plus = np.asarray(d_plus, dtype=np.float64)
    d_minus = np.asarray(d_minus, dtype=np.float64)
    em = np.expm1(d_plus - d_minus)
    s_m = 0.5 * (1.0 + np.tanh(0.5 * d_minus))
    s_p = 0.5 * (1.0 + np.tanh(0.5 * d_plus))
    d_ce = np.log1p(s_m * em)
    d_mae = 2.0 * em * s_m * (1.0 - s_p)
    return float(np.mean(w.alpha * d_ce + w.beta * d_mae))


@dataclass
class GroupCheck:
    max_rel_error: float
    checked: int
    kinked: int


def check_gradients(
    params: ModelParams,
    x,
    y,
    w: LossWeights = LossWeights(),
    step: float = 1e-4,
    max_per_group: int | None = None,
    seed: int = 0,
    attention: bool = True,
) -> dict[str, GroupCheck]:
    """Central-difference check of the full-model combined-loss gradient, per parameter group.

    Coordinates whose +-step segment crosses a ReLU kink (branch signature differs
    from the one at the base point) are not differentiable there; they are counted in
    ``kinked`` and left out of the error maximum.  ``max_per_group`` probes a random
    subset of each larger group.
    """
    params = params.copy()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    _, grads, probs = loss_and_grads(params, x, y, w, attention)
    _, fy, base = _probe(params, x, y, attention)
    if np.any(fy < PROB_FLOOR):
        raise T.NumericError("probability floor active at the base point; loss is flat there")
    rng = np.random.default_rng(seed)
    out = {}
    for name, theta in params.tensors.items():
        flat = theta.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_group is not None and flat.size > max_per_group:
            idx = np.sort(rng.choice(flat.size, max_per_group, replace=False))
        analytic = grads[name].reshape(-1)
        worst, kinked = 0.0, 0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            d_p, _, sig_p = _probe(params, x, y, attention)
            flat[i] = orig - step
            d_m, _, sig_m = _probe(params, x, y, attention)
            flat[i] = orig
            if sig_p != base or sig_m != base:
                kinked += 1
                continue
            numeric = loss_difference(d_p, d_m, w) / (2.0 * step)
            worst = max(worst, float(T.relative_error(analytic[i], numeric)))
        out[name] = GroupCheck(worst, len(idx) - kinked, kinked)
    return out


def loss_value(params: ModelParams, x, y, w: LossWeights = LossWeights(), attention: bool = True) -> float:
    """Mean combined loss of a batch (no gradient)."""
    probs, _ = forward(params, x, attention)
    losses, _ = combined_loss(probs, np.atleast_1d(y), w)
    return float(np.mean(losses))
