"""A small shape-preserving CNN for binary segmentation, with hand-written
reverse-mode gradients and Adam.

Activations are kept channels-first on a flattened, zero-padded grid: a batch
of ``N`` images of ``H x W`` becomes an array of shape ``(C, N*(H+2)*(W+2))``.
In that layout every tap of a 3x3 kernel is a contiguous slice, so a
convolution is one matmul plus nine shifted adds.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .errors import NonFiniteError, ShapeMismatch

LOSS_KINDS = ("ce", "ce+dice")


@dataclass
class LearnerConfig:
    channels: tuple = (1, 8, 8, 8, 1)
    loss: str = "ce"
    lr: float = 5e-3
    betas: tuple = (0.9, 0.99)
    eps: float = 1e-8
    batch_size: int = 8
    prob_clamp: float = 1e-7
    dice_smooth: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.betas = tuple(float(b) for b in self.betas)
        if len(self.channels) < 2:
            raise ValueError("channels needs an input and an output entry")
        if self.channels[-1] != 1:
            raise ValueError("final layer must have exactly one output channel")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["betas"] = list(self.betas)
        return d


@dataclass
class ParamLayer:
    weights: np.ndarray  # (out, in, 3, 3)
    bias: np.ndarray  # (out,)
    index: int  # 1-based position in the network


@dataclass
class ModelParams:
    layers: list[ParamLayer] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def copy(self) -> "ModelParams":
        return ModelParams(
            [ParamLayer(l.weights.copy(), l.bias.copy(), l.index) for l in self.layers]
        )

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def shapes(self):
        return [(l.weights.shape, l.bias.shape) for l in self.layers]

    def to_bytes(self) -> bytes:
        return b"".join(a.tobytes() for a in self.arrays())

    def equals(self, other: "ModelParams") -> bool:
        return self.shapes() == other.shapes() and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


def init_params(config: LearnerConfig, rng) -> ModelParams:
    """He-uniform weights, zero biases."""
    dt = np.dtype(config.dtype)
    layers = []
    for j, (cin, cout) in enumerate(zip(config.channels[:-1], config.channels[1:]), start=1):
        bound = np.sqrt(6.0 / (cin * 9))
        w = rng.uniform(-bound, bound, size=(cout, cin, 3, 3)).astype(dt)
        layers.append(ParamLayer(w, np.zeros(cout, dtype=dt), j))
    return ModelParams(layers)


def zeros_like(params: ModelParams) -> ModelParams:
    return ModelParams(
        [ParamLayer(np.zeros_like(l.weights), np.zeros_like(l.bias), l.index) for l in params.layers]
    )


# -- padded-grid plumbing -------------------------------------------------


@dataclass(frozen=True)
class _Grid:
    n: int
    h: int
    w: int

    @cached_property
    def wp(self):
        return self.w + 2

    @cached_property
    def size(self):
        return self.n * (self.h + 2) * (self.w + 2)

    @cached_property
    def block(self):
        return (self.h + 2) * (self.w + 2)

    @cached_property
    def block_span(self):
        # output positions of one padded image reachable with every tap in range
        return self.block - 2 * self.wp - 2

    @cached_property
    def center(self):
        return self.wp + 1

    @cached_property
    def offsets(self):
        return tuple(i * self.wp + j for i in range(3) for j in range(3))


@lru_cache(maxsize=32)
def _valid(grid: _Grid, dtype) -> np.ndarray:
    v = np.zeros((grid.n, grid.h + 2, grid.w + 2), dtype=dtype)
    v[:, 1:-1, 1:-1] = 1
    return v.reshape(1, -1)


def _to_grid(x: np.ndarray, dtype) -> np.ndarray:
    """(N, H, W, C) -> (C, N*(H+2)*(W+2)) with a zero ring."""
    n, h, w, c = x.shape
    out = np.zeros((c, n, h + 2, w + 2), dtype=dtype)
    out[:, :, 1:-1, 1:-1] = np.moveaxis(x, -1, 0)
    return out.reshape(c, -1)


def _from_grid(a: np.ndarray, grid: _Grid) -> np.ndarray:
    """(1, T) -> (N, H, W)."""
    return a.reshape(grid.n, grid.h + 2, grid.w + 2)[:, 1:-1, 1:-1]


def _conv(x, weights, bias, grid: _Grid):
    # one padded image at a time keeps the 9*cout x P intermediate in cache
    cout = weights.shape[0]
    stacked = weights.transpose(2, 3, 0, 1).reshape(9 * cout, -1)  # row block k = tap k
    block, span, c0, offs = grid.block, grid.block_span, grid.center, grid.offsets
    out = np.zeros((cout, grid.size), dtype=x.dtype)
    for n in range(grid.n):
        s = n * block
        y = stacked @ x[:, s : s + block]
        body = out[:, s + c0 : s + c0 + span]
        np.copyto(body, y[0:cout, 0:span])
        for k in range(1, 9):
            body += y[k * cout : (k + 1) * cout, offs[k] : offs[k] + span]
    out += bias[:, None]
    out *= _valid(grid, x.dtype)
    return out


def _conv_backward(dout, x, weights, grid: _Grid, need_dx: bool):
    cout, cin = weights.shape[:2]
    block, span, c0, offs = grid.block, grid.block_span, grid.center, grid.offsets
    dw_taps = np.zeros((9, cout, cin), dtype=x.dtype)
    stacked_t = weights.transpose(2, 3, 1, 0).reshape(9 * cin, cout)
    dx = np.zeros_like(x) if need_dx else None
    for n in range(grid.n):
        s = n * block
        dm = dout[:, s + c0 : s + c0 + span]
        xb = x[:, s : s + block]
        for k in range(9):
            dw_taps[k] += dm @ xb[:, offs[k] : offs[k] + span].T
        if need_dx:
            z = stacked_t @ dm
            dxb = dx[:, s : s + block]
            for k in range(9):
                dxb[:, offs[k] : offs[k] + span] += z[k * cin : (k + 1) * cin]
    dw = np.ascontiguousarray(dw_taps.reshape(3, 3, cout, cin).transpose(2, 3, 0, 1))
    db = dout.sum(axis=1)
    if need_dx:
        dx *= _valid(grid, x.dtype)
    return dw, db, dx


def _prepare(params: ModelParams, images) -> tuple[np.ndarray, bool]:
    x = np.asarray(images)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N, H, W, C) or (H, W, C), got {x.shape}")
    cin = params.layers[0].weights.shape[1]
    if x.shape[-1] != cin:
        raise ShapeMismatch(f"model expects {cin} channels, image has {x.shape[-1]}")
    for a, b in zip(params.layers[:-1], params.layers[1:]):
        if a.weights.shape[0] != b.weights.shape[1]:
            raise ShapeMismatch(f"layer {a.index} -> {b.index} channel mismatch")
    return x, single


def _forward_cache(params: ModelParams, x: np.ndarray):
    grid = _Grid(*x.shape[:3])
    dt = params.dtype
    h = _to_grid(x, dt)
    inputs = []
    last = params.num_layers - 1
    for j, layer in enumerate(params.layers):
        inputs.append(h)
        h = _conv(h, layer.weights, layer.bias, grid)
        if j < last:
            np.maximum(h, 0, out=h)
    if not np.all(np.isfinite(h)):
        raise NonFiniteError("non-finite activation in forward pass")
    return h, inputs, grid


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(params: ModelParams, images):
    """Logits and probabilities, spatially aligned with the input."""
    x, single = _prepare(params, images)
    out, _, grid = _forward_cache(params, x)
    logits = _from_grid(out, grid).copy()
    probs = sigmoid(logits)
    if single:
        return logits[0], probs[0]
    return logits, probs


def activation_pattern(params: ModelParams, images) -> np.ndarray:
    """Which hidden units are active (ReLU input > 0), flattened to one bool vector.

    Two parameter vectors with the same pattern lie in the same linear piece
    of the network, which is where finite differences are meaningful.
    """
    x, _ = _prepare(params, images)
    _, inputs, _ = _forward_cache(params, x)
    return np.concatenate([(a > 0).ravel() for a in inputs[1:]])


def predict_masks(params: ModelParams, images, batch_size: int = 16) -> np.ndarray:
    x = np.asarray(images)
    parts = []
    for s in range(0, len(x), batch_size):
        _, p = forward(params, x[s : s + batch_size])
        parts.append(p > 0.5)
    return np.concatenate(parts)


# -- losses ---------------------------------------------------------------


def _check_shapes(probs, target):
    if np.shape(probs) != np.shape(target):
        raise ShapeMismatch(f"prediction {np.shape(probs)} vs target {np.shape(target)}")


def pixel_ce_loss(probs, target, clamp: float = 1e-7):
    """Per-pixel binary cross entropy and its mean."""
    _check_shapes(probs, target)
    p = np.clip(np.asarray(probs, dtype=float), clamp, 1 - clamp)
    t = np.asarray(target, dtype=float)
    loss = -(t * np.log(p) + (1 - t) * np.log(1 - p))
    return loss, float(loss.mean())


def dice_loss(probs, target, smooth: float = 1.0) -> float:
    _check_shapes(probs, target)
    p = np.asarray(probs, dtype=float)
    t = np.asarray(target, dtype=float)
    return float(1 - (2 * (p * t).sum() + smooth) / (p.sum() + t.sum() + smooth))


def dice_score(pred_mask, truth) -> float:
    """Set Dice ``2|P & T| / (|P| + |T|)``; two empty masks score 1."""
    _check_shapes(pred_mask, truth)
    p = np.asarray(pred_mask, bool)
    t = np.asarray(truth, bool)
    denom = p.sum() + t.sum()
    if denom == 0:
        return 1.0
    return float(2 * (p & t).sum() / denom)


def _loss_and_dlogits(logits, target, kind, config: LearnerConfig):
    # logits, target: (N, H, W)
    p = sigmoid(logits)
    t = target.astype(logits.dtype)
    c = config.prob_clamp
    pc = np.clip(p, c, 1 - c)
    ce = -(t * np.log(pc) + (1 - t) * np.log(1 - pc))
    loss = ce.mean()
    # the clamp is flat outside [c, 1 - c]
    inside = (p > c) & (p < 1 - c)
    dz = np.where(inside, p - t, 0.0) / ce.size
    if kind == "ce+dice":
        s = config.dice_smooth
        axes = (1, 2)
        inter = (p * t).sum(axis=axes, keepdims=True)
        denom = p.sum(axis=axes, keepdims=True) + t.sum(axis=axes, keepdims=True) + s
        num = 2 * inter + s
        loss = loss + np.mean(1 - num[:, 0, 0] / denom[:, 0, 0])
        dp = -(2 * t * denom - num) / denom**2 / len(p)
        dz = dz + dp * p * (1 - p)
    elif kind != "ce":
        raise ValueError(f"unknown loss kind {kind!r}")
    return float(loss), dz.astype(logits.dtype)


def loss_and_grad(params: ModelParams, images, targets, config: LearnerConfig, kind=None):
    """Scalar batch loss and exact gradients with respect to every parameter."""
    kind = kind or config.loss
    x, single = _prepare(params, images)
    t = np.asarray(targets)
    if single:
        t = t[None]
    if t.shape != x.shape[:3]:
        raise ShapeMismatch(f"targets {t.shape} do not match images {x.shape[:3]}")
    out, inputs, grid = _forward_cache(params, x)
    logits = _from_grid(out, grid)
    loss, dz = _loss_and_dlogits(logits, t, kind, config)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    g = np.zeros_like(out)
    g.reshape(grid.n, grid.h + 2, grid.w + 2)[:, 1:-1, 1:-1] = dz
    grads = []
    for j in range(params.num_layers - 1, -1, -1):
        layer = params.layers[j]
        dw, db, dx = _conv_backward(g, inputs[j], layer.weights, grid, need_dx=j > 0)
        grads.append(ParamLayer(dw, db, layer.index))
        if j > 0:
            g = dx * (inputs[j] > 0)  # ReLU of the previous layer's output
    grads.reverse()
    result = ModelParams(grads)
    if not all(np.all(np.isfinite(a)) for a in result.arrays()):
        raise NonFiniteError("non-finite gradient")
    return loss, result


def backward(params: ModelParams, images, targets, loss_kind: str, config=None) -> ModelParams:
    """Gradients only; loss hyperparameters come from ``config`` or the defaults."""
    config = config or LearnerConfig(dtype=params.dtype.name)
    return loss_and_grad(params, images, targets, config, kind=loss_kind)[1]


# -- optimisation ---------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()], 0)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState,
              lr: float, betas=(0.9, 0.99), eps: float = 1e-8):
    """One bias-corrected Adam update; returns new params and new state."""
    if params.shapes() != grads.shapes():
        raise ShapeMismatch("gradient shapes do not match parameters")
    b1, b2 = betas
    t = state.t + 1
    new = params.copy()
    m_out, v_out = [], []
    for p, g, m, v in zip(new.arrays(), grads.arrays(), state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        m_out.append(m)
        v_out.append(v)
    return new, AdamState(m_out, v_out, t)


def local_train(params: ModelParams, images, masks, config: LearnerConfig, epochs: int, rng):
    """Run ``epochs`` passes of shuffled mini-batch Adam from a fresh optimiser."""
    x = np.asarray(images)
    y = np.asarray(masks, dtype=bool)
    state = AdamState.zeros(params)
    current = params
    n = len(x)
    last_loss = float("nan")
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            b = order[s : s + config.batch_size]
            last_loss, grads = loss_and_grad(current, x[b], y[b], config)
            current, state = adam_step(current, grads, state, config.lr, config.betas, config.eps)
    return current, last_loss


# -- checkpoints ----------------------------------------------------------

_MAGIC = b"AQFCKPT1"


def save_checkpoint(params: ModelParams, config_hash: str = "") -> bytes:
    """Serialise to ``magic | header_len | JSON header | records``.

    Each record is ``layer_index, kind, ndim, shape..., data`` with the data
    in the parameters' own dtype (float32 for trained models).
    """
    header = json.dumps(
        {"config_hash": config_hash, "dtype": str(params.dtype), "layers": params.num_layers},
        sort_keys=True,
    ).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for layer in params.layers:
        for kind, arr in ((0, layer.weights), (1, layer.bias)):
            buf.write(struct.pack("<III", layer.index, kind, arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    return buf.getvalue()


def load_checkpoint(blob: bytes) -> tuple[ModelParams, dict]:
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ValueError("not a model checkpoint")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    header = json.loads(blob[pos : pos + hlen])
    pos += hlen
    dt = np.dtype(header["dtype"]).newbyteorder("<")
    layers: dict[int, dict] = {}
    while pos < len(blob):
        index, kind, ndim = struct.unpack_from("<III", blob, pos)
        pos += 12
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=pos).reshape(shape)
        pos += count * dt.itemsize
        layers.setdefault(index, {})[kind] = arr.astype(header["dtype"])
    params = ModelParams([ParamLayer(layers[j][0], layers[j][1], j) for j in sorted(layers)])
    return params, header


def params_digest(params: ModelParams) -> str:
    return hashlib.sha256(params.to_bytes()).hexdigest()
