"""Conditional denoiser on the (h, w) solution grid.

Layout (C channels throughout, every intermediate multiplied by the padding
mask of its resolution)::

    conv_in -> res1 -> + cross-attention(g) -> [skip]
            -> avgpool -> res2 -> res3 -> upsample -> + skip -> res4 -> conv_out

The cross-attention sits at full resolution so each grid cell, which is one
decision variable, can query the condition tokens.  A learned per-head bias
is added to the logit pairing cell i with token i, so a cell attends to its
own variable's token from the start and learns how much to look elsewhere.
There is no output projection: the attended values are added back
residually.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from srg import autodiff as ad

RES_BLOCKS = ("res1", "res2", "res3", "res4")


class NaNError(FloatingPointError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    h: int
    w: int
    channels: int = 32
    heads: int = 4
    token_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ValueError("grid must be at least 1x1")
        if self.channels % self.heads:
            raise ValueError("channels must be divisible by heads")
        if self.channels % 2 or self.token_dim % 2:
            raise ValueError("channels and token_dim must be even")


@dataclass
class DenoiserParams:
    config: DenoiserConfig
    arrays: dict = field(default_factory=dict)

    def astype(self, dtype) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.arrays.items()})


def _shapes(cfg: DenoiserConfig) -> dict:
    C, D = cfg.channels, cfg.token_dim
    s = {
        "conv_in.w": (C, 1, 3, 3), "conv_in.b": (C,),
        "temb.W1": (C, C), "temb.b1": (C,), "temb.W2": (C, C), "temb.b2": (C,),
        "attn.WQ": (C, C), "attn.WK": (D, C), "attn.WV": (D, C),
        "attn.self_bias": (cfg.heads,),
        "conv_out.w": (1, C, 3, 3), "conv_out.b": (1,),
    }
    for r in RES_BLOCKS:
        s.update({
            f"{r}.conv1.w": (C, C, 3, 3), f"{r}.conv1.b": (C,),
            f"{r}.tproj.W": (C, C), f"{r}.tproj.b": (C,),
            f"{r}.conv2.w": (C, C, 3, 3), f"{r}.conv2.b": (C,),
        })
    return s


SELF_BIAS_INIT = 3.0


def init_params(cfg: DenoiserConfig, dtype=np.float32) -> DenoiserParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases; the
    attention self-token bias starts at ``SELF_BIAS_INIT``."""
    rng = np.random.default_rng(cfg.seed)
    arrays = {}
    for name, shape in _shapes(cfg).items():
        if len(shape) == 1:
            fill = SELF_BIAS_INIT if name == "attn.self_bias" else 0.0
            arrays[name] = np.full(shape, fill, dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return DenoiserParams(cfg, arrays)


def sinusoidal(positions, dim: int, dtype=np.float64) -> np.ndarray:
    """Standard sin/cos code of shape (len(positions), dim)."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = pos * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


def pooled_mask(mask):
    """Cell of the half-resolution grid is real if any of its 2x2 block is."""
    B, H, W = mask.shape
    H2, W2 = -(-H // 2), -(-W // 2)
    mp = np.zeros((B, 2 * H2, 2 * W2), bool)
    mp[:, :H, :W] = mask
    return mp.reshape(B, H2, 2, W2, 2).any(axis=(2, 4))


def _linear(x, W, b):
    return ad.add(ad.matmul(x, W), b)


def _res_block(tp, name, h, temb_act, m):
    a = ad.conv3x3(ad.silu(h), tp[f"{name}.conv1.w"], tp[f"{name}.conv1.b"])
    t = _linear(temb_act, tp[f"{name}.tproj.W"], tp[f"{name}.tproj.b"])
    a = ad.mul(ad.add(a, ad.reshape(t, t.shape + (1, 1))), m)
    a = ad.conv3x3(ad.silu(a), tp[f"{name}.conv2.w"], tp[f"{name}.conv2.b"])
    return ad.add(h, ad.mul(a, m))


def cross_attention(x, tokens, WQ, WK, WV, heads, token_mask=None, self_bias=None,
                    return_probs=False):
    """Multi-head ``softmax(Q K^T / sqrt(d_k) + B) V`` with Q = x WQ,
    K = tokens WK, V = tokens WV.

    ``x``: (B, N, C); ``tokens``: (B, L, D) Tensor; ``token_mask``: (B, L)
    booleans, False on padded tokens.  ``self_bias`` (heads,) is added to
    the logits of pairs (i, i); None means no bias.
    """
    B, N, C = x.shape
    L = tokens.shape[1]
    dk = C // heads
    q = ad.transpose(ad.reshape(ad.matmul(x, WQ), (B, N, heads, dk)), (0, 2, 1, 3))
    k = ad.transpose(ad.reshape(ad.matmul(tokens, WK), (B, L, heads, dk)), (0, 2, 3, 1))
    v = ad.transpose(ad.reshape(ad.matmul(tokens, WV), (B, L, heads, dk)), (0, 2, 1, 3))
    logits = ad.scale(ad.matmul(q, k), 1.0 / np.sqrt(dk))
    if self_bias is not None:
        eye = ad.const(np.eye(N, L, dtype=logits.data.dtype))
        logits = ad.add(logits, ad.mul(ad.reshape(self_bias, (1, heads, 1, 1)), eye))
    mask = None if token_mask is None else np.asarray(token_mask, bool)[:, None, None, :]
    probs = ad.softmax(logits, mask)
    out = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (B, N, C))
    return (out, probs) if return_probs else out


def forward_tensor(tp: dict, cfg: DenoiserConfig, x, t, tokens, grid_mask, token_mask=None):
    """Differentiable batched forward pass.

    ``x``: (B, h, w) values; ``t``: (B,) integer timesteps; ``tokens``:
    (B, L, D); ``grid_mask``: (B, h, w) booleans.  ``tp`` maps parameter
    names to Tensors.  Returns a (B, h, w) Tensor, zero on padded cells.
    """
    dtype = tp["conv_in.w"].data.dtype
    x_d = x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype)
    B, H, W = x_d.shape
    if (H, W) != (cfg.h, cfg.w):
        raise ValueError(f"grid {H}x{W} does not match the model's {cfg.h}x{cfg.w}")
    tok = tokens if isinstance(tokens, ad.Tensor) else ad.const(np.asarray(tokens, dtype))
    if tok.shape[0] != B or tok.shape[2] != cfg.token_dim:
        raise ValueError(f"tokens of shape {tok.shape} do not match batch {B}, D={cfg.token_dim}")
    C, N = cfg.channels, H * W
    gm = np.asarray(grid_mask, bool)
    m1 = ad.const(gm[:, None].astype(dtype))
    m2 = ad.const(pooled_mask(gm)[:, None].astype(dtype))

    xin = x if isinstance(x, ad.Tensor) else ad.const(x_d)
    h = ad.mul(ad.reshape(xin, (B, 1, H, W)), m1)

    temb = ad.const(sinusoidal(t, C, dtype))
    temb = ad.silu(_linear(temb, tp["temb.W1"], tp["temb.b1"]))
    temb_act = ad.silu(_linear(temb, tp["temb.W2"], tp["temb.b2"]))

    h = ad.mul(ad.conv3x3(h, tp["conv_in.w"], tp["conv_in.b"]), m1)
    h = _res_block(tp, "res1", h, temb_act, m1)

    flat = ad.transpose(ad.reshape(h, (B, C, N)), (0, 2, 1))
    att = cross_attention(flat, tok, tp["attn.WQ"], tp["attn.WK"], tp["attn.WV"],
                          cfg.heads, token_mask, tp["attn.self_bias"])
    att = ad.reshape(ad.transpose(att, (0, 2, 1)), (B, C, H, W))
    h = ad.add(h, ad.mul(att, m1))
    skip = h

    h = ad.mul(ad.avgpool2(h), m2)
    h = _res_block(tp, "res2", h, temb_act, m2)
    h = _res_block(tp, "res3", h, temb_act, m2)
    h = ad.add(ad.mul(ad.upsample2(h, (H, W)), m1), skip)
    h = _res_block(tp, "res4", h, temb_act, m1)

    out = ad.conv3x3(ad.silu(h), tp["conv_out.w"], tp["conv_out.b"])
    return ad.reshape(ad.mul(out, m1), (B, H, W))


def _tensors(params: DenoiserParams, requires_grad: bool) -> dict:
    return {k: ad.leaf(v, requires_grad) for k, v in params.arrays.items()}


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NaNError(f"non-finite value in {what} at index {tuple(int(i) for i in bad)}")


def predict(params: DenoiserParams, x, t, tokens, grid_mask, token_mask=None) -> np.ndarray:
    """Inference-only batched forward pass returning a (B, h, w) array."""
    tp = _tensors(params, False)
    out = forward_tensor(tp, params.config, x, np.asarray(t).reshape(-1), tokens,
                         grid_mask, token_mask).data
    _check_finite(out, "denoiser output")
    return out


@dataclass
class Tape:
    """Recorded forward pass, consumed by :func:`backward`."""
    output: ad.Tensor
    leaves: dict


def forward_batch(params: DenoiserParams, x, t, tokens, grid_mask, token_mask=None):
    """Forward pass that records the graph; returns (output array, tape)."""
    tp = _tensors(params, True)
    out = forward_tensor(tp, params.config, x, np.asarray(t).reshape(-1), tokens,
                         grid_mask, token_mask)
    _check_finite(out.data, "denoiser output")
    return out.data, Tape(out, tp)


def backward(tape: Tape, loss_grad) -> dict:
    """Parameter gradients for ``sum(loss_grad * output)``."""
    tape.output.backward(np.asarray(loss_grad, dtype=tape.output.data.dtype))
    grads = {}
    for k, leaf_t in tape.leaves.items():
        g = leaf_t.grad
        grads[k] = np.zeros_like(leaf_t.data) if g is None else g.astype(leaf_t.data.dtype)
    return grads


def forward(params: DenoiserParams, x_t, t: int, g) -> "GridTensor":
    """Single-sample forward: GridTensor in, GridTensor out."""
    from srg.grid import GridTensor

    cfg = params.config
    if x_t.values.shape != (1, cfg.h, cfg.w):
        raise ValueError(f"expected a 1x{cfg.h}x{cfg.w} grid, got {x_t.values.shape}")
    if g.L != x_t.n:
        raise ValueError(f"{g.L} condition tokens for {x_t.n} variables")
    out = predict(params, x_t.values[0][None], [t], g.tokens[None], x_t.pad_mask[None])
    return GridTensor(out, x_t.pad_mask)


# ---------------------------------------------------------------- optimizer

@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        arrays = getattr(params, "arrays", params)
        return cls({k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()})


def adam_step(params, grads: dict, state: AdamState,
              cfg: AdamConfig = AdamConfig()):
    """One bias-corrected Adam update, in place; returns ``params``.

    ``params`` is a :class:`DenoiserParams` or a plain name -> array dict.
    """
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in getattr(params, "arrays", params).items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        update = cfg.lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + cfg.eps)
        p -= update.astype(p.dtype)
    return params


# --------------------------------------------------------------- checkpoints

MAGIC = b"SRGCKPT\0"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: DenoiserParams, encoder_params: dict,
                    extra: dict | None = None) -> Path:
    """Binary container: magic, u32 version, u64 header length, JSON header,
    then every tensor as raw little-endian float32 in header order.

    ``extra`` is any JSON-serialisable metadata (schedule, training config);
    floats survive exactly because JSON keeps their shortest repr.
    """
    tensors = [("denoiser/" + k, v) for k, v in sorted(params.arrays.items())]
    tensors += [("encoder/" + k, v) for k, v in sorted(encoder_params.items())]
    index, blobs, offset = [], [], 0
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = {
        "version": CHECKPOINT_VERSION,
        "denoiser_config": asdict(params.config),
        "tensors": index,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path):
    """Returns (DenoiserParams, encoder params, extra metadata)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not an srg checkpoint")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, "
                              f"this build reads {CHECKPOINT_VERSION}")
    header = json.loads(raw[20:20 + hlen])
    body = raw[20 + hlen:]
    den, enc = {}, {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=t["offset"])
        arr = arr.reshape(t["shape"]).astype(np.float32)
        group, name = t["name"].split("/", 1)
        (den if group == "denoiser" else enc)[name] = arr
    params = DenoiserParams(DenoiserConfig(**header["denoiser_config"]), den)
    return params, enc, header["extra"]
