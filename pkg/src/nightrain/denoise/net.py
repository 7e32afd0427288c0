"""Depthwise-separable encoder-decoder with image and mask heads.

Layout (defaults: depth 3, channels [8, 16, 32], 3x3 kernels):

    level   block                                   output (from 64x64)
    -----   -------------------------------------   -------------------
    enc1    sepconv stride 2, 1 -> 8, relu          32x32x8
    enc2    sepconv stride 2, 8 -> 16, relu         16x16x16
    enc3    sepconv stride 2, 16 -> 32, relu        8x8x32
    bott    sepconv stride 1, 32 -> 32, relu        8x8x32
    dec3    up x2, concat enc2 (48), -> 16, relu    16x16x16
    dec2    up x2, concat enc1 (24), -> 8, relu     32x32x8
    dec1    up x2, concat input (9), -> 8, relu     64x64x8
    image   pointwise 8 -> 1 (residual)             64x64x1
    mask    pointwise 8 -> 1 (logits)               64x64x1

A separable block is a depthwise 3x3 followed by a pointwise 1x1 plus bias.
The image head predicts a residual added to the input before clamping to
[0, 1]; the mask head emits logits passed through a logistic.  Both heads
are zero-initialised, so a fresh network is exactly the identity on images.
Everything is plain numpy with explicit backward passes; arrays are
channels-last (B, H, W, C).

Parameter count for the defaults is 4084: depthwise 9*(1+8+16+32+48+24+9)
= 1242, pointwise 8+128+512+1024+768+192+72+8+8 = 2720, biases
8+16+32+32+16+8+8+1+1 = 122.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..rng import make_rng


@dataclass(frozen=True)
class NetworkArch:
    depth: int = 3
    channels: tuple = (8, 16, 32)
    kernel: int = 3
    activation: str = "relu"

    def __post_init__(self):
        if self.depth != len(self.channels):
            raise ValidationError(
                f"depth {self.depth} != len(channels) {len(self.channels)}"
            )
        if any(c < 1 for c in self.channels):
            raise ValidationError(f"channel widths must be >= 1: {self.channels}")
        if self.kernel != 3:
            raise ValidationError("only 3x3 kernels are supported")
        if self.activation != "relu":
            raise ValidationError("only relu activation is supported")

    @property
    def stride_factor(self) -> int:
        return 2 ** self.depth


@dataclass
class Network:
    arch: NetworkArch
    params: dict  # name -> np.ndarray, insertion order is canonical
    dtype: np.dtype = np.dtype(np.float32)

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "Network":
        return Network(
            arch=self.arch,
            params={k: v.astype(dtype) for k, v in self.params.items()},
            dtype=np.dtype(dtype),
        )


def block_table(arch: NetworkArch):
    """(name, cin, cout) for every separable block, canonical order."""
    chans = list(arch.channels)
    rows = []
    prev = 1
    for i, c in enumerate(chans, start=1):
        rows.append((f"enc{i}", prev, c))
        prev = c
    rows.append(("bott", chans[-1], chans[-1]))
    up_in = chans[-1]
    for i in range(arch.depth, 0, -1):
        skip = chans[i - 2] if i >= 2 else 1
        out = chans[i - 2] if i >= 2 else chans[0]
        rows.append((f"dec{i}", up_in + skip, out))
        up_in = out
    return rows


def expected_param_count(arch: NetworkArch) -> int:
    """Closed-form parameter count from the block table."""
    total = 0
    for _, cin, cout in block_table(arch):
        total += 9 * cin + cin * cout + cout
    total += 2 * (arch.channels[0] * 1 + 1)  # two pointwise heads
    return total


def init_network(arch: NetworkArch, seed: int, dtype=np.float32) -> Network:
    """Fan-in-scaled uniform init; both heads start at exactly zero so the
    restored output equals the input on a fresh network."""
    rng = make_rng(seed)
    params = {}

    def uniform(shape, fan_in):
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    for name, cin, cout in block_table(arch):
        params[f"{name}.dw"] = uniform((3, 3, cin), fan_in=9)
        params[f"{name}.pw"] = uniform((cin, cout), fan_in=cin)
        params[f"{name}.b"] = np.zeros(cout)
    c0 = arch.channels[0]
    params["head_image.pw"] = np.zeros((c0, 1))
    params["head_image.b"] = np.zeros(1)
    params["head_mask.pw"] = np.zeros((c0, 1))
    params["head_mask.b"] = np.zeros(1)
    params = {k: np.ascontiguousarray(v, dtype=dtype) for k, v in params.items()}
    return Network(arch=arch, params=params, dtype=np.dtype(dtype))


# ---------------------------------------------------------------------------
# Primitive ops (channels-last)
# ---------------------------------------------------------------------------

def depthwise_conv(x, k, stride=1):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    out = np.zeros((b, ho, wo, c), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            out += (
                xp[:, di : di + stride * (ho - 1) + 1 : stride,
                   dj : dj + stride * (wo - 1) + 1 : stride, :]
                * k[di, dj]
            )
    return out


def depthwise_conv_backward(dy, x, k, stride=1):
    b, h, w, c = x.shape
    ho, wo = dy.shape[1], dy.shape[2]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(k)
    for di in range(3):
        for dj in range(3):
            sl = (
                slice(None),
                slice(di, di + stride * (ho - 1) + 1, stride),
                slice(dj, dj + stride * (wo - 1) + 1, stride),
                slice(None),
            )
            dk[di, dj] = np.einsum("bijc,bijc->c", xp[sl], dy)
            dxp[sl] += dy * k[di, dj]
    return dxp[:, 1 : 1 + h, 1 : 1 + w, :], dk


def pointwise_conv(x, w, b):
    return x @ w + b


def pointwise_conv_backward(dy, x, w):
    cin = x.shape[-1]
    cout = dy.shape[-1]
    dw = x.reshape(-1, cin).T @ dy.reshape(-1, cout)
    db = dy.sum(axis=(0, 1, 2))
    dx = dy @ w.T
    return dx, dw, db


def upsample2(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dy):
    b, h2, w2, c = dy.shape
    return dy.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Network forward / backward
# ---------------------------------------------------------------------------

def _sepconv_forward(x, params, name, stride, relu=True):
    t = depthwise_conv(x, params[f"{name}.dw"], stride)
    u = pointwise_conv(t, params[f"{name}.pw"], params[f"{name}.b"])
    y = np.maximum(u, 0) if relu else u
    return y, (x, t, u)


def _sepconv_backward(dy, cache, params, grads, name, stride, relu=True):
    x, t, u = cache
    if relu:
        dy = dy * (u > 0)
    dt, dw, db = pointwise_conv_backward(dy, t, params[f"{name}.pw"])
    grads[f"{name}.pw"] += dw
    grads[f"{name}.b"] += db
    dx, dk = depthwise_conv_backward(dt, x, params[f"{name}.dw"], stride)
    grads[f"{name}.dw"] += dk
    return dx


def forward(net: Network, noisy: np.ndarray, want_cache: bool = False):
    """Run the network on a batch.

    noisy: (B, H, W) or (B, H, W, 1) with H, W divisible by 2**depth.
    Returns (restored, mask_logits, mask_prob[, cache]); restored is
    clamp(noisy + residual, 0, 1) and mask_prob = logistic(mask_logits),
    all shaped like the input.
    """
    arch = net.arch
    squeeze = noisy.ndim == 3
    x = np.asarray(noisy, dtype=net.dtype)
    if squeeze:
        x = x[..., None]
    b, h, w, c = x.shape
    if c != 1:
        raise ValidationError(f"expected single-channel input, got {c} channels")
    f = arch.stride_factor
    if h % f or w % f:
        raise ValidationError(
            f"input {h}x{w} not divisible by 2**depth = {f}"
        )
    p = net.params
    cache = {"x": x}
    skips = [x]
    hcur = x
    for i in range(1, arch.depth + 1):
        hcur, cache[f"enc{i}"] = _sepconv_forward(hcur, p, f"enc{i}", stride=2)
        if i < arch.depth:
            skips.append(hcur)
    hcur, cache["bott"] = _sepconv_forward(hcur, p, "bott", stride=1)
    for i in range(arch.depth, 0, -1):
        up = upsample2(hcur)
        skip = skips[i - 1]
        hcur = np.concatenate([up, skip], axis=-1)
        cache[f"dec{i}.split"] = up.shape[-1]
        hcur, cache[f"dec{i}"] = _sepconv_forward(hcur, p, f"dec{i}", stride=1)
    cache["feat"] = hcur
    residual = pointwise_conv(hcur, p["head_image.pw"], p["head_image.b"])
    logits = pointwise_conv(hcur, p["head_mask.pw"], p["head_mask.b"])
    pre = x + residual
    restored = np.clip(pre, 0.0, 1.0)
    mask_prob = sigmoid(logits)
    cache["pre"] = pre
    if squeeze:
        restored, logits, mask_prob = (
            restored[..., 0], logits[..., 0], mask_prob[..., 0],
        )
    if want_cache:
        return restored, logits, mask_prob, cache
    return restored, logits, mask_prob


def backward(net: Network, cache: dict, d_restored, d_logits):
    """Reverse-mode gradients of a scalar loss through forward().

    d_restored / d_logits are dL/d(restored), dL/d(mask_logits) shaped like
    the network outputs.  Returns dict name -> gradient (canonical order).
    """
    arch = net.arch
    p = net.params
    if d_restored.ndim == 3:
        d_restored = d_restored[..., None]
    if d_logits.ndim == 3:
        d_logits = d_logits[..., None]
    d_restored = d_restored.astype(net.dtype)
    d_logits = d_logits.astype(net.dtype)
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    pre = cache["pre"]
    d_pre = d_restored * ((pre > 0.0) & (pre < 1.0))
    feat = cache["feat"]
    d_feat, dw, db = pointwise_conv_backward(d_pre, feat, p["head_image.pw"])
    grads["head_image.pw"] += dw
    grads["head_image.b"] += db
    d_feat2, dw, db = pointwise_conv_backward(d_logits, feat, p["head_mask.pw"])
    grads["head_mask.pw"] += dw
    grads["head_mask.b"] += db
    d = d_feat + d_feat2

    d_skips = []
    for i in range(1, arch.depth + 1):
        d = _sepconv_backward(d, cache[f"dec{i}"], p, grads, f"dec{i}", stride=1)
        split = cache[f"dec{i}.split"]
        d_up, d_skip = d[..., :split], d[..., split:]
        d_skips.append((i, d_skip))
        d = upsample2_backward(d_up)
    d = _sepconv_backward(d, cache["bott"], p, grads, "bott", stride=1)
    # decoder level i consumed skip = enc{i-1} output (the raw input for i=1),
    # so its skip gradient joins the stream after enc{i} has been walked back
    d_skip_by_level = dict(d_skips)
    for i in range(arch.depth, 0, -1):
        d = _sepconv_backward(d, cache[f"enc{i}"], p, grads, f"enc{i}", stride=2)
        if i > 1:
            d = d + d_skip_by_level[i]
    return grads
