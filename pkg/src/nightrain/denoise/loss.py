"""Composite training loss: weighted MSE + (1 - SSIM) + mask BCE.

total = lambda_mse * mse + lambda_percept * (1 - ssim) + lambda_mask * bce

The SSIM term averages per-image SSIM over the batch and is skipped (set to
zero) when the images are smaller than the SSIM window.  Mask probabilities
are clamped to [eps, 1 - eps] before the BCE log terms; inside the clamp the
logit gradient is the usual (sigmoid - target) / N, outside it is zero.
All scalar reductions run in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..quality import SsimConfig, ssim_and_grad, ssim_and_grad_batch
from .net import sigmoid

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_mse: float = 1.0
    lambda_percept: float = 0.5
    lambda_mask: float = 0.5

    def __post_init__(self):
        vals = (self.lambda_mse, self.lambda_percept, self.lambda_mask)
        if any(v < 0 for v in vals):
            raise ValidationError(f"loss weights must be >= 0: {vals}")
        if all(v == 0 for v in vals):
            raise ValidationError("loss weights must not all be zero")


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 4 and x.shape[-1] == 1:
        x = x[..., 0]
    return x


def bce(mask_prob, mask_target):
    p = np.clip(_as_batch(mask_prob), BCE_EPS, 1.0 - BCE_EPS)
    t = _as_batch(mask_target)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


def loss(restored, mask_prob, target_img, target_mask,
         weights: LossWeights = LossWeights(),
         ssim_cfg: SsimConfig = SsimConfig()):
    """Return (total, components) with components {mse, ssim_term, bce}.

    Accepts single images or batches; shapes of prediction/target pairs must
    match.
    """
    ip = _as_batch(restored)
    it = _as_batch(target_img)
    mp = _as_batch(mask_prob)
    mt = _as_batch(target_mask)
    if ip.shape != it.shape or mp.shape != mt.shape:
        raise ValidationError(
            f"shape mismatch: {ip.shape} vs {it.shape}, {mp.shape} vs {mt.shape}"
        )
    mse = float(np.mean((ip - it) ** 2))
    if ip.shape[1] >= ssim_cfg.window and ip.shape[2] >= ssim_cfg.window:
        ssim_mean = float(
            np.mean([ssim_and_grad(ip[i], it[i], ssim_cfg)[0] for i in range(ip.shape[0])])
        )
        ssim_term = 1.0 - ssim_mean
    else:
        ssim_term = 0.0
    bce_val = bce(mp, mt)
    comps = {"mse": mse, "ssim_term": ssim_term, "bce": bce_val}
    total = (
        weights.lambda_mse * mse
        + weights.lambda_percept * ssim_term
        + weights.lambda_mask * bce_val
    )
    return total, comps


def loss_with_output_grads(restored, mask_logits, target_img, target_mask,
                           weights: LossWeights,
                           ssim_cfg: SsimConfig = SsimConfig()):
    """Loss plus gradients w.r.t. the network outputs.

    Returns (total, components, d_restored, d_logits), the gradients shaped
    like the batch (B, H, W).
    """
    ip = _as_batch(restored)
    it = _as_batch(target_img)
    zl = _as_batch(mask_logits)
    mt = _as_batch(target_mask)
    n_img = ip.size
    mse = float(np.mean((ip - it) ** 2))
    d_restored = weights.lambda_mse * 2.0 * (ip - it) / n_img

    if ip.shape[1] >= ssim_cfg.window and ip.shape[2] >= ssim_cfg.window:
        batch = ip.shape[0]
        values, ssim_grads = ssim_and_grad_batch(ip, it, ssim_cfg)
        d_restored += weights.lambda_percept * (-ssim_grads / batch)
        ssim_term = 1.0 - float(values.mean())
    else:
        ssim_term = 0.0

    sig = _as_batch(sigmoid(zl))
    p = np.clip(sig, BCE_EPS, 1.0 - BCE_EPS)
    bce_val = float(np.mean(-(mt * np.log(p) + (1.0 - mt) * np.log(1.0 - p))))
    inside = (sig > BCE_EPS) & (sig < 1.0 - BCE_EPS)
    d_logits = weights.lambda_mask * np.where(inside, sig - mt, 0.0) / mt.size

    comps = {"mse": mse, "ssim_term": ssim_term, "bce": bce_val}
    total = (
        weights.lambda_mse * mse
        + weights.lambda_percept * ssim_term
        + weights.lambda_mask * bce_val
    )
    return total, comps, d_restored, d_logits
