"""Tone mapping and local contrast enhancement.

The enhancement applied to every incoming frame is gamma correction followed
by CLAHE (contrast limited adaptive histogram equalisation).  Both run as
pure float64 functions, so identical input plus identical config gives
bit-identical output, and frames can be enhanced in parallel.

CLAHE here: the image is split into a tile grid (the last row/column of
tiles absorbs any remainder, so tiles may be unequal; no pixel replication),
each tile's histogram is clipped at clip_limit times the uniform bin height
with the excess redistributed into unsaturated bins, the per-tile mapping is
the clipped CDF scaled to [0, 1], and each output pixel bilinearly blends the
mappings of the four surrounding tile centres.  A tile whose pixels all share
one value maps identically (no contrast to equalise, and it keeps constant
images constant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class PhotometricConfig:
    gamma: float = 0.7
    clahe_tiles: tuple = (8, 8)  # (tx, ty): tile columns, tile rows
    clip_limit: float = 2.0
    bins: int = 256

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")
        tx, ty = self.clahe_tiles
        if tx < 1 or ty < 1:
            raise ValidationError(f"tile counts must be >= 1, got {self.clahe_tiles}")
        if self.clip_limit < 1:
            raise ValidationError(f"clip_limit must be >= 1, got {self.clip_limit}")
        if self.bins < 2:
            raise ValidationError(f"bins must be >= 2, got {self.bins}")


def gamma_correct(img: np.ndarray, gamma: float) -> np.ndarray:
    """Apply p -> p**gamma per pixel; gamma < 1 lifts mid-tones."""
    if gamma <= 0:
        raise ValidationError(f"gamma must be > 0, got {gamma}")
    return np.asarray(img, dtype=np.float64) ** gamma


def _tile_edges(n: int, tiles: int) -> list:
    """Edge indices for `tiles` intervals over n pixels; last tile absorbs
    the remainder."""
    base = n // tiles
    if base < 1:
        raise ValidationError(f"image extent {n} smaller than tile grid {tiles}")
    edges = [i * base for i in range(tiles)]
    edges.append(n)
    return edges


def _clip_histogram(hist: np.ndarray, clip: float) -> np.ndarray:
    """Clip bins at `clip` and redistribute the excess into open bins,
    never pushing any bin above the clip level.  Preserves total mass."""
    hist = hist.astype(np.float64)
    excess = float(np.maximum(hist - clip, 0.0).sum())
    hist = np.minimum(hist, clip)
    while excess > 1e-9:
        capacity = clip - hist
        open_bins = capacity > 0
        n_open = int(open_bins.sum())
        if n_open == 0:
            break
        share = excess / n_open
        give = np.where(open_bins, np.minimum(capacity, share), 0.0)
        given = float(give.sum())
        if given <= 1e-15:
            break
        hist += give
        excess -= given
    return hist


def _tile_mapping(tile: np.ndarray, bins: int, clip_limit: float):
    """Return (lut, clipped_hist) for a tile, or (None, hist) when the tile
    is single-valued (identity mapping)."""
    vals = tile.ravel()
    idx = np.minimum((vals * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx, minlength=bins).astype(np.float64)
    if vals.min() == vals.max():
        return None, hist
    clip = clip_limit * vals.size / bins
    hist = _clip_histogram(hist, clip)
    cdf = np.cumsum(hist)
    return cdf / vals.size, hist


def clahe(img: np.ndarray, cfg: PhotometricConfig, debug: dict | None = None) -> np.ndarray:
    """Contrast limited adaptive histogram equalisation.

    If `debug` is a dict it receives "clipped_histograms" with shape
    (ty, tx, bins) so the clip invariant can be inspected.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    tx, ty = cfg.clahe_tiles
    row_edges = _tile_edges(h, ty)
    col_edges = _tile_edges(w, tx)

    luts = np.empty((ty, tx, cfg.bins), dtype=np.float64)
    ident = np.zeros((ty, tx), dtype=bool)
    hists = np.empty((ty, tx, cfg.bins), dtype=np.float64)
    centers_r = np.empty(ty)
    centers_c = np.empty(tx)
    for i in range(ty):
        r0, r1 = row_edges[i], row_edges[i + 1]
        centers_r[i] = (r0 + r1 - 1) / 2.0
        for j in range(tx):
            c0, c1 = col_edges[j], col_edges[j + 1]
            centers_c[j] = (c0 + c1 - 1) / 2.0
            lut, hist = _tile_mapping(img[r0:r1, c0:c1], cfg.bins, cfg.clip_limit)
            hists[i, j] = hist
            if lut is None:
                ident[i, j] = True
                luts[i, j] = 0.0
            else:
                luts[i, j] = lut
    if debug is not None:
        debug["clipped_histograms"] = hists
        debug["identity_tiles"] = ident

    bin_idx = np.minimum((img * cfg.bins).astype(np.int64), cfg.bins - 1)

    def axis_weights(coords, centers):
        """Per-pixel (lower index, upper index, blend weight) along one axis."""
        hi = np.searchsorted(centers, coords, side="right")
        hi = np.clip(hi, 0, len(centers) - 1)
        lo = np.clip(hi - 1, 0, len(centers) - 1)
        span = centers[hi] - centers[lo]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(span > 0, (coords - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
        t = np.clip(t, 0.0, 1.0)
        return lo, hi, t

    r_lo, r_hi, tr = axis_weights(np.arange(h, dtype=np.float64), centers_r)
    c_lo, c_hi, tc = axis_weights(np.arange(w, dtype=np.float64), centers_c)

    r_lo = r_lo[:, None]
    r_hi = r_hi[:, None]
    tr = tr[:, None]
    c_lo = c_lo[None, :]
    c_hi = c_hi[None, :]
    tc = tc[None, :]

    def eval_tiles(ri, ci):
        mapped = luts[ri, ci, bin_idx]
        return np.where(ident[ri, ci], img, mapped)

    f00 = eval_tiles(r_lo, c_lo)
    f01 = eval_tiles(r_lo, c_hi)
    f10 = eval_tiles(r_hi, c_lo)
    f11 = eval_tiles(r_hi, c_hi)

    out = (1 - tr) * ((1 - tc) * f00 + tc * f01) + tr * ((1 - tc) * f10 + tc * f11)
    return np.clip(out, 0.0, 1.0)


def enhance(img: np.ndarray, cfg: PhotometricConfig) -> np.ndarray:
    """Gamma first, then CLAHE — the canonical per-frame enhancement."""
    return clahe(gamma_correct(img, cfg.gamma), cfg)
