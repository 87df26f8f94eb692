"""Synthetic intra-writer duplicates of a single signature image.

A documented geometric perturbation model: sinusoidal displacement field,
small affine jitter, and optional 1-px morphological ink jitter.  It stands
in for cognitive duplication models that need only one seed signature; the
whole substitution is isolated behind `duplicate` so a different duplicator
can be swapped in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyInkError
from .imaging import GrayImage, binarize


@dataclass(frozen=True)
class DuplicationParams:
    count: int = 20
    warp_amplitude: float = 2.5  # pixels
    warp_periods: tuple[float, float] = (1.0, 3.0)  # cycles across the canvas
    max_rotation_deg: float = 2.0
    scale_low: float = 0.95
    scale_high: float = 1.05
    max_shear: float = 0.03
    ink_jitter_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.warp_amplitude < 0 or self.max_rotation_deg < 0 or self.max_shear < 0:
            raise ValueError("amplitudes must be >= 0")


def identity_params(count: int = 20, seed: int = 0) -> DuplicationParams:
    """Zero-variability parameters: duplicates equal the input exactly."""
    return DuplicationParams(
        count=count, warp_amplitude=0.0, warp_periods=(0.0, 0.0),
        max_rotation_deg=0.0, scale_low=1.0, scale_high=1.0,
        max_shear=0.0, ink_jitter_prob=0.0, seed=seed,
    )


def _ink_count(px: np.ndarray) -> int:
    try:
        return int(binarize(GrayImage(px)).ink.sum())
    except EmptyInkError:
        return 0


def _margin(params: DuplicationParams, h: int, w: int) -> int:
    ext = max(h, w) / 2.0
    affine = ext * (
        max(params.scale_high - 1.0, 0.0)
        + math.sin(math.radians(params.max_rotation_deg))
        + params.max_shear
    )
    pad = params.warp_amplitude + affine
    jitter = 1 if params.ink_jitter_prob > 0 else 0
    return int(math.ceil(pad)) + jitter if pad > 0 or jitter else 0


def _one_duplicate(px: np.ndarray, params: DuplicationParams, index: int) -> np.ndarray:
    rng = np.random.default_rng([params.seed, index])
    h, w = px.shape
    pad = _margin(params, h, w)
    hh, ww = h + 2 * pad, w + 2 * pad

    rot = math.radians(rng.uniform(-params.max_rotation_deg, params.max_rotation_deg))
    scale = rng.uniform(params.scale_low, params.scale_high)
    shear = rng.uniform(-params.max_shear, params.max_shear)
    fy = rng.uniform(*params.warp_periods)
    fx = rng.uniform(*params.warp_periods)
    ph1, ph2 = rng.uniform(0.0, 2.0 * math.pi, size=2)
    jitter_roll = rng.uniform()
    grow_roll = rng.uniform()

    yy, xx = np.mgrid[0:hh, 0:ww].astype(np.float64)
    yc = yy - (hh - 1) / 2.0
    xc = xx - (ww - 1) / 2.0
    # inverse of rotation(rot) . shear . scale, applied to centered coords
    cos_r, sin_r = math.cos(rot), math.sin(rot)
    xr = cos_r * xc + sin_r * yc
    yr = -sin_r * xc + cos_r * yc
    xr = xr - shear * yr
    xr /= scale
    yr /= scale
    ys = yr + (h - 1) / 2.0
    xs = xr + (w - 1) / 2.0
    if params.warp_amplitude > 0:
        ys = ys + params.warp_amplitude * np.sin(2.0 * math.pi * fx * xs / max(w, 1) + ph2)
        xs = xs + params.warp_amplitude * np.sin(2.0 * math.pi * fy * ys / max(h, 1) + ph1)

    out = ndimage.map_coordinates(
        px.astype(np.float64), [ys, xs], order=1, mode="constant", cval=255.0)
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)

    if jitter_roll < params.ink_jitter_prob:
        base_count = _ink_count(px)
        if grow_roll < 0.5:
            jittered = ndimage.grey_erosion(out, size=(2, 2))  # thicken dark ink
        else:
            jittered = ndimage.grey_dilation(out, size=(2, 2))  # thin dark ink
        # keep intra-writer variability plausible: drop the jitter when it
        # moves the ink budget more than ~18%
        if base_count > 0 and abs(_ink_count(jittered) - base_count) <= 0.18 * base_count:
            out = jittered
    return out


def duplicate(img: GrayImage, params: DuplicationParams) -> list[GrayImage]:
    """m perturbed copies of one signature; deterministic given params.seed,
    distinct across indexes through per-duplicate sub-seeds."""
    px = img.pixels
    if _ink_count(px) == 0:
        raise EmptyInkError("cannot duplicate a signature with no ink")
    return [
        GrayImage(_one_duplicate(px, params, c), dpi=img.dpi)
        for c in range(params.count)
    ]
