"""Photometric augmentation producing the two views of each input image.

Geometric transforms are deliberately absent: changed regions are small and
unaligned crops would decouple them across views, so the pipeline is resize
plus color jitter, grayscale, and Gaussian blur only.

Every random draw comes from a counter-based stream keyed by
(master seed, sample id, branch position, view id, transform index), so an
individual output never depends on how many other images were augmented
before it or on thread scheduling.

Color conversions are pinned for bit-exact reproducibility at 32 bit:

* RGB -> HSV: ``v = max(r,g,b)``; ``s = (v - min) / v`` (0 where v = 0);
  hue from the standard piecewise formula in [0, 1).
* HSV -> RGB: sextant decomposition ``k = floor(6h)`` with the usual
  (v, q, p, t) table.
* grayscale: luminance ``0.299 r + 0.587 g + 0.114 b`` copied to all three
  channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .rand import stream
from .tensor import bilinear_matrix


@dataclass
class AugmentConfig:
    size: int = 32
    brightness: tuple = (0.6, 1.4)
    contrast: tuple = (0.6, 1.4)
    saturation: tuple = (0.6, 1.4)
    hue: tuple = (-0.1, 0.1)
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_sigma: tuple = (0.1, 2.0)
    master_seed: int = 0
    # share jitter draws between the two timestamps of a pair (a consistent
    # lighting shift); off by default, each image draws independently
    shared_pair_draws: bool = False

    def disabled(self) -> bool:
        neutral = (
            self.brightness == (1.0, 1.0)
            and self.contrast == (1.0, 1.0)
            and self.saturation == (1.0, 1.0)
            and self.hue == (0.0, 0.0)
        )
        return neutral and self.grayscale_prob == 0.0 and self.blur_prob == 0.0


def identity_config(size: int = 32, master_seed: int = 0) -> AugmentConfig:
    """A pipeline that only resizes; downstream view-consistency terms vanish."""
    return AugmentConfig(
        size=size,
        brightness=(1.0, 1.0),
        contrast=(1.0, 1.0),
        saturation=(1.0, 1.0),
        hue=(0.0, 0.0),
        grayscale_prob=0.0,
        blur_prob=0.0,
        master_seed=master_seed,
    )


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    r, g, b = img[0], img[1], img[2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    # hue sextants; delta == 0 rows end up with h = 0
    safe = np.maximum(delta, 1e-12)
    h = np.where(
        maxc == r,
        ((g - b) / safe) % 6.0,
        np.where(maxc == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(delta > 0, h / 6.0, 0.0)
    return np.stack([h, s, v]).astype(img.dtype)


def hsv_to_rgb(img: np.ndarray) -> np.ndarray:
    h, s, v = img[0], img[1], img[2]
    k = np.floor(h * 6.0) % 6.0
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.select([k == 0, k == 1, k == 2, k == 3, k == 4], [v, q, p, p, t], v)
    g = np.select([k == 0, k == 1, k == 2, k == 3, k == 4], [t, v, v, q, p], p)
    b = np.select([k == 0, k == 1, k == 2, k == 3, k == 4], [p, p, t, v, v], q)
    return np.stack([r, g, b]).astype(img.dtype)


def luminance(img: np.ndarray) -> np.ndarray:
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (3,h,w) image."""
    _, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    rows = bilinear_matrix(out_h, h, dtype=np.float64)
    cols = bilinear_matrix(out_w, w, dtype=np.float64)
    out = np.einsum("oh,chw,pw->cop", rows, img.astype(np.float64), cols)
    return out.astype(img.dtype)


def _apply_jitter(img: np.ndarray, cfg: AugmentConfig, draws: np.ndarray) -> np.ndarray:
    b_lo, b_hi = cfg.brightness
    c_lo, c_hi = cfg.contrast
    s_lo, s_hi = cfg.saturation
    h_lo, h_hi = cfg.hue
    brightness = b_lo + (b_hi - b_lo) * draws[0]
    contrast = c_lo + (c_hi - c_lo) * draws[1]
    saturation = s_lo + (s_hi - s_lo) * draws[2]
    hue = h_lo + (h_hi - h_lo) * draws[3]

    out = np.clip(img * brightness, 0.0, 1.0)
    mean = luminance(out).mean()
    out = np.clip(mean + (out - mean) * contrast, 0.0, 1.0)
    if saturation != 1.0 or hue != 0.0:
        hsv = rgb_to_hsv(out)
        hsv[1] = np.clip(hsv[1] * saturation, 0.0, 1.0)
        hsv[0] = (hsv[0] + hue) % 1.0
        out = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return out


def augment_view(
    image: np.ndarray,
    cfg: AugmentConfig,
    sample_id: int,
    view_id: int,
    position: int = 0,
) -> np.ndarray:
    """One augmented (3, size, size) view of a (3,h,w) image in [0,1].

    ``position`` distinguishes the two images of a pair; when
    ``cfg.shared_pair_draws`` is set both positions read the same stream.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3,h,w) image, got {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError(
            f"pixel values must lie in [0,1], got [{image.min():.4g}, {image.max():.4g}]"
        )
    if view_id not in (1, 2):
        raise ValueError(f"view_id must be 1 or 2, got {view_id}")
    pos_key = 0 if cfg.shared_pair_draws else position

    def draws(t_index: int, n: int) -> np.ndarray:
        return stream(cfg.master_seed, sample_id, pos_key, view_id, t_index).random(n)

    out = resize(np.asarray(image, dtype=np.float32), cfg.size, cfg.size)
    out = np.clip(out, 0.0, 1.0)
    out = _apply_jitter(out, cfg, draws(0, 4))
    if draws(1, 1)[0] < cfg.grayscale_prob:
        out = np.broadcast_to(luminance(out), (3, cfg.size, cfg.size)).copy()
    blur_draws = draws(2, 2)
    if blur_draws[0] < cfg.blur_prob:
        lo, hi = cfg.blur_sigma
        sigma = lo + (hi - lo) * blur_draws[1]
        out = np.stack(
            [ndimage.gaussian_filter(ch, sigma=sigma, mode="nearest") for ch in out]
        )
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment_pair(
    t0: np.ndarray, t1: np.ndarray, cfg: AugmentConfig, sample_id: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(T0', T0'', T1', T1'') with view- and image-distinct random substreams."""
    return (
        augment_view(t0, cfg, sample_id, view_id=1, position=0),
        augment_view(t0, cfg, sample_id, view_id=2, position=0),
        augment_view(t1, cfg, sample_id, view_id=1, position=1),
        augment_view(t1, cfg, sample_id, view_id=2, position=1),
    )
