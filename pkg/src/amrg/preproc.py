"""Mammogram preprocessing: Otsu foreground, ROI crop, resize, laterality flip, CLAHE.

Images are 2-D numpy arrays; ``uint8`` is 8-bit and ``uint16`` is 16-bit.
Histogram based stages (Otsu, CLAHE) work on a 256-level quantization, so
16-bit input is reduced with ``v >> 8`` first.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class EmptyForegroundError(ValueError):
    """No pixel lies above the foreground threshold."""


@dataclass(frozen=True)
class PreprocConfig:
    target_size: int = 512
    clahe_tiles: int = 8
    clahe_clip: float = 2.0
    resize_mode: str = "direct"
    clahe_space: str = "lab"

    def __post_init__(self):
        if self.target_size <= 0:
            raise ValueError("target_size must be positive")
        if self.clahe_tiles < 1:
            raise ValueError("clahe_tiles must be >= 1")
        if self.clahe_clip < 1.0:
            raise ValueError("clahe_clip must be >= 1.0")
        if self.resize_mode not in ("direct", "letterbox"):
            raise ValueError(f"unknown resize_mode {self.resize_mode!r}")
        if self.clahe_space not in ("lab", "gray"):
            raise ValueError(f"unknown clahe_space {self.clahe_space!r}")


@dataclass(frozen=True)
class BBox:
    """Half-open pixel box: columns ``x0:x1``, rows ``y0:y1``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")

    def to_json(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    if img.dtype not in (np.uint8, np.uint16):
        raise ValueError(f"expected uint8 or uint16 pixels, got {img.dtype}")
    if img.size == 0:
        raise ValueError("empty image")
    return img


def to_uint8(img: np.ndarray) -> np.ndarray:
    img = _check_image(img)
    if img.dtype == np.uint16:
        return (img >> 8).astype(np.uint8)
    return img


def otsu_threshold(img: np.ndarray) -> int:
    """Threshold ``t`` maximizing between-class variance of ``{v <= t}`` vs ``{v > t}``.

    Scores are compared exactly in integer arithmetic; ties go to the smaller
    ``t``. A constant image returns its own value.
    """
    q = to_uint8(img)
    hist = np.bincount(q.ravel(), minlength=256).tolist()
    total = sum(hist)
    total_sum = sum(i * c for i, c in enumerate(hist))
    best_t, best_num, best_den = None, -1, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * total^2 = (total*s0 - n0*S)^2 / (n0*n1)
        num = (total * s0 - n0 * total_sum) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    if best_t is None:
        return int(q.flat[0])
    return best_t


def foreground_bbox(img: np.ndarray, threshold: int) -> BBox:
    mask = to_uint8(img) > threshold
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise EmptyForegroundError(f"empty foreground: no pixel above threshold {threshold}")
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def _bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment and edge clamping."""
    h, w = src.shape
    data = src.astype(np.float64)

    def axis_weights(n_out, n_in):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis_weights(out_h, h)
    x0, x1, wx = axis_weights(out_w, w)
    top = data[y0][:, x0] * (1 - wx) + data[y0][:, x1] * wx
    bottom = data[y1][:, x0] * (1 - wx) + data[y1][:, x1] * wx
    out = top * (1 - wy)[:, None] + bottom * wy[:, None]
    info = np.iinfo(src.dtype)
    return np.clip(np.rint(out), info.min, info.max).astype(src.dtype)


def crop_resize(img: np.ndarray, box: BBox, cfg: PreprocConfig = PreprocConfig()) -> np.ndarray:
    img = _check_image(img)
    h, w = img.shape
    if box.x1 > w or box.y1 > h or box.x0 < 0 or box.y0 < 0:
        raise ValueError(f"{box} outside {w}x{h} image")
    crop = img[box.y0:box.y1, box.x0:box.x1]
    size = cfg.target_size
    if cfg.resize_mode == "direct":
        return _bilinear(crop, size, size)
    ch, cw = crop.shape
    scale = size / max(ch, cw)
    nh, nw = max(1, round(ch * scale)), max(1, round(cw * scale))
    out = np.zeros((size, size), dtype=img.dtype)
    top, left = (size - nh) // 2, (size - nw) // 2
    out[top:top + nh, left:left + nw] = _bilinear(crop, nh, nw)
    return out


def normalize_laterality(img: np.ndarray, side: str | None) -> np.ndarray:
    """Mirror left-side images so every breast faces right."""
    if side == "left":
        return np.ascontiguousarray(img[:, ::-1])
    return img


# --- CLAHE ------------------------------------------------------------------

def _tile_layout(shape, tiles):
    h, w = shape
    if h < tiles or w < tiles:
        raise ValueError(f"image {w}x{h} smaller than the {tiles}x{tiles} tile grid")
    th, tw = -(-h // tiles), -(-w // tiles)
    return th, tw


def _padded(img, tiles):
    th, tw = _tile_layout(img.shape, tiles)
    ph, pw = th * tiles - img.shape[0], tw * tiles - img.shape[1]
    if ph or pw:
        # reflect needs pad < dim; tiles <= dim keeps ph, pw below that
        img = np.pad(img, ((0, ph), (0, pw)), mode="reflect")
    return img, th, tw


def clip_limit_count(cfg: PreprocConfig, tile_pixels: int) -> int:
    return max(1, int(cfg.clahe_clip * tile_pixels / 256))


def clip_histogram(hist: np.ndarray, ceiling: int) -> tuple[np.ndarray, np.ndarray]:
    """Clip at ``ceiling`` and spread the excess uniformly over all 256 bins.

    Returns ``(clipped, redistributed)``; ``clipped`` is the histogram right
    after clipping, before any excess is added back.
    """
    hist = hist.astype(np.int64)
    clipped = np.minimum(hist, ceiling)
    excess = int((hist - clipped).sum())
    out = clipped + excess // 256
    residual = excess % 256
    if residual:
        step = max(256 // residual, 1)
        idx = np.arange(0, 256, step)[:residual]
        out[idx] += 1
    return clipped, out


def clahe_tile_luts(img: np.ndarray, cfg: PreprocConfig = PreprocConfig(), *, instrument=None):
    """Per-tile equalization lookup tables, shape ``(tiles, tiles, 256)``.

    ``instrument``, if given, is called as ``instrument(ty, tx, raw, clipped, ceiling)``
    for every tile.
    """
    q = to_uint8(img)
    tiles = cfg.clahe_tiles
    padded, th, tw = _padded(q, tiles)
    area = th * tw
    ceiling = clip_limit_count(cfg, area)
    luts = np.empty((tiles, tiles, 256), dtype=np.uint8)
    for ty in range(tiles):
        for tx in range(tiles):
            tile = padded[ty * th:(ty + 1) * th, tx * tw:(tx + 1) * tw]
            raw = np.bincount(tile.ravel(), minlength=256)
            clipped, hist = clip_histogram(raw, ceiling)
            if instrument is not None:
                instrument(ty, tx, raw, clipped, ceiling)
            cdf = np.cumsum(hist)
            luts[ty, tx] = np.clip(np.rint(cdf * (255.0 / area)), 0, 255)
    return luts, th, tw


def clahe_gray(img: np.ndarray, cfg: PreprocConfig = PreprocConfig()) -> np.ndarray:
    """CLAHE on raw 8-bit intensities with bilinear blending of tile mappings."""
    q = to_uint8(img)
    tiles = cfg.clahe_tiles
    luts, th, tw = clahe_tile_luts(q, cfg)
    h, w = q.shape

    def coords(n, size):
        f = (np.arange(n) + 0.5) / size - 0.5
        lo = np.floor(f).astype(int)
        frac = f - lo
        return np.clip(lo, 0, tiles - 1), np.clip(lo + 1, 0, tiles - 1), frac

    y1, y2, fy = coords(h, th)
    x1, x2, fx = coords(w, tw)
    v = q.astype(np.intp)
    Y1, X1 = y1[:, None], x1[None, :]
    Y2, X2 = y2[:, None], x2[None, :]
    FY, FX = fy[:, None], fx[None, :]
    top = luts[Y1, X1, v] * (1 - FX) + luts[Y1, X2, v] * FX
    bottom = luts[Y2, X1, v] * (1 - FX) + luts[Y2, X2, v] * FX
    out = top * (1 - FY) + bottom * FY
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


@lru_cache(maxsize=1)
def lab_lightness_tables() -> tuple[np.ndarray, np.ndarray]:
    """``(gray -> L, L -> gray)`` lookup tables for neutral grays.

    A gray pixel's 8-bit LAB lightness depends only on its own value (a and b
    stay at 128), so converting a 256-level ramp once gives exact per-pixel
    tables for the LAB route.
    """
    import cv2

    ramp = np.arange(256, dtype=np.uint8).reshape(16, 16)
    to_l = cv2.cvtColor(cv2.cvtColor(ramp, cv2.COLOR_GRAY2BGR), cv2.COLOR_BGR2LAB)[..., 0]
    lab = np.full((16, 16, 3), 128, dtype=np.uint8)
    lab[..., 0] = ramp
    to_gray = cv2.cvtColor(cv2.cvtColor(lab, cv2.COLOR_LAB2BGR), cv2.COLOR_BGR2GRAY)
    return to_l.ravel().copy(), to_gray.ravel().copy()


def clahe(img: np.ndarray, cfg: PreprocConfig = PreprocConfig()) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization, 8-bit output.

    With ``cfg.clahe_space == "lab"`` the image is equalized on its LAB
    lightness channel via per-level lookup tables (see
    :func:`clahe_lab_opencv` for the full color-space route), otherwise on
    the raw intensities.
    """
    q = to_uint8(img)
    if cfg.clahe_space == "gray":
        return clahe_gray(q, cfg)
    to_l, to_gray = lab_lightness_tables()
    return to_gray[clahe_gray(to_l[q], cfg)]


def clahe_lab_opencv(img: np.ndarray, cfg: PreprocConfig = PreprocConfig()) -> np.ndarray:
    """Reference LAB route: gray -> BGR -> LAB, equalize L, LAB -> BGR -> gray.

    Color conversions use OpenCV; the equalization itself is :func:`clahe_gray`.
    """
    import cv2

    q = to_uint8(img)
    lab = cv2.cvtColor(cv2.cvtColor(q, cv2.COLOR_GRAY2BGR), cv2.COLOR_BGR2LAB)
    lab[..., 0] = clahe_gray(lab[..., 0], cfg)
    return cv2.cvtColor(cv2.cvtColor(lab, cv2.COLOR_LAB2BGR), cv2.COLOR_BGR2GRAY)


@dataclass
class PreprocResult:
    image: np.ndarray
    threshold: int
    bbox: BBox


def preprocess_case(img: np.ndarray, side: str | None,
                    cfg: PreprocConfig = PreprocConfig()) -> PreprocResult:
    """Otsu -> bounding box -> crop/resize -> laterality flip -> CLAHE."""
    img = _check_image(img)
    t = otsu_threshold(img)
    q = to_uint8(img)
    if q.min() == q.max() and q.flat[0] > 0:
        # constant non-black frame: everything counts as foreground
        box = BBox(0, 0, img.shape[1], img.shape[0])
    else:
        box = foreground_bbox(img, t)
    out = crop_resize(img, box, cfg)
    out = normalize_laterality(out, side)
    out = clahe(out, cfg)
    return PreprocResult(out, t, box)
