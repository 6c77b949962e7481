"""Pixel filtering and geometric transforms applied to page and line scans.

Images are plain numpy arrays:

* gray images are ``float64`` arrays of shape ``(H, W)`` with values in [0, 1]
  (0 = black ink, 1 = white paper);
* RGB images are ``(H, W, 3)`` arrays in [0, 1];
* binary images are ``uint8`` arrays in {0, 1} where 1 marks ink.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from rasm.errors import InvalidParameterError, NoContentError

BACKGROUND = 1.0


def _as_gray(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidParameterError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    return arr


# --------------------------------------------------------------------------- I/O

def read_image(path, gray: bool = True) -> np.ndarray:
    """Read a PNG or JPG file into a float image in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
        raise InvalidParameterError(f"unsupported image format: {path.suffix}")
    with Image.open(path) as im:
        if gray and im.mode in ("1", "L", "LA"):
            # single-channel files skip the luminance weights
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return to_grayscale(rgb) if gray else rgb


def write_png(img: np.ndarray, path) -> None:
    """Write a gray (float in [0, 1]) or binary (ink = 1) image as 8-bit PNG."""
    arr = np.asarray(img)
    if arr.dtype == np.uint8 and arr.max(initial=0) <= 1:
        # binary masks are stored as black ink on white
        pixels = np.where(arr == 1, 0, 255).astype(np.uint8)
    else:
        pixels = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(Path(path), format="PNG")


# ---------------------------------------------------------------------- filtering

def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    # half-sample mirror: duplicates the edge pixel, so the first border
    # layer matches edge replication and column sums of the operator stay 1
    padded = np.pad(arr, pad, mode="symmetric")
    out = np.zeros_like(arr)
    n = arr.shape[axis]
    for i, w in enumerate(kernel):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(i, i + n)
        out += w * padded[tuple(sl)]
    return out


def gaussian_smooth(img, sigma: float = 1.0) -> np.ndarray:
    """Convolve with a normalized Gaussian of radius ``ceil(3 * sigma)``."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    arr = _as_gray(img)
    k = gaussian_kernel1d(sigma)
    out = _convolve_axis(_convolve_axis(arr, k, 0), k, 1)
    return np.clip(out, 0.0, 1.0)


def total_variation(img) -> float:
    """Anisotropic total variation: sum of absolute neighbour differences."""
    arr = np.asarray(img, dtype=np.float64)
    return float(np.abs(np.diff(arr, axis=0)).sum() + np.abs(np.diff(arr, axis=1)).sum())


def _smoothed_tv_grad(u: np.ndarray, eps: float) -> np.ndarray:
    dy = np.diff(u, axis=0)
    dx = np.diff(u, axis=1)
    py = dy / np.sqrt(dy * dy + eps * eps)
    px = dx / np.sqrt(dx * dx + eps * eps)
    g = np.zeros_like(u)
    g[:-1, :] -= py
    g[1:, :] += py
    g[:, :-1] -= px
    g[:, 1:] += px
    return g


def tv_denoise(img, strength: float = 0.1, iterations: int = 50, eps: float = 0.05) -> np.ndarray:
    """Projected gradient descent on ``0.5*||u - f||^2 + strength * TV(u)``.

    TV is smoothed by ``eps`` for differentiability. Iterates are clamped to
    [0, 1]; the returned image is the last iterate whose exact total
    variation does not exceed that of the input.
    """
    if strength < 0:
        raise InvalidParameterError(f"strength must be >= 0, got {strength}")
    if iterations < 0:
        raise InvalidParameterError(f"iterations must be >= 0, got {iterations}")
    f = _as_gray(img)
    if strength == 0 or iterations == 0:
        return f.copy()
    tv_in = total_variation(f)
    step = 1.0 / (1.0 + 8.0 * strength / eps)
    u = f.copy()
    best = f.copy()
    for _ in range(iterations):
        u = np.clip(u - step * ((u - f) + strength * _smoothed_tv_grad(u, eps)), 0.0, 1.0)
        if total_variation(u) <= tv_in:
            best = u
    return best.copy()


def to_grayscale(img) -> np.ndarray:
    """Luminance ``0.299 r + 0.587 g + 0.114 b``; 2-D input passes through."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr.copy()
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidParameterError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    gray = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    return np.clip(gray, 0.0, 1.0)


def local_mean(img, window: int) -> np.ndarray:
    """Mean over a ``window x window`` neighbourhood with replicated edges."""
    arr = _as_gray(img)
    r = window // 2
    padded = np.pad(arr, r, mode="edge")
    integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
    integral[1:, 1:] = padded.cumsum(0).cumsum(1)
    h, w = arr.shape
    s = (integral[window:window + h, window:window + w]
         - integral[:h, window:window + w]
         - integral[window:window + h, :w]
         + integral[:h, :w])
    return s / float(window * window)


def binarize_adaptive(img, window: int = 25, offset: float = 0.05) -> np.ndarray:
    """Mark a pixel as ink when it is darker than its local mean minus ``offset``."""
    if window < 3 or window % 2 == 0:
        raise InvalidParameterError(f"window must be odd and >= 3, got {window}")
    if offset < 0:
        raise InvalidParameterError(f"offset must be >= 0, got {offset}")
    arr = _as_gray(img)
    return (arr < local_mean(arr, window) - offset).astype(np.uint8)


# ----------------------------------------------------------------- transforms

def hough_accumulator(binary, max_angle: float = 15.0, step: float = 0.25):
    """Vote every ink pixel into a (candidate angle, rho) accumulator.

    For a candidate angle ``a`` (degrees, counterclockwise positive) a pixel
    at row ``y`` and column ``x`` votes for ``rho = y cos a + x sin a``; a
    text line slanted by ``a`` collapses to a single rho.
    """
    mask = np.asarray(binary)
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise NoContentError("image has no ink pixels")
    n = int(round(2 * max_angle / step)) + 1
    angles = np.linspace(-max_angle, max_angle, n)
    rad = np.deg2rad(angles)
    h, w = mask.shape
    offset = int(math.ceil(w * math.sin(math.radians(max_angle)))) + 1
    n_rho = int(math.ceil(h + w)) + 2 * offset + 1
    acc = np.zeros((n, n_rho), dtype=np.int64)
    for i, a in enumerate(rad):
        rho = np.round(ys * math.cos(a) + xs * math.sin(a)).astype(np.int64) + offset
        acc[i] = np.bincount(rho, minlength=n_rho)[:n_rho]
    return angles, acc


def detect_skew(binary, max_angle: float = 15.0, step: float = 0.25, top: int = 10) -> float:
    """Dominant text-line slant in degrees (positive = counterclockwise).

    The answer is the median candidate angle among the ``top`` strongest
    accumulator cells. Short or sparse content yields many equal cells, so
    ties go to the angle closest to horizontal.
    """
    angles, acc = hough_accumulator(binary, max_angle, step)
    n_angles, n_rho = acc.shape
    flat = acc.ravel()
    tilt = np.repeat(np.abs(angles), n_rho)
    # equal votes: prefer the cell nearer horizontal, then the lower index
    order = np.lexsort((np.arange(flat.size), tilt, -flat))[:top]
    return float(np.median(angles[order // n_rho]))


def rotate(img, angle: float, fill: float = BACKGROUND) -> np.ndarray:
    """Rotate counterclockwise by ``angle`` degrees about the image centre.

    Bilinear sampling, canvas size unchanged, uncovered pixels set to ``fill``.
    """
    arr = _as_gray(img)
    if angle == 0:
        return arr.copy()
    h, w = arr.shape
    rc, cc = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(angle)
    cos_t, sin_t = math.cos(t), math.sin(t)
    rr, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    x = cols - cc
    y_up = rc - rr
    src_x = cos_t * x + sin_t * y_up
    src_y = -sin_t * x + cos_t * y_up
    src_r = rc - src_y
    src_c = cc + src_x
    # absorb trig round-off so quarter turns land exactly on the pixel grid
    for coords in (src_r, src_c):
        near = np.round(coords)
        snap = np.abs(coords - near) < 1e-9
        coords[snap] = near[snap]
    return _bilinear_sample(arr, src_r, src_c, fill)


def _bilinear_sample(arr: np.ndarray, r: np.ndarray, c: np.ndarray, fill: float) -> np.ndarray:
    h, w = arr.shape
    inside = (r >= 0) & (r <= h - 1) & (c >= 0) & (c <= w - 1)
    r0 = np.clip(np.floor(r), 0, h - 1).astype(np.int64)
    c0 = np.clip(np.floor(c), 0, w - 1).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = np.clip(r - r0, 0.0, 1.0)
    fc = np.clip(c - c0, 0.0, 1.0)
    top = arr[r0, c0] * (1 - fc) + arr[r0, c1] * fc
    bottom = arr[r1, c0] * (1 - fc) + arr[r1, c1] * fc
    out = top * (1 - fr) + bottom * fr
    out[~inside] = fill
    return out


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample using pixel-centre alignment (scale 1 is the identity)."""
    arr = _as_gray(img)
    h, w = arr.shape
    if (out_h, out_w) == (h, w):
        return arr.copy()
    r = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    c = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    rr, cc = np.meshgrid(np.clip(r, 0, h - 1), np.clip(c, 0, w - 1), indexing="ij")
    return _bilinear_sample(arr, rr, cc, BACKGROUND)


def resize_distortion_free(img, target_h: int = 64, target_w: int = 800) -> np.ndarray:
    """Scale uniformly to fit the target canvas, anchored top-left, padded white."""
    arr = _as_gray(img)
    h, w = arr.shape
    s = min(target_w / w, target_h / h)
    new_h = min(target_h, max(1, int(round(h * s))))
    new_w = min(target_w, max(1, int(round(w * s))))
    out = np.full((target_h, target_w), BACKGROUND)
    out[:new_h, :new_w] = resize_bilinear(arr, new_h, new_w)
    return np.clip(out, 0.0, 1.0)


def projection_variance(binary) -> float:
    """Variance of the per-row ink counts; peaks sharpen as lines straighten."""
    return float(np.asarray(binary, dtype=np.float64).sum(axis=1).var())
