"""Image values, Gaussian smoothing, homography geometry and augmentations.

Images are float32 numpy arrays with values in [0, 1]: grayscale is (H, W),
RGB is (H, W, 3). Homographies are 3x3 float64 arrays normalized so the
bottom-right entry is 1. All randomized operations take an explicit
`numpy.random.Generator`, so results are pure functions of (input, config,
seed).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage
from scipy import ndimage

from .errors import DataError, FormatError, NumericsError, ShapeError

__all__ = [
    "AugmentConfig",
    "apply_homography",
    "gaussian_blur",
    "homography_inverse",
    "load_homography_text",
    "load_image_rgb",
    "normalize_homography",
    "photometric_augment",
    "resize_bilinear",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "sample_random_homography",
    "save_homography_text",
    "save_image",
    "to_gray",
    "transform_points",
    "warp_image",
]


@dataclass
class AugmentConfig:
    """Photometric and homography sampling ranges for training pairs.

    The homography is composed as center^-1 * perspective * rotation *
    scale * translation * center. Scale is drawn from
    [2 - max_scale_factor, max_scale_factor], rotation from
    [-max_rotation, max_rotation] radians, translation from at most
    max_translation of each image dimension, and the two perspective
    coefficients from [-max_perspective, max_perspective] per pixel.
    """

    noise_sigma: float = 0.02
    brightness_delta: float = 0.2
    contrast_range: tuple[float, float] = (0.7, 1.3)
    saturation_range: tuple[float, float] = (0.7, 1.3)
    hue_delta: float = 0.1
    max_scale_factor: float = 1.2
    max_rotation: float = math.radians(25.0)
    max_translation: float = 0.1
    max_perspective: float = 0.001
    min_frame_coverage: float = 0.25


def _check_image(img: np.ndarray, what: str) -> np.ndarray:
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ShapeError(f"{what}: expected (H, W) or (H, W, 3), got {img.shape}")
    return img


def to_gray(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an (H, W, 3) image, clamped to [0, 1]."""
    _check_image(img, "to_gray")
    if img.ndim == 2:
        return img
    luma = img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    return np.clip(luma, 0.0, 1.0).astype(np.float32)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(4*sigma), reflected border."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(math.ceil(4.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    out = ndimage.correlate1d(img.astype(np.float32), kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# homographies
# ---------------------------------------------------------------------------

def normalize_homography(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ShapeError(f"homography must be 3x3, got {h.shape}")
    if abs(np.linalg.det(h)) <= 1e-12:
        raise NumericsError("homography is singular")
    if h[2, 2] != 0:
        h = h / h[2, 2]
    return h


def homography_inverse(h: np.ndarray) -> np.ndarray:
    return normalize_homography(np.linalg.inv(normalize_homography(h)))


def transform_points(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Map (N, 2) points through a homography."""
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    q = ph @ np.asarray(h, dtype=np.float64).T
    w = q[:, 2]
    if np.any(np.abs(w) <= 1e-12):
        raise NumericsError("point maps to infinity under homography")
    return q[:, :2] / w[:, None]


def apply_homography(h: np.ndarray, p: tuple[float, float]) -> tuple[float, float]:
    """Map a single (x, y) point; raises if it lands at infinity."""
    out = transform_points(h, np.asarray([p], dtype=np.float64))[0]
    return float(out[0]), float(out[1])


def _bilinear_gather(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample `img` at float coords (sy, sx); callers guarantee in-bounds."""
    h, w = img.shape[:2]
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, w - 2) if w > 1 else np.zeros_like(sx, np.int64)
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, h - 2) if h > 1 else np.zeros_like(sy, np.int64)
    fx = (sx - x0).astype(np.float32)
    fy = (sy - y0).astype(np.float32)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    return (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x0] * fy * (1 - fx)
        + img[y1, x1] * fy * fx
    ).astype(np.float32)


def warp_image(img: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Warp so that output(H p) = input(p); returns (warped, valid_mask).

    Inverse mapping with bilinear sampling; destination pixels whose source
    falls outside the input are 0 and masked invalid.
    """
    _check_image(img, "warp_image")
    hh = normalize_homography(h)
    hinv = np.linalg.inv(hh)
    height, width = img.shape[:2]
    ys, xs = np.mgrid[0:height, 0:width]
    ph = np.stack([xs, ys, np.ones_like(xs)], axis=-1).reshape(-1, 3).astype(np.float64)
    q = ph @ hinv.T
    w = q[:, 2]
    bad_w = np.abs(w) <= 1e-12
    w = np.where(bad_w, 1.0, w)
    sx = (q[:, 0] / w).reshape(height, width)
    sy = (q[:, 1] / w).reshape(height, width)
    valid = (
        (sx >= 0) & (sx <= width - 1) & (sy >= 0) & (sy <= height - 1)
        & ~bad_w.reshape(height, width)
    )
    sxc = np.clip(sx, 0, width - 1)
    syc = np.clip(sy, 0, height - 1)
    out = _bilinear_gather(img, sxc, syc)
    if img.ndim == 3:
        out[~valid] = 0.0
    else:
        out = np.where(valid, out, 0.0).astype(np.float32)
    return out, valid


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize using the pixel-center convention.

    Destination pixel centers map to source via
    x_src = (x_dst + 0.5) * (W_src / W_dst) - 0.5, clamped to the frame.
    """
    _check_image(img, "resize_bilinear")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.astype(np.float32)
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sy, sx = np.meshgrid(np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1), indexing="ij")
    return _bilinear_gather(img, sx, sy)


def _frame_coverage(h: np.ndarray, width: int, height: int, grid: int = 20) -> float:
    xs = np.linspace(0.5, width - 0.5, grid)
    ys = np.linspace(0.5, height - 0.5, grid)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    try:
        mapped = transform_points(h, pts)
    except NumericsError:
        return 0.0
    inside = (
        (mapped[:, 0] >= 0)
        & (mapped[:, 0] <= width - 1)
        & (mapped[:, 1] >= 0)
        & (mapped[:, 1] <= height - 1)
    )
    return float(inside.mean())


def sample_random_homography(
    cfg: AugmentConfig, rng: np.random.Generator, width: int, height: int
) -> np.ndarray:
    """Draw a random in-frame homography; retries the coverage check 100x."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    uncenter = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    scale_lo = 2.0 - cfg.max_scale_factor
    for _ in range(100):
        s = rng.uniform(scale_lo, cfg.max_scale_factor)
        theta = rng.uniform(-cfg.max_rotation, cfg.max_rotation)
        tx = rng.uniform(-cfg.max_translation, cfg.max_translation) * width
        ty = rng.uniform(-cfg.max_translation, cfg.max_translation) * height
        p1 = rng.uniform(-cfg.max_perspective, cfg.max_perspective)
        p2 = rng.uniform(-cfg.max_perspective, cfg.max_perspective)
        translation = np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=np.float64)
        scale = np.diag([s, s, 1.0])
        c, sn = math.cos(theta), math.sin(theta)
        rotation = np.array([[c, -sn, 0], [sn, c, 0], [0, 0, 1]], dtype=np.float64)
        perspective = np.array([[1, 0, 0], [0, 1, 0], [p1, p2, 1]], dtype=np.float64)
        h = uncenter @ perspective @ rotation @ scale @ translation @ center
        try:
            h = normalize_homography(h)
        except NumericsError:
            continue
        if _frame_coverage(h, width, height) >= cfg.min_frame_coverage:
            return h
    raise ValueError(
        "failed to sample a homography meeting the frame-coverage constraint"
    )


# ---------------------------------------------------------------------------
# photometric augmentation
# ---------------------------------------------------------------------------

def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV with all channels in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    c = maxc - minc
    s = np.where(maxc > 0, c / np.maximum(maxc, 1e-12), 0.0)
    safe_c = np.maximum(c, 1e-12)
    hr = ((g - b) / safe_c) % 6.0
    hg = (b - r) / safe_c + 2.0
    hb = (r - g) / safe_c + 4.0
    h = np.where(maxc == r, hr, np.where(maxc == g, hg, hb))
    h = np.where(c > 0, h / 6.0, 0.0)
    return np.stack([h, s, v], axis=-1).astype(np.float32)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB, channels in [0, 1]."""
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1).astype(np.float32)


def photometric_augment(
    img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Brightness, contrast, saturation, hue rotation, then Gaussian noise.

    Applied in that fixed order; the result is clamped to [0, 1].
    """
    _check_image(img, "photometric_augment")
    if img.ndim != 3:
        raise ShapeError("photometric_augment expects an RGB image")
    out = img.astype(np.float32)

    delta = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)
    out = out + delta

    contrast = rng.uniform(*cfg.contrast_range)
    mean = out.mean()
    out = (out - mean) * contrast + mean

    saturation = rng.uniform(*cfg.saturation_range)
    luma = to_gray(np.clip(out, 0.0, 1.0))[..., None]
    out = luma + saturation * (out - luma)

    hue_shift = rng.uniform(-cfg.hue_delta, cfg.hue_delta)
    if hue_shift != 0.0:
        hsv = rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + hue_shift / (2.0 * math.pi)) % 1.0
        out = hsv_to_rgb(hsv)

    if cfg.noise_sigma > 0:
        out = out + rng.normal(0.0, cfg.noise_sigma, size=out.shape)

    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# file I/O: PNG / PPM (P6) images, HPatches-style homography text files
# ---------------------------------------------------------------------------

def _read_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    # header: "P6" whitespace width whitespace height whitespace maxval single-ws
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n)*\s*(\S+)").match(data, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PPM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a P6 PPM file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    if pixels.size != width * height * 3:
        raise FormatError(f"{path}: truncated PPM pixel data")
    return pixels.reshape(height, width, 3)


def load_image_rgb(path: str | Path) -> np.ndarray:
    """Load an 8-bit PNG or PPM (P6) as float32 RGB in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    if path.suffix.lower() == ".ppm":
        arr = _read_ppm(path)
    else:
        try:
            with _PILImage.open(path) as im:
                arr = np.asarray(im.convert("RGB"))
        except Exception as exc:
            raise FormatError(f"{path}: cannot decode image: {exc}") from exc
    return (arr.astype(np.float32) / 255.0).clip(0.0, 1.0)


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Save [0, 1] float gray/RGB as 8-bit PNG or PPM, rounding to nearest."""
    path = Path(path)
    _check_image(img, "save_image")
    byte_img = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if path.suffix.lower() == ".ppm":
        if byte_img.ndim == 2:
            byte_img = np.repeat(byte_img[..., None], 3, axis=-1)
        h, w = byte_img.shape[:2]
        path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + byte_img.tobytes())
    elif byte_img.ndim == 2:
        _PILImage.fromarray(byte_img, mode="L").save(path, format="PNG")
    else:
        _PILImage.fromarray(byte_img, mode="RGB").save(path, format="PNG")


def load_homography_text(path: str | Path) -> np.ndarray:
    """Read a 3x3 homography stored as 3 lines of 3 decimals (HPatches H_1_k)."""
    try:
        values = [float(tok) for tok in Path(path).read_text().split()]
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: cannot parse homography: {exc}") from exc
    if len(values) != 9:
        raise FormatError(f"{path}: expected 9 numbers, got {len(values)}")
    return normalize_homography(np.asarray(values, dtype=np.float64).reshape(3, 3))


def save_homography_text(path: str | Path, h: np.ndarray) -> None:
    h = normalize_homography(h)
    lines = [" ".join(repr(float(v)) for v in row) for row in h]
    Path(path).write_text("\n".join(lines) + "\n")
