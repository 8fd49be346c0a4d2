"""SIFT-style scale-space detector and 128-d gradient-histogram descriptor.

This is the non-differentiable branch of the pipeline: it supplies subpixel
keypoints plus a 128-d descriptor (RootSIFT-transformed by default). The
implementation follows the classic difference-of-Gaussians recipe: Gaussian
pyramid, 3x3x3 DoG extrema, iterative quadratic refinement, contrast and
edge rejection, 36-bin orientation histograms and a 4x4x8 trilinearly
interpolated descriptor. Everything is deterministic for a fixed image and
config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import NumericsError, ShapeError
from .image import gaussian_blur

__all__ = [
    "DetectorConfig",
    "Keypoints",
    "ScaleSpace",
    "assign_orientations",
    "build_scale_space",
    "compute_descriptors",
    "describe_at",
    "detect_keypoints",
    "extract_handcrafted",
    "rootsift",
]

# input images are assumed to carry this much blur already
_ASSUMED_BLUR = 0.5
_ORI_BINS = 36
_DESC_CELLS = 4
_DESC_ORI_BINS = 8
_DESC_CLAMP = 0.2
_ORI_SIGMA_FACTOR = 1.5
_ORI_RADIUS_FACTOR = 3.0  # window radius = 3 * sigma_window
_DESC_CELL_WIDTH_FACTOR = 3.0
_PEAK_RATIO = 0.8


@dataclass
class DetectorConfig:
    n_octaves: int = 4
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.04
    edge_threshold: float = 10.0
    upright: bool = False
    max_keypoints: int = 4096
    rootsift: bool = True
    border_margin: int = 8

    def __post_init__(self) -> None:
        if self.n_octaves < 1:
            raise ValueError("n_octaves must be >= 1")
        if self.contrast_threshold <= 0 or self.edge_threshold <= 0:
            raise ValueError("thresholds must be positive")


@dataclass
class Keypoints:
    """Struct-of-arrays keypoint set: subpixel position, scale, angle, response."""

    xy: np.ndarray  # (N, 2) float64, x along width
    sigma: np.ndarray  # (N,)
    orientation: np.ndarray  # (N,) radians in [0, 2pi)
    response: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.xy.shape[0]

    def select(self, idx) -> "Keypoints":
        return Keypoints(
            self.xy[idx], self.sigma[idx], self.orientation[idx], self.response[idx]
        )

    @staticmethod
    def empty() -> "Keypoints":
        return Keypoints(
            np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros(0)
        )

    @staticmethod
    def concatenate(parts: list["Keypoints"]) -> "Keypoints":
        if not parts:
            return Keypoints.empty()
        return Keypoints(
            np.concatenate([p.xy for p in parts]),
            np.concatenate([p.sigma for p in parts]),
            np.concatenate([p.orientation for p in parts]),
            np.concatenate([p.response for p in parts]),
        )


class ScaleSpace:
    """Gaussian + DoG pyramids with lazily cached per-level gradients."""

    def __init__(self, img: np.ndarray, cfg: DetectorConfig):
        if img.ndim != 2:
            raise ShapeError(f"scale space needs a grayscale image, got {img.shape}")
        h, w = img.shape
        if min(h, w) < 32:
            raise ShapeError(f"image too small for scale space: {w}x{h} (min dim 32)")
        self.cfg = cfg
        s = cfg.scales_per_octave
        self.n_octaves = min(cfg.n_octaves, int(math.floor(math.log2(min(h, w) / 16.0))) + 1)
        self.k = 2.0 ** (1.0 / s)
        self.gaussians: list[np.ndarray] = []
        self.dogs: list[np.ndarray] = []
        self._grads: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

        base = img.astype(np.float32)
        sigma0 = math.sqrt(max(cfg.base_sigma**2 - _ASSUMED_BLUR**2, 0.01))
        current = gaussian_blur(base, sigma0)
        for _ in range(self.n_octaves):
            levels = [current]
            for i in range(1, s + 3):
                prev_sigma = cfg.base_sigma * self.k ** (i - 1)
                inc = prev_sigma * math.sqrt(self.k**2 - 1.0)
                levels.append(gaussian_blur(levels[-1], inc))
            stack = np.stack(levels)
            self.gaussians.append(stack)
            self.dogs.append(stack[1:] - stack[:-1])
            current = levels[s][::2, ::2]

    def sigma_at(self, octave: int, level: float) -> float:
        """Blur (in input-image pixels) of a pyramid position."""
        return self.cfg.base_sigma * (2.0**octave) * (self.k**level)

    def locate(self, sigma: float) -> tuple[int, int]:
        """Nearest (octave, level) for a keypoint scale in image pixels."""
        s = self.cfg.scales_per_octave
        level_total = s * math.log2(max(sigma, 1e-6) / self.cfg.base_sigma)
        octave = int(np.clip(math.floor((level_total - 1.0) / s), 0, self.n_octaves - 1))
        level = int(np.clip(round(level_total - octave * s), 0, s + 2))
        return octave, level

    def gradients(self, octave: int, level: int) -> tuple[np.ndarray, np.ndarray]:
        """(magnitude, angle) maps of a Gaussian level; angle in [0, 2pi)."""
        key = (octave, level)
        if key not in self._grads:
            img = self.gaussians[octave][level]
            gx = np.zeros_like(img)
            gy = np.zeros_like(img)
            gx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) * 0.5
            gy[1:-1, :] = (img[2:, :] - img[:-2, :]) * 0.5
            mag = np.sqrt(gx * gx + gy * gy)
            ang = np.mod(np.arctan2(gy, gx), 2.0 * math.pi)
            self._grads[key] = (mag, ang)
        return self._grads[key]


def build_scale_space(img: np.ndarray, cfg: DetectorConfig) -> ScaleSpace:
    return ScaleSpace(img, cfg)


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------

def _strict_extrema_mask(dog: np.ndarray, prefilter: float) -> np.ndarray:
    """Strict 26-neighbor extrema of the (L, H, W) DoG stack."""
    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    neigh_max = ndimage.maximum_filter(dog, footprint=footprint, mode="constant", cval=-np.inf)
    neigh_min = ndimage.minimum_filter(dog, footprint=footprint, mode="constant", cval=np.inf)
    mask = ((dog > neigh_max) | (dog < neigh_min)) & (np.abs(dog) > prefilter)
    mask[0, :, :] = False
    mask[-1, :, :] = False
    mask[:, :1, :] = False
    mask[:, -1:, :] = False
    mask[:, :, :1] = False
    mask[:, :, -1:] = False
    return mask


def _refine_candidates(dog: np.ndarray, cand: np.ndarray, cfg: DetectorConfig):
    """Iterative 3-D quadratic refinement of integer extrema.

    cand is (N, 3) int rows (level, y, x). Returns (kept rows, offsets,
    contrast) after up to 5 re-centering iterations; rows whose offset never
    settles below 0.5 or that drift out of bounds are dropped.
    """
    n_levels, h, w = dog.shape
    pos = cand.astype(np.int64).copy()
    n = pos.shape[0]
    alive = np.ones(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    offsets = np.zeros((n, 3), dtype=np.float64)  # (dx, dy, dl)
    contrast = np.zeros(n, dtype=np.float64)

    for _ in range(5):
        active = alive & ~done
        if not active.any():
            break
        l, y, x = pos[active, 0], pos[active, 1], pos[active, 2]
        d = dog
        dx = (d[l, y, x + 1] - d[l, y, x - 1]) * 0.5
        dy = (d[l, y + 1, x] - d[l, y - 1, x]) * 0.5
        dl = (d[l + 1, y, x] - d[l - 1, y, x]) * 0.5
        dxx = d[l, y, x + 1] + d[l, y, x - 1] - 2 * d[l, y, x]
        dyy = d[l, y + 1, x] + d[l, y - 1, x] - 2 * d[l, y, x]
        dll = d[l + 1, y, x] + d[l - 1, y, x] - 2 * d[l, y, x]
        dxy = (d[l, y + 1, x + 1] - d[l, y + 1, x - 1] - d[l, y - 1, x + 1] + d[l, y - 1, x - 1]) * 0.25
        dxl = (d[l + 1, y, x + 1] - d[l + 1, y, x - 1] - d[l - 1, y, x + 1] + d[l - 1, y, x - 1]) * 0.25
        dyl = (d[l + 1, y + 1, x] - d[l + 1, y - 1, x] - d[l - 1, y + 1, x] + d[l - 1, y - 1, x]) * 0.25

        grad = np.stack([dx, dy, dl], axis=1)
        hess = np.empty((grad.shape[0], 3, 3), dtype=np.float64)
        hess[:, 0, 0] = dxx
        hess[:, 1, 1] = dyy
        hess[:, 2, 2] = dll
        hess[:, 0, 1] = hess[:, 1, 0] = dxy
        hess[:, 0, 2] = hess[:, 2, 0] = dxl
        hess[:, 1, 2] = hess[:, 2, 1] = dyl

        det = np.linalg.det(hess)
        solvable = np.abs(det) > 1e-20
        step = np.zeros_like(grad)
        if solvable.any():
            step[solvable] = -np.linalg.solve(hess[solvable], grad[solvable])

        idx = np.flatnonzero(active)
        alive[idx[~solvable]] = False
        idx = idx[solvable]
        step = step[solvable]
        grad = grad[solvable]

        settled = np.all(np.abs(step) < 0.5, axis=1)
        set_idx = idx[settled]
        done[set_idx] = True
        offsets[set_idx] = step[settled]
        contrast[set_idx] = dog[pos[set_idx, 0], pos[set_idx, 1], pos[set_idx, 2]] + 0.5 * (
            grad[settled] * step[settled]
        ).sum(axis=1)

        move_idx = idx[~settled]
        if move_idx.size:
            delta = np.rint(np.clip(step[~settled], -1, 1)).astype(np.int64)
            pos[move_idx, 2] += delta[:, 0]
            pos[move_idx, 1] += delta[:, 1]
            pos[move_idx, 0] += delta[:, 2]
            in_bounds = (
                (pos[move_idx, 0] >= 1)
                & (pos[move_idx, 0] <= n_levels - 2)
                & (pos[move_idx, 1] >= 1)
                & (pos[move_idx, 1] <= h - 2)
                & (pos[move_idx, 2] >= 1)
                & (pos[move_idx, 2] <= w - 2)
            )
            alive[move_idx[~in_bounds]] = False

    keep = alive & done
    return pos[keep], offsets[keep], contrast[keep]


def detect_keypoints(ss: ScaleSpace, cfg: DetectorConfig) -> Keypoints:
    """Subpixel DoG extrema passing contrast and edge tests, response-sorted."""
    parts: list[Keypoints] = []
    edge_r = cfg.edge_threshold
    edge_limit = (edge_r + 1.0) ** 2 / edge_r
    for octave, dog64 in enumerate(ss.dogs):
        dog = dog64.astype(np.float64)
        mask = _strict_extrema_mask(dog, 0.5 * cfg.contrast_threshold)
        cand = np.argwhere(mask)
        if cand.size == 0:
            continue
        pos, off, contrast = _refine_candidates(dog, cand, cfg)
        if pos.shape[0] == 0:
            continue

        keep = np.abs(contrast) >= cfg.contrast_threshold
        pos, off, contrast = pos[keep], off[keep], contrast[keep]
        if pos.shape[0] == 0:
            continue

        l, y, x = pos[:, 0], pos[:, 1], pos[:, 2]
        dxx = dog[l, y, x + 1] + dog[l, y, x - 1] - 2 * dog[l, y, x]
        dyy = dog[l, y + 1, x] + dog[l, y - 1, x] - 2 * dog[l, y, x]
        dxy = (
            dog[l, y + 1, x + 1]
            - dog[l, y + 1, x - 1]
            - dog[l, y - 1, x + 1]
            + dog[l, y - 1, x - 1]
        ) * 0.25
        tr = dxx + dyy
        det = dxx * dyy - dxy * dxy
        keep = (det > 0) & (tr * tr / np.maximum(det, 1e-30) < edge_limit)
        pos, off, contrast = pos[keep], off[keep], contrast[keep]
        if pos.shape[0] == 0:
            continue

        # collapse candidates that refined into the same cell
        cell_key = (pos[:, 0] * dog.shape[1] + pos[:, 1]) * dog.shape[2] + pos[:, 2]
        _, first = np.unique(cell_key, return_index=True)
        first.sort()
        pos, off, contrast = pos[first], off[first], contrast[first]

        scale = 2.0**octave
        xs = (pos[:, 2] + off[:, 0]) * scale
        ys = (pos[:, 1] + off[:, 1]) * scale
        sigmas = np.array(
            [ss.sigma_at(octave, levf) for levf in pos[:, 0] + off[:, 2]]
        )
        parts.append(
            Keypoints(
                np.stack([xs, ys], axis=1),
                sigmas,
                np.zeros(xs.shape[0]),
                np.abs(contrast),
            )
        )

    kps = Keypoints.concatenate(parts)
    if len(kps) == 0:
        return kps
    h_img = ss.gaussians[0].shape[1]
    w_img = ss.gaussians[0].shape[2]
    inside = (
        (kps.xy[:, 0] >= 0)
        & (kps.xy[:, 0] < w_img)
        & (kps.xy[:, 1] >= 0)
        & (kps.xy[:, 1] < h_img)
    )
    kps = kps.select(inside)
    order = np.lexsort((kps.xy[:, 0], kps.xy[:, 1], -kps.response))
    return kps.select(order)


# ---------------------------------------------------------------------------
# orientation assignment
# ---------------------------------------------------------------------------

def _orientation_histogram(
    ss: ScaleSpace, octave: int, level: int, x_oct: float, y_oct: float, sigma_oct: float
) -> np.ndarray | None:
    """36-bin Gaussian-weighted gradient histogram, or None if the window
    does not fit inside the level with the required margin."""
    mag, ang = ss.gradients(octave, level)
    h, w = mag.shape
    sigma_w = _ORI_SIGMA_FACTOR * sigma_oct
    radius = int(round(_ORI_RADIUS_FACTOR * sigma_w))
    xi, yi = int(round(x_oct)), int(round(y_oct))
    if radius < 1 or xi - radius < 1 or xi + radius > w - 2 or yi - radius < 1 or yi + radius > h - 2:
        return None
    ys = slice(yi - radius, yi + radius + 1)
    xs = slice(xi - radius, xi + radius + 1)
    gy, gx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    weight = np.exp(-(gx * gx + gy * gy) / (2.0 * sigma_w * sigma_w))
    votes = (mag[ys, xs] * weight).ravel()
    theta = ang[ys, xs].ravel()

    # soft binning: each vote is split between the two nearest bin centers
    pos = theta * (_ORI_BINS / (2.0 * math.pi)) - 0.5
    b0 = np.floor(pos).astype(np.int64)
    frac = pos - b0
    hist = np.zeros(_ORI_BINS)
    np.add.at(hist, b0 % _ORI_BINS, votes * (1.0 - frac))
    np.add.at(hist, (b0 + 1) % _ORI_BINS, votes * frac)

    # circular smoothing, one pass of the standard 1-4-6-4-1 kernel
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    padded = np.concatenate([hist[-2:], hist, hist[:2]])
    return np.convolve(padded, kernel, mode="valid")


def _histogram_peaks(hist: np.ndarray, peak_ratio: float = _PEAK_RATIO) -> list[float]:
    """Interpolated angles (radians) of local peaks >= peak_ratio * max."""
    top = hist.max()
    if top <= 0:
        return []
    left = np.roll(hist, 1)
    right = np.roll(hist, -1)
    peak_bins = np.flatnonzero((hist > left) & (hist > right) & (hist >= peak_ratio * top))
    angles = []
    for b in peak_bins:
        lv, cv, rv = left[b], hist[b], right[b]
        denom = lv - 2.0 * cv + rv
        shift = 0.0 if denom == 0 else 0.5 * (lv - rv) / denom
        angle = (b + 0.5 + shift) * (2.0 * math.pi / _ORI_BINS)
        angles.append(angle % (2.0 * math.pi))
    return angles


def assign_orientations(ss: ScaleSpace, kps: Keypoints, cfg: DetectorConfig) -> Keypoints:
    """Expand keypoints with dominant gradient orientations.

    Upright mode passes every keypoint through with orientation 0. Otherwise
    each histogram peak at >= 80% of the maximum yields one oriented copy;
    keypoints whose window leaves the image are dropped.
    """
    if cfg.upright or len(kps) == 0:
        return replace(kps, orientation=np.zeros(len(kps)))
    parts: list[Keypoints] = []
    for i in range(len(kps)):
        octave, level = ss.locate(kps.sigma[i])
        scale = 2.0**octave
        sigma_oct = kps.sigma[i] / scale
        hist = _orientation_histogram(
            ss, octave, level, kps.xy[i, 0] / scale, kps.xy[i, 1] / scale, sigma_oct
        )
        if hist is None:
            continue
        angles = _histogram_peaks(hist)
        if not angles:
            continue
        m = len(angles)
        parts.append(
            Keypoints(
                np.repeat(kps.xy[i : i + 1], m, axis=0),
                np.repeat(kps.sigma[i : i + 1], m),
                np.asarray(angles),
                np.repeat(kps.response[i : i + 1], m),
            )
        )
    return Keypoints.concatenate(parts)


# ---------------------------------------------------------------------------
# descriptor
# ---------------------------------------------------------------------------

def _raw_descriptor(
    ss: ScaleSpace,
    octave: int,
    level: int,
    x_oct: float,
    y_oct: float,
    sigma_oct: float,
    orientation: float,
) -> np.ndarray | None:
    """Unnormalized 4x4x8 gradient histogram, or None if the window is
    entirely outside the level."""
    mag, ang = ss.gradients(octave, level)
    h, w = mag.shape
    cell_width = _DESC_CELL_WIDTH_FACTOR * sigma_oct
    radius = int(round(cell_width * (_DESC_CELLS + 1) * math.sqrt(2) / 2.0))
    radius = min(radius, int(math.sqrt(h * h + w * w)))
    xi, yi = int(round(x_oct)), int(round(y_oct))
    if xi + radius < 1 or xi - radius > w - 2 or yi + radius < 1 or yi - radius > h - 2:
        return None

    y_lo, y_hi = max(yi - radius, 1), min(yi + radius, h - 2)
    x_lo, x_hi = max(xi - radius, 1), min(xi + radius, w - 2)
    if y_lo > y_hi or x_lo > x_hi:
        return None
    gy, gx = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
    dx = (gx - x_oct).ravel()
    dy = (gy - y_oct).ravel()

    c, s = math.cos(orientation), math.sin(orientation)
    rx = (c * dx + s * dy) / cell_width
    ry = (-s * dx + c * dy) / cell_width
    rbin = ry + (_DESC_CELLS - 1) / 2.0
    cbin = rx + (_DESC_CELLS - 1) / 2.0

    inside = (rbin > -1) & (rbin < _DESC_CELLS) & (cbin > -1) & (cbin < _DESC_CELLS)
    if not inside.any():
        return None
    rbin, cbin = rbin[inside], cbin[inside]
    votes = mag[y_lo : y_hi + 1, x_lo : x_hi + 1].ravel()[inside]
    theta = ang[y_lo : y_hi + 1, x_lo : x_hi + 1].ravel()[inside]
    weight = np.exp(-(rx[inside] ** 2 + ry[inside] ** 2) / (2.0 * (_DESC_CELLS / 2.0) ** 2))
    votes = votes * weight
    obin = ((theta - orientation) % (2.0 * math.pi)) * (_DESC_ORI_BINS / (2.0 * math.pi))

    # trilinear scatter into a padded (6, 6, 8) grid, border cells discarded
    hist = np.zeros((_DESC_CELLS + 2, _DESC_CELLS + 2, _DESC_ORI_BINS))
    r0 = np.floor(rbin).astype(np.int64)
    c0 = np.floor(cbin).astype(np.int64)
    o0 = np.floor(obin).astype(np.int64)
    fr = rbin - r0
    fc = cbin - c0
    fo = obin - o0
    for dr in (0, 1):
        wr = votes * (fr if dr else 1.0 - fr)
        for dc in (0, 1):
            wc = wr * (fc if dc else 1.0 - fc)
            for do in (0, 1):
                wo = wc * (fo if do else 1.0 - fo)
                np.add.at(
                    hist,
                    (r0 + dr + 1, c0 + dc + 1, (o0 + do) % _DESC_ORI_BINS),
                    wo,
                )
    return hist[1:-1, 1:-1, :].ravel()


def _finalize_descriptor(raw: np.ndarray) -> np.ndarray | None:
    """L2-normalize, clamp at 0.2, renormalize; None for a degenerate patch."""
    norm = np.linalg.norm(raw)
    if norm < 1e-10:
        return None
    d = np.minimum(raw / norm, _DESC_CLAMP)
    norm = np.linalg.norm(d)
    if norm < 1e-10:
        return None
    return (d / norm).astype(np.float32)


def compute_descriptors(
    ss: ScaleSpace, kps: Keypoints, cfg: DetectorConfig
) -> tuple[Keypoints, np.ndarray]:
    """Descriptors for oriented keypoints; degenerate/outside ones dropped."""
    kept: list[int] = []
    descs: list[np.ndarray] = []
    for i in range(len(kps)):
        octave, level = ss.locate(kps.sigma[i])
        scale = 2.0**octave
        raw = _raw_descriptor(
            ss,
            octave,
            level,
            kps.xy[i, 0] / scale,
            kps.xy[i, 1] / scale,
            kps.sigma[i] / scale,
            kps.orientation[i],
        )
        if raw is None:
            continue
        d = _finalize_descriptor(raw)
        if d is None:
            continue
        kept.append(i)
        descs.append(d)
    if not kept:
        return Keypoints.empty(), np.zeros((0, _DESC_CELLS**2 * _DESC_ORI_BINS), np.float32)
    return kps.select(np.asarray(kept)), np.stack(descs)


def rootsift(desc: np.ndarray) -> np.ndarray:
    """L1-normalize then take the elementwise square root (unit L2 output)."""
    d = np.asarray(desc, dtype=np.float64)
    single = d.ndim == 1
    if single:
        d = d[None, :]
    if (d < 0).any():
        raise ValueError("rootsift requires non-negative descriptor entries")
    l1 = d.sum(axis=1, keepdims=True)
    if (l1 <= 0).any():
        raise NumericsError("rootsift: zero descriptor")
    out = np.sqrt(d / l1).astype(np.float32)
    return out[0] if single else out


def _drop_near_border(kps: Keypoints, width: int, height: int, margin: int) -> np.ndarray:
    return (
        (kps.xy[:, 0] >= margin)
        & (kps.xy[:, 0] < width - margin)
        & (kps.xy[:, 1] >= margin)
        & (kps.xy[:, 1] < height - margin)
    )


def extract_handcrafted(
    img_gray: np.ndarray, cfg: DetectorConfig, scale_space: ScaleSpace | None = None
) -> tuple[Keypoints, np.ndarray]:
    """Full pipeline: scale space, detect, orient, describe, RootSIFT, top-K.

    Returns (keypoints, descriptors) with descriptors (N, 128) float32,
    keypoints sorted by response descending and truncated to max_keypoints.
    """
    ss = scale_space if scale_space is not None else build_scale_space(img_gray, cfg)
    kps = detect_keypoints(ss, cfg)
    if len(kps):
        h, w = img_gray.shape
        kps = kps.select(_drop_near_border(kps, w, h, cfg.border_margin))
    kps = assign_orientations(ss, kps, cfg)
    kps, desc = compute_descriptors(ss, kps, cfg)
    if len(kps) == 0:
        return kps, desc
    if cfg.rootsift:
        desc = rootsift(desc)
    order = np.lexsort((kps.xy[:, 0], kps.xy[:, 1], -kps.response))
    order = order[: cfg.max_keypoints]
    return kps.select(order), desc[order]


def describe_at(
    img_or_ss: np.ndarray | ScaleSpace,
    xy: np.ndarray,
    sigma: np.ndarray,
    cfg: DetectorConfig,
    orientation: np.ndarray | None = None,
) -> tuple[np.ndarray, Keypoints, np.ndarray]:
    """Describe arbitrary (x, y, sigma) locations of an image.

    Used by training to obtain the handcrafted descriptor at mapped
    correspondence points. When `orientation` is None and the config is not
    upright, the dominant histogram orientation is assigned (exactly one per
    point, preserving 1:1 correspondence). Returns (kept_indices, keypoints,
    descriptors); points whose orientation or descriptor window fails are
    dropped.
    """
    ss = img_or_ss if isinstance(img_or_ss, ScaleSpace) else build_scale_space(img_or_ss, cfg)
    xy = np.asarray(xy, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    n = xy.shape[0]
    kept: list[int] = []
    descs: list[np.ndarray] = []
    angles = np.zeros(n)
    for i in range(n):
        octave, level = ss.locate(sigma[i])
        scale = 2.0**octave
        x_oct, y_oct = xy[i, 0] / scale, xy[i, 1] / scale
        sigma_oct = sigma[i] / scale
        if orientation is not None:
            theta = float(orientation[i])
        elif cfg.upright:
            theta = 0.0
        else:
            hist = _orientation_histogram(ss, octave, level, x_oct, y_oct, sigma_oct)
            if hist is None:
                continue
            peaks = _histogram_peaks(hist)
            if not peaks:
                continue
            theta = peaks[0]
        raw = _raw_descriptor(ss, octave, level, x_oct, y_oct, sigma_oct, theta)
        if raw is None:
            continue
        d = _finalize_descriptor(raw)
        if d is None:
            continue
        angles[i] = theta
        kept.append(i)
        descs.append(d)
    if not kept:
        return np.zeros(0, np.int64), Keypoints.empty(), np.zeros((0, 128), np.float32)
    kept_arr = np.asarray(kept)
    desc = np.stack(descs)
    if cfg.rootsift:
        desc = rootsift(desc)
    kps = Keypoints(xy[kept_arr], sigma[kept_arr], angles[kept_arr], np.zeros(len(kept_arr)))
    return kept_arr, kps, desc
