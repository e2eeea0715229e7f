"""Segmentation of grayscale frames into labeled objects.

The pipeline is non-local means denoising, a global Otsu threshold and
4-connected component labeling. Rasters are plain 2-D numpy arrays in
row-major ``(row, col)`` order wrapped in small dataclasses that carry the
physical pixel pitch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogramError, InvalidInputError

DEFAULT_PITCH_UM = 15.0
N_BINS = 256


@dataclass
class GrayImage:
    pixels: np.ndarray
    pixel_pitch: float = DEFAULT_PITCH_UM

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise InvalidInputError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 255.0:
            raise InvalidInputError("intensities must lie in [0, 255]")
        if not self.pixel_pitch > 0:
            raise InvalidInputError("pixel_pitch must be positive")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise InvalidInputError("mask must be 2-D")

    @property
    def shape(self):
        return self.bits.shape


@dataclass
class LabelMap:
    labels: np.ndarray
    object_count: int

    @property
    def shape(self):
        return self.labels.shape


@dataclass
class ObjectRegion:
    """One connected object.

    ``pixels`` is an ``(n, 2)`` integer array of ``(row, col)`` coordinates in
    raster order.
    """

    label: int
    pixels: np.ndarray
    bounding_box: tuple[int, int, int, int]
    source: GrayImage | None = field(default=None, repr=False)
    touches_border: bool = False
    pixel_pitch: float = DEFAULT_PITCH_UM

    @classmethod
    def from_pixels(cls, pixels, source=None, label=1, pixel_pitch=None, frame_shape=None):
        """Build a region from a coordinate list (convenience for tests and tools)."""
        px = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        if len(px) == 0:
            raise InvalidInputError("region must contain at least one pixel")
        order = np.lexsort((px[:, 1], px[:, 0]))
        px = px[order]
        r0, c0 = px.min(axis=0)
        r1, c1 = px.max(axis=0)
        if pixel_pitch is None:
            pixel_pitch = source.pixel_pitch if source is not None else DEFAULT_PITCH_UM
        touches = False
        shape = frame_shape or (source.pixels.shape if source is not None else None)
        if shape is not None:
            touches = bool(r0 == 0 or c0 == 0 or r1 == shape[0] - 1 or c1 == shape[1] - 1)
        return cls(int(label), px, (int(r0), int(c0), int(r1), int(c1)), source, touches,
                   float(pixel_pitch))

    @property
    def area_px(self) -> int:
        return len(self.pixels)

    def crop(self, pad: int = 0) -> tuple[np.ndarray, tuple[int, int]]:
        """Boolean mask of the bounding box grown by ``pad`` and its origin."""
        r0, c0, r1, c1 = self.bounding_box
        mask = np.zeros((r1 - r0 + 1 + 2 * pad, c1 - c0 + 1 + 2 * pad), dtype=bool)
        mask[self.pixels[:, 0] - r0 + pad, self.pixels[:, 1] - c0 + pad] = True
        return mask, (r0 - pad, c0 - pad)

    def intensities(self) -> np.ndarray:
        if self.source is None:
            raise InvalidInputError("region has no source image")
        return self.source.pixels[self.pixels[:, 0], self.pixels[:, 1]]


# ---------------------------------------------------------------- denoising

@numba.njit(cache=True)
def _nlmeans_kernel(img, inv_strength, search_radius, patch_radius):
    # Every offset pair (z, -z) shares one patch distance, so only half of the
    # search window is visited and each weight is applied in both directions.
    # Patch sums run over offsets valid for both pixels: a zero-padded sliding
    # box sum over the overlap of the frame with its shifted copy.
    H, W = img.shape
    P = patch_radius
    num = img.copy()
    den = np.ones_like(img)
    col = np.zeros(W)
    for dy in range(0, search_radius + 1):
        if dy >= H:
            break
        for dx in range(-search_radius, search_radius + 1):
            if (dy == 0 and dx <= 0) or abs(dx) >= W:
                continue
            h = H - dy
            x0 = max(0, -dx)
            w = min(W, W - dx) - x0
            for j in range(w):
                s = 0.0
                for r in range(0, min(P, h - 1) + 1):
                    d = img[r, x0 + j] - img[r + dy, x0 + dx + j]
                    s += d * d
                col[j] = s
            for i in range(h):
                if i > 0:
                    ra = i + P
                    rs = i - P - 1
                    if ra < h:
                        for j in range(w):
                            d = img[ra, x0 + j] - img[ra + dy, x0 + dx + j]
                            col[j] += d * d
                    if rs >= 0:
                        for j in range(w):
                            d = img[rs, x0 + j] - img[rs + dy, x0 + dx + j]
                            col[j] -= d * d
                s = 0.0
                for j in range(min(P, w - 1) + 1):
                    s += col[j]
                for j in range(w):
                    if j > 0:
                        if j + P < w:
                            s += col[j + P]
                        if j - P - 1 >= 0:
                            s -= col[j - P - 1]
                    e = inv_strength * max(s, 0.0)
                    # exp underflows to exactly 0.0 beyond this point
                    if e > 746.0:
                        continue
                    wg = np.exp(-e)
                    a = img[i, x0 + j]
                    b = img[i + dy, x0 + dx + j]
                    num[i, x0 + j] += wg * b
                    den[i, x0 + j] += wg
                    num[i + dy, x0 + dx + j] += wg * a
                    den[i + dy, x0 + dx + j] += wg
    return num / den


def nlmeans_denoise(img: GrayImage, strength: float = 100.0, search_radius: int = 21,
                    patch_radius: int = 5) -> GrayImage:
    """Non-local means filter with exponential patch-distance weights.

    Each output pixel is the weighted mean of all pixels within
    ``search_radius`` (max-norm), weighted by
    ``exp(-ssd / strength)`` where ``ssd`` is the summed squared difference of
    the two ``(2*patch_radius+1)``-square patches, restricted to offsets that
    stay inside the frame for both pixels. No padding is applied.
    """
    if not strength > 0:
        raise InvalidInputError("strength must be positive")
    if not (search_radius >= patch_radius >= 0):
        raise InvalidInputError("need search_radius >= patch_radius >= 0")
    out = _nlmeans_kernel(np.ascontiguousarray(img.pixels, dtype=np.float64),
                          1.0 / float(strength), int(search_radius), int(patch_radius))
    # convex combination of inputs; clip only guards last-ulp rounding
    np.clip(out, img.pixels.min(), img.pixels.max(), out=out)
    return GrayImage(out, img.pixel_pitch)


# -------------------------------------------------------------- thresholding

def intensity_histogram(pixels: np.ndarray) -> np.ndarray:
    """256 equal-width bins over [0, 255]; 8-bit values map one-to-one to bins."""
    v = np.asarray(pixels, dtype=np.float64).ravel()
    idx = np.floor(v * (N_BINS / 255.0)).astype(np.int64)
    np.clip(idx, 0, N_BINS - 1, out=idx)
    return np.bincount(idx, minlength=N_BINS)


def otsu_bin(hist) -> int:
    """Last background bin ``k`` maximizing the between-class variance.

    Classes are bins ``0..k`` and ``k+1..255``; bin indices serve as the class
    values (the argmax is invariant to the affine map onto intensities).
    Comparison is exact integer arithmetic so ties resolve to the smallest k.
    """
    hist = [int(h) for h in np.asarray(hist).ravel()]
    if sum(1 for h in hist if h > 0) < 2:
        raise DegenerateHistogramError("histogram has fewer than two occupied bins")
    n = sum(hist)
    total = sum(i * h for i, h in enumerate(hist))
    n0 = s0 = 0
    best_k, best_num, best_den = -1, -1, 1
    for k in range(len(hist) - 1):
        n0 += hist[k]
        s0 += k * hist[k]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * n^2 = (n*s0 - n0*total)^2 / (n0*n1)
        num = (n * s0 - n0 * total) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return best_k


def bin_upper_edge(k: int) -> float:
    return (k + 1) * 255.0 / N_BINS


def otsu_threshold(img: GrayImage) -> float:
    """Global threshold: the upper edge of the last background bin."""
    return bin_upper_edge(otsu_bin(intensity_histogram(img.pixels)))


def binarize(img: GrayImage, eta: float, polarity: str = "bright") -> BinaryMask:
    """Foreground is ``I >= eta`` (bright objects) or ``I < eta`` (dark objects)."""
    if polarity == "bright":
        return BinaryMask(img.pixels >= eta)
    if polarity == "dark":
        return BinaryMask(img.pixels < eta)
    raise InvalidInputError(f"unknown polarity {polarity!r}")


# ------------------------------------------------------------------ labeling

_FOUR = ndimage.generate_binary_structure(2, 1)


def label_components(mask: BinaryMask) -> LabelMap:
    """4-connected components labeled 1..n in first-encounter raster order."""
    raw, n = ndimage.label(mask.bits, structure=_FOUR)
    if n == 0:
        return LabelMap(raw.astype(np.int64), 0)
    flat = raw.ravel()
    fg = np.flatnonzero(flat)
    _, first = np.unique(flat[fg], return_index=True)
    # rank components by position of their first pixel
    order = np.argsort(fg[first])
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[order + 1] = np.arange(1, n + 1)
    return LabelMap(remap[raw], int(n))


def extract_regions(lmap: LabelMap, img: GrayImage, min_area: int = 5,
                    exclude_border: bool = False) -> list[ObjectRegion]:
    """One region per label with at least ``min_area`` pixels, sorted by label.

    Regions touching the frame are flagged; they are dropped only when
    ``exclude_border`` is set.
    """
    if lmap.shape != img.pixels.shape:
        raise InvalidInputError(f"label map {lmap.shape} and image {img.pixels.shape} differ")
    H, W = lmap.shape
    regions = []
    slices = ndimage.find_objects(lmap.labels)
    for lab, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        rr, cc = np.nonzero(lmap.labels[sl] == lab)
        if len(rr) < min_area:
            continue
        rr = rr + sl[0].start
        cc = cc + sl[1].start
        bbox = (sl[0].start, sl[1].start, sl[0].stop - 1, sl[1].stop - 1)
        touches = bbox[0] == 0 or bbox[1] == 0 or bbox[2] == H - 1 or bbox[3] == W - 1
        if touches and exclude_border:
            continue
        regions.append(ObjectRegion(lab, np.column_stack([rr, cc]).astype(np.int64), bbox,
                                    img, bool(touches), img.pixel_pitch))
    return regions


def iou(a: BinaryMask, b: BinaryMask) -> float:
    if a.shape != b.shape:
        raise InvalidInputError("masks must have equal shape")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        raise InvalidInputError("IoU undefined for two empty masks")
    return np.count_nonzero(a.bits & b.bits) / union


@dataclass
class Segmentation:
    denoised: GrayImage
    threshold: float
    mask: BinaryMask
    labels: LabelMap
    regions: list


def segment(img: GrayImage, strength: float = 100.0, search_radius: int = 21,
            patch_radius: int = 5, polarity: str = "bright", min_area: int = 5,
            exclude_border: bool = False) -> Segmentation:
    """Run denoise, threshold, label and region extraction on one frame."""
    den = nlmeans_denoise(img, strength, search_radius, patch_radius)
    eta = otsu_threshold(den)
    mask = binarize(den, eta, polarity)
    lmap = label_components(mask)
    # descriptors read gray values from the raw frame
    regions = extract_regions(lmap, img, min_area, exclude_border)
    return Segmentation(den, eta, mask, lmap, regions)
