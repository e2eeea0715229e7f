"""Geometrical and textural descriptors of segmented objects.

Lengths are reported in micrometres (pixel count times ``pixel_pitch``),
centroids in millimetres. Conventions that the measurement definitions leave
open are fixed here:

* the moment ellipse adds the 1/12 per-pixel variance to both axes;
* border distances are measured from pixel centres to the nearest non-region
  pixel centre (frame counts as background); a lone pixel is assigned 0.5 px;
* the perimeter follows the boundary-pixel chain rule, and a lone pixel is
  assigned ``2 + sqrt(2)`` px;
* box counting is anchored at the bounding-box origin.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from . import geometry
from .errors import InsufficientScalesError, InvalidInputError
from .imaging import ObjectRegion

SQRT2 = math.sqrt(2.0)
HALF_DIAG = (1.0 + SQRT2) / 2.0
SINGLE_PIXEL_PERIMETER = 2.0 + SQRT2

ALL_FEATURES = (
    "d", "a", "a_convex", "s", "v1", "v2", "e", "o", "r1", "r2", "r", "h",
    "lambda_mean", "lambda_std", "lambda_max", "delta", "psi", "z", "kappa",
    "g_mean", "g_std", "g_min", "g_max",
)


def feature_layout(include_z: bool = True, include_orientation: bool = True) -> tuple[str, ...]:
    """Ordered feature names used for classification.

    ``lambda_max`` is left out because it equals ``r2`` by construction; raw
    centroid coordinates never enter the feature vector. The default has 22
    entries.
    """
    names = [n for n in ALL_FEATURES if n != "lambda_max"]
    if not include_z:
        names.remove("z")
    if not include_orientation:
        names.remove("o")
    return tuple(names)


DEFAULT_LAYOUT = feature_layout()


def layout_fingerprint(layout) -> str:
    return hashlib.sha256(",".join(layout).encode()).hexdigest()[:16]


@dataclass
class DescriptorRecord:
    d: float
    a: float
    a_convex: float
    s: float
    v1: float
    v2: float
    e: float
    o: float
    r1: float
    r2: float
    r: float
    h: float
    lambda_mean: float
    lambda_std: float
    lambda_max: float
    delta: float
    psi: float
    z1: tuple[float, float]
    z2: tuple[float, float]
    z: float
    kappa: float
    g_mean: float
    g_std: float
    g_min: float
    g_max: float

    def as_dict(self) -> dict:
        return asdict(self)


def _pitch(region: ObjectRegion) -> float:
    return region.pixel_pitch


def area_and_diameter(region: ObjectRegion) -> tuple[float, float]:
    a = region.area_px * _pitch(region) ** 2
    return a, 2.0 * math.sqrt(a / math.pi)


def _hull(region: ObjectRegion) -> np.ndarray:
    return geometry.convex_hull(geometry.pixel_corner_points(region.pixels))


def convex_hull_area(region: ObjectRegion, hull=None) -> float:
    """Point-count area of the convex hull of the pixel squares."""
    if hull is None:
        hull = _hull(region)
    return geometry.count_lattice_points(hull) * _pitch(region) ** 2


def moment_ellipse(region: ObjectRegion) -> tuple[float, float, float, float]:
    """Axis lengths, eccentricity and orientation of the moment-equivalent ellipse.

    The orientation is the angle from the image y axis (row direction) to the
    major axis, positive towards +x, wrapped to [-pi/2, pi/2).
    """
    pitch = _pitch(region)
    if region.area_px == 1:
        return pitch, pitch, 0.0, 0.0
    y = region.pixels[:, 0].astype(float)
    x = region.pixels[:, 1].astype(float)
    dx, dy = x - x.mean(), y - y.mean()
    cov = np.array([[np.mean(dx * dx) + 1 / 12, np.mean(dx * dy)],
                    [np.mean(dx * dy), np.mean(dy * dy) + 1 / 12]])
    evals, evecs = np.linalg.eigh(cov)
    lam2, lam1 = max(evals[0], 0.0), evals[1]
    ex, ey = evecs[:, 1]
    v1 = 4.0 * math.sqrt(lam1) * pitch
    v2 = 4.0 * math.sqrt(lam2) * pitch
    e = math.sqrt(max(0.0, 1.0 - (v2 / v1) ** 2))
    o = math.atan2(ex, ey)
    o = (o + math.pi / 2) % math.pi - math.pi / 2
    return v1, v2, e, o


def border_distance_map(region: ObjectRegion) -> np.ndarray:
    """Distance of each region pixel centre to the nearest outside centre, in px."""
    if region.area_px == 1:
        return np.array([0.5])
    mask, (r0, c0) = region.crop(pad=1)
    edt = ndimage.distance_transform_edt(mask)
    return edt[region.pixels[:, 0] - r0, region.pixels[:, 1] - c0]


def border_distance_stats(region: ObjectRegion, dist=None) -> tuple[float, float, float]:
    if dist is None:
        dist = border_distance_map(region)
    p = _pitch(region)
    return float(dist.mean()) * p, float(dist.std()) * p, float(dist.max()) * p


def enclosing_and_inscribed(region: ObjectRegion, hull=None, dist=None) -> tuple[float, float, float]:
    """Minimum enclosing radius, maximum inscribed radius and their ratio."""
    if hull is None:
        hull = _hull(region)
    _, r1_px = geometry.min_enclosing_circle(hull)
    if dist is None:
        dist = border_distance_map(region)
    r2_px = float(dist.max())
    p = _pitch(region)
    return r1_px * p, r2_px * p, r1_px / r2_px


def max_feret(region: ObjectRegion, hull=None) -> float:
    if hull is None:
        hull = _hull(region)
    return geometry.max_pairwise_distance(hull) * _pitch(region)


def perimeter(region: ObjectRegion) -> float:
    """Boundary-pixel chain length.

    Boundary pixels have at least one 4-neighbour outside the region. Each
    one contributes by its straight (``hv``) and diagonal (``dg``) boundary
    neighbours, checked in order: ``hv == 2`` -> 1; ``hv == 0, dg == 2`` ->
    sqrt(2); anything else (one of each, line ends, junctions) ->
    (1+sqrt(2))/2. Straight pairs take precedence so that a pixel next to a
    corner, which also sees a diagonal boundary neighbour, still counts 1.
    """
    if region.area_px == 1:
        return SINGLE_PIXEL_PERIMETER * _pitch(region)
    mask, _ = region.crop(pad=1)
    interior = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1))
    b = (mask & ~interior).astype(np.int8)
    pb = np.pad(b, 1)
    H, W = b.shape

    def shifted(dr, dc):
        return pb[1 + dr:1 + dr + H, 1 + dc:1 + dc + W]

    hv = shifted(-1, 0) + shifted(1, 0) + shifted(0, -1) + shifted(0, 1)
    dg = shifted(-1, -1) + shifted(-1, 1) + shifted(1, -1) + shifted(1, 1)
    sel = b.astype(bool)
    hv, dg = hv[sel], dg[sel]
    length = np.full(hv.shape, HALF_DIAG)
    length[hv == 2] = 1.0
    length[(hv == 0) & (dg == 2)] = SQRT2
    return float(length.sum()) * _pitch(region)


def roundness(a: float, delta: float) -> float:
    if not delta > 0:
        raise InvalidInputError("perimeter must be positive")
    return 4.0 * math.pi * a / delta ** 2


def centroid_distance(region: ObjectRegion) -> tuple[tuple[float, float], tuple[float, float], float]:
    """Plain and gray-weighted centroids ``(x, y)`` and their distance, in mm."""
    g = region.intensities()
    if g.sum() <= 0:
        raise InvalidInputError("weighted centroid undefined for all-zero intensities")
    mm = _pitch(region) / 1000.0
    y = region.pixels[:, 0].astype(float)
    x = region.pixels[:, 1].astype(float)
    z1 = (x.mean() * mm, y.mean() * mm)
    z2 = (np.dot(g, x) / g.sum() * mm, np.dot(g, y) / g.sum() * mm)
    return z1, z2, math.hypot(z1[0] - z2[0], z1[1] - z2[1])


def box_counts(region: ObjectRegion, scales) -> np.ndarray:
    r0, c0 = region.bounding_box[:2]
    rr = region.pixels[:, 0] - r0
    cc = region.pixels[:, 1] - c0
    out = []
    for eps in scales:
        keys = (rr // eps) * (1 << 20) + (cc // eps)
        out.append(len(np.unique(keys)))
    return np.array(out)


def fractal_dimension(region: ObjectRegion, force_two_scales: bool = False) -> float:
    """Tiled box-counting dimension clamped to [0, 2].

    Box sizes are powers of two up to half the longer bounding-box side. With
    ``force_two_scales`` the sizes {1, 2} are used for objects too small for
    two scales instead of raising.
    """
    r0, c0, r1, c1 = region.bounding_box
    half = max(r1 - r0 + 1, c1 - c0 + 1) // 2
    scales = []
    eps = 1
    while eps <= half:
        scales.append(eps)
        eps *= 2
    if len(scales) < 2:
        if not force_two_scales:
            raise InsufficientScalesError(f"bounding box too small for box counting ({half=})")
        scales = [1, 2]
    n = box_counts(region, scales)
    slope = np.polyfit(np.log(1.0 / np.asarray(scales, float)), np.log(n), 1)[0]
    return float(np.clip(slope, 0.0, 2.0))


def gray_stats(region: ObjectRegion) -> tuple[float, float, float, float]:
    g = region.intensities()
    return float(g.mean()), float(g.std()), float(g.min()), float(g.max())


def compute_record(region: ObjectRegion) -> DescriptorRecord:
    hull = _hull(region)
    dist = border_distance_map(region)
    a, d = area_and_diameter(region)
    a_convex = convex_hull_area(region, hull)
    v1, v2, e, o = moment_ellipse(region)
    r1, r2, r = enclosing_and_inscribed(region, hull, dist)
    lam_mean, lam_std, lam_max = border_distance_stats(region, dist)
    delta = perimeter(region)
    z1, z2, z = centroid_distance(region)
    g_mean, g_std, g_min, g_max = gray_stats(region)
    return DescriptorRecord(
        d=d, a=a, a_convex=a_convex, s=a / a_convex, v1=v1, v2=v2, e=e, o=o,
        r1=r1, r2=r2, r=r, h=max_feret(region, hull),
        lambda_mean=lam_mean, lambda_std=lam_std, lambda_max=lam_max,
        delta=delta, psi=roundness(a, delta), z1=z1, z2=z2, z=z,
        kappa=fractal_dimension(region, force_two_scales=True),
        g_mean=g_mean, g_std=g_std, g_min=g_min, g_max=g_max,
    )


def to_features(rec: DescriptorRecord, layout=DEFAULT_LAYOUT) -> np.ndarray:
    vals = np.array([getattr(rec, name) for name in layout], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("non-finite descriptor value")
    return vals
