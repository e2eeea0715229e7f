"""Synthetic ground truth: particle scenes and labeled descriptor sets.

Objects are unions of disks. Primary particles are single disks, chains are
2-5 disks along a line with overlapping necks, raspberries are compact
clusters where every new disk is attached to two existing ones. Objects are
bright on a dark background and kept apart by a gap so the ground truth
labeling is exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .descriptors import DEFAULT_LAYOUT, compute_record, to_features
from .errors import AggloError, InvalidInputError
from .imaging import DEFAULT_PITCH_UM, BinaryMask, GrayImage, LabelMap, label_components, segment

PRIMARY, CHAIN, RASPBERRY = 0, 1, 2


class PlacementError(AggloError):
    """Objects could not be placed within the retry budget."""


@dataclass
class SceneSpec:
    height: int = 256
    width: int = 256
    pixel_pitch: float = DEFAULT_PITCH_UM
    counts: tuple = (6, 3, 2)              # primary, chain, raspberry
    radius_mean: float = 7.0               # px
    radius_std: float = 0.8
    radius_range: tuple = (4.0, 10.0)
    chain_length: tuple = (2, 5)
    chain_spacing: float = 1.6             # centre spacing in radii
    raspberry_size: tuple = (6, 20)
    packing: float = 0.9                   # contact distance as a fraction of r_i + r_j
    background: float = 30.0
    foreground: float = 200.0
    shading: float = 0.0                   # relative darkening towards disk rims
    noise_std: float = 10.0
    gap: int = 2
    allow_border: bool = False
    max_tries: int = 500
    seed: int = 0

    def __post_init__(self):
        self.counts = tuple(int(c) for c in self.counts)
        if len(self.counts) != 3 or min(self.counts) < 0:
            raise InvalidInputError("counts must be three non-negative integers")
        if self.height < 8 or self.width < 8:
            raise InvalidInputError("image too small")
        if not 0 < self.packing <= 1:
            raise InvalidInputError("packing must lie in (0, 1]")
        if not (2 <= self.chain_length[0] <= self.chain_length[1]):
            raise InvalidInputError("chains need at least two disks")
        if not (3 <= self.raspberry_size[0] <= self.raspberry_size[1]):
            raise InvalidInputError("raspberries need at least three disks")
        self.chain_length = tuple(self.chain_length)
        self.raspberry_size = tuple(self.raspberry_size)
        self.radius_range = tuple(self.radius_range)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "SceneSpec":
        return cls(**d)


@dataclass
class Scene:
    image: GrayImage
    truth: LabelMap
    classes: np.ndarray          # classes[k - 1] is the class of ground-truth label k
    disks: list = field(default_factory=list, repr=False)   # per label, (cx, cy, r) arrays

    @property
    def mask(self) -> BinaryMask:
        return BinaryMask(self.truth.labels > 0)

    def truth_json(self) -> dict:
        return {"classes": [int(c) for c in self.classes],
                "disks": [np.round(d, 6).tolist() for d in self.disks]}


def _radius(spec, rng, n=None):
    lo, hi = spec.radius_range
    return np.clip(rng.normal(spec.radius_mean, spec.radius_std, size=n), lo, hi)


def _chain(spec, rng):
    k = int(rng.integers(spec.chain_length[0], spec.chain_length[1] + 1))
    r = _radius(spec, rng, k)
    phi = rng.uniform(0, math.pi)
    step = spec.chain_spacing * r.mean()
    pos = (np.arange(k) - (k - 1) / 2) * step
    return np.column_stack([pos * math.cos(phi), pos * math.sin(phi), r])


def _raspberry(spec, rng):
    k = int(rng.integers(spec.raspberry_size[0], spec.raspberry_size[1] + 1))
    r = _radius(spec, rng, k)
    p = spec.packing
    phi = rng.uniform(0, 2 * math.pi)
    dist = p * (r[0] + r[1])
    disks = [(0.0, 0.0, r[0]), (dist * math.cos(phi), dist * math.sin(phi), r[1])]
    for i in range(2, k):
        ri = r[i]
        cands = []
        arr = np.array(disks)
        for a in range(len(disks)):
            for b in range(a + 1, len(disks)):
                xa, ya, ra = disks[a]
                xb, yb, rb = disks[b]
                # intersections of the two contact circles around a and b
                da, db = p * (ra + ri), p * (rb + ri)
                dx, dy = xb - xa, yb - ya
                L = math.hypot(dx, dy)
                if L == 0 or L > da + db or L < abs(da - db):
                    continue
                m = (da * da - db * db + L * L) / (2 * L)
                h = math.sqrt(max(da * da - m * m, 0.0))
                mx, my = xa + m * dx / L, ya + m * dy / L
                for s in (1.0, -1.0):
                    x, y = mx - s * h * dy / L, my + s * h * dx / L
                    gaps = np.hypot(arr[:, 0] - x, arr[:, 1] - y) - p * (arr[:, 2] + ri)
                    if np.all(gaps >= -1e-9):
                        cands.append((x, y))
        if not cands:
            break
        # prefer compact growth: choose among the candidates nearest the centroid
        cands = np.array(cands)
        cen = arr[:, :2].mean(axis=0)
        d = np.hypot(cands[:, 0] - cen[0], cands[:, 1] - cen[1])
        near = np.argsort(d, kind="stable")[:3]
        x, y = cands[near[int(rng.integers(len(near)))]]
        disks.append((x, y, ri))
    arr = np.array(disks)
    arr[:, :2] -= arr[:, :2].mean(axis=0)
    return arr


def _make_object(cls, spec, rng):
    if cls == PRIMARY:
        return np.array([[0.0, 0.0, float(_radius(spec, rng))]])
    if cls == CHAIN:
        return _chain(spec, rng)
    return _raspberry(spec, rng)


def _rasterize(disks, shape, shading=0.0):
    """Coverage mask and shading profile of a disk union placed in a frame."""
    H, W = shape
    x0 = max(int(math.floor(np.min(disks[:, 0] - disks[:, 2]))), 0)
    x1 = min(int(math.ceil(np.max(disks[:, 0] + disks[:, 2]))) + 1, W)
    y0 = max(int(math.floor(np.min(disks[:, 1] - disks[:, 2]))), 0)
    y1 = min(int(math.ceil(np.max(disks[:, 1] + disks[:, 2]))) + 1, H)
    if x0 >= x1 or y0 >= y1:
        return None
    yy, xx = np.mgrid[y0:y1, x0:x1]
    rho = np.full(xx.shape, np.inf)
    for cx, cy, r in disks:
        rho = np.minimum(rho, np.hypot(xx - cx, yy - cy) / r)
    inside = rho <= 1.0
    return (slice(y0, y1), slice(x0, x1)), inside, 1.0 - shading * np.minimum(rho, 1.0) ** 2


def render(spec: SceneSpec) -> Scene:
    """Random scene with exactly ``spec.counts`` objects and its ground truth."""
    rng = np.random.default_rng(spec.seed)
    H, W = spec.height, spec.width
    occupied = np.zeros((H, W), dtype=bool)
    objects = np.zeros((H, W), dtype=np.int32)
    profile = np.zeros((H, W))
    placed, classes = [], []
    grow = np.ones((2 * spec.gap + 1, 2 * spec.gap + 1), dtype=bool)
    # larger objects first so that small ones fill the remaining space
    order = [RASPBERRY] * spec.counts[2] + [CHAIN] * spec.counts[1] + [PRIMARY] * spec.counts[0]
    for cls in order:
        for _ in range(spec.max_tries):
            disks = _make_object(cls, spec, rng)
            ext = np.max(np.hypot(disks[:, 0], disks[:, 1]) + disks[:, 2])
            margin = -ext / 2 if spec.allow_border else ext + 1
            if W - 2 * margin <= 0 or H - 2 * margin <= 0:
                continue
            cx, cy = rng.uniform(margin, W - margin), rng.uniform(margin, H - margin)
            shifted = disks + np.array([cx, cy, 0.0])
            ras = _rasterize(shifted, (H, W), spec.shading)
            if ras is None:
                continue
            sl, inside, prof = ras
            if not inside.any():
                continue
            comps = ndimage.label(inside)[1]
            if comps != 1:
                continue
            # keep a gap of spec.gap pixels to everything already placed
            pad = spec.gap
            ys, xs = sl
            big = np.zeros((ys.stop - ys.start + 2 * pad, xs.stop - xs.start + 2 * pad), dtype=bool)
            big[pad:-pad or None, pad:-pad or None] = inside
            halo = ndimage.binary_dilation(big, grow)
            gy0, gx0 = ys.start - pad, xs.start - pad
            hy0, hx0 = max(gy0, 0), max(gx0, 0)
            hy1, hx1 = min(gy0 + halo.shape[0], H), min(gx0 + halo.shape[1], W)
            region = halo[hy0 - gy0:hy1 - gy0, hx0 - gx0:hx1 - gx0]
            if np.any(occupied[hy0:hy1, hx0:hx1] & region):
                continue
            occupied[sl] |= inside
            objects[sl][inside] = len(placed) + 1
            profile[sl][inside] = prof[inside]
            placed.append(shifted)
            classes.append(cls)
            break
        else:
            raise PlacementError(f"could not place object {len(placed) + 1} after {spec.max_tries} tries")

    truth = label_components(BinaryMask(occupied))
    if truth.object_count != len(placed):
        raise PlacementError("objects merged during placement")
    # map raster-ordered labels back to the placed objects
    gt_classes = np.empty(truth.object_count, dtype=np.int64)
    gt_disks = [None] * truth.object_count
    for lab in range(1, truth.object_count + 1):
        obj = int(objects[truth.labels == lab][0]) - 1
        gt_classes[lab - 1] = classes[obj]
        gt_disks[lab - 1] = placed[obj]

    fg = spec.background + (spec.foreground - spec.background) * profile
    img = np.where(occupied, fg, spec.background)
    img = img + spec.noise_std * rng.standard_normal((H, W))
    img = np.clip(np.rint(img), 0, 255)
    return Scene(GrayImage(img, spec.pixel_pitch), truth, gt_classes, gt_disks)


def write_pgm(path, image: GrayImage):
    """Binary 8-bit PGM."""
    px = np.clip(np.rint(image.pixels), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{px.shape[1]} {px.shape[0]}\n255\n".encode())
        fh.write(px.tobytes())


def read_pgm(path, pixel_pitch=DEFAULT_PITCH_UM) -> GrayImage:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise InvalidInputError(f"{path}: only binary PGM (P5) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise InvalidInputError(f"{path}: only 8-bit PGM is supported")
    px = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if px.size != w * h:
        raise InvalidInputError(f"{path}: truncated pixel data")
    return GrayImage(px.reshape(h, w).astype(float), pixel_pitch)


def save_scene(scene: Scene, stem, spec: SceneSpec | None = None):
    """Write ``<stem>.pgm`` and ``<stem>.json`` (ground truth labels and classes)."""
    write_pgm(f"{stem}.pgm", scene.image)
    doc = {"schema_version": 1, "shape": list(scene.truth.shape),
           "labels_rle": _rle(scene.truth.labels), **scene.truth_json()}
    if spec is not None:
        doc["spec"] = spec.to_dict()
    with open(f"{stem}.json", "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def _rle(labels):
    flat = labels.ravel()
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    return [[int(flat[s]), int(n)] for s, n in zip(starts, lengths)]


def rle_decode(runs, shape):
    return np.repeat([v for v, _ in runs], [n for _, n in runs]).reshape(shape)


# ---------------------------------------------------------------- descriptor datasets

@dataclass
class LabeledSample:
    features: np.ndarray
    label: int
    scene: int
    record: object = field(default=None, repr=False)


def match_regions(regions, truth: LabelMap, min_iou: float = 0.5):
    """Ground-truth label for each region (0 when no object overlaps it enough)."""
    out = []
    areas = np.bincount(truth.labels.ravel(), minlength=truth.object_count + 1)
    for reg in regions:
        hit = truth.labels[reg.pixels[:, 0], reg.pixels[:, 1]]
        hit = hit[hit > 0]
        if hit.size == 0:
            out.append(0)
            continue
        lab = int(np.bincount(hit).argmax())
        inter = np.count_nonzero(hit == lab)
        out.append(lab if inter / (reg.area_px + areas[lab] - inter) >= min_iou else 0)
    return out


def gen_descriptor_dataset(n_per_class: int, seed: int = 0, spec: SceneSpec | None = None,
                           layout=DEFAULT_LAYOUT, strength: float = 100.0) -> list:
    """Render scenes until every class has ``n_per_class`` labeled descriptor vectors.

    Each region found by the segmentation pipeline is matched to a
    ground-truth object; unmatched regions and border objects are skipped.
    """
    if n_per_class < 1:
        raise InvalidInputError("n_per_class must be >= 1")
    base = spec or SceneSpec(height=384, width=384, counts=(8, 8, 8))
    per = {PRIMARY: [], CHAIN: [], RASPBERRY: []}
    ss = np.random.SeedSequence(seed)
    k = 0
    while min(len(v) for v in per.values()) < n_per_class:
        child = int(ss.spawn(1)[0].generate_state(1)[0])
        scene = render(SceneSpec.from_dict({**base.to_dict(), "seed": child}))
        seg = segment(scene.image, strength=strength)
        for reg, lab in zip(seg.regions, match_regions(seg.regions, scene.truth)):
            if lab == 0 or reg.touches_border:
                continue
            cls = int(scene.classes[lab - 1])
            if len(per[cls]) >= n_per_class:
                continue
            rec = compute_record(reg)
            per[cls].append(LabeledSample(to_features(rec, layout), cls, k, rec))
        k += 1
        if k > 100 * n_per_class:
            raise PlacementError("dataset generation is not making progress")
    return per[PRIMARY] + per[CHAIN] + per[RASPBERRY]


def dataset_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([s.features for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    return X, y
