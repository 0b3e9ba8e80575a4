"""Synthetic quality-labeled image data: generation, degradation,
augmentation, deterministic resizing, manifest I/O and dataset statistics.

Images are uint8 RGB arrays of shape [H, W, 3]. Every random artifact is a
pure function of (seed, index): regenerating a dataset with the same seed
produces a byte-identical tree. Quality labels are computed from the applied
degradation severities via a fixed exponential formula, so ground truth is
exact by construction.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

# severity -> label: mos = exp(-(w_blur*s_b + w_noise*s_n + w_down*(f-1) + w_contrast*c))
LABEL_WEIGHTS = {"blur": 0.5, "noise": 4.0, "down": 0.4, "contrast": 1.2}

BLUR_RANGE = (0.0, 3.0)
NOISE_RANGE = (0.0, 0.2)
DOWN_RANGE = (1.0, 4.0)
CONTRAST_RANGE = (0.0, 0.6)

MANIFEST_HEADER = ["path", "mos", "width", "height", "blur", "noise", "down", "contrast"]
MANIFEST_VERSION = 1

# base image geometry: width uniform in [64, 128], aspect W/H ~ N(0.7, 0.1)
# clamped to [0.5, 1.0]
BASE_WIDTH_RANGE = (64, 128)
ASPECT_MEAN, ASPECT_STD = 0.7, 0.1
ASPECT_CLAMP = (0.5, 1.0)

MIN_DIM = 16

# fixed histogram binning for the stats report
RATIO_BIN_EDGES = [round(0.05 + 0.1 * k, 2) for k in range(0, 40)]  # 0.05 .. 3.95
DIM_BIN_EDGES = list(range(0, 513, 16))
AREA_BIN_EDGES = list(range(0, 262145, 4096))


@dataclass(frozen=True)
class Sample:
    path: str
    mos: float
    width: int
    height: int
    blur: float
    noise: float
    down: float
    contrast: float


@dataclass
class Manifest:
    samples: list[Sample]
    seed: int = -1
    version: int = MANIFEST_VERSION
    root: str = "."

    def __len__(self) -> int:
        return len(self.samples)

    def resolve(self, sample: Sample) -> str:
        return os.path.join(self.root, sample.path)


@dataclass
class StatsReport:
    width_hist: dict
    height_hist: dict
    ratio_hist: dict
    area_hist: dict
    wh_correlation: float | None
    n: int

    def to_dict(self) -> dict:
        return {
            "width_hist": self.width_hist,
            "height_hist": self.height_hist,
            "ratio_hist": self.ratio_hist,
            "area_hist": self.area_hist,
            "wh_correlation": self.wh_correlation,
            "n": self.n,
        }


def mos_from_severities(blur: float, noise: float, down: float, contrast: float) -> float:
    w = LABEL_WEIGHTS
    return math.exp(
        -(w["blur"] * blur + w["noise"] * noise + w["down"] * (down - 1.0) + w["contrast"] * contrast)
    )


# ---------------------------------------------------------------------------
# low-level image helpers (float arrays in [0, 1] internally)
# ---------------------------------------------------------------------------

def _to_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 255.0


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resample; identity when the size is unchanged."""
    h, w = img.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).reshape(-1, 1, *([1] * (img.ndim - 2)))
    wx = (xs - x0).reshape(1, -1, *([1] * (img.ndim - 2)))
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian with reflect padding; sigma 0 is the identity."""
    if sigma <= 0:
        return img
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()

    def convolve_rows(a: np.ndarray) -> np.ndarray:
        pad = np.pad(a, [(radius, radius)] + [(0, 0)] * (a.ndim - 1), mode="reflect")
        out = np.zeros_like(a)
        for k, kv in enumerate(kernel):
            out += kv * pad[k : k + a.shape[0]]
        return out

    out = convolve_rows(img)
    out = np.swapaxes(convolve_rows(np.swapaxes(out, 0, 1)), 0, 1)
    return out


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def rot90(img: np.ndarray, k: int) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(img, k, axes=(0, 1)))


def reflect_pad_to(img: np.ndarray, min_h: int, min_w: int) -> np.ndarray:
    """Reflect-pad symmetrically (extra pixel goes to bottom/right) until the
    image is at least min_h x min_w.

    numpy's reflect mode caps each pad at dim-1, so pad in rounds when the
    target is more than twice the source.
    """
    out = img
    while out.shape[0] < min_h or out.shape[1] < min_w:
        h, w = out.shape[:2]
        need_h = max(0, min_h - h)
        need_w = max(0, min_w - w)
        ph = (need_h // 2, need_h - need_h // 2)
        pw = (need_w // 2, need_w - need_w // 2)
        ph = (min(ph[0], h - 1), min(ph[1], h - 1))
        pw = (min(pw[0], w - 1), min(pw[1], w - 1))
        if ph == (0, 0) and pw == (0, 0):
            raise ValueError(f"reflect_pad_to: cannot reflect-pad shape {img.shape[:2]}")
        out = np.pad(out, [ph, pw] + [(0, 0)] * (img.ndim - 2), mode="reflect")
    return out


# ---------------------------------------------------------------------------
# degradation
# ---------------------------------------------------------------------------

def degrade(
    img: np.ndarray,
    blur: float,
    noise: float,
    down: float,
    contrast: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Apply blur -> down/up resample -> contrast compression -> noise and
    return the degraded image with its quality label."""
    for name, value, (lo, hi) in [
        ("blur", blur, BLUR_RANGE),
        ("noise", noise, NOISE_RANGE),
        ("down", down, DOWN_RANGE),
        ("contrast", contrast, CONTRAST_RANGE),
    ]:
        if not (lo <= value <= hi):
            raise ValueError(f"degrade: {name}={value} outside [{lo}, {hi}]")

    x = _to_float(img)
    if blur > 0:
        x = gaussian_blur(x, blur)
    if down > 1.0:
        h, w = x.shape[:2]
        small_h = max(1, int(round(h / down)))
        small_w = max(1, int(round(w / down)))
        x = resize_bilinear(resize_bilinear(x, small_h, small_w), h, w)
    if contrast > 0:
        x = 0.5 + (x - 0.5) * (1.0 - contrast)
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    return _to_uint8(x), mos_from_severities(blur, noise, down, contrast)


# ---------------------------------------------------------------------------
# procedural pseudo-faces
# ---------------------------------------------------------------------------

def _ellipse_mask(h: int, w: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy = (np.arange(h).reshape(-1, 1) - cy) / max(ry, 1e-6)
    xx = (np.arange(w).reshape(1, -1) - cx) / max(rx, 1e-6)
    return (yy * yy + xx * xx) <= 1.0


def _paint(canvas: np.ndarray, mask: np.ndarray, color: np.ndarray) -> None:
    canvas[mask] = color


def render_face(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Layered ellipses and gradients; enough structure that blur, noise and
    contrast changes are clearly visible."""
    h, w = height, width
    # background: two-corner gradient with a random palette
    top = rng.uniform(0.2, 0.9, size=3)
    bottom = rng.uniform(0.1, 0.8, size=3)
    t = np.linspace(0.0, 1.0, h).reshape(-1, 1, 1)
    canvas = top * (1 - t) + bottom * t
    canvas = np.broadcast_to(canvas, (h, w, 3)).copy()
    side = rng.uniform(-0.15, 0.15)
    canvas += side * np.linspace(-1.0, 1.0, w).reshape(1, -1, 1)

    # a few background blobs for texture
    for _ in range(int(rng.integers(2, 5))):
        by, bx = rng.uniform(0, h), rng.uniform(0, w)
        brad = rng.uniform(0.05, 0.2) * min(h, w)
        _paint(canvas, _ellipse_mask(h, w, by, bx, brad, brad), rng.uniform(0.1, 0.9, 3))

    cx = w * rng.uniform(0.45, 0.55)
    cy = h * rng.uniform(0.42, 0.5)
    face_rx = w * rng.uniform(0.28, 0.36)
    face_ry = h * rng.uniform(0.26, 0.34)
    skin = np.array([0.85, 0.68, 0.55]) * rng.uniform(0.75, 1.1)

    # hair cap behind/above the face
    hair = rng.uniform(0.05, 0.35, size=3) * np.array([1.0, 0.8, 0.6])
    _paint(canvas, _ellipse_mask(h, w, cy - face_ry * 0.35, cx, face_ry * 1.15, face_rx * 1.2), hair)
    _paint(canvas, _ellipse_mask(h, w, cy, cx, face_ry, face_rx), np.clip(skin, 0, 1))

    eye_dy = face_ry * 0.25
    eye_dx = face_rx * rng.uniform(0.38, 0.5)
    eye_r = max(1.5, face_rx * 0.13)
    sclera = np.array([0.95, 0.95, 0.93])
    pupil = rng.uniform(0.05, 0.3, size=3)
    for sx in (-1, 1):
        ex = cx + sx * eye_dx
        ey = cy - eye_dy
        _paint(canvas, _ellipse_mask(h, w, ey, ex, eye_r * 0.6, eye_r), sclera)
        _paint(canvas, _ellipse_mask(h, w, ey, ex, eye_r * 0.45, eye_r * 0.45), pupil)
        # brow
        _paint(
            canvas,
            _ellipse_mask(h, w, ey - eye_r * 1.6, ex, eye_r * 0.25, eye_r * 1.1),
            hair * 0.8,
        )

    # nose: slightly darker skin strip
    _paint(
        canvas,
        _ellipse_mask(h, w, cy + face_ry * 0.1, cx, face_ry * 0.22, face_rx * 0.08),
        np.clip(skin * 0.82, 0, 1),
    )
    # mouth
    mouth = np.array([0.65, 0.25, 0.25]) * rng.uniform(0.8, 1.2)
    _paint(
        canvas,
        _ellipse_mask(h, w, cy + face_ry * 0.55, cx, face_ry * 0.08, face_rx * 0.35),
        np.clip(mouth, 0, 1),
    )
    return _to_uint8(np.clip(canvas, 0.0, 1.0))


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _base_dims(rng: np.random.Generator) -> tuple[int, int]:
    width = int(rng.integers(BASE_WIDTH_RANGE[0], BASE_WIDTH_RANGE[1] + 1))
    aspect = float(np.clip(rng.normal(ASPECT_MEAN, ASPECT_STD), *ASPECT_CLAMP))
    height = max(MIN_DIM, int(round(width / aspect)))
    return height, width


def generate_sample(seed: int, index: int) -> tuple[np.ndarray, Sample]:
    """Render and degrade sample ``index`` of the dataset keyed by ``seed``."""
    rng = _sample_rng(seed, index)
    height, width = _base_dims(rng)
    clean = render_face(height, width, rng)
    blur = float(rng.uniform(*BLUR_RANGE))
    noise = float(rng.uniform(*NOISE_RANGE))
    down = float(rng.uniform(*DOWN_RANGE))
    contrast = float(rng.uniform(*CONTRAST_RANGE))
    img, mos = degrade(clean, blur, noise, down, contrast, rng)
    sample = Sample(
        path=f"img_{index:05d}.png",
        mos=mos,
        width=width,
        height=height,
        blur=blur,
        noise=noise,
        down=down,
        contrast=contrast,
    )
    return img, sample


def generate_dataset(count: int, seed: int, out_dir: str | Path) -> Manifest:
    """Write ``count`` PNGs plus manifest.csv under ``out_dir``."""
    if count < 1:
        raise ValueError(f"generate_dataset: count must be >= 1, got {count}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(count):
        img, sample = generate_sample(seed, i)
        PILImage.fromarray(img).save(out / sample.path)
        samples.append(sample)
    manifest = Manifest(samples=samples, seed=seed, root=str(out))
    save_manifest(manifest, out / "manifest.csv")
    return manifest


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------

def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for s in manifest.samples:
            writer.writerow(
                [s.path, repr(s.mos), s.width, s.height,
                 repr(s.blur), repr(s.noise), repr(s.down), repr(s.contrast)]
            )
    meta = {"seed": manifest.seed, "version": manifest.version}
    with open(path.with_suffix(".meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh)


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    samples = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != MANIFEST_HEADER:
            raise ValueError(f"manifest {path}: unexpected header {header}")
        for row in reader:
            samples.append(
                Sample(
                    path=row[0], mos=float(row[1]), width=int(row[2]), height=int(row[3]),
                    blur=float(row[4]), noise=float(row[5]), down=float(row[6]),
                    contrast=float(row[7]),
                )
            )
    seen = set()
    for s in samples:
        if s.path in seen:
            raise ValueError(f"manifest {path}: duplicate path {s.path}")
        seen.add(s.path)
    seed, version = -1, MANIFEST_VERSION
    meta_path = path.with_suffix(".meta.json")
    if meta_path.exists():
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        seed = meta.get("seed", -1)
        version = meta.get("version", MANIFEST_VERSION)
    return Manifest(samples=samples, seed=seed, version=version, root=str(path.parent))


def load_image(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"))


# ---------------------------------------------------------------------------
# train/eval transforms
# ---------------------------------------------------------------------------

CROP_SCALE_RANGE = (0.7, 1.0)
CROP_ASPECT_RANGE = (0.8, 1.25)


def augment(img: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    """Training-time transform chain: horizontal flip (p=0.5), rotate by
    k*90 degrees (p=0.5), reflect-pad up to the target if smaller, then a
    random resized crop to target x target.

    The three branch decisions are always drawn, in a fixed order, so the
    stream consumed from ``rng`` does not depend on the outcomes.
    """
    flip_u = rng.random()
    rot_u = rng.random()
    rot_k = int(rng.integers(1, 4))
    if flip_u < 0.5:
        img = hflip(img)
    if rot_u < 0.5:
        img = rot90(img, rot_k)
    img = reflect_pad_to(img, target, target)

    h, w = img.shape[:2]
    area = h * w
    crop_h = crop_w = min(h, w)
    for _ in range(10):
        a = area * rng.uniform(*CROP_SCALE_RANGE)
        ar = rng.uniform(*CROP_ASPECT_RANGE)
        cw = int(round(math.sqrt(a * ar)))
        ch = int(round(math.sqrt(a / ar)))
        if 0 < cw <= w and 0 < ch <= h:
            crop_h, crop_w = ch, cw
            break
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    crop = img[top : top + crop_h, left : left + crop_w]
    if crop.shape[0] == target and crop.shape[1] == target:
        return crop.copy()
    return _to_uint8(resize_bilinear(_to_float(crop), target, target))


def resize_eval(img: np.ndarray, r: int) -> np.ndarray:
    """Deterministic eval-time transform: reflect-pad the short side to make
    the image square, then bilinear-resize to r x r."""
    if r < MIN_DIM:
        raise ValueError(f"resize_eval: r must be >= {MIN_DIM}, got {r}")
    h, w = img.shape[:2]
    side = max(h, w)
    img = reflect_pad_to(img, side, side)
    if img.shape[0] == r and img.shape[1] == r:
        return img
    return _to_uint8(resize_bilinear(_to_float(img), r, r))


# ---------------------------------------------------------------------------
# splits and statistics
# ---------------------------------------------------------------------------

def split_manifest(manifest: Manifest, fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    """Seeded shuffle, keep the first floor(fraction*n) samples (returned in
    original manifest order). Returns (subset, full)."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"split_manifest: fraction must be in (0, 1], got {fraction}")
    n = len(manifest.samples)
    k = int(math.floor(fraction * n))
    rng = np.random.default_rng([seed, 0x5B117])
    chosen = sorted(rng.permutation(n)[:k].tolist())
    subset = replace(manifest, samples=[manifest.samples[i] for i in chosen])
    return subset, manifest


def train_val_split(manifest: Manifest, val_fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    """Hold out ceil(val_fraction*n) samples for validation; the rest train."""
    if not (0.0 < val_fraction < 1.0):
        raise ValueError(f"train_val_split: val_fraction must be in (0, 1), got {val_fraction}")
    n = len(manifest.samples)
    k = int(math.ceil(val_fraction * n))
    rng = np.random.default_rng([seed, 0x7A1])
    perm = rng.permutation(n).tolist()
    val_idx = sorted(perm[:k])
    train_idx = sorted(perm[k:])
    return (
        replace(manifest, samples=[manifest.samples[i] for i in train_idx]),
        replace(manifest, samples=[manifest.samples[i] for i in val_idx]),
    )


def _hist(values: np.ndarray, edges: list[float]) -> dict:
    clipped = np.clip(values, edges[0], edges[-1])
    counts, _ = np.histogram(clipped, bins=np.asarray(edges, dtype=np.float64))
    return {"edges": list(edges), "counts": counts.astype(int).tolist()}


def dataset_stats(manifest: Manifest) -> StatsReport:
    """Width/height/aspect/area histograms plus width-height correlation.

    Out-of-range values are clipped into the boundary bins so histogram mass
    always equals the sample count. Correlation is null when undefined
    (fewer than 2 samples or a constant dimension).
    """
    if len(manifest.samples) == 0:
        raise ValueError("dataset_stats: empty manifest")
    widths = np.array([s.width for s in manifest.samples], dtype=np.float64)
    heights = np.array([s.height for s in manifest.samples], dtype=np.float64)
    ratios = widths / heights
    areas = widths * heights
    corr: float | None
    if len(widths) < 2 or np.ptp(widths) == 0 or np.ptp(heights) == 0:
        corr = None
    else:
        from .metrics import plcc

        corr = plcc(widths, heights)
    return StatsReport(
        width_hist=_hist(widths, DIM_BIN_EDGES),
        height_hist=_hist(heights, DIM_BIN_EDGES),
        ratio_hist=_hist(ratios, RATIO_BIN_EDGES),
        area_hist=_hist(areas, AREA_BIN_EDGES),
        wh_correlation=corr,
        n=len(manifest.samples),
    )
