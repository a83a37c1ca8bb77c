"""Image data model, dataset IO, patch cropping and synthetic weather degradations.

Pixels live in [0, 1] as float64 arrays of shape (H, W, 3). 8-bit files are
normalized by division with 255 on ingestion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import (
    InvalidArgumentError,
    MalformedManifestError,
    MissingFileError,
    ShapeMismatchError,
    UnpairedImageError,
)

TASK_KINDS = ("haze", "rain", "snow", "custom")
SPLITS = ("train", "test")


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray  # (H, W, 3) float64 in [0, 1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidArgumentError(f"expected (H, W, 3) pixels, got {px.shape}")
        if px.shape[0] < 8 or px.shape[1] < 8:
            raise InvalidArgumentError(f"image too small: {px.shape[:2]} (min 8x8)")
        if not np.all(np.isfinite(px)):
            raise InvalidArgumentError("non-finite pixel values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise InvalidArgumentError("pixel values outside [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "Image":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.round(np.clip(self.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class SamplePair:
    degraded: Image
    clean: Image
    task_id: int = 1

    def __post_init__(self):
        if self.degraded.pixels.shape != self.clean.pixels.shape:
            raise ShapeMismatchError(
                f"degraded {self.degraded.pixels.shape} != clean {self.clean.pixels.shape}"
            )
        if self.task_id < 1:
            raise InvalidArgumentError("task_id must be >= 1")


@dataclass(frozen=True, eq=False)
class Dataset:
    pairs: tuple
    task_kind: str = "custom"
    split: str = "train"

    def __post_init__(self):
        if len(self.pairs) == 0:
            raise InvalidArgumentError("dataset must be nonempty")
        if self.task_kind not in TASK_KINDS:
            raise InvalidArgumentError(f"unknown task_kind {self.task_kind!r}")
        if self.split not in SPLITS:
            raise InvalidArgumentError(f"unknown split {self.split!r}")
        ids = {p.task_id for p in self.pairs}
        if len(ids) != 1:
            raise InvalidArgumentError(f"pairs carry mixed task_ids {sorted(ids)}")
        object.__setattr__(self, "pairs", tuple(self.pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i: int) -> SamplePair:
        return self.pairs[i]

    @property
    def task_id(self) -> int:
        return self.pairs[0].task_id


@dataclass(frozen=True)
class HazeParams:
    beta: float = 1.0  # scattering coefficient
    airlight: float = 0.9
    depth_field: np.ndarray | None = None  # (H, W) >= 0; default: horizontal ramp 0->1

    def __post_init__(self):
        if self.beta < 0:
            raise InvalidArgumentError("beta must be >= 0")
        if not 0.0 <= self.airlight <= 1.0:
            raise InvalidArgumentError("airlight must be in [0, 1]")
        if self.depth_field is not None:
            d = np.asarray(self.depth_field, dtype=np.float64)
            if d.ndim != 2 or d.min() < 0 or not np.all(np.isfinite(d)):
                raise InvalidArgumentError("depth_field must be (H, W) finite >= 0")
            object.__setattr__(self, "depth_field", d)


@dataclass(frozen=True)
class RainParams:
    streak_count: int = 30
    angle_deg: float = 70.0
    length_px: float = 9.0
    intensity: float = 0.5

    def __post_init__(self):
        if self.streak_count < 0:
            raise InvalidArgumentError("streak_count must be >= 0")
        if self.length_px <= 0:
            raise InvalidArgumentError("length_px must be > 0")
        if not 0.0 <= self.intensity <= 1.0:
            raise InvalidArgumentError("intensity must be in [0, 1]")


@dataclass(frozen=True)
class SnowParams:
    flake_count: int = 40
    radius_range_px: tuple = (0.8, 2.2)
    opacity: float = 0.7

    def __post_init__(self):
        lo, hi = self.radius_range_px
        if self.flake_count < 0:
            raise InvalidArgumentError("flake_count must be >= 0")
        if lo <= 0 or hi < lo:
            raise InvalidArgumentError("radius_range_px must satisfy 0 < lo <= hi")
        if not 0.0 <= self.opacity <= 1.0:
            raise InvalidArgumentError("opacity must be in [0, 1]")


@dataclass(frozen=True)
class DegradationParams:
    haze: HazeParams = field(default_factory=HazeParams)
    rain: RainParams = field(default_factory=RainParams)
    snow: SnowParams = field(default_factory=SnowParams)
    seed: int = 0


def default_depth_field(h: int, w: int) -> np.ndarray:
    """Horizontal linear ramp, 0 at the left edge to 1 at the right."""
    if w == 1:
        return np.zeros((h, 1))
    return np.tile(np.linspace(0.0, 1.0, w), (h, 1))


def synthesize_haze(clean: Image, p: DegradationParams) -> Image:
    """Atmospheric scattering: I = J*t + A*(1 - t), t = exp(-beta * depth)."""
    hp = p.haze
    depth = hp.depth_field
    if depth is None:
        depth = default_depth_field(clean.height, clean.width)
    if depth.shape != (clean.height, clean.width):
        raise ShapeMismatchError(
            f"depth_field {depth.shape} != image {(clean.height, clean.width)}"
        )
    t = np.exp(-hp.beta * depth)[..., None]
    out = clean.pixels * t + hp.airlight * (1.0 - t)
    return Image(np.clip(out, 0.0, 1.0))


def rain_layer(h: int, w: int, p: RainParams, seed: int) -> np.ndarray:
    """Additive streak layer in [0, 1]: anti-aliased line segments with a
    Gaussian cross-section profile, orientation jittered around angle_deg."""
    rng = np.random.default_rng(seed)
    layer = np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sigma = 0.6
    for _ in range(p.streak_count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        ang = math.radians(p.angle_deg + rng.uniform(-8.0, 8.0))
        half = p.length_px / 2.0
        dy, dx = math.sin(ang), math.cos(ang)
        # distance from each pixel to the segment through (cy, cx)
        ry, rx = ys - cy, xs - cx
        proj = np.clip(ry * dy + rx * dx, -half, half)
        dist2 = (ry - proj * dy) ** 2 + (rx - proj * dx) ** 2
        layer += rng.uniform(0.6, 1.0) * np.exp(-dist2 / (2 * sigma**2))
    return np.clip(layer, 0.0, 1.0)


def synthesize_rain(clean: Image, p: DegradationParams) -> Image:
    rp = p.rain
    if rp.streak_count == 0 or rp.intensity == 0.0:
        return clean
    layer = rain_layer(clean.height, clean.width, rp, p.seed)
    out = clean.pixels + rp.intensity * layer[..., None]
    return Image(np.clip(out, 0.0, 1.0))


def snow_mask(h: int, w: int, p: SnowParams, seed: int) -> np.ndarray:
    """Soft-disc flake mask in [0, 1] (opacity already applied)."""
    rng = np.random.default_rng(seed)
    mask = np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(p.flake_count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        r = rng.uniform(*p.radius_range_px)
        d2 = (ys - cy) ** 2 + (xs - cx) ** 2
        mask = np.maximum(mask, np.exp(-d2 / (2 * (r / 1.5) ** 2)))
    return np.clip(p.opacity * mask, 0.0, 1.0)


SNOW_COLOR = 1.0


def composite_snow(clean: Image, mask: np.ndarray) -> Image:
    """I = M*s + J*(1 - M) with flake brightness s."""
    if mask.shape != (clean.height, clean.width):
        raise ShapeMismatchError(f"mask {mask.shape} != image {(clean.height, clean.width)}")
    m = mask[..., None]
    out = m * SNOW_COLOR + clean.pixels * (1.0 - m)
    return Image(np.clip(out, 0.0, 1.0))


def synthesize_snow(clean: Image, p: DegradationParams) -> Image:
    sp = p.snow
    if sp.flake_count == 0 or sp.opacity == 0.0:
        return clean
    return composite_snow(clean, snow_mask(clean.height, clean.width, sp, p.seed))


SYNTHESIZERS = {
    "haze": synthesize_haze,
    "rain": synthesize_rain,
    "snow": synthesize_snow,
}


def crop_patches(img: Image, size: int, stride: int) -> list:
    if size > min(img.height, img.width):
        raise InvalidArgumentError(
            f"patch size {size} exceeds image dims {(img.height, img.width)}"
        )
    if stride < 1:
        raise InvalidArgumentError("stride must be >= 1")
    patches = []
    for y in range(0, img.height - size + 1, stride):
        for x in range(0, img.width - size + 1, stride):
            patches.append(Image(img.pixels[y : y + size, x : x + size]))
    return patches


def random_clean_image(h: int, w: int, rng: np.random.Generator) -> Image:
    """Procedural clean image: smooth per-channel gradients plus soft shapes."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ys, xs = ys / max(h - 1, 1), xs / max(w - 1, 1)
    img = np.zeros((h, w, 3))
    for c in range(3):
        a, b, cc = rng.uniform(-0.5, 0.5, 3)
        img[..., c] = 0.5 + a * (xs - 0.5) + b * (ys - 0.5) + cc * (xs - 0.5) * (ys - 0.5)
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.08, 0.35)
        color = rng.uniform(0.1, 0.9, 3)
        d2 = (ys - cy) ** 2 + (xs - cx) ** 2
        alpha = np.exp(-d2 / (2 * r**2))[..., None]
        img = img * (1 - 0.8 * alpha) + color * 0.8 * alpha
    # keep headroom so degradations stay in range
    return Image(np.clip(0.08 + 0.84 * img, 0.0, 1.0))


def save_dataset(ds: Dataset, root: Path | str) -> None:
    """On-disk layout: degraded/, clean/ with matching PNG names + manifest.json."""
    root = Path(root)
    (root / "degraded").mkdir(parents=True, exist_ok=True)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    names = []
    for i, pair in enumerate(ds.pairs):
        name = f"{i:05d}.png"
        PILImage.fromarray(pair.degraded.to_uint8()).save(root / "degraded" / name)
        PILImage.fromarray(pair.clean.to_uint8()).save(root / "clean" / name)
        names.append(name)
    manifest = {"task_kind": ds.task_kind, "split": ds.split, "pairs": names}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(root: Path | str, task_id: int = 1) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise MissingFileError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise MalformedManifestError(f"{manifest_path}: {e}") from e
    for key in ("task_kind", "split", "pairs"):
        if key not in manifest:
            raise MalformedManifestError(f"{manifest_path}: missing key {key!r}")
    pairs = []
    for name in manifest["pairs"]:
        deg_path = root / "degraded" / name
        clean_path = root / "clean" / name
        for path in (deg_path, clean_path):
            if not path.exists():
                raise UnpairedImageError(f"listed image missing: {path}")
        deg = Image.from_uint8(np.asarray(PILImage.open(deg_path).convert("RGB")))
        cln = Image.from_uint8(np.asarray(PILImage.open(clean_path).convert("RGB")))
        pairs.append(SamplePair(deg, cln, task_id))
    return Dataset(tuple(pairs), manifest["task_kind"], manifest["split"])
