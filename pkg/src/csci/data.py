"""Synthetic clothes-changing data, JSONL manifests and target precomputation.

Identity is carried by a glyph shape, "clothes" by the glyph's fill color and
the camera by the background tone, so identity and color are independent by
construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np

from .color import ColorHistConfig, color_vector
from .io import read_image, write_csch, write_image

MANIFEST_KEYS = ("source", "identity", "clothes", "camera", "tracklet", "frame", "split")

GLYPHS = ("circle", "square", "triangle", "plus", "ring", "diamond", "cross", "ell", "tee", "hourglass")
# (stretch, rotation) variants multiplying the glyph vocabulary; the stretch
# is area-preserving so every identity covers the same fraction of the frame
GLYPH_VARIANTS = ((1.0, 0.0), (1.5, 0.0), (1.0, np.pi / 4), (1.5, np.pi / 2), (1.3, np.pi / 4), (1.3, -np.pi / 4))
GLYPH_AREA = 0.25
# 0 keeps each glyph's natural size, 1 equalizes areas exactly; halfway keeps
# size as a weak identity cue without letting it swamp the color mass ratios
GLYPH_AREA_MIX = 0.5

# saturated "clothes" colors shared across identities
FG_PALETTE = np.array([
    [220, 40, 40], [40, 170, 60], [40, 70, 220], [235, 200, 40],
    [200, 60, 200], [40, 200, 210], [240, 130, 30], [120, 60, 30],
], dtype=np.float64)
# muted background tones, one per camera
BG_PALETTE = np.array([
    [90, 90, 90], [170, 160, 140], [60, 80, 110], [120, 140, 100],
    [150, 110, 120], [200, 200, 200],
], dtype=np.float64)


class Split(str, Enum):
    TRAIN = "train"
    QUERY = "query"
    GALLERY = "gallery"


@dataclass(frozen=True)
class Sample:
    source: str
    identity: int
    clothes: int
    camera: int
    tracklet: int | None = None
    frame: int | None = None
    split: Split = Split.TRAIN

    def to_json(self) -> dict:
        d = asdict(self)
        d["split"] = Split(self.split).value
        return d


@dataclass(frozen=True)
class SyntheticSpec:
    shape_kind: str
    glyph_stretch: float
    glyph_rotation: float
    fg_color: tuple[int, int, int]
    bg_color: tuple[int, int, int]
    jitter: float
    pose: tuple[float, float, float, float]  # rotation, scale, dx, dy


class ManifestError(ValueError):
    pass


def _parse_sample(obj, lineno: int) -> Sample:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    missing = [k for k in ("source", "identity", "clothes", "camera", "split") if k not in obj]
    if missing:
        raise ManifestError(f"line {lineno}: missing field {missing[0]!r}")
    unknown = set(obj) - set(MANIFEST_KEYS)
    if unknown:
        raise ManifestError(f"line {lineno}: unknown field {sorted(unknown)[0]!r}")
    try:
        split = Split(obj["split"])
    except ValueError:
        raise ManifestError(f"line {lineno}: bad split {obj['split']!r}") from None
    for key in ("identity", "clothes", "camera"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise ManifestError(f"line {lineno}: {key} must be an integer")
    if obj["identity"] < 0:
        raise ManifestError(f"line {lineno}: identity must be >= 0")
    for key in ("tracklet", "frame"):
        if obj.get(key) is not None and not isinstance(obj[key], int):
            raise ManifestError(f"line {lineno}: {key} must be an integer or null")
    return Sample(str(obj["source"]), obj["identity"], obj["clothes"], obj["camera"],
                  obj.get("tracklet"), obj.get("frame"), split)


def load_manifest(path) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"line {lineno}: invalid JSON ({e.msg})") from None
            samples.append(_parse_sample(obj, lineno))
    return samples


def write_manifest(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(s.to_json()) + "\n")


# ----------------------------------------------------------- glyph rendering


def _glyph_mask(kind: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inside test on glyph-local coordinates, glyph roughly spans [-1, 1]."""
    ax, ay = np.abs(x), np.abs(y)
    r = np.hypot(x, y)
    if kind == "circle":
        return r <= 0.9
    if kind == "square":
        return (ax <= 0.75) & (ay <= 0.75)
    if kind == "triangle":
        return (y <= 0.7) & (y >= 2.0 * ax - 0.9)
    if kind == "plus":
        return ((ax <= 0.25) & (ay <= 0.9)) | ((ay <= 0.25) & (ax <= 0.9))
    if kind == "ring":
        return (r <= 0.9) & (r >= 0.5)
    if kind == "diamond":
        return ax + ay <= 0.95
    if kind == "cross":
        return ((np.abs(x - y) <= 0.3) | (np.abs(x + y) <= 0.3)) & (ax <= 0.8) & (ay <= 0.8)
    if kind == "ell":
        return ((x >= -0.7) & (x <= -0.2) & (ay <= 0.85)) | ((y >= 0.35) & (y <= 0.85) & (x >= -0.7) & (x <= 0.7))
    if kind == "tee":
        return ((y >= -0.85) & (y <= -0.4) & (ax <= 0.8)) | ((ax <= 0.25) & (y >= -0.85) & (y <= 0.85))
    if kind == "hourglass":
        return (ay <= 0.85) & (ax <= np.abs(y) * 0.9 + 0.1)
    raise ValueError(f"unknown glyph {kind!r}")


def glyph_for_identity(identity: int) -> tuple[str, float, float]:
    """``(kind, stretch, rotation)``; distinct for every identity."""
    n = len(GLYPHS)
    variant = identity // n
    if variant >= len(GLYPH_VARIANTS):
        raise ValueError(f"at most {n * len(GLYPH_VARIANTS)} distinct identities are supported")
    stretch, rot = GLYPH_VARIANTS[variant]
    return GLYPHS[identity % n], stretch, rot


@lru_cache(maxsize=None)
def _area_scale(kind: str) -> float:
    """Scale putting the glyph's area at ``GLYPH_AREA`` of the [-1, 1] frame."""
    c = (np.arange(512) + 0.5) / 256.0 - 1.0
    X, Y = np.meshgrid(c, c)
    frac = _glyph_mask(kind, X, Y).mean()
    return float((GLYPH_AREA / frac) ** (0.5 * GLYPH_AREA_MIX))


def render(spec: SyntheticSpec, size: int, rng: np.random.Generator, supersample: int = 4) -> np.ndarray:
    """Anti-aliased glyph on a flat background with uniform pixel noise."""
    s = supersample
    coords = (np.arange(size * s) + 0.5) / (size * s) * 2.0 - 1.0
    X, Y = np.meshgrid(coords, coords)
    rot, scale, dx, dy = spec.pose
    angle = spec.glyph_rotation + rot
    c, sn = np.cos(angle), np.sin(angle)
    k = _area_scale(spec.shape_kind) * scale
    xs, ys = X - dx, Y - dy
    lx = (c * xs + sn * ys) / (k * spec.glyph_stretch)
    ly = (-sn * xs + c * ys) * spec.glyph_stretch / k
    inside = _glyph_mask(spec.shape_kind, lx, ly).astype(np.float64)
    cover = inside.reshape(size, s, size, s).mean(axis=(1, 3))[..., None]
    img = np.asarray(spec.bg_color) * (1 - cover) + np.asarray(spec.fg_color) * cover
    img = img + rng.uniform(-spec.jitter, spec.jitter, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@dataclass
class SyntheticData:
    samples: list[Sample]
    images: np.ndarray  # (N, H, W, 3) uint8
    specs: list[SyntheticSpec]

    def subset(self, split: Split) -> tuple[list[Sample], np.ndarray]:
        idx = [i for i, s in enumerate(self.samples) if s.split == split]
        return [self.samples[i] for i in idx], self.images[idx]


def _random_pose(rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.uniform(-0.15, 0.15), rng.uniform(0.92, 1.08),
                     rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)])


def gen_synthetic(n_ids: int, colors_per_id: int, imgs_per_combo: int, seed: int = 0,
                  image_size: int = 56, n_cameras: int = 4, jitter: float = 8.0,
                  train_fraction: float = 0.5, video: bool = False, n_frames: int = 4,
                  color_switch: bool = False) -> SyntheticData:
    """Render a clothes-changing dataset.

    The first ``train_fraction`` of identities is the training split. For each
    remaining identity the first half of its clothes go to the query split and
    the rest to the gallery, so query and gallery never share an
    ``(identity, clothes)`` pair. Cameras cycle over images within a combo.

    In video mode ``imgs_per_combo`` counts tracklets of ``n_frames`` frames
    with a smoothly drifting pose; ``color_switch`` changes the clothes of a
    training tracklet half way through.
    """
    if n_ids < 2:
        raise ValueError("n_ids must be >= 2")
    if colors_per_id < 2:
        raise ValueError("colors_per_id must be >= 2 for a clothes-changing split")
    if colors_per_id > len(FG_PALETTE):
        raise ValueError(f"colors_per_id must be <= {len(FG_PALETTE)}")
    if n_cameras > len(BG_PALETTE):
        raise ValueError(f"n_cameras must be <= {len(BG_PALETTE)}")
    rng = np.random.default_rng(seed)
    n_train = max(1, min(n_ids - 1, int(round(n_ids * train_fraction))))
    samples, images, specs = [], [], []
    tracklet = 0
    for ident in range(n_ids):
        kind, stretch, grot = glyph_for_identity(ident)
        palette_idx = rng.choice(len(FG_PALETTE), size=colors_per_id, replace=False)
        for clothes in range(colors_per_id):
            if ident < n_train:
                split = Split.TRAIN
            else:
                split = Split.QUERY if clothes < colors_per_id // 2 else Split.GALLERY
            for j in range(imgs_per_combo):
                camera = j % n_cameras
                bg = tuple(int(v) for v in BG_PALETTE[camera])
                frames = n_frames if video else 1
                start, end = _random_pose(rng), _random_pose(rng)
                for t in range(frames):
                    cl = clothes
                    if video and color_switch and split is Split.TRAIN and t >= frames // 2:
                        cl = (clothes + 1) % colors_per_id
                    fg = tuple(int(v) for v in FG_PALETTE[palette_idx[cl]])
                    w = t / max(frames - 1, 1)
                    pose = tuple(float(v) for v in (1 - w) * start + w * end)
                    spec = SyntheticSpec(kind, stretch, grot, fg, bg, jitter, pose)
                    n = len(images)
                    images.append(render(spec, image_size, rng))
                    specs.append(spec)
                    samples.append(Sample(
                        source=f"images/{n:06d}.png", identity=ident, clothes=cl, camera=camera,
                        tracklet=tracklet if video else None, frame=t if video else None, split=split,
                    ))
                tracklet += 1
    return SyntheticData(samples, np.stack(images), specs)


def write_synthetic(data: SyntheticData, out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for s, img in zip(data.samples, data.images):
        write_image(out / s.source, img)
    write_manifest(data.samples, out / "manifest.jsonl")
    with open(out / "specs.jsonl", "w", encoding="utf-8") as f:
        for s, spec in zip(data.samples, data.specs):
            f.write(json.dumps({"source": s.source, **asdict(spec)}) + "\n")
    return out / "manifest.jsonl"


def load_images(samples, root=".") -> np.ndarray:
    root = Path(root)
    out = []
    for s in samples:
        try:
            out.append(read_image(root / s.source))
        except (OSError, ValueError) as e:
            raise OSError(f"cannot read image for sample {s.source!r}: {e}") from e
    return np.stack(out) if out else np.zeros((0, 0, 0, 3), dtype=np.uint8)


def compute_targets(images, cfg: ColorHistConfig) -> np.ndarray:
    return np.stack([color_vector(img, cfg) for img in images])


def precompute_targets(samples, cfg: ColorHistConfig, out_path, root=".") -> np.ndarray:
    """Write one CSCH record per sample, in manifest order."""
    targets = compute_targets(load_images(samples, root), cfg) if samples else np.zeros((0, cfg.output_dim))
    write_csch(out_path, targets)
    return targets
