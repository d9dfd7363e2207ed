"""Paired IR/RGB aerial imagery: annotations, masks, loading and a synthetic toy set.

On-disk layout (relative to a dataset root)::

    <split>/ir/<stem>.png       8-bit grayscale thermal image
    <split>/rgb/<stem>.png      8-bit RGB image of the same scene
    <split>/ann/<stem>.txt      one box per line: "class cx cy w h angle_deg"
    <split>/mask/<stem>.png     binary foreground mask, 0/255
    <split>/mask/<stem>_cls.png class-colored mask (storage only)
    <split>_manifest.txt        line-oriented index, see ``DatasetManifest.save``

Images are normalized to [-1, 1]. Masks stay binary through every resize.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from .errors import ConfigurationError, InvalidAnnotationError

logger = logging.getLogger(__name__)

CLASS_NAMES = ("car", "truck", "bus", "van", "freight_car")

# Storage colors for the class mask. The model never reads them.
CLASS_COLORS = np.array(
    [
        [255, 0, 0],  # car
        [0, 255, 0],  # truck
        [0, 0, 255],  # bus
        [255, 255, 0],  # van
        [255, 0, 255],  # freight car
    ],
    dtype=np.uint8,
)

DOMAINS = ("ir", "rgb")
IR, RGB = 0, 1

DEFAULT_IMAGE_SIZE = 256
# Mean IR intensity on the [0, 1] scale below which a sample counts as "dark".
DEFAULT_DARKNESS_THRESHOLD = 0.1

MANIFEST_HEADER = "# stawgan-manifest v1"
MANIFEST_FIELDS = ("ir", "rgb", "ann", "mask")
MISSING = "-"


@dataclass(frozen=True)
class OrientedBox:
    """Rotated rectangle in pixel coordinates.

    ``angle`` is in radians, counter-clockwise as seen on screen (y axis
    pointing down).
    """

    center_x: float
    center_y: float
    width: float
    height: float
    angle: float = 0.0
    class_id: int = 0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidAnnotationError(
                f"box dimensions must be positive, got {self.width}x{self.height}"
            )
        if not 0 <= self.class_id < len(CLASS_NAMES):
            raise InvalidAnnotationError(f"class_id {self.class_id} outside [0, {len(CLASS_NAMES) - 1}]")
        values = (self.center_x, self.center_y, self.width, self.height, self.angle)
        if not all(math.isfinite(v) for v in values):
            raise InvalidAnnotationError(f"non-finite box parameters {values}")

    def corners(self) -> np.ndarray:
        """4x2 array of (x, y) corners in drawing order."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        hw, hh = self.width / 2, self.height / 2
        local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
        xs = self.center_x + local[:, 0] * c + local[:, 1] * s
        ys = self.center_y - local[:, 0] * s + local[:, 1] * c
        return np.stack([xs, ys], axis=1)

    def to_line(self) -> str:
        return (
            f"{self.class_id} {self.center_x:.6g} {self.center_y:.6g} "
            f"{self.width:.6g} {self.height:.6g} {math.degrees(self.angle):.6g}"
        )


def parse_annotation_line(line: str) -> OrientedBox:
    parts = line.split()
    if len(parts) != 6:
        raise InvalidAnnotationError(f"expected 'class cx cy w h angle_deg', got {line!r}")
    try:
        cls = int(parts[0])
        cx, cy, w, h, deg = (float(p) for p in parts[1:])
    except ValueError as exc:
        raise InvalidAnnotationError(f"malformed annotation line {line!r}") from exc
    return OrientedBox(cx, cy, w, h, math.radians(deg), cls)


def read_annotations(path: str | Path) -> list[OrientedBox]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read annotation file {path}: {exc}") from exc
    boxes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            boxes.append(parse_annotation_line(line))
        except InvalidAnnotationError as exc:
            raise InvalidAnnotationError(f"{path}:{lineno}: {exc}") from exc
    return boxes


def write_annotations(path: str | Path, boxes: Iterable[OrientedBox]) -> None:
    Path(path).write_text("".join(b.to_line() + "\n" for b in boxes), encoding="utf-8")


def rasterize_obb(box: OrientedBox, height: int, width: int) -> np.ndarray:
    """Binary mask of the pixels whose centers fall inside ``box``.

    Pixel (i, j) has its center at (j + 0.5, i + 0.5). Membership is tested in
    the box frame with half-open bounds so that boxes tiling the plane never
    share a pixel.
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"frame size must be positive, got {height}x{width}")
    if not isinstance(box, OrientedBox):
        raise InvalidAnnotationError(f"expected OrientedBox, got {type(box).__name__}")
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5 - box.center_y
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5 - box.center_x
    c, s = math.cos(box.angle), math.sin(box.angle)
    # inverse of the rotation used in OrientedBox.corners
    u = xs * c - ys * s
    v = xs * s + ys * c
    hw, hh = box.width / 2, box.height / 2
    inside = (u >= -hw) & (u < hw) & (v >= -hh) & (v < hh)
    return inside.astype(np.uint8)


def build_masks(boxes: Sequence[OrientedBox], height: int, width: int):
    """Rasterize all boxes of one image.

    Returns ``(target_mask, foreground_mask, target_label, class_mask)``:
    target_mask is HxWx1 float32 in {-1, 1}, the two binary masks are HxW
    uint8 in {0, 1}, class_mask is HxWx3 uint8 colored by ``CLASS_COLORS``
    (later boxes overwrite earlier ones).
    """
    union = np.zeros((height, width), dtype=np.uint8)
    class_mask = np.zeros((height, width, 3), dtype=np.uint8)
    for box in boxes:
        m = rasterize_obb(box, height, width).astype(bool)
        union |= m
        class_mask[m] = CLASS_COLORS[box.class_id]
    target_mask = (union.astype(np.float32) * 2.0 - 1.0)[..., None]
    return target_mask, union.copy(), union.copy(), class_mask


def normalize(image: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    """Map integer intensities in [0, 2**bit_depth - 1] affinely onto [-1, 1]."""
    image = np.asarray(image)
    top = float(2**bit_depth - 1)
    if image.size and (np.min(image) < 0 or np.max(image) > top):
        raise ValueError(f"intensities must lie in [0, {top:g}], got [{np.min(image)}, {np.max(image)}]")
    return (image.astype(np.float64) / (top / 2) - 1.0).astype(np.float32)


def denormalize(image: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    top = float(2**bit_depth - 1)
    if image.size and (np.min(image) < -1 - 1e-6 or np.max(image) > 1 + 1e-6):
        raise ValueError(f"normalized values must lie in [-1, 1], got [{np.min(image)}, {np.max(image)}]")
    return (image + 1.0) * (top / 2)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[-1, 1] float image to 8-bit, clipping out-of-range values."""
    return np.clip(np.round((np.asarray(image, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


@dataclass
class ImageSample:
    image: np.ndarray
    target_mask: np.ndarray
    foreground_mask: np.ndarray
    target_label: np.ndarray
    class_mask: np.ndarray
    domain: str
    paired_image: np.ndarray | None = None
    stem: str = ""

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        hw = self.image.shape[:2]
        shapes = [self.target_mask.shape[:2], self.foreground_mask.shape, self.target_label.shape, self.class_mask.shape[:2]]
        if self.paired_image is not None:
            shapes.append(self.paired_image.shape[:2])
        if any(tuple(s) != tuple(hw) for s in shapes):
            raise InvalidAnnotationError(f"spatial shapes disagree: image {hw}, others {shapes}")

    @property
    def ir_image(self) -> np.ndarray | None:
        return self.image if self.domain == "ir" else self.paired_image


@dataclass(frozen=True)
class ManifestRecord:
    ir: str
    rgb: str
    ann: str
    mask: str

    @property
    def stem(self) -> str:
        for p in (self.ir, self.rgb, self.ann):
            if p != MISSING:
                return Path(p).stem
        return ""


@dataclass
class DatasetManifest:
    """Ordered list of records. Paths are relative to ``root``.

    Serialized form: a header line, ``split <name>`` and ``paired <0|1>``
    lines, then one tab-separated record per line in the field order
    ``ir rgb ann mask``. Absent files are written as ``-``.
    """

    root: Path
    records: list[ManifestRecord]
    split: str = "train"
    paired: bool = True
    path: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        self.root = Path(self.root)
        if self.split not in ("train", "val"):
            raise ConfigurationError(f"split must be 'train' or 'val', got {self.split!r}")
        seen = set()
        for rec in self.records:
            if rec in seen:
                raise ConfigurationError(f"duplicate manifest record {rec}")
            seen.add(rec)
            if self.paired and MISSING in (rec.ir, rec.rgb):
                raise ConfigurationError(f"paired manifest has a record without both images: {rec}")

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, rel: str) -> Path | None:
        return None if rel == MISSING else self.root / rel

    def validate(self) -> None:
        for rec in self.records:
            for rel in (rec.ir, rec.rgb, rec.ann, rec.mask):
                p = self.resolve(rel)
                if p is not None and not p.is_file():
                    raise FileNotFoundError(f"manifest entry not found: {p}")

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path is not None else self.root / f"{self.split}_manifest.txt"
        lines = [MANIFEST_HEADER, f"split\t{self.split}", f"paired\t{int(self.paired)}"]
        lines += ["\t".join((r.ir, r.rgb, r.ann, r.mask)) for r in self.records]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.path = path
        return path

    @classmethod
    def load(cls, path: str | Path, root: str | Path | None = None) -> "DatasetManifest":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise OSError(f"cannot read manifest {path}: {exc}") from exc
        if not lines or lines[0].strip() != MANIFEST_HEADER:
            raise ConfigurationError(f"{path} is not a manifest (missing header)")
        meta: dict[str, str] = {}
        records = []
        for line in lines[1:]:
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                meta[parts[0]] = parts[1]
            elif len(parts) == 4:
                records.append(ManifestRecord(*parts))
            else:
                raise ConfigurationError(f"{path}: malformed manifest line {line!r}")
        return cls(
            root=Path(root) if root is not None else path.parent,
            records=records,
            split=meta.get("split", "train"),
            paired=meta.get("paired", "1") == "1",
            path=path,
        )

    @classmethod
    def scan(cls, root: str | Path, split: str = "train", paired: bool = True) -> "DatasetManifest":
        """Index ``root/<split>`` by matching file stems across the modality folders."""
        root = Path(root)
        base = root / split
        if not base.is_dir():
            raise FileNotFoundError(f"split directory not found: {base}")
        stems = sorted({p.stem for d in ("ir", "rgb") for p in (base / d).glob("*.png")})
        records = []
        for stem in stems:
            rels = []
            for sub, ext in (("ir", ".png"), ("rgb", ".png"), ("ann", ".txt"), ("mask", ".png")):
                p = base / sub / f"{stem}{ext}"
                rels.append(p.relative_to(root).as_posix() if p.is_file() else MISSING)
            records.append(ManifestRecord(*rels))
        if paired:
            records = [r for r in records if MISSING not in (r.ir, r.rgb)]
        return cls(root=root, records=records, split=split, paired=paired)


def _read_png(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def _resize(array: np.ndarray, size: int, resample) -> np.ndarray:
    if array.shape[0] == size and array.shape[1] == size:
        return array
    return np.asarray(Image.fromarray(array).resize((size, size), resample=resample))


def load_pair(
    manifest: DatasetManifest,
    index: int,
    size: int = DEFAULT_IMAGE_SIZE,
    source: str = "ir",
) -> ImageSample:
    """Decode one record with ``source`` as the input modality.

    Images are resized bilinearly and normalized; masks are resized with
    nearest-neighbour sampling so they stay binary.
    """
    if not 0 <= index < len(manifest):
        raise IndexError(f"record {index} out of range for manifest of {len(manifest)}")
    if source not in DOMAINS:
        raise ValueError(f"source must be one of {DOMAINS}, got {source!r}")
    rec = manifest.records[index]
    other = "rgb" if source == "ir" else "ir"
    paths = {"ir": manifest.resolve(rec.ir), "rgb": manifest.resolve(rec.rgb)}
    if paths[source] is None:
        raise FileNotFoundError(f"record {index} has no {source} image")

    images = {source: _read_png(paths[source], "L" if source == "ir" else "RGB")}
    if manifest.paired:
        images[other] = _read_png(paths[other], "L" if other == "ir" else "RGB")
    frame = images[source].shape[:2]
    for name, img in images.items():
        if img.shape[:2] != frame:
            raise InvalidAnnotationError(f"{name} frame {img.shape[:2]} differs from {source} frame {frame}")

    ann_path = manifest.resolve(rec.ann)
    boxes = read_annotations(ann_path) if ann_path is not None else []
    target_mask, fg, label, class_mask = build_masks(boxes, *frame)
    mask_path = manifest.resolve(rec.mask)
    if mask_path is not None:
        stored = _read_png(mask_path, "L")
        if stored.shape != frame:
            raise InvalidAnnotationError(f"mask {mask_path} has shape {stored.shape}, image frame is {frame}")
        fg = (stored > 127).astype(np.uint8)
        label = fg.copy()

    def prep(img):
        img = _resize(img, size, Image.BILINEAR)
        img = normalize(img)
        return img[..., None] if img.ndim == 2 else img

    fg = (_resize(fg, size, Image.NEAREST) > 0).astype(np.uint8)
    label = (_resize(label, size, Image.NEAREST) > 0).astype(np.uint8)
    class_mask = _resize(class_mask, size, Image.NEAREST)
    return ImageSample(
        image=prep(images[source]),
        paired_image=prep(images[other]) if other in images else None,
        target_mask=(fg.astype(np.float32) * 2.0 - 1.0)[..., None],
        foreground_mask=fg,
        target_label=label,
        class_mask=class_mask,
        domain=source,
        stem=rec.stem,
    )


def ir_mean_intensity(sample) -> float:
    """Mean IR intensity on the [0, 1] scale.

    Accepts an ``ImageSample``, a path to an 8-bit IR png, or a uint8 array.
    """
    if isinstance(sample, ImageSample):
        ir = sample.ir_image
        if ir is None:
            raise ConfigurationError(f"sample {sample.stem!r} carries no IR image")
        return float((np.mean(ir, dtype=np.float64) + 1.0) / 2.0)
    if isinstance(sample, (str, Path)):
        sample = _read_png(Path(sample), "L")
    arr = np.asarray(sample)
    if arr.dtype != np.uint8:
        raise TypeError("raw IR arrays must be uint8; wrap normalized data in ImageSample")
    return float(np.mean(arr, dtype=np.float64) / 255.0)


def darkness_filter(samples, threshold: float = DEFAULT_DARKNESS_THRESHOLD):
    """Drop samples whose mean IR intensity falls below ``threshold``.

    Returns ``(kept, n_removed)``; order of the kept samples is preserved.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    kept = [s for s in samples if ir_mean_intensity(s) >= threshold]
    removed = len(samples) - len(kept)
    logger.info("darkness filter: removed %d of %d samples (threshold %.3f)", removed, len(samples), threshold)
    return kept, removed


def filter_manifest(manifest: DatasetManifest, threshold: float = DEFAULT_DARKNESS_THRESHOLD):
    """Manifest-level darkness filter; returns ``(new_manifest, n_removed)``."""
    with_ir = [r for r in manifest.records if r.ir != MISSING]
    kept_paths, _ = darkness_filter([manifest.resolve(r.ir) for r in with_ir], threshold)
    kept_set = set(kept_paths)
    # RGB-only records carry no thermal evidence and are kept
    records = [r for r in manifest.records if r.ir == MISSING or manifest.resolve(r.ir) in kept_set]
    out = DatasetManifest(root=manifest.root, records=records, split=manifest.split, paired=manifest.paired)
    return out, len(manifest.records) - len(records)


def write_masks(root: str | Path, split: str = "train") -> int:
    """Rasterize every annotation under ``root/<split>/ann`` into mask pngs."""
    base = Path(root) / split
    ann_dir = base / "ann"
    if not ann_dir.is_dir():
        raise FileNotFoundError(f"annotation directory not found: {ann_dir}")
    (base / "mask").mkdir(exist_ok=True)
    count = 0
    for ann in sorted(ann_dir.glob("*.txt")):
        frame = None
        for sub in ("ir", "rgb"):
            img_path = base / sub / f"{ann.stem}.png"
            if img_path.is_file():
                with Image.open(img_path) as im:
                    frame = (im.height, im.width)
                break
        if frame is None:
            raise FileNotFoundError(f"no image found for annotation {ann}")
        _, fg, _, class_mask = build_masks(read_annotations(ann), *frame)
        Image.fromarray(fg * 255).save(base / "mask" / f"{ann.stem}.png")
        Image.fromarray(class_mask).save(base / "mask" / f"{ann.stem}_cls.png")
        count += 1
    return count


# --------------------------------------------------------------------------
# Synthetic toy data

# Bright vehicle paint per class; every entry has luminance above 0.75.
_TOY_PAINT = np.array(
    [
        [0.98, 0.86, 0.25],
        [0.92, 0.92, 0.96],
        [0.55, 0.90, 1.00],
        [0.98, 0.70, 0.62],
        [0.75, 0.98, 0.55],
    ]
)
_LUMA = np.array([0.299, 0.587, 0.114])


def toy_ir_from_rgb(rgb: np.ndarray) -> np.ndarray:
    """Deterministic thermal rendering of a uint8 RGB toy scene (bright paint runs hot)."""
    u = np.asarray(rgb, dtype=np.float64) / 255.0
    lum = u @ _LUMA
    heat = np.clip(0.1 + 0.75 * lum**2 + 0.2 * u[..., 0], 0.0, 1.0)
    return np.round(heat * 255.0).astype(np.uint8)


def _smooth_noise(rng: np.random.Generator, size: int, cells: int, channels: int) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, (cells + 1, cells + 1, channels))
    up = torch.nn.functional.interpolate(
        torch.from_numpy(coarse).permute(2, 0, 1)[None], size=(size, size), mode="bilinear", align_corners=True
    )
    return up[0].permute(1, 2, 0).numpy()


def render_toy_scene(rng: np.random.Generator, size: int):
    """One synthetic aerial RGB scene and its boxes."""
    # one scalar drives the ground color so that RGB stays recoverable from the thermal twin
    tint = np.array([0.9, 1.1, 0.8])
    shade = rng.uniform(0.15, 0.3) + 0.12 * (_smooth_noise(rng, size, 4, 1) - 0.5)
    rgb = shade * tint + 0.01 * rng.standard_normal((size, size, 3))
    if rng.random() < 0.6:
        # a straight road band
        road = OrientedBox(
            size * rng.uniform(0.3, 0.7), size * rng.uniform(0.3, 0.7), size * 2.0, size * rng.uniform(0.15, 0.25),
            rng.uniform(0, math.pi), 0,
        )
        m = rasterize_obb(road, size, size).astype(bool)
        rgb[m] = 0.33 + 0.01 * rng.standard_normal((int(m.sum()), 3))
    boxes = []
    for _ in range(int(rng.integers(1, 5))):
        w = size * rng.uniform(0.13, 0.25)
        box = OrientedBox(
            center_x=size * rng.uniform(0.15, 0.85),
            center_y=size * rng.uniform(0.15, 0.85),
            width=w,
            height=w * rng.uniform(0.4, 0.6),
            angle=rng.uniform(0, math.pi),
            class_id=int(rng.integers(0, len(CLASS_NAMES))),
        )
        m = rasterize_obb(box, size, size).astype(bool)
        paint = _TOY_PAINT[box.class_id] * rng.uniform(0.95, 1.0)
        rgb[m] = paint + 0.01 * rng.standard_normal((int(m.sum()), 3))
        boxes.append(box)
    rgb_u8 = np.clip(np.round(np.clip(rgb, 0, 1) * 255.0), 0, 255).astype(np.uint8)
    return rgb_u8, boxes


def make_toy_dataset(
    root: str | Path,
    n_samples: int,
    size: int = 64,
    seed: int = 0,
    split: str = "train",
) -> DatasetManifest:
    """Write a deterministic paired toy dataset under ``root/<split>``.

    Every scene is an RGB image with bright oriented "vehicles" on a textured
    ground, its thermal twin ``toy_ir_from_rgb(rgb)``, the annotation text and
    exact masks.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if size < 32:
        raise ValueError("size must be >= 32")
    root = Path(root)
    base = root / split
    for sub in ("ir", "rgb", "ann", "mask"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_samples):
        stem = f"{split}_{i:05d}"
        rgb, boxes = render_toy_scene(rng, size)
        ir = toy_ir_from_rgb(rgb)
        _, fg, _, class_mask = build_masks(boxes, size, size)
        Image.fromarray(rgb).save(base / "rgb" / f"{stem}.png")
        Image.fromarray(ir).save(base / "ir" / f"{stem}.png")
        Image.fromarray(fg * 255).save(base / "mask" / f"{stem}.png")
        Image.fromarray(class_mask).save(base / "mask" / f"{stem}_cls.png")
        write_annotations(base / "ann" / f"{stem}.txt", boxes)
        records.append(
            ManifestRecord(
                *(f"{split}/{sub}/{stem}{ext}" for sub, ext in (("ir", ".png"), ("rgb", ".png"), ("ann", ".txt"), ("mask", ".png")))
            )
        )
    manifest = DatasetManifest(root=root, records=records, split=split, paired=True)
    manifest.save()
    return manifest


# --------------------------------------------------------------------------
# torch view


class PairedTranslationDataset(Dataset):
    """Tensor view of a manifest for training and evaluation.

    Each item holds both modalities (IR as one channel), the {-1, 1} target
    image, and the binary foreground / target-label masks. For unpaired
    manifests only the modality present in the record is returned and the
    other key maps to an empty tensor.
    """

    def __init__(self, manifest: DatasetManifest, size: int = DEFAULT_IMAGE_SIZE, cache: bool = True):
        self.manifest = manifest
        self.size = size
        self.cache = cache
        self._items: dict[int, dict] = {}

    def __len__(self) -> int:
        return len(self.manifest)

    def _load(self, index: int) -> dict:
        rec = self.manifest.records[index]
        source = "ir" if rec.ir != MISSING else "rgb"
        sample = load_pair(self.manifest, index, self.size, source=source)
        chw = lambda a: torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1))).float()
        images = {source: chw(sample.image)}
        if sample.paired_image is not None:
            images["rgb" if source == "ir" else "ir"] = chw(sample.paired_image)
        empty = torch.empty(0)
        return {
            "ir": images.get("ir", empty),
            "rgb": images.get("rgb", empty),
            "target": chw(sample.target_mask),
            "foreground": torch.from_numpy(sample.foreground_mask).float()[None],
            "label": torch.from_numpy(sample.target_label).float()[None],
            "index": index,
        }

    def __getitem__(self, index: int) -> dict:
        if not self.cache:
            return self._load(index)
        if index not in self._items:
            self._items[index] = self._load(index)
        return self._items[index]
