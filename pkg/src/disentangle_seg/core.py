"""Shared domain types and on-disk dataset representation.

Images are single-channel float arrays in [0, 1]; masks are binary {0, 1}
arrays of the same shape. On disk both are stored as 8-bit grayscale PNG
(masks use {0, 255}) under ``<dir>/images/`` and ``<dir>/masks/`` with
matching filenames. Loading is deterministic (lexicographic filename
order) so dataset iteration order is stable across runs and platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

DEFAULT_RESOLUTION = 256

META_FILENAME = "meta.json"


class DatasetError(Exception):
    """Raised for malformed or missing dataset content."""


def validate_image(pixels: np.ndarray, resolution: int | None = None) -> np.ndarray:
    """Check an image array: 2D, finite, in [0, 1], optionally square at `resolution`."""
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.ndim != 2:
        raise DatasetError(f"image must be 2D, got shape {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        raise DatasetError("image contains non-finite values")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise DatasetError(
            f"image values outside [0,1]: min={pixels.min()}, max={pixels.max()}"
        )
    if resolution is not None and pixels.shape != (resolution, resolution):
        raise DatasetError(
            f"image shape {pixels.shape} does not match resolution {resolution}"
        )
    return pixels


def validate_mask(labels: np.ndarray, image_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Check a mask array: binary {0,1}, optionally matching `image_shape`."""
    labels = np.asarray(labels, dtype=np.float32)
    if labels.ndim != 2:
        raise DatasetError(f"mask must be 2D, got shape {labels.shape}")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise DatasetError("mask values must be exactly 0 or 1")
    if image_shape is not None and labels.shape != tuple(image_shape):
        raise DatasetError(
            f"mask shape {labels.shape} does not match image shape {image_shape}"
        )
    return labels


@dataclass
class Sample:
    """One image/mask pair tagged with its appearance domain."""

    image: np.ndarray  # float32 (H, W) in [0, 1]
    mask: np.ndarray   # float32 (H, W) in {0, 1}
    domain_id: str = ""
    name: str = ""

    def __post_init__(self):
        self.image = validate_image(self.image)
        self.mask = validate_mask(self.mask, self.image.shape)

    @property
    def resolution(self) -> int:
        return self.image.shape[0]


@dataclass
class Dataset:
    """Ordered, immutable-by-convention collection of samples from one domain."""

    samples: list[Sample]
    domain_id: str = ""
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.samples:
            raise DatasetError("empty dataset")
        res = {s.image.shape for s in self.samples}
        if len(res) != 1:
            raise DatasetError(f"samples have mixed resolutions: {sorted(res)}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    @property
    def resolution(self) -> int:
        return self.samples[0].resolution


def _load_png_gray(path: Path) -> np.ndarray:
    with PILImage.open(path) as im:
        if im.mode not in ("L", "I;16", "1"):
            raise DatasetError(f"non-grayscale image: {path}")
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.uint8)


def load_dataset(path: str | Path, resolution: int | None = None) -> Dataset:
    """Load a dataset directory laid out as ``<path>/images/*.png`` + ``<path>/masks/*.png``.

    Filenames under images/ and masks/ must match 1:1. Samples are returned
    in lexicographic filename order. `resolution`, when given, is enforced
    on every image with a hard error naming the offending file.
    """
    path = Path(path)
    img_dir = path / "images"
    mask_dir = path / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"missing images/ or masks/ under {path}")

    img_files = sorted(p.name for p in img_dir.glob("*.png"))
    if not img_files:
        raise DatasetError(f"empty dataset: no PNG images under {img_dir}")

    meta = {}
    meta_path = path / META_FILENAME
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
    domain_id = meta.get("domain_id", path.name)

    samples = []
    for name in img_files:
        mask_path = mask_dir / name
        if not mask_path.exists():
            raise DatasetError(f"missing mask for image: {name}")
        raw_img = _load_png_gray(img_dir / name)
        if resolution is not None and raw_img.shape != (resolution, resolution):
            raise DatasetError(
                f"image {name} has shape {raw_img.shape}, expected "
                f"({resolution}, {resolution})"
            )
        raw_mask = _load_png_gray(mask_path)
        if raw_mask.shape != raw_img.shape:
            raise DatasetError(f"mask shape mismatch for {name}")
        bad = ~((raw_mask == 0) | (raw_mask == 255))
        if bad.any():
            raise DatasetError(f"mask {name} has values other than 0/255")
        samples.append(
            Sample(
                image=raw_img.astype(np.float32) / 255.0,
                mask=(raw_mask > 0).astype(np.float32),
                domain_id=domain_id,
                name=name,
            )
        )
    return Dataset(
        samples=samples,
        domain_id=domain_id,
        seed=meta.get("seed"),
        extra={k: v for k, v in meta.items() if k not in ("domain_id", "seed")},
    )


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write a dataset in the canonical layout; images quantized to 8 bit.

    Round trip: masks reload bit-identically; image pixels reload within
    1/255 absolute error (8-bit quantization).
    """
    path = Path(path)
    img_dir = path / "images"
    mask_dir = path / "masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)

    width = max(5, len(str(len(ds) - 1)))
    for i, s in enumerate(ds):
        name = s.name or f"{i:0{width}d}.png"
        img8 = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8)
        mask8 = (s.mask > 0.5).astype(np.uint8) * 255
        PILImage.fromarray(img8, mode="L").save(img_dir / name)
        PILImage.fromarray(mask8, mode="L").save(mask_dir / name)

    meta = {"domain_id": ds.domain_id, "seed": ds.seed}
    meta.update(ds.extra)
    (path / META_FILENAME).write_text(json.dumps(meta, indent=2, sort_keys=True))
