"""Synthetic speckled-vessel data generator with controllable appearance domains.

Anatomy is one or more elliptical "vessel" cross-sections (dark lumen plus a
bright wall band) on a uniform background; appearance is controlled by a
DomainSpec (speckle strength, brightness, contrast, blur, acoustic-shadow
probability). Masks depend only on the anatomy stream of the per-sample RNG,
so they are identical across DomainSpecs for a fixed seed.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace

import cv2
import numpy as np

from .core import Dataset, Sample, save_dataset

logger = logging.getLogger(__name__)

# Mask foreground fraction kept inside this band (rejection-resample outside).
MIN_FG_FRACTION = 0.01
MAX_FG_FRACTION = 0.40

_LUMEN_FACTOR = 0.2    # lumen intensity relative to background
_WALL_OFFSET = 0.35    # wall band brightness above background
_WALL_SCALE = 1.45     # wall outer ellipse relative to lumen radii


@dataclass(frozen=True)
class DomainSpec:
    """Appearance recipe for one synthetic "scanner domain"."""

    domain_id: str
    speckle_strength: float = 0.3   # multiplicative noise amplitude, >= 0
    base_brightness: float = 0.5    # background level in [0, 1]
    contrast_gain: float = 1.0      # gain about the image mean, > 0
    blur_sigma: float = 0.5         # Gaussian blur in pixels, >= 0
    shadow_probability: float = 0.0 # chance of a vertical attenuation band

    def clamped(self) -> "DomainSpec":
        """Return a copy with out-of-range fields clamped (logged)."""
        fixed = {}
        if self.speckle_strength < 0:
            fixed["speckle_strength"] = 0.0
        if not 0.0 <= self.base_brightness <= 1.0:
            fixed["base_brightness"] = float(np.clip(self.base_brightness, 0.0, 1.0))
        if self.contrast_gain <= 0:
            fixed["contrast_gain"] = 1e-3
        if self.blur_sigma < 0:
            fixed["blur_sigma"] = 0.0
        if not 0.0 <= self.shadow_probability <= 1.0:
            fixed["shadow_probability"] = float(np.clip(self.shadow_probability, 0.0, 1.0))
        if fixed:
            logger.warning("DomainSpec %s: clamped fields %s", self.domain_id, fixed)
            return replace(self, **fixed)
        return self

    def to_dict(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "speckle_strength": self.speckle_strength,
            "base_brightness": self.base_brightness,
            "contrast_gain": self.contrast_gain,
            "blur_sigma": self.blur_sigma,
            "shadow_probability": self.shadow_probability,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(**d)


@dataclass(frozen=True)
class AnatomySpec:
    """Geometry of the vessels in one image; coordinates normalized to [0,1]."""

    centers: tuple[tuple[float, float], ...]  # one (x, y) per vessel
    radii: tuple[tuple[float, float], ...]    # one (rx, ry) per vessel
    rotations: tuple[float, ...]              # radians, per vessel

    @property
    def count(self) -> int:
        return len(self.centers)


# Four canonical domains: "A" for training, "B"/"C"/"D" at monotonically
# increasing appearance distance from "A".
CANONICAL_DOMAINS = {
    "A": DomainSpec("A", speckle_strength=0.25, base_brightness=0.50,
                    contrast_gain=1.00, blur_sigma=0.5, shadow_probability=0.0),
    "B": DomainSpec("B", speckle_strength=0.40, base_brightness=0.42,
                    contrast_gain=0.85, blur_sigma=1.0, shadow_probability=0.10),
    "C": DomainSpec("C", speckle_strength=0.55, base_brightness=0.62,
                    contrast_gain=1.30, blur_sigma=1.6, shadow_probability=0.25),
    "D": DomainSpec("D", speckle_strength=0.75, base_brightness=0.30,
                    contrast_gain=0.60, blur_sigma=2.2, shadow_probability=0.50),
}


def sample_seed(dataset_seed: int, index: int) -> int:
    """Stable per-sample seed: blake2b of "<seed>:<index>" taken as u64."""
    digest = hashlib.blake2b(f"{dataset_seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _stream(seed: int, label: str) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}/{label}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def _ellipse_field(res: int, cx: float, cy: float, rx: float, ry: float,
                   rot: float) -> np.ndarray:
    """Normalized squared-radius field; <= 1 inside the ellipse."""
    ys, xs = np.mgrid[0:res, 0:res].astype(np.float64)
    x = xs / (res - 1) - cx
    y = ys / (res - 1) - cy
    c, s = np.cos(rot), np.sin(rot)
    u = c * x + s * y
    v = -s * x + c * y
    return (u / rx) ** 2 + (v / ry) ** 2


def sample_anatomy(rng: np.random.Generator) -> AnatomySpec:
    """Draw vessel geometry: 1-2 ellipses, fully inside the image with margin."""
    count = int(rng.integers(1, 3))
    centers, radii, rots = [], [], []
    for _ in range(count):
        rx = float(rng.uniform(0.06, 0.20))
        ry = float(rng.uniform(0.06, 0.20))
        margin = _WALL_SCALE * max(rx, ry) + 0.02
        cx = float(rng.uniform(margin, 1.0 - margin))
        cy = float(rng.uniform(margin, 1.0 - margin))
        centers.append((cx, cy))
        radii.append((rx, ry))
        rots.append(float(rng.uniform(0.0, np.pi)))
    return AnatomySpec(tuple(centers), tuple(radii), tuple(rots))


def render_mask(aspec: AnatomySpec, resolution: int) -> np.ndarray:
    """Rasterize the union of ellipse interiors as a {0,1} float mask."""
    mask = np.zeros((resolution, resolution), dtype=np.float32)
    for (cx, cy), (rx, ry), rot in zip(aspec.centers, aspec.radii, aspec.rotations):
        field = _ellipse_field(resolution, cx, cy, rx, ry, rot)
        mask[field <= 1.0] = 1.0
    return mask


def _render_structure(aspec: AnatomySpec, resolution: int, base: float) -> np.ndarray:
    """Noise-free scene: background at `base`, dark lumen, bright wall band."""
    img = np.full((resolution, resolution), base, dtype=np.float64)
    wall_val = min(1.0, base + _WALL_OFFSET)
    lumen_val = base * _LUMEN_FACTOR
    for (cx, cy), (rx, ry), rot in zip(aspec.centers, aspec.radii, aspec.rotations):
        outer = _ellipse_field(resolution, cx, cy, _WALL_SCALE * rx, _WALL_SCALE * ry, rot)
        inner = _ellipse_field(resolution, cx, cy, rx, ry, rot)
        img[outer <= 1.0] = wall_val
        img[inner <= 1.0] = lumen_val
    return img


def synth_sample(rng_seed: int, dspec: DomainSpec, resolution: int = 256) -> Sample:
    """Generate one sample, deterministic in (rng_seed, dspec, resolution).

    Anatomy and appearance use independent RNG streams derived from the
    seed, so the mask is invariant to the DomainSpec.
    """
    dspec = dspec.clamped()
    rng_anat = _stream(rng_seed, "anatomy")
    rng_app = _stream(rng_seed, "appearance")

    n_pix = resolution * resolution
    for _ in range(100):
        aspec = sample_anatomy(rng_anat)
        mask = render_mask(aspec, resolution)
        frac = mask.sum() / n_pix
        if MIN_FG_FRACTION <= frac <= MAX_FG_FRACTION:
            break
    else:
        raise RuntimeError("anatomy rejection sampling failed after 100 tries")

    img = _render_structure(aspec, resolution, dspec.base_brightness)

    # contrast about the mean, then multiplicative speckle
    img = img.mean() + dspec.contrast_gain * (img - img.mean())
    speckle = rng_app.standard_normal(img.shape)
    img = img * (1.0 + dspec.speckle_strength * speckle)
    img = np.clip(img, 0.0, 1.0)

    if dspec.blur_sigma > 0:
        img = cv2.GaussianBlur(img, (0, 0), dspec.blur_sigma,
                               borderType=cv2.BORDER_REFLECT)

    # vertical attenuation band, a crude acoustic shadow
    if rng_app.uniform() < dspec.shadow_probability:
        x0 = rng_app.uniform(0.2, 0.8) * resolution
        width = rng_app.uniform(0.05, 0.15) * resolution
        depth = rng_app.uniform(0.3, 0.6)
        xs = np.arange(resolution, dtype=np.float64)
        atten = 1.0 - depth * np.exp(-0.5 * ((xs - x0) / width) ** 2)
        img = img * atten[None, :]

    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return Sample(image=img, mask=mask, domain_id=dspec.domain_id)


def synth_domain_dataset(dspec: DomainSpec, n: int, seed: int,
                         resolution: int = 256,
                         out: str | None = None) -> Dataset:
    """Generate `n` samples sharing one appearance domain.

    Per-sample seeds come from sample_seed(seed, i), so results do not
    depend on generation order. When `out` is given the dataset is also
    written to disk.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    width = max(5, len(str(n - 1)))
    samples = []
    for i in range(n):
        s = synth_sample(sample_seed(seed, i), dspec, resolution)
        s.name = f"{i:0{width}d}.png"
        samples.append(s)
    ds = Dataset(samples=samples, domain_id=dspec.domain_id, seed=seed,
                 extra={"domain_spec": dspec.clamped().to_dict()})
    if out is not None:
        save_dataset(ds, out)
    return ds
