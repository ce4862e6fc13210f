"""Stacked, parameterized augmentation pipeline producing training quadruples.

Seven transforms, each gated by a Bernoulli draw with its own probability and
parameterized by a magnitude: two spatial (crop, horizontal flip — applied to
image and label alike) and five appearance-only (blur, sharpen, noise,
brightness, contrast — labels bypass them). Composition order is fixed:
spatial first, then the appearance chain blur -> sharpen -> noise ->
brightness -> contrast. With every gate inactive the pipeline is the
identity. All sampling is driven by a caller-provided numpy Generator, so a
fixed seed reproduces the whole quadruple bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import cv2
import numpy as np

# transform indices in the stacked order
CROP, FLIP, BLUR, SHARPEN, NOISE, BRIGHTNESS, CONTRAST = range(7)
SPATIAL_IDX = (CROP, FLIP)
DOMAIN_IDX = (BLUR, SHARPEN, NOISE, BRIGHTNESS, CONTRAST)
N_TRANSFORMS = 7

_UNSHARP_SIGMA = 1.0  # fixed low-pass scale for the unsharp mask


@dataclass
class TransformConfig:
    """Per-transform probabilities and magnitude ranges (all overridable)."""

    crop_probability: float = 0.50
    crop_scale: tuple[float, float] = (0.7, 0.9)
    flip_probability: float = 0.05
    blur_probability: float = 0.10
    blur_sigma: tuple[float, float] = (0.25, 1.5)
    sharpen_probability: float = 0.10
    sharpen_amount: tuple[float, float] = (0.5, 2.0)
    noise_probability: float = 0.10
    noise_std: tuple[float, float] = (0.01, 0.1)
    brightness_probability: float = 0.10
    brightness_shift: tuple[float, float] = (-0.2, 0.2)
    contrast_probability: float = 0.10
    contrast_gain: tuple[float, float] = (0.7, 1.3)

    def probabilities(self) -> np.ndarray:
        return np.array([
            self.crop_probability, self.flip_probability,
            self.blur_probability, self.sharpen_probability,
            self.noise_probability, self.brightness_probability,
            self.contrast_probability,
        ])

    def ranges(self) -> list[tuple[float, float]]:
        # flip has no magnitude; keep a zero-width placeholder
        return [tuple(self.crop_scale), (0.0, 0.0),
                tuple(self.blur_sigma), tuple(self.sharpen_amount),
                tuple(self.noise_std), tuple(self.brightness_shift),
                tuple(self.contrast_gain)]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown transform config keys: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kwargs)


@dataclass
class TransformParams:
    """Realized draws for one application of the pipeline.

    `probs`, `magnitudes`, `active` are length-7 in the stacked order
    [crop, flip, blur, sharpen, noise, brightness, contrast]; an instance
    produced for one role carries zero probability (hence inactive gates)
    for the other role's slots. `crop_offset` places the crop window among
    valid positions as fractions in [0,1]^2; `noise_seed` freezes the noise
    field so application is a pure function of (input, params).
    """

    probs: np.ndarray
    magnitudes: np.ndarray
    active: np.ndarray
    crop_offset: tuple[float, float] = (0.5, 0.5)
    noise_seed: int = 0

    @property
    def a(self) -> np.ndarray:
        """Spatial parameter vector [magnitudes; probabilities]."""
        idx = list(SPATIAL_IDX)
        return np.concatenate([self.magnitudes[idx], self.probs[idx]])

    @property
    def d(self) -> np.ndarray:
        """Appearance parameter vector [magnitudes; probabilities]."""
        idx = list(DOMAIN_IDX)
        return np.concatenate([self.magnitudes[idx], self.probs[idx]])


@dataclass
class Quadruple:
    """The four stacked-transform images and the two spatial labels."""

    x_a1d1: np.ndarray
    x_a2d2: np.ndarray
    x_a1d2: np.ndarray
    x_a2d1: np.ndarray
    l1: np.ndarray
    l2: np.ndarray


def sample_params(rng: np.random.Generator, role: str,
                  cfg: TransformConfig | None = None) -> TransformParams:
    """Draw gates and magnitudes for one role ("spatial" or "domain").

    The draw count per call is fixed (gates and magnitudes are drawn for
    every slot of the role, active or not), so downstream reproducibility
    does not depend on which gates fire.
    """
    cfg = cfg or TransformConfig()
    if role not in ("spatial", "domain"):
        raise ValueError(f"unknown role: {role}")
    idx = SPATIAL_IDX if role == "spatial" else DOMAIN_IDX

    probs = np.zeros(N_TRANSFORMS)
    magnitudes = np.zeros(N_TRANSFORMS)
    active = np.zeros(N_TRANSFORMS, dtype=bool)
    all_probs = cfg.probabilities()
    ranges = cfg.ranges()
    for i in idx:
        probs[i] = all_probs[i]
        active[i] = rng.uniform() < probs[i]
        lo, hi = ranges[i]
        magnitudes[i] = rng.uniform(lo, hi) if hi > lo else lo
    crop_offset = (float(rng.uniform()), float(rng.uniform()))
    noise_seed = int(rng.integers(0, 2**63))
    return TransformParams(probs, magnitudes, active, crop_offset, noise_seed)


def apply_spatial(x: np.ndarray, l: np.ndarray,
                  a: TransformParams) -> tuple[np.ndarray, np.ndarray]:
    """Crop-and-resize then flip, applied identically to image and label.

    The crop window has side `scale * size` (scale in the configured
    [0.7, 0.9] band) at a position given by `crop_offset`, and is resized
    back to the original resolution (bilinear for the image,
    nearest-neighbor for the label so it stays binary).
    """
    if x.shape != l.shape:
        raise ValueError(f"image/mask shape mismatch: {x.shape} vs {l.shape}")
    x = np.asarray(x, dtype=np.float32)
    l = np.asarray(l, dtype=np.float32)
    h, w = x.shape

    if a.active[CROP]:
        scale = float(a.magnitudes[CROP])
        ch, cw = int(round(scale * h)), int(round(scale * w))
        oy = int(round(a.crop_offset[1] * (h - ch)))
        ox = int(round(a.crop_offset[0] * (w - cw)))
        x = cv2.resize(x[oy:oy + ch, ox:ox + cw], (w, h),
                       interpolation=cv2.INTER_LINEAR)
        l = cv2.resize(l[oy:oy + ch, ox:ox + cw], (w, h),
                       interpolation=cv2.INTER_NEAREST)
    if a.active[FLIP]:
        x = np.ascontiguousarray(x[:, ::-1])
        l = np.ascontiguousarray(l[:, ::-1])
    return np.clip(x, 0.0, 1.0), l


def apply_domain(x: np.ndarray, d: TransformParams) -> np.ndarray:
    """Appearance chain blur -> sharpen -> noise -> brightness -> contrast.

    Only active gates are applied; with none active the input is returned
    bit-identical. Output is clamped to [0, 1] after each intensity op.
    """
    x = np.asarray(x, dtype=np.float32)
    if not np.any(d.active[list(DOMAIN_IDX)]):
        return x
    out = x
    if d.active[BLUR]:
        out = cv2.GaussianBlur(out, (0, 0), float(d.magnitudes[BLUR]),
                               borderType=cv2.BORDER_REFLECT)
        out = np.clip(out, 0.0, 1.0)
    if d.active[SHARPEN]:
        low = cv2.GaussianBlur(out, (0, 0), _UNSHARP_SIGMA,
                               borderType=cv2.BORDER_REFLECT)
        out = np.clip(out + d.magnitudes[SHARPEN] * (out - low), 0.0, 1.0)
    if d.active[NOISE]:
        noise_rng = np.random.default_rng(d.noise_seed)
        noise = noise_rng.standard_normal(out.shape).astype(np.float32)
        out = np.clip(out + d.magnitudes[NOISE] * noise, 0.0, 1.0)
    if d.active[BRIGHTNESS]:
        out = np.clip(out + d.magnitudes[BRIGHTNESS], 0.0, 1.0)
    if d.active[CONTRAST]:
        mean = out.mean()
        out = np.clip(mean + d.magnitudes[CONTRAST] * (out - mean), 0.0, 1.0)
    return out.astype(np.float32)


def make_quadruple(x: np.ndarray, l: np.ndarray, rng: np.random.Generator,
                   cfg: TransformConfig | None = None,
                   a1: TransformParams | None = None,
                   a2: TransformParams | None = None,
                   d1: TransformParams | None = None,
                   d2: TransformParams | None = None) -> Quadruple:
    """Build the four-image training quadruple from one sample.

    Draws two spatial parameter sets (a1, a2) and two appearance sets
    (d1, d2) independently unless given explicitly; x_aidj applies spatial
    i then appearance j, so x_a1d1/x_a1d2 share the label l1 and
    x_a2d1/x_a2d2 share l2.
    """
    cfg = cfg or TransformConfig()
    a1 = a1 if a1 is not None else sample_params(rng, "spatial", cfg)
    a2 = a2 if a2 is not None else sample_params(rng, "spatial", cfg)
    d1 = d1 if d1 is not None else sample_params(rng, "domain", cfg)
    d2 = d2 if d2 is not None else sample_params(rng, "domain", cfg)

    x1, l1 = apply_spatial(x, l, a1)
    x2, l2 = apply_spatial(x, l, a2)
    return Quadruple(
        x_a1d1=apply_domain(x1, d1),
        x_a2d2=apply_domain(x2, d2),
        x_a1d2=apply_domain(x1, d2),
        x_a2d1=apply_domain(x2, d1),
        l1=l1,
        l2=l2,
    )
