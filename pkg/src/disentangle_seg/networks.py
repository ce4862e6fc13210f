"""Learnable components: two encoders, segmentor, generator, plus bundling.

The anatomical encoder feeds the segmentor (shape information only); the
domain encoder captures appearance. The generator consumes one feature of
each role, concatenated channel-wise, to reconstruct images. No skip
connections cross the feature bottleneck: everything the decoder sees must
pass through f_a / f_d, which is what makes the disentanglement losses
meaningful.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

import torch
import torch.nn as nn

from .mine import MineNetwork


@dataclass
class ArchConfig:
    """Shapes and widths of the four networks; every field overridable."""

    resolution: int = 256
    channels: tuple[int, ...] = (32, 64, 128, 256)  # one entry per stride-2 stage
    mine_hidden: int = 128
    negative_slope: float = 0.1

    def __post_init__(self):
        if self.resolution % (2 ** len(self.channels)) != 0:
            raise ValueError("resolution must be divisible by 2^len(channels)")

    @property
    def feature_resolution(self) -> int:
        return self.resolution // (2 ** len(self.channels))

    @property
    def feature_channels(self) -> int:
        return self.channels[-1]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown architecture config keys: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kwargs)

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


ANATOMICAL = "anatomical"
DOMAIN = "domain"


@dataclass
class FeatureMap:
    """Encoder output tensor tagged with its role."""

    values: torch.Tensor  # (N, C, H', W')
    role: str

    def __post_init__(self):
        if self.role not in (ANATOMICAL, DOMAIN):
            raise ValueError(f"unknown feature role: {self.role}")


def _norm(c: int) -> nn.Module:
    return nn.GroupNorm(min(8, c), c)


class ConvEncoder(nn.Module):
    """Stack of stride-2 conv stages mapping (N,1,H,W) -> (N,C,H/2^k,W/2^k)."""

    def __init__(self, cfg: ArchConfig, role: str):
        super().__init__()
        self.role = role
        self.resolution = cfg.resolution
        layers: list[nn.Module] = []
        in_ch = 1
        for c in cfg.channels:
            layers += [
                nn.Conv2d(in_ch, c, 3, stride=2, padding=1),
                _norm(c),
                nn.LeakyReLU(cfg.negative_slope, inplace=True),
                nn.Conv2d(c, c, 3, stride=1, padding=1),
                _norm(c),
                nn.LeakyReLU(cfg.negative_slope, inplace=True),
            ]
            in_ch = c
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> FeatureMap:
        if x.shape[-2:] != (self.resolution, self.resolution):
            raise ValueError(
                f"expected {self.resolution}x{self.resolution} input, "
                f"got {tuple(x.shape[-2:])}")
        return FeatureMap(values=self.net(x), role=self.role)


class ConvDecoder(nn.Module):
    """Mirror of the encoder: nearest-upsample + conv stages, sigmoid head."""

    def __init__(self, cfg: ArchConfig, in_channels: int):
        super().__init__()
        widths = list(cfg.channels[::-1])  # decode from deep to shallow
        layers: list[nn.Module] = []
        in_ch = in_channels
        for c in widths:
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(in_ch, c, 3, padding=1),
                _norm(c),
                nn.LeakyReLU(cfg.negative_slope, inplace=True),
            ]
            in_ch = c
        layers.append(nn.Conv2d(in_ch, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(f))


class Segmentor(nn.Module):
    """Predicts per-pixel foreground probabilities from anatomical features."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.decoder = ConvDecoder(cfg, cfg.feature_channels)

    def forward(self, f_a: FeatureMap) -> torch.Tensor:
        if f_a.role != ANATOMICAL:
            raise ValueError("segmentor consumes anatomical features only")
        return self.decoder(f_a.values)


class Generator(nn.Module):
    """Reconstructs an image from one anatomical + one domain feature."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.decoder = ConvDecoder(cfg, 2 * cfg.feature_channels)

    def forward(self, f_a: FeatureMap, f_d: FeatureMap) -> torch.Tensor:
        if f_a.role != ANATOMICAL or f_d.role != DOMAIN:
            raise ValueError(
                "generator needs one anatomical and one domain feature, got "
                f"({f_a.role}, {f_d.role})")
        return self.decoder(torch.cat([f_a.values, f_d.values], dim=1))


@dataclass
class ModelBundle:
    """The five parameter collections with their owning modules."""

    encoder_a: ConvEncoder
    encoder_d: ConvEncoder
    segmentor: Segmentor
    generator: Generator
    mine: MineNetwork
    arch: ArchConfig

    COLLECTIONS = ("encoder_a", "encoder_d", "segmentor", "generator", "mine")

    @classmethod
    def build(cls, arch: ArchConfig, seed: int = 0) -> "ModelBundle":
        torch.manual_seed(seed)
        c = arch.feature_channels
        return cls(
            encoder_a=ConvEncoder(arch, ANATOMICAL),
            encoder_d=ConvEncoder(arch, DOMAIN),
            segmentor=Segmentor(arch),
            generator=Generator(arch),
            mine=MineNetwork(c, c, hidden=arch.mine_hidden),
            arch=arch,
        )

    def modules(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in self.COLLECTIONS}

    def parameters_of(self, *names: str) -> list[nn.Parameter]:
        return [p for name in names for p in getattr(self, name).parameters()]

    def train_mode(self) -> None:
        for m in self.modules().values():
            m.train()

    def eval_mode(self) -> None:
        for m in self.modules().values():
            m.eval()

    def parameter_hash(self, name: str) -> str:
        """Content hash of one collection; cheap change detection."""
        h = hashlib.sha256()
        module = getattr(self, name)
        for key, tensor in sorted(module.state_dict().items()):
            h.update(key.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        torch.save({
            "arch": self.arch.to_dict(),
            "arch_hash": self.arch.hash(),
            "state": {name: m.state_dict() for name, m in self.modules().items()},
        }, path)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        arch = ArchConfig.from_dict(payload["arch"])
        if arch.hash() != payload["arch_hash"]:
            raise ValueError("checkpoint architecture hash mismatch")
        bundle = cls.build(arch)
        for name, m in bundle.modules().items():
            m.load_state_dict(payload["state"][name])
        return bundle
