"""Segmentation (dice + BCE) and reconstruction (per-pixel MSE) losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class LossConfig:
    """Numerical-stability knobs for the segmentation loss."""

    dice_smoothing: float = 1.0  # added to dice numerator and denominator
    bce_clamp: float = 1e-7     # probabilities clamped to [eps, 1-eps]

    def __post_init__(self):
        if self.dice_smoothing <= 0:
            raise ValueError("dice_smoothing must be > 0")
        if not 0 < self.bce_clamp < 0.5:
            raise ValueError("bce_clamp must be in (0, 0.5)")


def seg_loss(labels: torch.Tensor, probs: torch.Tensor,
             cfg: LossConfig | None = None) -> torch.Tensor:
    """Dice loss plus binary cross-entropy on a batch of probability maps.

    The dice term is computed per sample over flattened pixels with
    smoothing `s` (1 - mean_n (2*sum(l*m)+s)/(sum(l)+sum(m)+s)); the BCE
    term averages over all pixels and samples with `m` clamped away from
    {0, 1}. `labels` must be binary and `probs` in [0, 1], shapes equal.
    """
    cfg = cfg or LossConfig()
    if labels.shape != probs.shape:
        raise ValueError(f"shape mismatch: {tuple(labels.shape)} vs {tuple(probs.shape)}")
    if probs.min() < 0 or probs.max() > 1:
        raise ValueError("predicted probabilities outside [0, 1]")

    n = labels.shape[0]
    l_flat = labels.reshape(n, -1)
    m_flat = probs.reshape(n, -1)

    s = cfg.dice_smoothing
    inter = (l_flat * m_flat).sum(dim=1)
    dice = (2.0 * inter + s) / (l_flat.sum(dim=1) + m_flat.sum(dim=1) + s)
    l_dice = 1.0 - dice.mean()

    eps = cfg.bce_clamp
    m_clamped = m_flat.clamp(eps, 1.0 - eps)
    l_bce = -(l_flat * torch.log(m_clamped)
              + (1.0 - l_flat) * torch.log(1.0 - m_clamped)).mean()
    return l_dice + l_bce


def rec_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error per pixel, averaged over the batch."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    n = x.shape[0]
    return ((x - x_hat) ** 2).reshape(n, -1).mean(dim=1).mean()
