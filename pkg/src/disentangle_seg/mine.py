"""Mutual-information lower-bound estimation between feature batches.

A small statistics network T(f_a, f_d) is trained to maximize the
Donsker-Varadhan bound: mean of T on jointly drawn pairs minus the log of
the mean of exp(T) on pairs whose second element is shuffled within the
batch (the product-of-marginals samples). The resulting estimate doubles
as a loss for the encoders: minimizing it removes shared information from
the two feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


class MineNetwork(nn.Module):
    """MLP statistics network on the concatenated (f_a, f_d) vectors.

    Spatial feature maps are globally average-pooled to fixed-length
    vectors before concatenation, so T's input size is independent of the
    image resolution.
    """

    def __init__(self, fa_channels: int, fd_channels: int, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(fa_channels + fd_channels, hidden),
            nn.ELU(),
            nn.Linear(hidden, hidden),
            nn.ELU(),
            nn.Linear(hidden, 1),
        )

    def forward(self, fa: torch.Tensor, fd: torch.Tensor) -> torch.Tensor:
        """T for aligned batches; returns one scalar per row."""
        return self.net(torch.cat([_pool(fa), _pool(fd)], dim=1)).squeeze(-1)


def _pool(f: torch.Tensor) -> torch.Tensor:
    """Global average pool (N,C,H,W) -> (N,C); pass (N,C) through."""
    if f.dim() == 4:
        return f.mean(dim=(2, 3))
    if f.dim() == 2:
        return f
    raise ValueError(f"expected (N,C) or (N,C,H,W) features, got shape {tuple(f.shape)}")


@dataclass
class MiEstimate:
    """Donsker-Varadhan estimate; value = joint_term - marginal_term (nats).

    The value is a bound estimate and may be negative. Terms are kept as
    tensors so gradients can flow to whichever parameters the caller
    routes them to.
    """

    joint_term: torch.Tensor
    marginal_term: torch.Tensor

    @property
    def value(self) -> torch.Tensor:
        return self.joint_term - self.marginal_term


def estimate_mi(t_net: MineNetwork, fa_batch: torch.Tensor, fd_batch: torch.Tensor,
                generator: torch.Generator | None = None) -> MiEstimate:
    """Estimate the MI lower bound on an aligned feature batch.

    Row i of `fa_batch` and `fd_batch` must come from the same input.
    Marginal samples are formed by shuffling `fd_batch` with a uniform
    random permutation of the same batch (seeded via `generator`); the
    log-mean-exp uses logsumexp, stable for |T| up to ~80.
    """
    n = fa_batch.shape[0]
    if fd_batch.shape[0] != n:
        raise ValueError("feature batches must be aligned")
    if n < 2:
        raise ValueError("batch size must be >= 2 to form marginal samples")

    perm = torch.randperm(n, generator=generator, device=fa_batch.device)
    # terms accumulated in float64 so the constant-T estimate is exactly zero
    t_joint = t_net(fa_batch, fd_batch).double()
    t_marginal = t_net(fa_batch, fd_batch[perm]).double()
    joint_term = t_joint.mean()
    # explicit max-subtraction: no overflow for |T| up to ~700 in float64
    t_max = t_marginal.detach().max()
    marginal_term = t_max + torch.log(torch.exp(t_marginal - t_max).mean())
    return MiEstimate(joint_term=joint_term, marginal_term=marginal_term)


def mine_training_objective(est1: MiEstimate, est2: MiEstimate) -> torch.Tensor:
    """Loss for the statistics network: descend -(est1 + est2).

    Minimizing this maximizes the lower bound, tightening the estimate.
    """
    return -(est1.value + est2.value)


def mi_loss(est: MiEstimate) -> torch.Tensor:
    """Loss for the encoders: the estimate itself.

    The caller must hold the statistics network fixed on this path (route
    the backward pass to encoder parameters only).
    """
    return est.value


def fit_mi_estimate(sample_batch, fa_channels: int, fd_channels: int,
                    steps: int = 2000, lr: float = 5e-4, hidden: int = 64,
                    seed: int = 0, eval_batches: int = 20,
                    eval_batch=None) -> float:
    """Train a fresh statistics network to convergence and return the bound.

    `sample_batch()` must yield an aligned (fa, fd) tensor pair; it may
    return the same fixed batch every call (probing trained encoders) or
    fresh draws (estimating a known distribution). The returned value
    averages the estimate over `eval_batches` calls of `eval_batch`
    (defaults to `sample_batch`) with the fitted network frozen; pass a
    held-out batch there when `sample_batch` is fixed, so memorization of
    the fitting batch does not inflate the estimate.
    """
    torch.manual_seed(seed)
    net = MineNetwork(fa_channels, fd_channels, hidden=hidden)
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    generator = torch.Generator().manual_seed(seed)
    eval_batch = eval_batch or sample_batch
    for _ in range(steps):
        fa, fd = sample_batch()
        optimizer.zero_grad(set_to_none=True)
        est = estimate_mi(net, fa.detach(), fd.detach(), generator)
        (-est.value).backward()
        optimizer.step()
    with torch.no_grad():
        values = []
        for _ in range(eval_batches):
            fa, fd = eval_batch()
            values.append(float(estimate_mi(net, fa, fd, generator).value))
    return float(sum(values) / len(values))


def gaussian_mi_nats(rho: float) -> float:
    """Analytic MI of a correlated 2D standard Gaussian pair."""
    import math
    return -0.5 * math.log(1.0 - rho ** 2)
