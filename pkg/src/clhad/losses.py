"""Loss terms: reconstruction, adversarial, active forgetting and replay decorrelation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import torch

from .errors import ArgumentError, ShapeError

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    lambda_af: float = 0.1
    lambda_cl: float = 0.9
    beta: float = 1.0
    beta_grid: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0])

    def __post_init__(self):
        if self.lambda_af < 0 or self.lambda_cl < 0:
            raise ArgumentError("loss weights must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ArgumentError(f"beta must lie in [0, 1], got {self.beta}")
        if any(not 0.0 <= b <= 1.0 for b in self.beta_grid):
            raise ArgumentError("beta_grid entries must lie in [0, 1]")


@dataclass
class LossBreakdown:
    l_recon: float = 0.0
    l_g: float = 0.0
    l_d: float = 0.0
    l_af: float = 0.0
    l_cl: float = 0.0

    @property
    def total(self) -> float:
        return self.l_recon + self.l_g + self.l_d + self.l_af + self.l_cl

    def as_record(self, **context) -> dict:
        return {**context, **asdict(self), "total": self.total}


def recon_loss(inputs, outputs, reduction: str = "mean"):
    """Squared reconstruction error.

    ``reduction="mean"`` averages over every entry (plain MSE). ``"sample"``
    sums each row's squared error before averaging over rows, i.e. the batch
    mean of the per-pixel squared L2 norm that also defines the anomaly score.
    """
    if inputs.shape != outputs.shape:
        raise ShapeError(f"recon_loss shape mismatch: {tuple(inputs.shape)} vs {tuple(outputs.shape)}")
    sq = (outputs - inputs) ** 2
    if reduction == "mean":
        return sq.mean()
    if reduction == "sample":
        return sq.sum(-1).mean()
    raise ArgumentError(f"unknown reduction {reduction!r}")


def adversarial_losses(d_real, d_fake):
    """Return (l_g, l_d).

    l_g = mean log(1 - D(fake)) is minimised by the generator;
    l_d = -mean[log D(real) + log(1 - D(fake))] by the discriminator.
    """
    d_real = d_real.clamp(PROB_EPS, 1.0 - PROB_EPS)
    d_fake = d_fake.clamp(PROB_EPS, 1.0 - PROB_EPS)
    l_g = torch.log1p(-d_fake).mean()
    l_d = -(torch.log(d_real).mean() + torch.log1p(-d_fake).mean())
    return l_g, l_d


def af_loss(params: torch.Tensor | Iterable[torch.Tensor], lambda_af: float):
    """lambda_af times the sum of squared parameters."""
    if isinstance(params, torch.Tensor):
        return lambda_af * (params ** 2).sum()
    return lambda_af * sum((p ** 2).sum() for p in params)


def cl_loss(reconstructed_replay, lambda_cl: float, mask=None):
    """Frobenius distance of the summed feature-space Gram matrices from identity.

    Rows are scaled to unit L2 norm. ``mask`` (bool per row) selects the
    subset for the second Gram term; by default every row.
    """
    f = reconstructed_replay
    if f.ndim != 2 or f.shape[0] < 1:
        raise ShapeError(f"cl_loss needs a non-empty 2-D batch, got {tuple(f.shape)}")
    f = f / f.norm(dim=1, keepdim=True).clamp_min(1e-12)
    fm = f if mask is None else f[torch.as_tensor(mask, dtype=torch.bool)]
    if fm.shape[0] < 1:
        raise ShapeError("cl_loss mask selects no rows")
    eye = torch.eye(f.shape[1], dtype=f.dtype)
    gram = f.T @ f / f.shape[0] + fm.T @ fm / fm.shape[0] - eye
    return lambda_cl * torch.linalg.matrix_norm(gram, ord="fro")


def select_beta(candidates: Sequence[float], eval_fn: Callable[[float], float]) -> float:
    """Grid search for the forgetting factor: argmax of ``eval_fn``, ties to the smaller beta."""
    if len(candidates) == 0:
        raise ArgumentError("beta grid is empty")
    best_beta, best_fit = None, None
    for beta in sorted(float(b) for b in candidates):
        if not 0.0 <= beta <= 1.0:
            raise ArgumentError(f"beta candidate {beta} outside [0, 1]")
        fit = float(eval_fn(beta))
        if best_fit is None or fit > best_fit:
            best_beta, best_fit = beta, fit
    return best_beta
