"""Symmetric cross-modal contrastive loss with a learned temperature.

For a batch of N aligned pairs the two embedding sets are stacked into 2N
rows (modality A first, then modality B). Row i and row i+N are positives of
each other; every other row is a negative. The per-anchor loss is

    l(i, j) = -log( exp(sim(i, j) / tau) / sum_{k != i} exp(sim(i, k) / tau) )

and the batch loss is the mean over pairs of (l(i, j) + l(j, i)) / 2. With
negatives="cross_modal_only" the denominator keeps only rows of the opposite
modality (plus the positive), the CLIP-style variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoders import EmbeddingBatch
from .exceptions import (
    ConfigurationError,
    ContractError,
    PairingError,
    ParameterError,
    ShapeError,
)

NEGATIVE_MODES = ("all", "cross_modal_only")


class Temperature(nn.Module):
    """Learnable softmax temperature, stored as log(tau) and clamped on use."""

    def __init__(
        self,
        tau_init: float = 0.07,
        tau_min: float = 0.01,
        tau_max: float = 1.0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if not (0 < tau_min <= tau_max):
            raise ConfigurationError(f"need 0 < tau_min <= tau_max, got [{tau_min}, {tau_max}]")
        if not (tau_init > 0):
            raise ConfigurationError(f"tau_init must be > 0, got {tau_init}")
        self.tau_min = float(tau_min)
        self.tau_max = float(tau_max)
        self.log_tau = nn.Parameter(torch.tensor(math.log(tau_init), dtype=dtype))

    def tau(self) -> torch.Tensor:
        return self.log_tau.exp().clamp(self.tau_min, self.tau_max)

    @property
    def value(self) -> float:
        return float(self.tau().detach())

    def state(self) -> dict:
        return {
            "log_tau": float(self.log_tau.detach()),
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
        }

    @classmethod
    def from_state(cls, state: dict) -> "Temperature":
        t = cls(tau_init=1.0, tau_min=state["tau_min"], tau_max=state["tau_max"])
        with torch.no_grad():
            t.log_tau.fill_(state["log_tau"])
        return t


@dataclass
class LossBreakdown:
    """Loss value plus the pieces tests and logging want to inspect."""

    total: torch.Tensor  # scalar, grad-connected
    per_pair: torch.Tensor  # (N,), grad-connected
    tau_used: float
    similarity_matrix: torch.Tensor  # (2N, 2N), detached

    @property
    def total_value(self) -> float:
        return float(self.total.detach())


def cosine_similarity_matrix(z: torch.Tensor) -> torch.Tensor:
    """Pairwise similarity of stacked, already-normalized embedding rows."""
    if z.ndim != 2:
        raise ShapeError(f"expected (M, D) embeddings, got {tuple(z.shape)}")
    norms = z.detach().norm(dim=1)
    worst = float((norms - 1.0).abs().max())
    if not math.isfinite(worst) or worst > 1e-4:
        raise ContractError(f"rows must be unit-normalized to 1e-4, worst deviation {worst:.3e}")
    return z @ z.T


def _denominator_mask(n: int, negatives: str, device, dtype_ok=None) -> torch.Tensor:
    """Boolean (2N, 2N) mask of terms kept in each anchor's denominator."""
    idx = torch.arange(2 * n, device=device)
    keep = idx[None, :] != idx[:, None]  # never the anchor itself
    if negatives == "cross_modal_only":
        row_is_a = (idx < n)[:, None]
        col_is_a = (idx < n)[None, :]
        keep = keep & (row_is_a != col_is_a)
    return keep


def pair_losses_from_similarity(
    sim: torch.Tensor, temperature: Temperature, negatives: str = "all"
) -> torch.Tensor:
    """Per-anchor losses l(0..2N-1) from a precomputed similarity matrix."""
    if negatives not in NEGATIVE_MODES:
        raise ConfigurationError(f"negatives must be one of {NEGATIVE_MODES}, got {negatives!r}")
    m = sim.shape[0]
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1] or m % 2 != 0 or m < 2:
        raise ShapeError(f"similarity matrix must be (2N, 2N), got {tuple(sim.shape)}")
    n = m // 2
    tau = temperature.tau().to(sim.dtype)
    logits = sim / tau
    keep = _denominator_mask(n, negatives, sim.device)
    neg_inf = torch.finfo(logits.dtype).min
    denom = torch.logsumexp(logits.masked_fill(~keep, neg_inf), dim=1)
    partner = (torch.arange(m, device=sim.device) + n) % m
    positive = logits.gather(1, partner[:, None]).squeeze(1)
    return denom - positive


def nt_xent(
    batch_a: EmbeddingBatch,
    batch_b: EmbeddingBatch,
    temperature: Temperature,
    negatives: str = "all",
) -> LossBreakdown:
    """Symmetric contrastive loss over two aligned embedding batches."""
    za, zb = batch_a.vectors, batch_b.vectors
    if za.shape[0] != zb.shape[0]:
        raise ShapeError(f"batch sizes differ: {za.shape[0]} vs {zb.shape[0]}")
    if za.shape[1] != zb.shape[1]:
        raise ShapeError(f"embedding dims differ: {za.shape[1]} vs {zb.shape[1]}")
    if batch_a.sample_ids != batch_b.sample_ids:
        raise PairingError("sample ids of the two modalities do not align index-wise")
    n = za.shape[0]
    z = torch.cat([za, zb], dim=0)
    sim = cosine_similarity_matrix(z)
    losses = pair_losses_from_similarity(sim, temperature, negatives=negatives)
    per_pair = 0.5 * (losses[:n] + losses[n:])
    total = per_pair.mean()
    return LossBreakdown(
        total=total,
        per_pair=per_pair,
        tau_used=temperature.value,
        similarity_matrix=sim.detach(),
    )


def retrieval_accuracy(
    batch_a: EmbeddingBatch, batch_b: EmbeddingBatch, k: int = 1
) -> tuple[float, float]:
    """Top-k cross-modal retrieval accuracy, both directions (a->b, b->a).

    Candidate j is retrieved for query i when j is among the k highest
    similarities; ties resolve to the lower index. The correct match for row
    i is row i of the other modality.
    """
    za, zb = batch_a.vectors, batch_b.vectors
    if za.shape[0] != zb.shape[0] or za.shape[1] != zb.shape[1]:
        raise ShapeError(
            f"mismatched embedding batches: {tuple(za.shape)} vs {tuple(zb.shape)}"
        )
    n = za.shape[0]
    if n < 2:
        raise ParameterError(f"retrieval needs at least 2 pairs, got {n}")
    if not (1 <= k < n):
        raise ParameterError(f"k must satisfy 1 <= k < N={n}, got {k}")
    sim = (za.detach() @ zb.detach().T).cpu().numpy()

    def hits(matrix: np.ndarray) -> float:
        # stable argsort of -sim ranks equal scores by ascending index
        order = np.argsort(-matrix, axis=1, kind="stable")
        topk = order[:, :k]
        return float(np.mean([i in topk[i] for i in range(matrix.shape[0])]))

    return hits(sim), hits(sim.T)
