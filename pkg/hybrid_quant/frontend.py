"""
Coarse-grained embeddings for both views and the fine-path query projection.

Queries: a self-gated mixture of per-expert projections of the CLS token.
Items: the normalized mean of the per-modality AGG tokens.
"""

import math
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .constants import NORM_EPSILON
from .errors import DegenerateItemError, DimensionError


class GatingProjection(nn.Module):
    """
    Self-gating projection of a Dt-dim CLS vector into the D-dim space.

    gate: (N_E, Dt) gating vectors h_i.
    experts: (N_E, D, Dt) linear maps psi_i.
    """

    def __init__(self, num_experts: int, text_dim: int, dim: int):
        super().__init__()
        self.num_experts = num_experts
        self.text_dim = text_dim
        self.dim = dim
        self.gate = nn.Parameter(torch.empty(num_experts, text_dim))
        self.experts = nn.Parameter(torch.empty(num_experts, dim, text_dim))

    def reset_parameters(self, generator: torch.Generator) -> None:
        bound = 1.0 / math.sqrt(self.text_dim)
        with torch.no_grad():
            self.gate.uniform_(-bound, bound, generator=generator)
            self.experts.uniform_(-bound, bound, generator=generator)

    def forward(self, cls: torch.Tensor) -> torch.Tensor:
        return coarse_query_embed(cls, self)


def _check_last_dim(x: torch.Tensor, expected: int, what: str) -> None:
    if x.shape[-1] != expected:
        raise DimensionError(f"{what}: last dim {x.shape[-1]}, expected {expected}")


def gating_weights(cls: torch.Tensor, gp: GatingProjection) -> torch.Tensor:
    """Softmax over experts of h_i . cls; shape (..., N_E)."""
    _check_last_dim(cls, gp.text_dim, "CLS token")
    return torch.softmax(cls @ gp.gate.T, dim=-1)


def expert_outputs(cls: torch.Tensor, gp: GatingProjection) -> torch.Tensor:
    """Per-expert projections, each l2-normalized; shape (..., N_E, D)."""
    _check_last_dim(cls, gp.text_dim, "CLS token")
    projected = torch.einsum("edt,...t->...ed", gp.experts, cls)
    return F.normalize(projected, p=2, dim=-1, eps=NORM_EPSILON)


def coarse_query_embed(cls: torch.Tensor, gp: GatingProjection) -> torch.Tensor:
    """
    Coarse query embedding sum_i w_i(cls) * psi_i(cls) / |psi_i(cls)|.

    The mixture itself is not re-normalized.
    """
    weights = gating_weights(cls, gp)
    experts = expert_outputs(cls, gp)
    return (weights.unsqueeze(-1) * experts).sum(dim=-2)


def coarse_item_embed(
    agg_tokens: torch.Tensor,
    item_ids: Optional[Sequence[int]] = None,
) -> torch.Tensor:
    """
    Normalized mean of AGG tokens.

    Args:
        agg_tokens: (N_E, D) for one item or (B, N_E, D) for a batch.
        item_ids: Ids reported when an item is degenerate.

    Raises:
        DegenerateItemError: If the mean of some item's AGG tokens is zero.
    """
    if agg_tokens.dim() < 2 or agg_tokens.shape[-2] == 0:
        raise DimensionError("coarse_item_embed needs at least one AGG token")
    mean = agg_tokens.mean(dim=-2)
    norms = mean.norm(dim=-1, keepdim=True)
    degenerate = (norms < NORM_EPSILON).reshape(-1)
    if bool(degenerate.any()):
        position = int(torch.nonzero(degenerate)[0])
        item_id = item_ids[position] if item_ids is not None else position
        raise DegenerateItemError(item_id)
    return mean / norms


def project_query_tokens(tokens: torch.Tensor, projection: nn.Linear) -> torch.Tensor:
    """Map (N, Dt) query tokens into the D-dim fine-path space, token by token."""
    _check_last_dim(tokens, projection.in_features, "query tokens")
    return projection(tokens)
