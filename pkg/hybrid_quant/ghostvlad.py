"""
GhostVLAD aggregation shared by both views.

Tokens are softly assigned to L active clusters plus one ghost cluster
(column 0). Per-cluster residuals of the active clusters are summed and
l2-normalized into L fine-grained embeddings; the ghost column is dropped.
"""

import logging
import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .constants import BATCHNORM_EPSILON, BATCHNORM_MOMENTUM, NORM_EPSILON
from .errors import DimensionError

logger = logging.getLogger(__name__)

TRAIN = "train"
INFER = "infer"


class GhostVLAD(nn.Module):
    """
    Soft-assignment VLAD with one ghost cluster.

    centroids: (L+1, D), row 0 is the ghost centroid.
    assignment: (L+1, D) weights w_l producing the assignment logits.
    bn: batch norm over the L+1 logit channels.
    """

    def __init__(self, num_clusters: int, dim: int):
        super().__init__()
        self.num_clusters = num_clusters
        self.dim = dim
        self.centroids = nn.Parameter(torch.empty(num_clusters + 1, dim))
        self.assignment = nn.Parameter(torch.empty(num_clusters + 1, dim))
        self.bn = nn.BatchNorm1d(
            num_clusters + 1, eps=BATCHNORM_EPSILON, momentum=BATCHNORM_MOMENTUM
        )

    def reset_parameters(self, generator: torch.Generator) -> None:
        bound = 1.0 / math.sqrt(self.dim)
        with torch.no_grad():
            centroids = torch.randn(self.centroids.shape, generator=generator)
            self.centroids.copy_(F.normalize(centroids, dim=-1))
            self.assignment.uniform_(-bound, bound, generator=generator)
        self.bn.reset_parameters()

    def assign(self, tokens: torch.Tensor, mode: str = INFER) -> torch.Tensor:
        return assign(tokens, self, mode)

    def aggregate(
        self,
        tokens: torch.Tensor,
        assignments: torch.Tensor,
        bag_index: Optional[torch.Tensor] = None,
        num_bags: Optional[int] = None,
    ) -> torch.Tensor:
        return aggregate(tokens, assignments, self, bag_index, num_bags)

    def forward(
        self,
        tokens: torch.Tensor,
        bag_index: Optional[torch.Tensor] = None,
        num_bags: Optional[int] = None,
        mode: str = INFER,
    ) -> torch.Tensor:
        return self.aggregate(tokens, self.assign(tokens, mode), bag_index, num_bags)


def assign(tokens: torch.Tensor, vp: GhostVLAD, mode: str = INFER) -> torch.Tensor:
    """
    Row-stochastic (N, L+1) soft assignment of tokens to clusters.

    In train mode the logits are normalized with statistics of all N tokens and
    the running statistics are updated; in infer mode the running statistics
    are used.
    """
    if tokens.dim() != 2 or tokens.shape[-1] != vp.dim:
        raise DimensionError(f"tokens must be (N, {vp.dim}), got {tuple(tokens.shape)}")
    if tokens.shape[0] == 0:
        raise DimensionError("assign needs at least one token")
    if mode not in (TRAIN, INFER):
        raise ValueError(f"mode must be {TRAIN!r} or {INFER!r}, got {mode!r}")

    logits = tokens @ vp.assignment.T
    use_batch_stats = mode == TRAIN and tokens.shape[0] > 1
    if mode == TRAIN and not use_batch_stats:
        logger.debug("Single-token batch in train mode, using running statistics")
    normalized = F.batch_norm(
        logits,
        vp.bn.running_mean,
        vp.bn.running_var,
        vp.bn.weight,
        vp.bn.bias,
        training=use_batch_stats,
        momentum=vp.bn.momentum,
        eps=vp.bn.eps,
    )
    return torch.softmax(normalized, dim=-1)


def aggregate(
    tokens: torch.Tensor,
    assignments: torch.Tensor,
    vp: GhostVLAD,
    bag_index: Optional[torch.Tensor] = None,
    num_bags: Optional[int] = None,
) -> torch.Tensor:
    """
    Fine-grained embeddings from assigned tokens.

    Args:
        tokens: (N, D) tokens, possibly of several bags concatenated.
        assignments: (N, L+1) row-stochastic matrix, column 0 is the ghost.
        bag_index: (N,) bag of each token; None means a single bag.
        num_bags: Number of bags when bag_index is given.

    Returns:
        (L, D) for a single bag or (B, L, D); each row unit-norm or zero
        when the residual norm is below 1e-12.
    """
    if assignments.shape != (tokens.shape[0], vp.num_clusters + 1):
        raise DimensionError(
            f"assignments must be ({tokens.shape[0]}, {vp.num_clusters + 1}), "
            f"got {tuple(assignments.shape)}"
        )
    active = assignments[:, 1:]
    centroids = vp.centroids[1:]

    if bag_index is None:
        weighted = active.T @ tokens
        mass = active.sum(dim=0)
    else:
        if num_bags is None:
            num_bags = int(bag_index.max()) + 1
        membership = F.one_hot(bag_index, num_bags).to(tokens.dtype)
        weighted = torch.einsum("nb,nl,nd->bld", membership, active, tokens)
        mass = membership.T @ active

    residual = weighted - mass.unsqueeze(-1) * centroids
    norms = residual.norm(dim=-1, keepdim=True)
    unit = residual / norms.clamp_min(NORM_EPSILON)
    return torch.where(norms < NORM_EPSILON, torch.zeros_like(unit), unit)
