"""
Asymmetric-quantized contrastive objective.

At every level, raw embeddings of one view are matched against the
soft-quantized embeddings of the other view with an in-batch InfoNCE loss,
in both directions. Level losses are combined as
L_Coarse + (1/L) * sum_l L_Fine(l).
"""

from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F

from .ghostvlad import TRAIN
from .models import Level, TokenBag
from .params import HybridQuantModel


@dataclass
class BatchSimilarities:
    """Per level (B, B) similarity matrices; entry (i, j) pairs query i with key j."""
    query_to_item: list[torch.Tensor] = field(default_factory=list)
    item_to_query: list[torch.Tensor] = field(default_factory=list)


@dataclass
class LevelLoss:
    """Directional and symmetric loss of one level."""
    query_to_item: torch.Tensor
    item_to_query: torch.Tensor

    @property
    def symmetric(self) -> torch.Tensor:
        return 0.5 * (self.query_to_item + self.item_to_query)


@dataclass
class LossBreakdown:
    """Hybrid loss and its per-level parts, keyed by level name."""
    total: torch.Tensor
    levels: dict[str, LevelLoss] = field(default_factory=dict)

    def as_floats(self) -> dict[str, float]:
        return {name: float(part.symmetric.detach()) for name, part in self.levels.items()}


def aqcl_loss_from_similarities(similarities: torch.Tensor, tau: float) -> torch.Tensor:
    """
    InfoNCE over rows with the diagonal as positives.

    -(1/N) sum_i log softmax_j(s_ij / tau)[i], computed with the
    log-sum-exp stabilization of cross_entropy.
    """
    targets = torch.arange(similarities.shape[0], device=similarities.device)
    return F.cross_entropy(similarities / tau, targets)


def aqcl_loss(queries: torch.Tensor, keys: torch.Tensor, tau: float) -> torch.Tensor:
    """Contrastive loss of raw (N, D) queries against (N, D) quantized keys."""
    return aqcl_loss_from_similarities(queries @ keys.T, tau)


def level_loss(
    query_raw: torch.Tensor,
    item_raw: torch.Tensor,
    query_keys: torch.Tensor,
    item_keys: torch.Tensor,
    tau: float,
) -> LevelLoss:
    """Both directions at one level: raw queries vs item keys, raw items vs query keys."""
    return LevelLoss(
        query_to_item=aqcl_loss(query_raw, item_keys, tau),
        item_to_query=aqcl_loss(item_raw, query_keys, tau),
    )


def combine_levels(level_losses: Sequence[torch.Tensor], weights: Sequence[float]) -> torch.Tensor:
    """Weighted sum of per-level losses, skipping zero-weight levels."""
    total = None
    for loss, weight in zip(level_losses, weights):
        if weight == 0:
            continue
        term = loss if weight == 1 else weight * loss
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no level has a non-zero weight")
    return total


def _keys(model: HybridQuantModel, embeddings: torch.Tensor) -> torch.Tensor:
    if model.config.quantized_keys:
        return model.soft_quantize_levels(embeddings)
    return embeddings


def batch_similarities(
    model: HybridQuantModel,
    query_embeddings: torch.Tensor,
    item_embeddings: torch.Tensor,
) -> BatchSimilarities:
    """Similarity matrices of every level between raw embeddings and the other view's keys."""
    query_keys = _keys(model, query_embeddings)
    item_keys = _keys(model, item_embeddings)
    sims = BatchSimilarities()
    for level in range(model.config.num_levels):
        sims.query_to_item.append(query_embeddings[:, level] @ item_keys[:, level].T)
        sims.item_to_query.append(item_embeddings[:, level] @ query_keys[:, level].T)
    return sims


def hybrid_loss(
    queries: Sequence[TokenBag],
    items: Sequence[TokenBag],
    model: HybridQuantModel,
    mode: str = TRAIN,
) -> tuple[torch.Tensor, LossBreakdown]:
    """
    Full forward pass and hybrid contrastive loss of a batch of matched pairs.

    Args:
        queries: N_B query bags; queries[i] is matched with items[i].
        items: N_B item bags.
        model: Parameters; batch norm follows `mode`.

    Returns:
        (total loss, per-level breakdown of the active levels)
    """
    if len(queries) != len(items):
        raise ValueError(f"{len(queries)} queries but {len(items)} items")
    sims = batch_similarities(model, model.embed(queries, mode), model.embed(items, mode))
    tau = model.config.tau

    weights = model.level_weights()
    breakdown = LossBreakdown(total=torch.zeros((), dtype=model.dtype))
    active = model.active_levels()
    for level in active:
        breakdown.levels[Level(level).name] = LevelLoss(
            query_to_item=aqcl_loss_from_similarities(sims.query_to_item[level], tau),
            item_to_query=aqcl_loss_from_similarities(sims.item_to_query[level], tau),
        )
    breakdown.total = combine_levels(
        [breakdown.levels[Level(level).name].symmetric for level in active],
        [weights[level] for level in active],
    )
    return breakdown.total, breakdown
