"""
The trainable parameter set and the per-view embedding pipelines.

HybridQuantModel holds every trainable parameter: gating vectors and expert
projections, the fine-path text projection, the shared GhostVLAD, and one
quantization module per level (coarse plus L fine levels, shared by both
views). init_parameters() builds it deterministically from the config seed.
"""

import logging
import math
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .config import EngineConfig
from .constants import LEVELS_COARSE, LEVELS_FINE
from .errors import DimensionError
from .frontend import GatingProjection, coarse_item_embed, coarse_query_embed, project_query_tokens
from .ghostvlad import INFER, GhostVLAD
from .models import TokenBag, View
from .quantizer import QuantizationModule, hard_quantize, soft_quantize

logger = logging.getLogger(__name__)


class HybridQuantModel(nn.Module):
    """All trainable parameters of the engine plus the forward pipelines."""

    def __init__(self, config: EngineConfig):
        super().__init__()
        self.config = config.validate()
        self.gating = GatingProjection(config.N_E, config.Dt, config.D)
        self.text_projection = nn.Linear(config.Dt, config.D, bias=False)
        self.vlad = GhostVLAD(config.L, config.D)
        self.quantizers = nn.ModuleList(
            QuantizationModule(level, config.M, config.K, config.d, config.alpha)
            for level in range(config.num_levels)
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.text_projection.weight.dtype

    def reset_parameters(self, seed: int) -> None:
        """Draw every parameter from a generator seeded with `seed`."""
        generator = torch.Generator().manual_seed(seed)
        self.gating.reset_parameters(generator)
        bound = 1.0 / math.sqrt(self.config.Dt)
        with torch.no_grad():
            self.text_projection.weight.uniform_(-bound, bound, generator=generator)
        self.vlad.reset_parameters(generator)
        for quantizer in self.quantizers:
            quantizer.reset_parameters(generator)

    def _validate_bags(self, bags: Sequence[TokenBag]) -> View:
        if not bags:
            raise DimensionError("embedding needs at least one bag")
        view = bags[0].view
        if any(bag.view is not view for bag in bags):
            raise DimensionError("all bags in one call must share a view")
        if view is View.QUERY:
            for bag in bags:
                bag.check_dims(self.config.Dt, 1)
        else:
            for bag in bags:
                bag.check_dims(self.config.D, self.config.N_E)
        return view

    def _tensor(self, array: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(array)).to(self.dtype)

    def coarse_embed(self, bags: Sequence[TokenBag]) -> torch.Tensor:
        """(B, D) coarse embeddings of same-view bags."""
        view = self._validate_bags(bags)
        if view is View.QUERY:
            cls = self._tensor(np.stack([bag.condensed[0] for bag in bags]))
            return coarse_query_embed(cls, self.gating)
        agg = self._tensor(np.stack([bag.condensed for bag in bags]))
        return coarse_item_embed(agg, [bag.id for bag in bags])

    def fine_tokens(self, bags: Sequence[TokenBag]) -> tuple[torch.Tensor, torch.Tensor]:
        """Concatenated D-dim fine-path tokens and the bag index of each token."""
        view = self._validate_bags(bags)
        tokens = self._tensor(np.concatenate([bag.tokens for bag in bags]))
        if view is View.QUERY:
            tokens = project_query_tokens(tokens, self.text_projection)
        counts = torch.tensor([bag.num_tokens for bag in bags])
        bag_index = torch.repeat_interleave(torch.arange(len(bags)), counts)
        return tokens, bag_index

    def embed(self, bags: Sequence[TokenBag], mode: str = INFER) -> torch.Tensor:
        """
        Level embeddings of same-view bags.

        Returns:
            (B, L+1, D); index 0 is the coarse level, l the Fine(l) level.
        """
        coarse = self.coarse_embed(bags)
        tokens, bag_index = self.fine_tokens(bags)
        fine = self.vlad(tokens, bag_index, len(bags), mode)
        return torch.cat([coarse.unsqueeze(1), fine], dim=1)

    def soft_quantize_levels(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Soft reconstructions (B, L+1, D), each level by its own module."""
        return torch.stack(
            [soft_quantize(embeddings[:, level], q).reconstruction
             for level, q in enumerate(self.quantizers)],
            dim=1,
        )

    @torch.no_grad()
    def hard_quantize_levels(self, embeddings: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Hard indices (B, L+1, M) and reconstructions (B, L+1, D)."""
        results = [hard_quantize(embeddings[:, level], q) for level, q in enumerate(self.quantizers)]
        indices = torch.stack([r.indices for r in results], dim=1)
        reconstructions = torch.stack([r.reconstruction for r in results], dim=1)
        return indices, reconstructions

    @torch.no_grad()
    def normalized_codebooks(self) -> np.ndarray:
        """Snapshot of all normalized codebooks as float64, (L+1, M, K, d)."""
        return np.stack(
            [q.normalized_codebooks().double().cpu().numpy() for q in self.quantizers]
        )

    def level_weights(self) -> list[float]:
        """Weight of each level in the hybrid loss and the hybrid similarity."""
        L = self.config.L
        if self.config.levels == LEVELS_COARSE:
            return [1.0] + [0.0] * L
        if self.config.levels == LEVELS_FINE:
            return [0.0] + [1.0 / L] * L
        return [1.0] + [1.0 / L] * L

    def active_levels(self) -> list[int]:
        return [i for i, w in enumerate(self.level_weights()) if w > 0]


def init_parameters(config: EngineConfig) -> HybridQuantModel:
    """
    Build the full parameter set deterministically from (config, config.seed).

    Codewords and centroids are unit-normalized Gaussians; projections and
    assignment weights are uniform in +-1/sqrt(fan_in).

    Raises:
        ConfigError: If the config violates an invariant.
    """
    model = HybridQuantModel(config)
    model.reset_parameters(config.seed)
    logger.debug(
        f"Initialized parameters: {sum(p.numel() for p in model.parameters())} "
        f"values, seed={config.seed}"
    )
    return model
