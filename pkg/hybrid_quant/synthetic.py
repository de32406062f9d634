"""
Shared-latent synthetic paired data.

Every pair i draws a latent vector z_i. Both views are noisy random
projections of z_i: query tokens and the CLS token project into the Dt text
space, item tokens and the N_E AGG tokens (one projection per expert) into
the D item space. Individual tokens are "concepts" z_i + perturbation, so the
fine path sees pair-specific structure too. Cross-view alignment is therefore
learnable, and output is a pure function of the SyntheticSpec.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigError
from .features import PairedDataset, write_feature_file
from .models import TokenBag, View

logger = logging.getLogger(__name__)

# Spread of concept tokens around the pair latent
CONCEPT_SPREAD = 0.5


@dataclass(frozen=True)
class SyntheticSpec:
    """Size, shape and noise of a synthetic paired dataset."""
    pair_count: int = 512
    query_tokens: tuple[int, int] = (4, 12)  # inclusive range
    item_tokens: tuple[int, int] = (8, 24)
    latent_dim: int = 16
    noise: float = 0.1
    seed: int = 0
    Dt: int = 48
    D: int = 32
    N_E: int = 2

    def validate(self) -> "SyntheticSpec":
        if self.pair_count < 0:
            raise ConfigError(f"pair_count must be non-negative, got {self.pair_count}")
        for name, (low, high) in (("query_tokens", self.query_tokens), ("item_tokens", self.item_tokens)):
            if low < 1 or high < low:
                raise ConfigError(f"{name} must be a range 1 <= low <= high, got ({low}, {high})")
        if self.noise < 0:
            raise ConfigError(f"noise must be non-negative, got {self.noise}")
        if not 1 <= self.latent_dim <= min(self.Dt, self.D):
            raise ConfigError(
                f"latent_dim must be in [1, min(Dt, D)] = [1, {min(self.Dt, self.D)}], "
                f"got {self.latent_dim}"
            )
        if self.N_E < 1:
            raise ConfigError(f"N_E must be positive, got {self.N_E}")
        return self


def _projection(rng: np.random.Generator, latent_dim: int, out_dim: int) -> np.ndarray:
    return rng.standard_normal((latent_dim, out_dim)) / np.sqrt(latent_dim)


def generate_pairs(spec: SyntheticSpec) -> PairedDataset:
    """Matched (query, item) bags with ids 0..pair_count-1."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    text_tokens = _projection(rng, spec.latent_dim, spec.Dt)
    text_cls = _projection(rng, spec.latent_dim, spec.Dt)
    item_tokens = _projection(rng, spec.latent_dim, spec.D)
    experts = [_projection(rng, spec.latent_dim, spec.D) for _ in range(spec.N_E)]

    def noisy(values: np.ndarray) -> np.ndarray:
        return values + spec.noise * rng.standard_normal(values.shape)

    def concepts(z: np.ndarray, token_range: tuple[int, int]) -> np.ndarray:
        count = int(rng.integers(token_range[0], token_range[1] + 1))
        return z + CONCEPT_SPREAD * rng.standard_normal((count, spec.latent_dim))

    queries, items = [], []
    for i in range(spec.pair_count):
        z = rng.standard_normal(spec.latent_dim)
        queries.append(TokenBag(
            View.QUERY,
            tokens=noisy(concepts(z, spec.query_tokens) @ text_tokens),
            condensed=noisy(z @ text_cls)[None, :],
            id=i,
        ))
        items.append(TokenBag(
            View.ITEM,
            tokens=noisy(concepts(z, spec.item_tokens) @ item_tokens),
            condensed=noisy(np.stack([z @ expert for expert in experts])),
            id=i,
        ))
    return PairedDataset(queries, items)


def write_synthetic(
    spec: SyntheticSpec,
    query_path: Union[str, Path],
    item_path: Union[str, Path],
) -> PairedDataset:
    """Generate a dataset and write it as a query and an item feature file."""
    dataset = generate_pairs(spec)
    write_feature_file(query_path, dataset.queries, view=View.QUERY, dim=spec.Dt, condensed_count=1)
    write_feature_file(item_path, dataset.items, view=View.ITEM, dim=spec.D, condensed_count=spec.N_E)
    logger.info(f"Generated {spec.pair_count} synthetic pairs (seed {spec.seed})")
    return dataset
