"""Shared builders for the test suite."""

import dataclasses
from typing import Callable, Iterable

import numpy as np
import torch

from hybrid_quant.config import EngineConfig
from hybrid_quant.features import PairedDataset
from hybrid_quant.models import TokenBag, View

# Toy engine: D=8, M=2, K=4, L=2, N_E=2
TOY_CONFIG = EngineConfig(
    D=8, Dt=12, M=2, K=4, L=2, N_E=2,
    learning_rate=1e-3, lr_decay_every_steps=1000, batch_size=4, seed=0,
)


def toy_config(**changes) -> EngineConfig:
    return dataclasses.replace(TOY_CONFIG, **changes).validate()


def random_bags(
    config: EngineConfig,
    view: View,
    count: int,
    seed: int,
    tokens: tuple[int, int] = (2, 6),
) -> list[TokenBag]:
    """Gaussian bags with ids 0..count-1 and token counts drawn from `tokens`."""
    rng = np.random.default_rng(seed)
    dim, condensed = (config.Dt, 1) if view is View.QUERY else (config.D, config.N_E)
    bags = []
    for i in range(count):
        n = int(rng.integers(tokens[0], tokens[1] + 1))
        bags.append(TokenBag(
            view,
            tokens=rng.standard_normal((n, dim)),
            condensed=rng.standard_normal((condensed, dim)) + 0.5,
            id=i,
        ))
    return bags


def random_pairs(config: EngineConfig, count: int, seed: int = 0) -> PairedDataset:
    return PairedDataset(
        random_bags(config, View.QUERY, count, seed),
        random_bags(config, View.ITEM, count, seed + 1),
    )


def central_difference(
    f: Callable[[], float],
    parameter: torch.Tensor,
    positions: Iterable[tuple[int, ...]],
    eps: float = 1e-5,
) -> np.ndarray:
    """Centered-difference derivative of f() w.r.t. selected entries of a parameter."""
    grads = []
    with torch.no_grad():
        for position in positions:
            original = parameter[position].item()
            parameter[position] = original + eps
            f_plus = f()
            parameter[position] = original - eps
            f_minus = f()
            parameter[position] = original
            grads.append((f_plus - f_minus) / (2 * eps))
    return np.array(grads)
