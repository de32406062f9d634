"""
Post-compression baseline: product quantization fitted after training.

The embedding model is frozen (normally one trained with raw keys, i.e.
quantized_keys=False). Per level and sub-space, k-means is run on the
normalized embedding segments of both views, and the l2-normalized centroids
are installed as that level's codebook in a copy of the model. Encoding,
lookup-table search and evaluation then run unchanged on the copy.
"""

import copy
import dataclasses
import logging
from typing import Sequence

import numpy as np
import torch
from sklearn.cluster import KMeans

from .constants import NORM_EPSILON, POSTHOC_KMEANS_INITS, POSTHOC_KMEANS_ITERATIONS
from .errors import ConfigError
from .features import PairedDataset
from .index import level_embeddings
from .metrics import evaluate_pairs
from .models import EvalReport, TokenBag, level_names
from .params import HybridQuantModel

logger = logging.getLogger(__name__)

DIRECTION_SUFFIX = " (post-hoc PQ)"


def _unit_segments(embeddings: np.ndarray, M: int) -> np.ndarray:
    """(N, D) -> (N, M, d) with every non-zero segment scaled to unit norm."""
    segments = embeddings.reshape(len(embeddings), M, -1)
    norms = np.linalg.norm(segments, axis=-1, keepdims=True)
    return np.where(norms < NORM_EPSILON, 0.0, segments / np.maximum(norms, NORM_EPSILON))


def fit_subspace_codebook(
    segments: np.ndarray,
    num_codewords: int,
    seed: int,
    iterations: int = POSTHOC_KMEANS_ITERATIONS,
) -> np.ndarray:
    """
    K unit codewords for one sub-space from k-means on unit segments.

    Zero segments carry no direction and are left out of the fit.

    Raises:
        ConfigError: If fewer than K non-zero segments are available.
    """
    usable = segments[np.linalg.norm(segments, axis=-1) >= NORM_EPSILON]
    if len(usable) < num_codewords:
        raise ConfigError(
            f"post-hoc PQ needs at least K={num_codewords} non-zero segments per sub-space, got {len(usable)}"
        )
    kmeans = KMeans(
        n_clusters=num_codewords,
        n_init=POSTHOC_KMEANS_INITS,
        max_iter=iterations,
        random_state=seed,
    ).fit(usable)
    centroids = kmeans.cluster_centers_
    norms = np.linalg.norm(centroids, axis=-1, keepdims=True)
    return centroids / np.maximum(norms, NORM_EPSILON)


def fit_posthoc_codebooks(
    model: HybridQuantModel,
    bag_sets: Sequence[Sequence[TokenBag]],
    iterations: int = POSTHOC_KMEANS_ITERATIONS,
) -> np.ndarray:
    """
    Fit (L+1, M, K, d) unit codebooks on the frozen embeddings of `bag_sets`.

    Each entry of bag_sets holds bags of a single view; all entries are pooled.
    """
    config = model.config
    embeddings = np.concatenate([level_embeddings(bags, model) for bags in bag_sets if bags])
    names = level_names(config.L)
    codebooks = np.zeros((config.num_levels, config.M, config.K, config.d))
    for level in range(config.num_levels):
        segments = _unit_segments(embeddings[:, level], config.M)
        for m in range(config.M):
            codebooks[level, m] = fit_subspace_codebook(
                segments[:, m], config.K, seed=config.seed + level * config.M + m, iterations=iterations
            )
        logger.debug(f"Fitted {config.M} sub-codebooks for level {names[level]}")
    logger.info(f"Fitted post-hoc PQ codebooks on {len(embeddings)} embeddings")
    return codebooks


def install_codebooks(model: HybridQuantModel, codebooks: np.ndarray) -> HybridQuantModel:
    """Copy of `model` whose quantization modules hold `codebooks`; the original is untouched."""
    config = model.config
    expected = (config.num_levels, config.M, config.K, config.d)
    if codebooks.shape != expected:
        raise ConfigError(f"codebooks must have shape {expected}, got {codebooks.shape}")
    compressed = copy.deepcopy(model)
    compressed.config = dataclasses.replace(config, quantized_keys=False)
    with torch.no_grad():
        for quantizer, level_codebook in zip(compressed.quantizers, codebooks):
            quantizer.codebooks.copy_(torch.from_numpy(level_codebook).to(quantizer.codebooks.dtype))
    return compressed


def post_compress(
    model: HybridQuantModel,
    dataset: PairedDataset,
    iterations: int = POSTHOC_KMEANS_ITERATIONS,
) -> HybridQuantModel:
    """Fit post-hoc PQ codebooks on both views of `dataset` and install them in a model copy."""
    if len(dataset) == 0:
        raise ValueError("no pairs to fit post-hoc codebooks on")
    if model.config.quantized_keys:
        logger.warning("Post-compressing a model trained against quantized keys")
    codebooks = fit_posthoc_codebooks(model, [dataset.queries, dataset.items], iterations)
    return install_codebooks(model, codebooks)


def evaluate_post_compressed(
    dataset: PairedDataset,
    compressed: HybridQuantModel,
    threads: int = 1,
) -> list[EvalReport]:
    """Both retrieval directions of a post_compress()ed model, through compact codes and lookup tables."""
    reports = evaluate_pairs(dataset, compressed, threads)
    return [dataclasses.replace(r, direction=r.direction + DIRECTION_SUFFIX) for r in reports]
