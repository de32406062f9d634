"""
Compact-code indexing and lookup-table search.

A database is encoded level by level with hard quantization. A query builds
one M x K lookup table per level holding the inner products of its raw
segments with every normalized codeword; an item's per-level score is the sum
of M table reads, and levels are fused into the hybrid similarity

    s = AQS_Coarse + (1/L) * sum_l AQS_Fine(l).

Summation order is fixed everywhere (over d inside a segment, m = 1..M inside
a level, then coarse followed by fine 1..L) so the table scan and the
brute-force oracle produce bit-identical scores.

Code file layout (little-endian):
    magic (8 bytes) | version u32 | M u32 | K u32 | L u32 | item count u32
    view u8 | codebook digest (32 bytes) | ids int64 x count
    packed codes: count x ceil((L+1) * M * log2(K) / 8) bytes
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .binio import BinaryReader, pack, write_file
from .constants import CODE_FILE_MAGIC, CODE_FILE_VERSION, LEVELS_COARSE, LEVELS_FINE, LEVELS_HYBRID
from .errors import EmptyIndexError, FormatError, StaleIndexError
from .ghostvlad import INFER
from .models import HardCode, LevelEmbedding, SearchHit, TokenBag, View, all_levels
from .params import HybridQuantModel

logger = logging.getLogger(__name__)

ENCODE_BATCH_SIZE = 256
DIGEST_SIZE = 32

_VIEW_TAGS = {View.QUERY: 0, View.ITEM: 1}


def codebook_digest(codebooks: np.ndarray) -> bytes:
    """SHA-256 of a normalized codebook snapshot."""
    return hashlib.sha256(np.ascontiguousarray(codebooks, dtype="<f8").tobytes()).digest()


def code_dtype(K: int) -> np.dtype:
    if K <= 1 << 8:
        return np.dtype(np.uint8)
    if K <= 1 << 16:
        return np.dtype(np.uint16)
    return np.dtype(np.uint32)


def _codebook_state(model: HybridQuantModel) -> tuple:
    # Tensor version counters advance on every in-place write, optimizer steps included.
    return (id(model),) + tuple(
        (id(q.codebooks), q.codebooks._version) for q in model.quantizers
    )


@dataclass
class CodeIndex:
    """
    Hard codes of a database plus the codebook snapshot used to encode it.

    codes: (N, L+1, M) codeword indices.
    codebooks: (L+1, M, K, d) normalized float64 snapshot; None until a model
        is attached to an index read from disk.
    """
    ids: np.ndarray
    codes: np.ndarray
    K: int
    levels: str
    view: View
    digest: bytes
    codebooks: Optional[np.ndarray] = None
    _verified: Optional[tuple] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def num_levels(self) -> int:
        return self.codes.shape[1]

    @property
    def M(self) -> int:
        return self.codes.shape[2]

    @property
    def bytes_per_item(self) -> int:
        bits = self.K.bit_length() - 1
        return (self.num_levels * self.M * bits + 7) // 8

    def hard_code(self, position: int) -> HardCode:
        return HardCode(self.codes[position])

    def attach(self, model: HybridQuantModel) -> "CodeIndex":
        """Attach the model's codebooks after checking they produced these codes."""
        codebooks = model.normalized_codebooks()
        if codebook_digest(codebooks) != self.digest:
            raise StaleIndexError("index was encoded with different codebooks than this model")
        self.codebooks = codebooks
        self._verified = _codebook_state(model)
        return self

    def check_model(self, model: HybridQuantModel) -> None:
        """
        Raise StaleIndexError unless the model still holds the indexed codebooks.

        The digest is recomputed only when the codebook tensors were replaced
        or modified in place since the last successful check.
        """
        state = _codebook_state(model)
        if state == self._verified:
            return
        if codebook_digest(model.normalized_codebooks()) != self.digest:
            raise StaleIndexError("model codebooks changed since the index was built")
        self._verified = state

    def duplicate(self, factor: int) -> "CodeIndex":
        """Tile the database `factor` times with fresh sequential ids."""
        if factor < 1:
            raise ValueError(f"duplication factor must be >= 1, got {factor}")
        codes = np.tile(self.codes, (factor, 1, 1))
        return CodeIndex(
            ids=np.arange(len(codes), dtype=np.int64),
            codes=codes,
            K=self.K,
            levels=self.levels,
            view=self.view,
            digest=self.digest,
            codebooks=self.codebooks,
        )


@dataclass
class LookupTable:
    """Per level M x K inner products of query segments with normalized codewords."""
    tables: np.ndarray  # (L+1, M, K)

    def level(self, level: int) -> np.ndarray:
        return self.tables[level]


def _segment_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inner product over the last axis, accumulated in index order."""
    acc = a[..., 0] * b[..., 0]
    for j in range(1, a.shape[-1]):
        acc = acc + a[..., j] * b[..., j]
    return acc


def _sum_subspaces(parts: np.ndarray) -> np.ndarray:
    """Sum (..., M) over m = 1..M in order."""
    acc = np.zeros(parts.shape[:-1], dtype=np.float64)
    for m in range(parts.shape[-1]):
        acc = acc + parts[..., m]
    return acc


def fuse_levels(level_scores: np.ndarray, levels: str) -> np.ndarray:
    """
    Hybrid similarity from per-level scores of shape (L+1, N).

    hybrid: coarse + fine_sum / L; coarse: coarse only; fine: fine_sum / L.
    """
    L = level_scores.shape[0] - 1
    coarse = level_scores[0]
    if levels == LEVELS_COARSE:
        return coarse.copy()
    fine_sum = np.zeros_like(coarse)
    for level in range(1, L + 1):
        fine_sum = fine_sum + level_scores[level]
    if levels == LEVELS_FINE:
        return fine_sum / L
    return coarse + fine_sum / L


def rank_scores(scores: np.ndarray, ids: np.ndarray, k: int) -> list[SearchHit]:
    """Top-k by descending score, ties by ascending id."""
    order = np.lexsort((ids, -scores))[:k]
    return [
        SearchHit(rank=rank, id=int(ids[i]), score=float(scores[i]))
        for rank, i in enumerate(order, start=1)
    ]


@torch.no_grad()
def level_embeddings(bags: Sequence[TokenBag], model: HybridQuantModel) -> np.ndarray:
    """Inference-mode (B, L+1, D) float64 embeddings, computed in fixed-size chunks."""
    model.eval()
    chunks = [
        model.embed(bags[start:start + ENCODE_BATCH_SIZE], INFER).double().cpu().numpy()
        for start in range(0, len(bags), ENCODE_BATCH_SIZE)
    ]
    return np.concatenate(chunks) if chunks else np.zeros((0, model.config.num_levels, model.config.D))


def embed_levels(bag: TokenBag, model: HybridQuantModel) -> list[LevelEmbedding]:
    """Inference-mode embeddings of one bag, coarse level first."""
    vectors = level_embeddings([bag], model)[0]
    return [LevelEmbedding(level, vector) for level, vector in zip(all_levels(model.config.L), vectors)]


@torch.no_grad()
def _hard_codes(bags: Sequence[TokenBag], model: HybridQuantModel) -> np.ndarray:
    model.eval()
    config = model.config
    dtype = code_dtype(config.K)
    chunks = []
    for start in range(0, len(bags), ENCODE_BATCH_SIZE):
        embeddings = model.embed(bags[start:start + ENCODE_BATCH_SIZE], INFER)
        indices, _ = model.hard_quantize_levels(embeddings)
        chunks.append(indices.cpu().numpy().astype(dtype))
    if not chunks:
        return np.zeros((0, config.num_levels, config.M), dtype=dtype)
    return np.concatenate(chunks)


def encode_database(bags: Sequence[TokenBag], model: HybridQuantModel) -> CodeIndex:
    """
    Hard-encode every bag at every level.

    Bags are usually items; query bags build an index for item-to-query search.

    Raises:
        DegenerateItemError: For an item whose AGG tokens have zero mean.
    """
    view = bags[0].view if bags else View.ITEM
    codebooks = model.normalized_codebooks()
    index = CodeIndex(
        ids=np.array([bag.id for bag in bags], dtype=np.int64),
        codes=_hard_codes(bags, model),
        K=model.config.K,
        levels=model.config.levels,
        view=view,
        digest=codebook_digest(codebooks),
        codebooks=codebooks,
    )
    logger.info(f"Encoded {len(index)} {view.value} bags at {index.bytes_per_item} bytes each")
    return index


def lookup_from_embeddings(embeddings: np.ndarray, codebooks: np.ndarray) -> LookupTable:
    """Tables (L+1, M, K) from raw (L+1, D) query embeddings; segments are not normalized."""
    num_levels, M, K, d = codebooks.shape
    segments = embeddings.reshape(num_levels, M, 1, d)
    return LookupTable(_segment_dot(segments, codebooks))


def build_lookup(
    query: TokenBag,
    model: HybridQuantModel,
    codebooks: Optional[np.ndarray] = None,
) -> LookupTable:
    """Lookup tables of one query against the model's (or a snapshot's) codebooks."""
    if codebooks is None:
        codebooks = model.normalized_codebooks()
    return lookup_from_embeddings(level_embeddings([query], model)[0], codebooks)


def aqs(table: np.ndarray, code: np.ndarray) -> float:
    """Sum over m of table[m, code[m]] for one level's (M, K) table and M indices."""
    M, K = table.shape
    code = np.asarray(code)
    if code.shape != (M,):
        raise ValueError(f"code must have {M} indices, got shape {code.shape}")
    if (code < 0).any() or (code >= K).any():
        raise IndexError(f"code index out of range [0, {K})")
    acc = 0.0
    for m in range(M):
        acc = acc + table[m, code[m]]
    return float(acc)


def level_scores_from_tables(tables: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Per-level AQS of every item, (L+1, N), by table reads in fixed order."""
    num_levels, M, _ = tables.shape
    scores = np.zeros((num_levels, codes.shape[0]), dtype=np.float64)
    subspaces = np.arange(M)
    for level in range(num_levels):
        reads = tables[level, subspaces, codes[:, level, :]]  # (N, M)
        scores[level] = _sum_subspaces(reads)
    return scores


def score_index(table: LookupTable, index: CodeIndex, threads: int = 1) -> np.ndarray:
    """Hybrid similarity of every item, scanning row partitions concurrently."""
    n = len(index)
    if threads <= 1 or n < 2 * threads:
        level_scores = level_scores_from_tables(table.tables, index.codes)
    else:
        bounds = np.linspace(0, n, threads + 1, dtype=np.int64)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                lambda lo_hi: level_scores_from_tables(table.tables, index.codes[lo_hi[0]:lo_hi[1]]),
                zip(bounds[:-1], bounds[1:]),
            ))
        level_scores = np.concatenate(parts, axis=1)
    return fuse_levels(level_scores, index.levels)


def prepare_index(index: CodeIndex, model: HybridQuantModel) -> CodeIndex:
    """Attach the model to an index read from disk, or re-check a previously attached one."""
    if index.codebooks is None:
        return index.attach(model)
    index.check_model(model)
    return index


def hybrid_search(
    query: TokenBag,
    index: CodeIndex,
    model: HybridQuantModel,
    k: int,
    threads: int = 1,
) -> list[SearchHit]:
    """
    Top-k items by hybrid similarity computed from lookup tables.

    Raises:
        EmptyIndexError: If the index holds no items.
        StaleIndexError: If the model's codebooks differ from the index's.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise EmptyIndexError("cannot search an empty index")
    prepare_index(index, model)
    table = build_lookup(query, model, index.codebooks)
    return rank_scores(score_index(table, index, threads), index.ids, k)


def brute_force_search(
    query: TokenBag,
    items: Sequence[TokenBag],
    model: HybridQuantModel,
    k: int,
    bypass_quantization: bool = False,
) -> list[SearchHit]:
    """
    Reference search: explicit reconstructions, no lookup tables.

    With bypass_quantization the raw item embeddings replace the hard
    reconstructions, giving the non-compressed reference ranking.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not items:
        raise EmptyIndexError("cannot search an empty database")
    reconstructions = item_reconstructions(items, model, bypass_quantization)
    query_levels = np.stack([embedding.vector for embedding in embed_levels(query, model)])
    scores = brute_force_scores(query_levels, reconstructions, model.config.levels)
    ids = np.array([bag.id for bag in items], dtype=np.int64)
    return rank_scores(scores, ids, k)


def item_reconstructions(
    items: Sequence[TokenBag],
    model: HybridQuantModel,
    bypass_quantization: bool = False,
) -> np.ndarray:
    """(N, L+1, M, d) hard reconstructions, or raw embedding segments when bypassed."""
    config = model.config
    if bypass_quantization:
        return level_embeddings(items, model).reshape(len(items), config.num_levels, config.M, config.d)
    codes = _hard_codes(items, model).astype(np.int64)
    levels = np.arange(config.num_levels)[None, :, None]
    subspaces = np.arange(config.M)[None, None, :]
    return model.normalized_codebooks()[levels, subspaces, codes]


def brute_force_scores(query_embedding: np.ndarray, reconstructions: np.ndarray, levels: str) -> np.ndarray:
    """Hybrid similarity of a raw (L+1, D) query against (N, L+1, M, d) reconstructions."""
    num_levels, M, d = reconstructions.shape[1:]
    query_segments = query_embedding.reshape(1, num_levels, M, d)
    segment_scores = _segment_dot(query_segments, reconstructions)  # (N, L+1, M)
    return fuse_levels(_sum_subspaces(segment_scores).T, levels)


def pack_codes(codes: np.ndarray, K: int) -> np.ndarray:
    """(N, L+1, M) indices -> (N, bytes_per_item) bytes, little-endian bit order."""
    bits = K.bit_length() - 1
    flat = codes.reshape(codes.shape[0], -1).astype(np.uint32)
    bit_planes = ((flat[..., None] >> np.arange(bits, dtype=np.uint32)) & 1).astype(np.uint8)
    return np.packbits(bit_planes.reshape(codes.shape[0], -1), axis=1, bitorder="little")


def unpack_codes(packed: np.ndarray, K: int, num_levels: int, M: int) -> np.ndarray:
    bits = K.bit_length() - 1
    count = num_levels * M
    bit_planes = np.unpackbits(packed, axis=1, count=count * bits, bitorder="little")
    bit_planes = bit_planes.reshape(packed.shape[0], count, bits).astype(np.uint32)
    values = (bit_planes << np.arange(bits, dtype=np.uint32)).sum(axis=-1)
    return values.reshape(packed.shape[0], num_levels, M).astype(code_dtype(K))


def code_file_bytes(index: CodeIndex) -> bytes:
    L = index.num_levels - 1
    header = [
        CODE_FILE_MAGIC,
        pack("I", CODE_FILE_VERSION),
        pack("IIII", index.M, index.K, L, len(index)),
        pack("B", _VIEW_TAGS[index.view]),
        index.digest,
    ]
    body = [
        np.ascontiguousarray(index.ids, dtype="<i8").tobytes(),
        pack_codes(index.codes, index.K).tobytes(),
    ]
    return b"".join(header + body)


def write_code_file(index: CodeIndex, path: Union[str, Path]) -> None:
    write_file(path, code_file_bytes(index))
    logger.info(f"Wrote {len(index)} codes to {path}")


def read_code_file(
    path: Union[str, Path],
    model: Optional[HybridQuantModel] = None,
) -> CodeIndex:
    """
    Read a code file; with a model, attach and verify its codebooks.

    Raises:
        FormatError: On malformed or truncated files, or a model whose M/K/L differ.
        StaleIndexError: If the model's codebooks did not produce these codes.
    """
    reader = BinaryReader.open(path)
    reader.expect_magic(CODE_FILE_MAGIC, "code")
    reader.expect_version(CODE_FILE_VERSION, "code")
    M, K, L, count = reader.unpack("IIII")
    if M == 0 or K < 2 or K & (K - 1):
        raise FormatError(str(path), f"invalid header M={M} K={K}")
    tag = reader.u8()
    views = {t: v for v, t in _VIEW_TAGS.items()}
    if tag not in views:
        raise FormatError(str(path), f"unknown view tag {tag}")
    digest = reader.read(DIGEST_SIZE)
    ids = reader.array("<i8", count).astype(np.int64)
    bytes_per_item = ((L + 1) * M * (K.bit_length() - 1) + 7) // 8
    packed = reader.array("u1", count * bytes_per_item).reshape(count, bytes_per_item)
    reader.expect_end()

    index = CodeIndex(
        ids=ids,
        codes=unpack_codes(packed, K, L + 1, M),
        K=K,
        levels=LEVELS_HYBRID,
        view=views[tag],
        digest=digest,
    )
    if model is not None:
        config = model.config
        if (config.M, config.K, config.L) != (M, K, L):
            raise FormatError(
                str(path), f"code file has M={M} K={K} L={L}, model has "
                f"M={config.M} K={config.K} L={config.L}"
            )
        index.levels = config.levels
        index.attach(model)
    return index
