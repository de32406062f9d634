import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

import hybrid_quant.index as index_module
from hybrid_quant.config import EngineConfig
from hybrid_quant.errors import EmptyIndexError, StaleIndexError
from hybrid_quant.index import (
    CodeIndex,
    aqs,
    brute_force_search,
    build_lookup,
    code_file_bytes,
    embed_levels,
    encode_database,
    hybrid_search,
    level_embeddings,
    lookup_from_embeddings,
    pack_codes,
    rank_scores,
    unpack_codes,
)
from hybrid_quant.models import Level, View
from hybrid_quant.params import init_parameters

from .helpers import random_bags, toy_config

CODE_HEADER_BYTES = 8 + 4 + 16 + 1 + 32


def random_toy_config(rng: np.random.Generator) -> EngineConfig:
    return toy_config(
        D=int(rng.choice([8, 16])),
        M=int(rng.choice([1, 2, 4])),
        K=int(rng.choice([2, 4, 8])),
        L=int(rng.choice([1, 2, 3])),
        seed=int(rng.integers(1 << 16)),
    )


@pytest.mark.parametrize("trial", range(24))
def test_table_search_is_identical_to_brute_force(trial):
    rng = np.random.default_rng(trial)
    config = random_toy_config(rng)
    model = init_parameters(config)
    items = random_bags(config, View.ITEM, 50, seed=trial + 100)
    queries = random_bags(config, View.QUERY, 3, seed=trial + 200)
    index = encode_database(items, model)

    for query in queries:
        table_hits = hybrid_search(query, index, model, k=50)
        oracle_hits = brute_force_search(query, items, model, k=50)
        assert [h.id for h in table_hits] == [h.id for h in oracle_hits]
        assert [h.score for h in table_hits] == [h.score for h in oracle_hits]


def test_item_to_query_search_matches_brute_force():
    config = toy_config()
    model = init_parameters(config)
    queries = random_bags(config, View.QUERY, 30, seed=1)
    item = random_bags(config, View.ITEM, 1, seed=2)[0]
    index = encode_database(queries, model)
    assert index.view is View.QUERY
    table_hits = hybrid_search(item, index, model, k=30)
    oracle_hits = brute_force_search(item, queries, model, k=30)
    assert [(h.id, h.score) for h in table_hits] == [(h.id, h.score) for h in oracle_hits]


@pytest.mark.parametrize("seed", range(3))
def test_aqs_equals_dot_with_hard_reconstruction(seed):
    config = toy_config(D=16, M=4, K=8, L=3, seed=seed)
    model = init_parameters(config)
    items = random_bags(config, View.ITEM, 1000, seed=seed + 10)
    queries = random_bags(config, View.QUERY, 5, seed=seed + 20)
    index = encode_database(items, model)
    codebooks = model.normalized_codebooks()
    query_embeddings = level_embeddings(queries, model)

    rng = np.random.default_rng(seed)
    for _ in range(1000):
        q = int(rng.integers(len(queries)))
        position = int(rng.integers(len(items)))
        level = int(rng.integers(config.num_levels))
        table = lookup_from_embeddings(query_embeddings[q], codebooks)
        code = index.hard_code(position).level(Level(level))
        reconstruction = codebooks[level, np.arange(config.M), code.astype(np.int64)].reshape(-1)
        expected = float(query_embeddings[q, level] @ reconstruction)
        assert aqs(table.level(level), code) == pytest.approx(expected, abs=1e-6)


def test_aqs_edge_cases():
    table = np.arange(12, dtype=np.float64).reshape(1, 12)
    assert aqs(table, np.array([7])) == 7.0
    assert aqs(np.zeros((3, 4)), np.array([1, 3, 0])) == 0.0
    with pytest.raises(IndexError):
        aqs(np.zeros((2, 4)), np.array([1, 4]))


def test_lookup_table_matches_direct_dot_products(toy_model):
    query = random_bags(toy_model.config, View.QUERY, 1, seed=9)[0]
    table = build_lookup(query, toy_model)
    embedding = level_embeddings([query], toy_model)[0]
    codebooks = toy_model.normalized_codebooks()
    config = toy_model.config
    assert table.tables.shape == (config.num_levels, config.M, config.K)
    for level in range(config.num_levels):
        for m in range(config.M):
            segment = embedding[level, m * config.d:(m + 1) * config.d]
            for k in range(config.K):
                assert table.tables[level, m, k] == pytest.approx(segment @ codebooks[level, m, k], abs=1e-12)


def test_zero_query_level_gives_zero_table(toy_model):
    config = toy_model.config
    embeddings = np.random.default_rng(0).standard_normal((config.num_levels, config.D))
    embeddings[2] = 0.0
    table = lookup_from_embeddings(embeddings, toy_model.normalized_codebooks())
    assert not table.level(2).any()
    assert table.level(1).any()


def test_search_edge_cases(toy_model, toy_items):
    index = encode_database(toy_items, toy_model)
    query = random_bags(toy_model.config, View.QUERY, 1, seed=4)[0]
    assert len(hybrid_search(query, index, toy_model, k=500)) == 50

    single = encode_database(toy_items[:1], toy_model)
    hits = hybrid_search(query, single, toy_model, k=5)
    assert [(h.rank, h.id) for h in hits] == [(1, 0)]

    with pytest.raises(ValueError):
        hybrid_search(query, index, toy_model, k=0)
    with pytest.raises(EmptyIndexError):
        hybrid_search(query, encode_database([], toy_model), toy_model, k=1)


def test_empty_database_gives_empty_index(toy_model):
    index = encode_database([], toy_model)
    assert len(index) == 0
    assert index.codes.shape == (0, toy_model.config.num_levels, toy_model.config.M)


def test_re_encoding_is_deterministic(toy_model, toy_items):
    first = encode_database(toy_items, toy_model)
    second = encode_database(toy_items, toy_model)
    assert np.array_equal(first.codes, second.codes)
    assert first.digest == second.digest


def test_stale_codebooks_are_detected(toy_model, toy_items):
    index = encode_database(toy_items, toy_model)
    query = random_bags(toy_model.config, View.QUERY, 1, seed=4)[0]
    with torch.no_grad():
        toy_model.quantizers[0].codebooks.add_(0.1)
    with pytest.raises(StaleIndexError):
        hybrid_search(query, index, toy_model, k=3)


def test_stale_edit_after_a_search_is_detected(toy_model, toy_items):
    index = encode_database(toy_items, toy_model)
    query = random_bags(toy_model.config, View.QUERY, 1, seed=4)[0]
    hybrid_search(query, index, toy_model, k=3)
    with torch.no_grad():
        toy_model.quantizers[-1].codebooks.mul_(-1.0)
    with pytest.raises(StaleIndexError):
        hybrid_search(query, index, toy_model, k=3)


def test_codebooks_are_hashed_once_per_model_state(toy_model, toy_items, monkeypatch):
    index = encode_database(toy_items, toy_model)
    queries = random_bags(toy_model.config, View.QUERY, 5, seed=4)
    calls = []
    real_digest = index_module.codebook_digest

    def counting_digest(codebooks):
        calls.append(codebooks.shape)
        return real_digest(codebooks)

    monkeypatch.setattr(index_module, "codebook_digest", counting_digest)

    for query in queries:
        hybrid_search(query, index, toy_model, k=3)
    assert len(calls) == 1

    with torch.no_grad():
        toy_model.quantizers[0].codebooks.mul_(2.0)  # direction unchanged, digest unchanged
    for query in queries:
        hybrid_search(query, index, toy_model, k=3)
    assert len(calls) == 2


def test_results_are_invariant_to_database_order(toy_model, toy_items):
    query = random_bags(toy_model.config, View.QUERY, 1, seed=6)[0]
    expected = hybrid_search(query, encode_database(toy_items, toy_model), toy_model, k=50)
    shuffled = [toy_items[i] for i in np.random.default_rng(1).permutation(len(toy_items))]
    actual = hybrid_search(query, encode_database(shuffled, toy_model), toy_model, k=50)
    assert [h.id for h in actual] == [h.id for h in expected]
    assert [h.score for h in actual] == pytest.approx([h.score for h in expected], abs=1e-9)


def test_ties_rank_by_ascending_id():
    hits = rank_scores(np.array([0.5, 0.9, 0.5, 0.9]), np.array([7, 3, 2, 5]), k=4)
    assert [h.id for h in hits] == [3, 5, 2, 7]
    assert [h.rank for h in hits] == [1, 2, 3, 4]


def test_threaded_scan_matches_single_thread(toy_model, toy_items):
    index = encode_database(toy_items, toy_model)
    query = random_bags(toy_model.config, View.QUERY, 1, seed=2)[0]
    single = hybrid_search(query, index, toy_model, k=50, threads=1)
    threaded = hybrid_search(query, index, toy_model, k=50, threads=4)
    assert [(h.id, h.score) for h in single] == [(h.id, h.score) for h in threaded]


def test_bypassed_quantization_ranks_by_raw_embeddings(toy_model, toy_items):
    query = random_bags(toy_model.config, View.QUERY, 1, seed=3)[0]
    hits = brute_force_search(query, toy_items, toy_model, k=50, bypass_quantization=True)
    q = level_embeddings([query], toy_model)[0]
    items = level_embeddings(toy_items, toy_model)
    expected = (items[:, 0] @ q[0]) + sum(items[:, level] @ q[level] for level in (1, 2)) / 2
    assert hits[0].id == int(np.argmax(expected))
    assert hits[0].score == pytest.approx(expected.max(), abs=1e-9)


def test_duplicate_tiles_codes_with_fresh_ids(toy_model, toy_items):
    index = encode_database(toy_items[:5], toy_model).duplicate(3)
    assert len(index) == 15
    assert index.ids.tolist() == list(range(15))
    assert np.array_equal(index.codes[5:10], index.codes[:5])
    with pytest.raises(ValueError):
        index.duplicate(0)


@given(st.sampled_from([2, 4, 16, 256, 1024]), st.integers(0, 2**32 - 1))
def test_packed_codes_unpack_to_the_same_indices(K, seed):
    codes = np.random.default_rng(seed).integers(0, K, size=(5, 3, 4))
    packed = pack_codes(codes, K)
    assert packed.shape == (5, (3 * 4 * (K.bit_length() - 1) + 7) // 8)
    assert np.array_equal(unpack_codes(packed, K, 3, 4), codes)


def test_byte_sized_codes_are_stored_as_plain_bytes():
    codes = np.array([[[1, 2], [255, 0]]])
    assert pack_codes(codes, 256).tolist() == [[1, 2, 255, 0]]


def test_default_storage_is_256_bytes_per_item():
    config = EngineConfig()
    codes = np.zeros((10_000, config.num_levels, config.M), dtype=np.uint8)
    index = CodeIndex(
        ids=np.arange(10_000, dtype=np.int64),
        codes=codes,
        K=config.K,
        levels=config.levels,
        view=View.ITEM,
        digest=bytes(32),
    )
    assert index.bytes_per_item == 256
    size = len(code_file_bytes(index))
    id_bytes = 8 * 10_000
    assert size - CODE_HEADER_BYTES - id_bytes == 2_560_000


def test_embed_levels_names_every_level(toy_model, toy_items):
    embeddings = embed_levels(toy_items[0], toy_model)
    assert [e.level for e in embeddings] == [Level.coarse(), Level.fine(1), Level.fine(2)]
    assert [e.level.name for e in embeddings] == ["coarse", "fine_1", "fine_2"]
    np.testing.assert_array_equal(
        np.stack([e.vector for e in embeddings]),
        level_embeddings([toy_items[0]], toy_model)[0],
    )
    assert np.linalg.norm(embeddings[0].vector) == pytest.approx(1.0)


def test_fine_levels_start_at_one():
    with pytest.raises(ValueError):
        Level.fine(0)
