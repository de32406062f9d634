import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hybrid_quant.ghostvlad import INFER, TRAIN
from hybrid_quant.models import View
from hybrid_quant.objective import (
    aqcl_loss,
    aqcl_loss_from_similarities,
    combine_levels,
    hybrid_loss,
    level_loss,
)
from hybrid_quant.params import init_parameters

from .helpers import central_difference, random_pairs, toy_config

TAU = 0.05

similarity_matrices = st.integers(1, 6).flatmap(
    lambda n: st.lists(
        st.lists(st.floats(-1.0, 1.0), min_size=n, max_size=n), min_size=n, max_size=n
    )
)


def test_single_pair_loss_is_zero():
    assert aqcl_loss_from_similarities(torch.tensor([[0.3]], dtype=torch.float64), TAU).item() == 0.0


def test_two_by_two_matches_scalar_evaluation():
    sims = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    expected = math.log1p(math.exp(-1.0 / TAU))
    assert aqcl_loss_from_similarities(sims, TAU).item() == pytest.approx(expected, rel=1e-12)


def test_saturated_positives_give_near_zero_loss():
    sims = torch.full((4, 4), -50.0, dtype=torch.float64)
    sims.fill_diagonal_(50.0)
    assert aqcl_loss_from_similarities(sims, TAU).item() < 1e-12


@given(similarity_matrices, st.floats(-3.0, 3.0))
def test_loss_is_non_negative_and_row_shift_invariant(rows, shift):
    sims = torch.tensor(rows, dtype=torch.float64)
    loss = aqcl_loss_from_similarities(sims, TAU).item()
    offsets = torch.linspace(-1.0, 1.0, len(rows), dtype=torch.float64).unsqueeze(1) * shift
    shifted = aqcl_loss_from_similarities(sims + offsets, TAU).item()
    assert loss >= -1e-9
    assert shifted == pytest.approx(loss, abs=1e-6)


def test_aqcl_loss_uses_raw_queries_against_keys():
    queries = torch.randn(3, 4, dtype=torch.float64)
    keys = torch.randn(3, 4, dtype=torch.float64)
    direct = aqcl_loss_from_similarities(queries @ keys.T, TAU)
    assert torch.equal(aqcl_loss(queries, keys, TAU), direct)


def test_swapping_views_swaps_directions():
    q, i, qk, ik = (torch.randn(4, 8, dtype=torch.float64) for _ in range(4))
    forward = level_loss(q, i, qk, ik, TAU)
    swapped = level_loss(i, q, ik, qk, TAU)
    assert torch.equal(forward.query_to_item, swapped.item_to_query)
    assert torch.equal(forward.item_to_query, swapped.query_to_item)
    assert torch.equal(forward.symmetric, swapped.symmetric)


def test_doubling_fine_losses_doubles_the_fine_term():
    coarse = torch.tensor(0.7, dtype=torch.float64)
    fine = [torch.tensor(v, dtype=torch.float64) for v in (0.2, 0.5)]
    weights = [1.0, 0.5, 0.5]
    base = combine_levels([coarse, *fine], weights)
    doubled = combine_levels([coarse, *(2 * f for f in fine)], weights)
    assert (doubled - coarse).item() == pytest.approx(2 * (base - coarse).item(), rel=1e-15)


def test_hybrid_loss_is_deterministic_and_reports_every_level(toy_pairs):
    model = init_parameters(toy_config()).double()
    first, breakdown = hybrid_loss(toy_pairs.queries, toy_pairs.items, model, mode=INFER)
    second, _ = hybrid_loss(toy_pairs.queries, toy_pairs.items, model, mode=INFER)
    assert first.item() == second.item()
    assert list(breakdown.levels) == ["coarse", "fine_1", "fine_2"]
    levels = breakdown.as_floats()
    assert first.item() == pytest.approx(levels["coarse"] + 0.5 * (levels["fine_1"] + levels["fine_2"]))


def test_batch_of_one_has_zero_loss(toy_pairs):
    model = init_parameters(toy_config())
    total, _ = hybrid_loss(toy_pairs.queries[:1], toy_pairs.items[:1], model, mode=TRAIN)
    assert total.item() == 0.0


@pytest.mark.parametrize("levels,active,expected", [
    ("coarse", [0], ["coarse"]),
    ("fine", [1, 2], ["fine_1", "fine_2"]),
    ("hybrid", [0, 1, 2], ["coarse", "fine_1", "fine_2"]),
])
def test_level_selection(toy_pairs, levels, active, expected):
    model = init_parameters(toy_config(levels=levels)).double()
    assert model.active_levels() == active
    total, breakdown = hybrid_loss(toy_pairs.queries, toy_pairs.items, model, mode=INFER)
    assert list(breakdown.levels) == expected
    parts = breakdown.as_floats()
    weights = model.level_weights()
    assert total.item() == pytest.approx(sum(weights[level] * parts[name] for level, name in zip(active, expected)))


def test_raw_key_training_ignores_the_codebooks(toy_pairs):
    model = init_parameters(toy_config(quantized_keys=False)).double()
    before, _ = hybrid_loss(toy_pairs.queries, toy_pairs.items, model, mode=INFER)
    with torch.no_grad():
        for quantizer in model.quantizers:
            quantizer.codebooks.normal_()
    after, _ = hybrid_loss(toy_pairs.queries, toy_pairs.items, model, mode=INFER)
    assert before.item() == after.item()


# Independent straight-line forward pass (numpy, float64, inference-mode batch norm)

def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _unit(x):
    n = np.linalg.norm(x)
    return x / n if n >= 1e-12 else np.zeros_like(x)


def _oracle_embeddings(bag, p, config):
    if bag.view is View.QUERY:
        cls = bag.condensed[0].astype(np.float64)
        weights = _softmax(p["gate"] @ cls)
        coarse = sum(weights[e] * _unit(p["experts"][e] @ cls) for e in range(config.N_E))
        tokens = bag.tokens.astype(np.float64) @ p["text"].T
    else:
        coarse = _unit(bag.condensed.astype(np.float64).mean(axis=0))
        tokens = bag.tokens.astype(np.float64)
    logits = tokens @ p["assignment"].T
    normed = (logits - p["rm"]) / np.sqrt(p["rv"] + p["eps"]) * p["bn_w"] + p["bn_b"]
    a = _softmax(normed)
    fine = []
    for l in range(1, config.L + 1):
        residual = sum(a[n, l] * (tokens[n] - p["centroids"][l]) for n in range(len(tokens)))
        fine.append(_unit(residual))
    return [coarse, *fine]


def _oracle_soft(x, codebooks, config):
    parts = []
    for m in range(config.M):
        segment = x[m * config.d:(m + 1) * config.d]
        words = [_unit(c) for c in codebooks[m]]
        seg = _unit(segment)
        attention = _softmax(np.array([config.alpha * seg @ c for c in words]))
        parts.append(sum(attention[k] * words[k] for k in range(config.K)))
    return np.concatenate(parts)


def _oracle_infonce(sims, tau):
    total = 0.0
    for i in range(len(sims)):
        row = sims[i] / tau
        top = row.max()
        total += -(row[i] - top - math.log(sum(math.exp(v - top) for v in row)))
    return total / len(sims)


def test_hybrid_loss_matches_independent_forward_pass():
    config = toy_config(N_E=1)
    model = init_parameters(config).double()
    pairs = random_pairs(config, 3, seed=21)
    p = {
        "gate": model.gating.gate.detach().numpy(),
        "experts": model.gating.experts.detach().numpy(),
        "text": model.text_projection.weight.detach().numpy(),
        "assignment": model.vlad.assignment.detach().numpy(),
        "centroids": model.vlad.centroids.detach().numpy(),
        "rm": model.vlad.bn.running_mean.numpy(),
        "rv": model.vlad.bn.running_var.numpy(),
        "bn_w": model.vlad.bn.weight.detach().numpy(),
        "bn_b": model.vlad.bn.bias.detach().numpy(),
        "eps": model.vlad.bn.eps,
    }
    codebooks = [q.codebooks.detach().numpy() for q in model.quantizers]

    queries = [_oracle_embeddings(b, p, config) for b in pairs.queries]
    items = [_oracle_embeddings(b, p, config) for b in pairs.items]
    level_losses = []
    for level in range(config.num_levels):
        q_raw = np.stack([e[level] for e in queries])
        i_raw = np.stack([e[level] for e in items])
        q_soft = np.stack([_oracle_soft(v, codebooks[level], config) for v in q_raw])
        i_soft = np.stack([_oracle_soft(v, codebooks[level], config) for v in i_raw])
        level_losses.append(0.5 * (
            _oracle_infonce(q_raw @ i_soft.T, config.tau) + _oracle_infonce(i_raw @ q_soft.T, config.tau)
        ))
    expected = level_losses[0] + sum(level_losses[1:]) / config.L

    total, _ = hybrid_loss(pairs.queries, pairs.items, model, mode=INFER)
    assert total.item() == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_every_parameter_gradient_matches_central_differences():
    config = toy_config(N_E=2)
    model = init_parameters(config).double()
    pairs = random_pairs(config, 3, seed=5)

    def loss() -> float:
        return hybrid_loss(pairs.queries, pairs.items, model, mode=TRAIN)[0].item()

    model.zero_grad()
    hybrid_loss(pairs.queries, pairs.items, model, mode=TRAIN)[0].backward()
    rng = np.random.default_rng(0)
    for name, parameter in model.named_parameters():
        flat_positions = rng.choice(parameter.numel(), size=min(6, parameter.numel()), replace=False)
        positions = [np.unravel_index(i, parameter.shape) for i in flat_positions]
        numeric = central_difference(loss, parameter, positions, eps=1e-5)
        analytic = np.array([parameter.grad[pos].item() for pos in positions])
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-6)
        assert np.linalg.norm(analytic - numeric) / scale < 1e-4, name
