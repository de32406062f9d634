import math

import pytest
import torch

from hybrid_quant.errors import DimensionError
from hybrid_quant.ghostvlad import INFER, TRAIN, GhostVLAD, aggregate, assign


def make_vlad(num_clusters=3, dim=4, seed=0) -> GhostVLAD:
    vlad = GhostVLAD(num_clusters, dim).double()
    vlad.reset_parameters(torch.Generator().manual_seed(seed))
    return vlad


@pytest.mark.parametrize("mode", [TRAIN, INFER])
def test_assignments_are_row_stochastic(mode):
    vlad = make_vlad()
    assignments = assign(torch.randn(7, 4, dtype=torch.float64), vlad, mode)
    assert assignments.shape == (7, 4)
    assert (assignments >= 0).all()
    assert torch.allclose(assignments.sum(dim=-1), torch.ones(7, dtype=torch.float64), atol=1e-6)


def test_fine_embeddings_are_unit_norm_rows():
    vlad = make_vlad()
    fine = vlad(torch.randn(9, 4, dtype=torch.float64))
    assert fine.shape == (3, 4)
    assert torch.allclose(fine.norm(dim=-1), torch.ones(3, dtype=torch.float64), atol=1e-6)


def test_zero_residual_gives_zero_rows():
    vlad = make_vlad()
    tokens = vlad.centroids[1:2].detach().clone()
    assignments = torch.tensor([[0.0, 1.0, 0.0, 0.0]], dtype=torch.float64)
    fine = aggregate(tokens, assignments, vlad)
    assert torch.equal(fine, torch.zeros(3, 4, dtype=torch.float64))


def test_batched_aggregation_matches_per_bag():
    vlad = make_vlad()
    bags = [torch.randn(n, 4, dtype=torch.float64) for n in (2, 5, 3)]
    tokens = torch.cat(bags)
    bag_index = torch.repeat_interleave(torch.arange(3), torch.tensor([2, 5, 3]))
    batched = vlad(tokens, bag_index, 3, INFER)
    assert batched.shape == (3, 3, 4)
    for b, bag in enumerate(bags):
        assert torch.allclose(batched[b], vlad(bag, mode=INFER), atol=1e-12)


def test_train_mode_updates_running_statistics():
    vlad = make_vlad()
    before = vlad.bn.running_mean.clone()
    assign(torch.randn(6, 4, dtype=torch.float64) + 3.0, vlad, TRAIN)
    assert not torch.equal(before, vlad.bn.running_mean)


def test_single_token_in_train_mode_uses_running_statistics():
    vlad = make_vlad()
    token = torch.randn(1, 4, dtype=torch.float64)
    before = vlad.bn.running_mean.clone()
    trained = assign(token, vlad, TRAIN)
    assert torch.equal(before, vlad.bn.running_mean)
    assert torch.allclose(trained, assign(token, vlad, INFER))


def test_infer_mode_leaves_statistics_alone():
    vlad = make_vlad()
    before = vlad.bn.running_var.clone()
    assign(torch.randn(6, 4, dtype=torch.float64), vlad, INFER)
    assert torch.equal(before, vlad.bn.running_var)


def test_assign_validation():
    vlad = make_vlad()
    with pytest.raises(DimensionError):
        assign(torch.randn(3, 5, dtype=torch.float64), vlad)
    with pytest.raises(DimensionError):
        assign(torch.zeros(0, 4, dtype=torch.float64), vlad)
    with pytest.raises(ValueError):
        assign(torch.randn(3, 4, dtype=torch.float64), vlad, mode="eval")


def test_ghost_column_does_not_reach_the_output():
    vlad = make_vlad()
    tokens = torch.randn(6, 4, dtype=torch.float64)
    assignments = assign(tokens, vlad)
    without_ghost = assignments.clone()
    without_ghost[:, 0] = 0.0
    assert torch.equal(aggregate(tokens, assignments, vlad), aggregate(tokens, without_ghost, vlad))


@pytest.mark.parametrize("mode", [TRAIN, INFER])
def test_assign_is_permutation_equivariant(mode):
    tokens = torch.randn(8, 4, dtype=torch.float64)
    perm = torch.randperm(8, generator=torch.Generator().manual_seed(2))
    original = assign(tokens, make_vlad(), mode)
    permuted = assign(tokens[perm], make_vlad(), mode)
    assert torch.allclose(permuted, original[perm], atol=1e-12)


def test_aggregate_is_permutation_invariant():
    vlad = make_vlad()
    tokens = torch.randn(8, 4, dtype=torch.float64)
    assignments = assign(tokens, vlad)
    perm = torch.randperm(8, generator=torch.Generator().manual_seed(3))
    assert torch.allclose(
        aggregate(tokens[perm], assignments[perm], vlad),
        aggregate(tokens, assignments, vlad),
        atol=1e-12,
    )


def test_one_cluster_with_equal_weights_splits_evenly():
    vlad = make_vlad(num_clusters=1)
    with torch.no_grad():
        vlad.assignment.copy_(torch.tensor([[0.3, -0.2, 0.1, 0.5]], dtype=torch.float64).expand(2, 4))
    assignments = assign(torch.randn(5, 4, dtype=torch.float64), vlad)
    assert torch.allclose(assignments, torch.full((5, 2), 0.5, dtype=torch.float64))


def test_all_mass_on_the_ghost_gives_zero_levels():
    vlad = make_vlad()
    tokens = torch.randn(4, 4, dtype=torch.float64)
    assignments = torch.zeros(4, 4, dtype=torch.float64)
    assignments[:, 0] = 1.0
    assert torch.equal(aggregate(tokens, assignments, vlad), torch.zeros(3, 4, dtype=torch.float64))


def test_two_token_assignment_by_hand():
    vlad = make_vlad(num_clusters=2, dim=2)
    with torch.no_grad():
        vlad.assignment.copy_(torch.tensor([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    tokens = torch.eye(2, dtype=torch.float64)
    # fresh running statistics: mean 0, variance 1
    s = 1.0 / math.sqrt(1.0 + vlad.bn.eps)
    z = 2.0 + math.exp(s)
    expected = torch.tensor([
        [1.0 / z, math.exp(s) / z, 1.0 / z],
        [1.0 / z, 1.0 / z, math.exp(s) / z],
    ], dtype=torch.float64)
    assert torch.allclose(assign(tokens, vlad, INFER), expected, atol=1e-12)


def test_two_token_aggregation_by_hand():
    vlad = make_vlad(num_clusters=2, dim=2)
    with torch.no_grad():
        vlad.centroids[1:].copy_(torch.tensor([[0.0, 0.0], [1.0, 1.0]]))
    tokens = torch.eye(2, dtype=torch.float64)
    assignments = torch.tensor([[0.5, 0.5, 0.0], [0.0, 0.25, 0.75]], dtype=torch.float64)
    fine = aggregate(tokens, assignments, vlad)
    assert fine[0].tolist() == pytest.approx([2 / math.sqrt(5), 1 / math.sqrt(5)])
    assert fine[1].tolist() == pytest.approx([-1.0, 0.0])
