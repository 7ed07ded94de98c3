import math

import numpy as np
import pytest
import torch

from avsf.contrastive import batch_retrieval_accuracy, info_nce

from _oracles import fd_check_tensor
from conftest import unit_rows


# ---------------------------------------------------------------------------
# closed forms


def test_identical_embeddings_give_ln2():
    z = torch.zeros(2, 4, dtype=torch.float64)
    z[:, 0] = 1.0
    loss, logits = info_nce(z, z.clone(), temperature=0.1)
    assert abs(loss.item() - math.log(2)) <= 1e-6
    assert logits.shape == (2, 2)


def test_orthonormal_pair_closed_form():
    zv = torch.eye(2, dtype=torch.float64)
    loss, _ = info_nce(zv, zv.clone(), temperature=0.1)
    expected = math.log1p(math.exp(-10.0))
    assert abs(loss.item() - expected) <= 1e-9


def test_loss_non_negative():
    for seed in range(20):
        zv, za = unit_rows(6, 8, seed), unit_rows(6, 8, seed + 100)
        loss, _ = info_nce(zv, za)
        assert loss.item() >= 0.0


def test_joint_permutation_invariance():
    zv, za = unit_rows(8, 16, 0), unit_rows(8, 16, 1)
    perm = torch.randperm(8, generator=torch.Generator().manual_seed(2))
    base, _ = info_nce(zv, za)
    permuted, _ = info_nce(zv[perm], za[perm])
    assert abs(base.item() - permuted.item()) <= 1e-7


def test_modality_swap_symmetry():
    zv, za = unit_rows(5, 8, 3), unit_rows(5, 8, 4)
    a, _ = info_nce(zv, za)
    b, _ = info_nce(za, zv)
    assert abs(a.item() - b.item()) <= 1e-12


def test_temperature_monotonicity_with_dominant_diagonal():
    # matched pairs nearly aligned, negatives near-orthogonal
    zv = unit_rows(4, 32, 7)
    za = (zv + 0.05 * unit_rows(4, 32, 8)) / (zv + 0.05 * unit_rows(4, 32, 8)).norm(dim=1, keepdim=True)
    losses = [info_nce(zv, za, t)[0].item() for t in (1.0, 0.5, 0.2, 0.1, 0.05)]
    assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))


def test_loss_decreases_toward_optimum():
    # rotate negatives toward orthogonality while keeping positives aligned
    d = 8
    base = torch.eye(4, d, dtype=torch.float64)
    losses = []
    for mix in (0.8, 0.5, 0.2, 0.0):
        za = base + mix * torch.roll(base, 1, dims=0)
        za = za / za.norm(dim=1, keepdim=True)
        losses.append(info_nce(base, za, 0.1)[0].item())
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-3


# ---------------------------------------------------------------------------
# validation errors


def test_batch_too_small():
    z = unit_rows(1, 4)
    with pytest.raises(ValueError, match="2"):
        info_nce(z, z)


def test_shape_mismatch():
    with pytest.raises(ValueError, match="shapes"):
        info_nce(unit_rows(3, 4), unit_rows(4, 4))


def test_unnormalized_rejected():
    z = unit_rows(3, 4)
    with pytest.raises(ValueError, match="unit-norm"):
        info_nce(z * 2.0, z)


def test_bad_temperature():
    z = unit_rows(2, 4)
    with pytest.raises(ValueError, match="temperature"):
        info_nce(z, z, temperature=0.0)


# ---------------------------------------------------------------------------
# gradients


def test_gradients_match_finite_differences():
    zv = unit_rows(3, 4, seed=5).requires_grad_(True)
    za = unit_rows(3, 4, seed=6).requires_grad_(True)

    def loss_fn():
        return info_nce(zv, za, 0.1)[0]

    loss = loss_fn()
    gv, ga = torch.autograd.grad(loss, (zv, za))
    assert fd_check_tensor(loss_fn, zv, gv, h=1e-5, max_coords=12) < 1e-5
    assert fd_check_tensor(loss_fn, za, ga, h=1e-5, max_coords=12) < 1e-5


# ---------------------------------------------------------------------------
# retrieval


def test_retrieval_perfect_on_orthonormal_match():
    z = torch.eye(4, dtype=torch.float64)
    assert batch_retrieval_accuracy(z, z.clone()) == (1.0, 1.0)


def test_retrieval_zero_on_derangement():
    z = torch.eye(4, dtype=torch.float64)
    deranged = z[[1, 2, 3, 0]]
    assert batch_retrieval_accuracy(z, deranged) == (0.0, 0.0)


def test_retrieval_chance_level_monte_carlo():
    rng = torch.Generator().manual_seed(42)
    hits_v, hits_a = [], []
    for _ in range(1000):
        zv = torch.randn(8, 64, generator=rng)
        za = torch.randn(8, 64, generator=rng)
        zv = zv / zv.norm(dim=1, keepdim=True)
        za = za / za.norm(dim=1, keepdim=True)
        v2a, a2v = batch_retrieval_accuracy(zv, za)
        hits_v.append(v2a)
        hits_a.append(a2v)
    assert abs(np.mean(hits_v) - 1 / 8) < 0.05
    assert abs(np.mean(hits_a) - 1 / 8) < 0.05
