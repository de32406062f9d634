"""
Trainable product quantization, one module per representation level.

Segments and codewords are l2-normalized on every read. Training uses soft
codeword attention (softmax over scaled inner products); indexing uses the
hard argmax assignment.
"""

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .constants import NORM_EPSILON
from .errors import DimensionError


class SoftQuantization(NamedTuple):
    """Soft code p (..., M, K) and the soft reconstruction (..., D)."""
    code: torch.Tensor
    reconstruction: torch.Tensor


class HardQuantization(NamedTuple):
    """Codeword indices (..., M) and the hard reconstruction (..., D)."""
    indices: torch.Tensor
    reconstruction: torch.Tensor


class QuantizationModule(nn.Module):
    """
    M sub-codebooks of K codewords in d-dimensional sub-spaces.

    Stored codewords are unconstrained; normalized_codebooks() is what every
    quantization step sees.
    """

    def __init__(self, level: int, num_subspaces: int, num_codewords: int,
                 subspace_dim: int, alpha: float = 1.0):
        super().__init__()
        self.level = level
        self.num_subspaces = num_subspaces
        self.num_codewords = num_codewords
        self.subspace_dim = subspace_dim
        self.alpha = alpha
        self.codebooks = nn.Parameter(torch.empty(num_subspaces, num_codewords, subspace_dim))

    @property
    def dim(self) -> int:
        return self.num_subspaces * self.subspace_dim

    def reset_parameters(self, generator: torch.Generator) -> None:
        with torch.no_grad():
            codewords = torch.randn(self.codebooks.shape, generator=generator)
            self.codebooks.copy_(F.normalize(codewords, dim=-1))

    def normalized_codebooks(self) -> torch.Tensor:
        return F.normalize(self.codebooks, p=2, dim=-1, eps=NORM_EPSILON)

    def segments(self, x: torch.Tensor) -> torch.Tensor:
        """Split (..., D) into (..., M, d)."""
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected last dim {self.dim}, got {x.shape[-1]}")
        return x.reshape(*x.shape[:-1], self.num_subspaces, self.subspace_dim)

    def forward(self, x: torch.Tensor) -> SoftQuantization:
        return soft_quantize(x, self)


def _segment_logits(x: torch.Tensor, qm: QuantizationModule) -> torch.Tensor:
    """Inner products of normalized segments with normalized codewords, (..., M, K)."""
    # Zero segments stay zero, giving all-zero logits.
    segments = F.normalize(qm.segments(x), p=2, dim=-1, eps=NORM_EPSILON)
    return torch.einsum("...md,mkd->...mk", segments, qm.normalized_codebooks())


def soft_quantize(x: torch.Tensor, qm: QuantizationModule) -> SoftQuantization:
    """Codebook attention: p = softmax(alpha * <x^m, c^m_i>), x_hat^m = sum_i p_i c^m_i."""
    code = torch.softmax(qm.alpha * _segment_logits(x, qm), dim=-1)
    parts = torch.einsum("...mk,mkd->...md", code, qm.normalized_codebooks())
    return SoftQuantization(code, parts.reshape(*x.shape[:-1], qm.dim))


def reconstruct(indices: torch.Tensor, qm: QuantizationModule) -> torch.Tensor:
    """Concatenate the selected normalized codewords; (..., M) -> (..., D)."""
    codebooks = qm.normalized_codebooks()
    subspace = torch.arange(qm.num_subspaces, device=indices.device)
    parts = codebooks[subspace, indices.long()]
    return parts.reshape(*indices.shape[:-1], qm.dim)


@torch.no_grad()
def hard_quantize(x: torch.Tensor, qm: QuantizationModule) -> HardQuantization:
    """Per sub-space argmax codeword, lowest index on ties."""
    indices = _segment_logits(x, qm).argmax(dim=-1)
    return HardQuantization(indices, reconstruct(indices, qm))


def grad_soft_quantize(
    x: torch.Tensor,
    qm: QuantizationModule,
    upstream: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Vector-Jacobian product of the soft reconstruction.

    Returns:
        (gradient w.r.t. x, gradient w.r.t. the raw codebooks)
    """
    x = x.detach().requires_grad_(True)
    with torch.enable_grad():
        reconstruction = soft_quantize(x, qm).reconstruction
        grad_x, grad_codebooks = torch.autograd.grad(
            reconstruction, (x, qm.codebooks), grad_outputs=upstream
        )
    return grad_x, grad_codebooks
