"""Margin-aware relation distillation.

Teacher and deployment features are turned into batch relation matrices
(pairwise cosine similarity); the per-sample relation gap is weighted by a
softmax over the teacher's per-sample prediction entropy, so samples the
teacher finds ambiguous (near a class boundary) dominate the loss.
"""

from __future__ import annotations

from typing import NamedTuple

import torch

EPS_NORM = 1e-12

MODES = ("mad", "sp", "off")


class UncertaintyVector(NamedTuple):
    entropy: torch.Tensor
    weights: torch.Tensor


def flatten_features(z: torch.Tensor) -> torch.Tensor:
    return z.reshape(z.shape[0], -1)


def relation_matrix(Z: torch.Tensor, eps: float = EPS_NORM) -> torch.Tensor:
    """Pairwise cosine similarities of the rows of ``Z`` (``b x b``).

    ``eps`` is added to the product of norms so all-zero rows give zero
    similarity instead of a division error.
    """
    norms = Z.norm(dim=1)
    return (Z @ Z.T) / (norms[:, None] * norms[None, :] + eps)


def relation_discrepancy(r_t: torch.Tensor, r_d: torch.Tensor, signed: bool = False) -> torch.Tensor:
    """Row sums of the relation gap; absolute gaps unless ``signed``."""
    if r_t.shape != r_d.shape:
        raise ValueError(f"relation matrices differ in shape: {tuple(r_t.shape)} vs {tuple(r_d.shape)}")
    gap = r_t - r_d
    if not signed:
        gap = gap.abs()
    return gap.sum(dim=1)


def classification_uncertainty(y_t: torch.Tensor) -> UncertaintyVector:
    logp = torch.log_softmax(y_t, dim=1)
    entropy = -(logp.exp() * logp).sum(dim=1)
    return UncertaintyVector(entropy, torch.softmax(entropy, dim=0))


def mad_loss(z_t, z_d, y_t, mode: str = "mad", signed: bool = False) -> torch.Tensor:
    """Uncertainty-weighted relation distillation loss.

    Teacher inputs are detached; the result is differentiable in ``z_d``
    only.  ``mode="sp"`` uses uniform weights ``1/b`` (plain similarity
    matching); ``mode="off"`` returns an exact zero.
    """
    if mode not in MODES:
        raise ValueError(f"unknown MAD mode {mode!r}")
    b = z_d.shape[0]
    if b < 2:
        raise ValueError("relation distillation needs at least two samples")
    if z_t.shape[0] != b or y_t.shape[0] != b:
        raise ValueError("teacher and deployment batches are not aligned")
    if mode == "off":
        return z_d.new_zeros(())

    r_t = relation_matrix(flatten_features(z_t.detach()))
    r_d = relation_matrix(flatten_features(z_d))
    g_td = relation_discrepancy(r_t, r_d, signed=signed)
    if mode == "sp":
        weights = torch.full_like(g_td, 1.0 / b)
    else:
        weights = classification_uncertainty(y_t.detach()).weights
    return (weights * g_td).sum()
