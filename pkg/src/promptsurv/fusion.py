"""Cross-level propagation: pool selected patches into regions, then
recalibrate the region bag with a learned sigmoid gate over two
tanh-projected streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DataValidationError, ShapeError


@dataclass
class GateParams:
    """Learnable maps of the gate: concat projection (2d -> d) and one
    d -> d projection per stream, each with a bias row."""

    w_gate: ad.Node   # 2d x d
    b_gate: ad.Node   # 1 x d
    w_patch: ad.Node  # d x d
    b_patch: ad.Node  # 1 x d
    w_region: ad.Node  # d x d
    b_region: ad.Node  # 1 x d

    def nodes(self) -> dict[str, ad.Node]:
        return {
            "gate.w_gate": self.w_gate,
            "gate.b_gate": self.b_gate,
            "gate.w_patch": self.w_patch,
            "gate.b_patch": self.b_patch,
            "gate.w_region": self.w_region,
            "gate.b_region": self.b_region,
        }


def pool_to_regions(selected_tokens: np.ndarray, selected_indices: np.ndarray,
                    parent_region: np.ndarray, n_regions: int) -> np.ndarray:
    """Sum selected patch tokens into their parent regions.

    Row j of the result is the sum of all selected tokens whose parent is
    region j; regions with no selected child stay zero.
    """
    parents = np.asarray(parent_region, dtype=np.int64)
    idx = np.asarray(selected_indices, dtype=np.int64)
    if idx.size and idx.max() >= parents.size:
        raise DataValidationError(
            f"selected index {int(idx.max())} outside parent map of size {parents.size}"
        )
    owners = parents[idx]
    if owners.size and owners.max() >= n_regions:
        raise DataValidationError(
            f"parent index {int(owners.max())} >= region count {n_regions}"
        )
    pooled = np.zeros((n_regions, selected_tokens.shape[1]))
    np.add.at(pooled, owners, selected_tokens)
    return pooled


def linear(x: ad.Node, weight: ad.Node, bias: ad.Node) -> ad.Node:
    """x @ weight + bias, with the 1xD bias row repeated across rows."""
    out = ad.matmul(x, weight)
    ones = ad.constant(np.ones((x.shape[0], 1)))
    return ad.add(out, ad.matmul(ones, bias))


def gate_fuse(pooled: ad.Node, region_bag: ad.Node, params: GateParams) -> ad.Node:
    """Recalibrate the region bag against the pooled patch evidence.

    G = sigmoid([pooled ; regions] @ w_gate + b_gate) gates a convex,
    elementwise combination of the two tanh-projected streams, so every
    output entry stays strictly inside (-1, 1).
    """
    if pooled.shape != region_bag.shape:
        raise ShapeError(
            f"pooled shape {pooled.shape} != region bag shape {region_bag.shape}"
        )
    stacked = ad.concat_cols(pooled, region_bag)
    gate = ad.sigmoid(linear(stacked, params.w_gate, params.b_gate))
    patch_stream = ad.tanh(linear(pooled, params.w_patch, params.b_patch))
    region_stream = ad.tanh(linear(region_bag, params.w_region, params.b_region))
    ones = ad.constant(np.ones(gate.shape))
    return ad.add(
        ad.mul(gate, patch_stream),
        ad.mul(ad.sub(ones, gate), region_stream),
    )
