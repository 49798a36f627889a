"""Local feature aggregation: multi-scale kNN graph convolution.

For every FPS-sampled centre the block builds one kNN neighbourhood per scale,
forms edge features ``concat(F_j - F_i, P_j - P_i, F_i, P_i)``, maps each edge
through a shared linear + batch-norm + ReLU, and max-pools over neighbours.
The unpooled per-edge features are kept as the neighbourhood sets that the
point-patch attention uses as values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import LBR, Module, Tensor, broadcast_to, concat, gather_rows, max_reduce, reshape, sub
from .errors import ConfigError, DimensionError
from .geometry import farthest_point_sample, multi_knn, take_rows


@dataclass
class NeighborhoodMap:
    neighbor_idx: list  # per scale: (..., s, k_m) parent indices
    sets: list  # per scale: Tensor (..., s, k_m, d_m)

    @property
    def widths(self) -> list:
        return [t.shape[-1] for t in self.sets]


@dataclass
class LfaOutput:
    features: Tensor  # F_L, (..., s, sum(d))
    nmap: NeighborhoodMap
    sampled_coords: np.ndarray  # (..., s, 3)
    sampled_idx: np.ndarray  # (..., s)


def fuse_feature(feats: Tensor, coords) -> Tensor:
    """Per-point ``concat(F, P)``: features first, coordinates last."""
    coords = np.asarray(coords, dtype=np.float64)
    if feats.shape[:-1] != coords.shape[:-1]:
        raise DimensionError(f"fuse_feature: {feats.shape} rows vs coords {coords.shape}")
    return concat([feats, Tensor(coords)], axis=-1)


def edge_features(feats: Tensor, coords, center_idx, neighbor_idx) -> Tensor:
    """Edge tensor (..., s, k, 2C+6) for centres ``center_idx`` and their neighbours."""
    coords = np.asarray(coords, dtype=np.float64)
    center_idx = np.asarray(center_idx)
    neighbor_idx = np.asarray(neighbor_idx)
    c = feats.shape[-1]
    k = neighbor_idx.shape[-1]
    f_i = gather_rows(feats, center_idx)  # (..., s, C)
    f_ij = gather_rows(feats, neighbor_idx)  # (..., s, k, C)
    p_i = take_rows(coords, center_idx)
    p_ij = take_rows(coords, neighbor_idx)
    d_f = sub(f_ij, reshape(f_i, f_i.shape[:-1] + (1, c)))
    d_p = Tensor(p_ij - p_i[..., None, :])
    fused = fuse_feature(f_i, p_i)
    fused = broadcast_to(reshape(fused, fused.shape[:-1] + (1, c + 3)), fused.shape[:-1] + (k, c + 3))
    return concat([d_f, d_p, fused], axis=-1)


class GraphConvScale(Module):
    """Shared 1x1 convolution (per-edge LBR) followed by a max over neighbours."""

    def __init__(self, in_width: int, out_width: int, rng: np.random.Generator):
        self.lbr = LBR(in_width, out_width, rng)

    def __call__(self, edges: Tensor) -> tuple:
        sets = self.lbr(edges)
        return sets, max_reduce(sets, axis=-2, keepdims=False)


class LFABlock(Module):
    """Multi-scale graph-convolution block downsampling ``N`` points to ``N // 4``.

    With ``mlp=True`` (the "standard MLP" ablation) each centre's fused feature
    ``concat(F_i, P_i)`` is mapped through the same widths without any
    neighbourhood, giving single-element neighbourhood sets.
    """

    def __init__(self, in_channels: int, ks: Sequence[int], ds: Sequence[int], rng: np.random.Generator, mlp: bool = False):
        if len(ks) != len(ds) or not ks:
            raise ConfigError("each module needs matching, non-empty k and d lists", field="modules")
        if any(a >= b for a, b in zip(ks, ks[1:])) or any(a >= b for a, b in zip(ds, ds[1:])):
            raise ConfigError(f"scales must satisfy k1<k2<... and d1<d2<..., got k={list(ks)} d={list(ds)}", field="modules")
        self.in_channels = in_channels
        self.ks = tuple(int(k) for k in ks)
        self.ds = tuple(int(d) for d in ds)
        self.mlp = mlp
        width = in_channels + 3 if mlp else 2 * in_channels + 6
        self.convs = [GraphConvScale(width, d, rng) for d in self.ds]

    @property
    def out_width(self) -> int:
        return sum(self.ds)

    def __call__(self, feats: Tensor, coords) -> LfaOutput:
        coords = np.asarray(coords, dtype=np.float64)
        n = coords.shape[-2]
        if feats.shape[-1] != self.in_channels:
            raise ConfigError(f"LFA expects {self.in_channels} input channels, got {feats.shape[-1]}")
        if n < 4 * self.ks[-1]:
            raise ConfigError(f"{n} points is too few for k={self.ks[-1]} (need >= {4 * self.ks[-1]})", field="modules")
        s = n // 4
        centers = farthest_point_sample(coords, s).indices
        sampled = take_rows(coords, centers)
        idx_list, sets, pooled = [], [], []
        if self.mlp:
            fused = fuse_feature(gather_rows(feats, centers), sampled)
            for conv in self.convs:
                out = conv.lbr(fused)
                idx_list.append(centers[..., None])
                sets.append(reshape(out, out.shape[:-1] + (1, out.shape[-1])))
                pooled.append(out)
        else:
            for nn, conv in zip(multi_knn(sampled, coords, self.ks), self.convs):
                nbr = nn.neighbor_idx
                edge_set, local = conv(edge_features(feats, coords, centers, nbr))
                idx_list.append(nbr)
                sets.append(edge_set)
                pooled.append(local)
        return LfaOutput(concat(pooled, axis=-1), NeighborhoodMap(idx_list, sets), sampled, centers)
