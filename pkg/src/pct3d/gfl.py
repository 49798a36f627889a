"""Global feature learning: point-patch attention, channel attention, residual fusion."""

from __future__ import annotations

import numpy as np

from .diffcore import (
    LBR,
    Linear,
    Module,
    Parameter,
    Tensor,
    add,
    concat,
    gather_rows,
    matmul,
    max_reduce,
    relu,
    reshape,
    scale,
    softmax,
    sub,
    transpose,
)
from .diffcore.nn import xavier_uniform
from .errors import ConfigError
from .geometry import farthest_point_sample

POS_HIDDEN = 32
CSA_MODES = ("linear_point", "fps_subsample")


class PositionBias(Module):
    """Learned pairwise bias ``B[i, j] = theta(p_i - p_j)`` with ``theta`` a 3 -> h -> 1 ReLU map."""

    def __init__(self, rng: np.random.Generator, hidden: int = POS_HIDDEN):
        self.fc1 = Linear(3, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def __call__(self, coords) -> Tensor:
        coords = np.asarray(coords, dtype=np.float64)
        # fc1 is affine, so fc1(p_i - p_j) = p_i W - p_j W + b: project each point once
        proj = matmul(Tensor(coords), self.fc1.weight)  # (..., s, h)
        lead, (s, h) = proj.shape[:-2], proj.shape[-2:]
        pre = sub(reshape(proj, lead + (s, 1, h)), reshape(proj, lead + (1, s, h)))
        b = self.fc2(relu(add(pre, self.fc1.bias)))
        return reshape(b, b.shape[:-1])


def patch_attention(attn: Tensor, sets: list) -> Tensor:
    """Attend whole neighbourhood sets and max-pool each attended patch.

    For scale ``m`` the attended patch of point ``i`` is ``sum_j attn[i, j] * N_m[j]``
    (a ``k_m x d_m`` matrix); its column maxima give ``d_m`` channels.
    """
    out = []
    for n_set in sets:
        *lead, s, k, d = n_set.shape
        flat = reshape(n_set, tuple(lead) + (s, k * d))
        patches = reshape(matmul(attn, flat), tuple(lead) + (s, k, d))
        out.append(max_reduce(patches, axis=-2, keepdims=False))
    return concat(out, axis=-1)


class PPSA(Module):
    """Point-patch self-attention over the sampled points of one module.

    ``standard=True`` swaps the patch values for ``F_L W_VP`` (regular
    point-wise attention, no max over neighbours).
    """

    def __init__(self, width: int, rng: np.random.Generator, standard: bool = False, pos_hidden: int = POS_HIDDEN):
        self.width = width
        self.standard = standard
        self.w_q = Parameter(xavier_uniform(rng, width, width))
        self.w_k = Parameter(xavier_uniform(rng, width, width))
        self.pos = PositionBias(rng, pos_hidden)
        if standard:
            self.w_v = Parameter(xavier_uniform(rng, width, width))

    def attention_map(self, feats: Tensor, coords) -> Tensor:
        q = matmul(feats, self.w_q)
        k = matmul(feats, self.w_k)
        logits = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(self.width))
        return softmax(add(logits, self.pos(coords)), axis=-1)

    def __call__(self, feats: Tensor, coords, nmap) -> Tensor:
        if feats.shape[-1] != self.width:
            raise ConfigError(f"PPSA width {self.width} vs features {feats.shape[-1]}")
        attn = self.attention_map(feats, coords)
        if self.standard:
            return matmul(attn, matmul(feats, self.w_v))
        if sum(nmap.widths) != self.width:
            raise ConfigError(f"neighbourhood widths {nmap.widths} do not sum to {self.width}")
        return patch_attention(attn, nmap.sets)


class CSA(Module):
    """Channel-wise self-attention with the max-minus-similarity affinity matrix.

    Keys and queries are ``max(1, s // 8)`` point summaries of ``F_L``:
    learned point-axis maps in ``linear_point`` mode, or the rows at the first
    FPS picks of the module's points in ``fps_subsample`` mode.
    """

    def __init__(self, width: int, points: int, rng: np.random.Generator, mode: str = "linear_point"):
        if mode not in CSA_MODES:
            raise ConfigError(f"csa_mode must be one of {CSA_MODES}, got {mode!r}", field="csa_mode")
        self.width = width
        self.points = points
        self.mode = mode
        if points < 1:
            raise ConfigError(f"channel attention needs at least one point, got {points}", field="input_points")
        self.reduced = max(1, points // 8)
        if mode == "linear_point":
            self.r_k = Parameter(xavier_uniform(rng, points, self.reduced))
            self.r_q = Parameter(xavier_uniform(rng, points, self.reduced))
        self.w_v = Parameter(xavier_uniform(rng, width, width))

    def _keys_queries(self, feats: Tensor, coords) -> tuple:
        if self.mode == "linear_point":
            if feats.shape[-2] != self.points:
                raise ConfigError(f"CSA built for {self.points} points, got {feats.shape[-2]}")
            return matmul(transpose(self.r_k), feats), matmul(transpose(self.r_q), feats)
        idx = farthest_point_sample(coords, self.reduced).indices
        kq = gather_rows(feats, idx)
        return kq, kq

    def affinity(self, feats: Tensor, coords=None) -> Tensor:
        k, q = self._keys_queries(feats, coords)
        sim = matmul(transpose(k), q)  # (..., d, d)
        dissim = sub(max_reduce(sim, axis=-1, keepdims=True), sim)
        return softmax(dissim, axis=-2)

    def __call__(self, feats: Tensor, coords=None) -> Tensor:
        return matmul(matmul(feats, self.w_v), self.affinity(feats, coords))


class GFLBlock(Module):
    """``F_OUT = F_L + LBR(PPSA + CSA)`` with switches for the attention ablations."""

    def __init__(
        self,
        width: int,
        points: int,
        rng: np.random.Generator,
        csa_mode: str = "linear_point",
        use_ppsa: bool = True,
        use_csa: bool = True,
        standard_psa: bool = False,
        enabled: bool = True,
        pos_hidden: int = POS_HIDDEN,
    ):
        self.enabled = enabled
        if not enabled:
            return
        if not (use_ppsa or use_csa):
            raise ConfigError("GFL needs PPSA or CSA; disable the whole block instead", field="ablate_gfl")
        self.ppsa = PPSA(width, rng, standard=standard_psa, pos_hidden=pos_hidden) if use_ppsa else None
        self.csa = CSA(width, points, rng, mode=csa_mode) if use_csa else None
        self.lbr = LBR(width, width, rng)

    def __call__(self, feats: Tensor, coords, nmap) -> Tensor:
        if not self.enabled:
            return feats
        parts = []
        if self.ppsa is not None:
            parts.append(self.ppsa(feats, coords, nmap))
        if self.csa is not None:
            parts.append(self.csa(feats, coords))
        fused = parts[0] if len(parts) == 1 else add(parts[0], parts[1])
        return add(feats, self.lbr(fused))
