"""Finite-difference gradient checks for every network block at tiny sizes.

Each case builds a block with at most 8 points per attention set and at most 16
channels, reduces its output to a scalar through a fixed random weighting, and
compares backward gradients with central differences for every parameter and
for the differentiable inputs.

Zero-initialised parameters (biases, batch-norm shifts) are moved off zero
first: with a zero bias the position MLP sees ``p_i - p_i = 0`` exactly on the
ReLU kink, where one-sided and central differences disagree.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffcore import LBR, Parameter, Tensor, grad_errors, matmul, reshape
from .gfl import CSA, PPSA, GFLBlock
from .lfa import GraphConvScale, LFABlock, NeighborhoodMap, edge_features
from .geometry import farthest_point_sample, knn
from .network import ModelConfig, ModuleSpec, PointCloudTransformer
from .trainer import cross_entropy

TOLERANCE = 1e-4


@dataclass
class GradCase:
    name: str
    loss: Callable[[], Tensor]
    params: list

    def __post_init__(self):
        rng = np.random.default_rng(len(self.name))
        for p in self.params:
            if not np.any(p.data):
                p.data[...] = rng.normal(scale=0.1, size=p.shape)


@dataclass
class GradResult:
    name: str
    max_error: float
    worst_param: str
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_error < TOLERANCE


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """``sum(x * weights)`` written as a matrix product so it stays on the tape."""
    flat = reshape(x, (1, x.size))
    return reshape(matmul(flat, Tensor(weights.reshape(-1, 1))), ())


def _named(module, prefix: str) -> list:
    out = []
    for name, p in module.named_parameters():
        p.name = prefix + name
        out.append(p)
    return out


def _cloud(rng, batch, n):
    return rng.normal(size=(batch, n, 3))


def _stem_case(rng) -> GradCase:
    x = Parameter(rng.normal(size=(2, 8, 6)), name="input")
    layers = [LBR(6, 12, rng), LBR(12, 16, rng)]
    w = rng.normal(size=(2, 8, 16))

    def loss():
        h = x
        for lbr in layers:
            h = lbr(h)
        return weighted_sum(h, w)

    params = [x] + [p for i, lbr in enumerate(layers) for p in _named(lbr, f"stem.{i}.")]
    return GradCase("stem", loss, params)


def _edge_conv_case(rng) -> GradCase:
    coords = _cloud(rng, 2, 32)
    feats = Parameter(rng.normal(size=(2, 32, 4)), name="feats")
    centers = farthest_point_sample(coords, 8).indices
    nbr = knn(np.take_along_axis(coords, centers[..., None], axis=1), coords, 4).neighbor_idx
    conv = GraphConvScale(2 * 4 + 6, 8, rng)
    w_set, w_pool = rng.normal(size=(2, 8, 4, 8)), rng.normal(size=(2, 8, 8))

    def loss():
        sets, pooled = conv(edge_features(feats, coords, centers, nbr))
        return weighted_sum(sets, w_set) + weighted_sum(pooled, w_pool)

    return GradCase("edge_features+graph_conv", loss, [feats] + _named(conv, "conv."))


def _ppsa_case(rng) -> GradCase:
    s, ks, ds = 8, (2, 3), (4, 6)
    coords = _cloud(rng, 2, s)
    feats = Parameter(rng.normal(size=(2, s, sum(ds))), name="feats")
    sets = [Parameter(rng.normal(size=(2, s, k, d)), name=f"set{m}") for m, (k, d) in enumerate(zip(ks, ds))]
    nmap = NeighborhoodMap([None, None], sets)
    block = PPSA(sum(ds), rng, pos_hidden=8)
    w = rng.normal(size=(2, s, sum(ds)))
    return GradCase("ppsa", lambda: weighted_sum(block(feats, coords, nmap), w), [feats] + sets + _named(block, "ppsa."))


def _csa_case(rng, mode) -> GradCase:
    s, width = 8, 12
    coords = _cloud(rng, 2, s)
    feats = Parameter(rng.normal(size=(2, s, width)), name="feats")
    block = CSA(width, s, rng, mode=mode)
    w = rng.normal(size=(2, s, width))
    return GradCase(f"csa[{mode}]", lambda: weighted_sum(block(feats, coords), w), [feats] + _named(block, "csa."))


def _gfl_case(rng) -> GradCase:
    coords = _cloud(rng, 2, 32)
    feats = Parameter(rng.normal(size=(2, 32, 4)), name="feats")
    lfa = LFABlock(4, (2, 4), (4, 8), rng)
    gfl = GFLBlock(12, 8, rng, pos_hidden=8)
    w = rng.normal(size=(2, 8, 12))

    def loss():
        local = lfa(feats, coords)
        return weighted_sum(gfl(local.features, local.sampled_coords, local.nmap), w)

    return GradCase("gfl_block", loss, [feats] + _named(lfa, "lfa.") + _named(gfl, "gfl."))


def tiny_config(task: str, csa_mode: str = "linear_point") -> ModelConfig:
    return ModelConfig(
        task=task,
        input_points=32,
        in_channels=6,
        stem_width=8,
        modules=(ModuleSpec((2, 4), (4, 8)),),
        head_widths=(16, 8),
        decoder_widths=(8,),
        num_classes=3,
        num_parts=3,
        csa_mode=csa_mode,
        dropout=0.0,
        pos_hidden=8,
    )


def _model_case(rng, task) -> GradCase:
    model = PointCloudTransformer(tiny_config(task), seed=int(rng.integers(1 << 31)))
    coords = _cloud(rng, 2, 32)
    normals = rng.normal(size=coords.shape)
    inputs = np.concatenate([coords, normals], axis=-1)
    labels = rng.integers(0, 3, size=(2,) if task == "cls" else (2, 32))
    name = "classify_head" if task == "cls" else "segment_decoder"
    return GradCase(name, lambda: cross_entropy(model(inputs, coords), labels), _named(model, ""))


def build_cases(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [
        _stem_case(rng),
        _edge_conv_case(rng),
        _ppsa_case(rng),
        _csa_case(rng, "linear_point"),
        _csa_case(rng, "fps_subsample"),
        _gfl_case(rng),
        _model_case(rng, "cls"),
        _model_case(rng, "seg"),
    ]


def run_suite(seed: int = 0, samples: int = 6, eps: float = 1e-6) -> list:
    """Check every block; returns one :class:`GradResult` per case."""
    results = []
    for case in build_cases(seed):
        start = time.perf_counter()
        errs = grad_errors(case.loss, case.params, eps=eps, samples=samples, seed=seed)
        name, worst = max(errs, key=lambda e: e[1])
        results.append(GradResult(case.name, worst, name, time.perf_counter() - start))
    return results
