import numpy as np
import pytest

from pct3d.diffcore import Tensor, grad_check, reduce_sum
from pct3d.errors import ConfigError, DimensionError
from pct3d.geometry import farthest_point_sample, knn
from pct3d.lfa import GraphConvScale, LFABlock, edge_features, fuse_feature
from pct3d.network import ModelConfig, ModuleSpec, PointCloudTransformer, ablation_config, param_count

from oracles import edge_oracle


def test_fuse_feature():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(5, 3))
    assert np.array_equal(fuse_feature(Tensor(np.zeros((5, 0))), p).data, p)
    out = fuse_feature(Tensor(rng.normal(size=(5, 64))), p)
    assert out.shape == (5, 67)
    assert np.array_equal(out.data[:, 64:67], p)
    with pytest.raises(DimensionError):
        fuse_feature(Tensor(np.zeros((4, 2))), p)


def _instance(rng, n=40, c=5, s=10, k=6):
    coords = rng.normal(size=(n, 3))
    feats = rng.normal(size=(n, c))
    centers = farthest_point_sample(coords, s).indices
    nbr = knn(coords[centers], coords, k).neighbor_idx
    return feats, coords, centers, nbr


def test_edge_features_match_oracle():
    rng = np.random.default_rng(1)
    feats, coords, centers, nbr = _instance(rng)
    out = edge_features(Tensor(feats), coords, centers, nbr).data
    assert out.shape == (10, 6, 2 * 5 + 6)
    assert np.allclose(out, edge_oracle(feats, coords, centers, nbr), atol=1e-14)


def test_edge_width_default_stem():
    rng = np.random.default_rng(2)
    feats, coords, centers, nbr = _instance(rng, c=64)
    assert edge_features(Tensor(feats), coords, centers, nbr).shape[-1] == 134


def test_self_neighbor_row():
    rng = np.random.default_rng(3)
    feats, coords, centers, nbr = _instance(rng)
    out = edge_features(Tensor(feats), coords, centers, nbr).data
    c = feats.shape[1]
    # kNN self-inclusion puts the centre first
    assert np.all(nbr[:, 0] == centers)
    assert np.all(out[:, 0, : c + 3] == 0)
    assert np.array_equal(out[:, 0, c + 3 :], np.concatenate([feats[centers], coords[centers]], axis=1))


def test_translation_blocks():
    rng = np.random.default_rng(4)
    feats, coords, centers, nbr = _instance(rng)
    c = feats.shape[1]
    shift = np.array([3.0, -2.0, 0.5])
    a = edge_features(Tensor(feats), coords, centers, nbr).data
    b = edge_features(Tensor(feats), coords + shift, centers, nbr).data
    assert np.allclose(a[..., : c + 3], b[..., : c + 3], atol=1e-12)
    assert np.array_equal(a[..., c + 3 : 2 * c + 3], b[..., c + 3 : 2 * c + 3])
    assert np.allclose(b[..., 2 * c + 3 :] - a[..., 2 * c + 3 :], shift, atol=1e-12)


def test_graph_conv_k1_and_max_oracle():
    rng = np.random.default_rng(5)
    conv = GraphConvScale(8, 6, rng)
    one = Tensor(rng.normal(size=(7, 1, 8)))
    sets, pooled = conv(one)
    assert np.array_equal(pooled.data, sets.data[:, 0, :])
    edges = Tensor(rng.normal(size=(7, 5, 8)))
    sets, pooled = conv(edges)
    oracle = np.array([[max(sets.data[i, j, c] for j in range(5)) for c in range(6)] for i in range(7)])
    assert np.array_equal(pooled.data, oracle)


def test_graph_conv_duplicate_neighbor_idempotent():
    rng = np.random.default_rng(6)
    conv = GraphConvScale(4, 3, rng).eval()
    edges = rng.normal(size=(5, 3, 4))
    dup = np.concatenate([edges, edges[:, :1]], axis=1)
    assert np.array_equal(conv(Tensor(edges))[1].data, conv(Tensor(dup))[1].data)


def test_lfa_default_shapes():
    rng = np.random.default_rng(7)
    block = LFABlock(64, (8, 16, 32), (64, 128, 256), rng)
    coords = rng.normal(size=(1024, 3))
    out = block(Tensor(rng.normal(size=(1024, 64))), coords)
    assert out.features.shape == (256, 448)
    assert out.sampled_coords.shape == (256, 3)
    assert [t.shape for t in out.nmap.sets] == [(256, 8, 64), (256, 16, 128), (256, 32, 256)]
    assert np.array_equal(out.sampled_coords, coords[out.sampled_idx])


def test_lfa_batched_and_floor_quarter():
    rng = np.random.default_rng(8)
    block = LFABlock(4, (2, 4), (4, 8), rng)
    out = block(Tensor(rng.normal(size=(2, 37, 4))), rng.normal(size=(2, 37, 3)))
    assert out.features.shape == (2, 9, 12)
    assert out.nmap.widths == [4, 8]


def test_lfa_config_errors():
    rng = np.random.default_rng(9)
    with pytest.raises(ConfigError):
        LFABlock(4, (4, 2), (4, 8), rng)
    with pytest.raises(ConfigError):
        LFABlock(4, (2, 4), (8, 8), rng)
    block = LFABlock(4, (2, 8), (4, 8), rng)
    with pytest.raises(ConfigError):
        block(Tensor(np.zeros((31, 4))), rng.normal(size=(31, 3)))


def test_lfa_grad_wrt_conv_weight():
    rng = np.random.default_rng(10)
    block = LFABlock(4, (2, 4), (4, 8), rng)
    feats = Tensor(rng.normal(size=(32, 4)))
    coords = rng.normal(size=(32, 3))
    weights = [conv.lbr.linear.weight for conv in block.convs]
    assert grad_check(lambda: reduce_sum(block(feats, coords).features), weights, samples=12) < 1e-4


def test_single_scale_and_mlp_ablations():
    cfg = ModelConfig(input_points=256, stem_width=16, num_classes=4, modules=(ModuleSpec((4, 8), (16, 32)),))
    single = ablation_config(cfg, "single_scale")
    assert single.modules[0].k == (8,) and single.modules[0].d == (32,)
    mlp = ablation_config(cfg, "mlp_lfa")
    assert param_count_of(mlp) != param_count_of(cfg)
    rng = np.random.default_rng(11)
    block = LFABlock(16, (4, 8), (16, 32), rng, mlp=True)
    out = block(Tensor(rng.normal(size=(64, 16))), rng.normal(size=(64, 3)))
    assert [t.shape for t in out.nmap.sets] == [(16, 1, 16), (16, 1, 32)]


def param_count_of(cfg):
    return param_count(PointCloudTransformer(cfg)).count
