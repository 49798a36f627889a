import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pct3d.diffcore import save_checkpoint, load_checkpoint
from pct3d.diffcore.checkpoint import is_buffer
from pct3d.errors import ConfigError, ContractError
from pct3d.network import (
    ABLATIONS,
    ModelConfig,
    ModuleSpec,
    PointCloudTransformer,
    Timer,
    ablation_config,
    default_modules,
    param_count,
)


def small_cfg(**kw):
    base = dict(input_points=64, stem_width=16, num_classes=4, modules=(ModuleSpec((4, 8, 12), (16, 32, 48)),))
    base.update(kw)
    return ModelConfig(**base)


def cloud(rng, b, n, channels=6):
    coords = rng.normal(size=(b, n, 3))
    if channels == 3:
        return coords, coords
    return np.concatenate([coords, rng.normal(size=coords.shape)], axis=-1), coords


def test_default_point_counts():
    assert ModelConfig().point_counts == [1024, 256, 64]
    assert ModelConfig(task="seg", input_points=2048).point_counts == [2048, 512, 128, 32]


def test_default_modules_halve_k():
    mods = default_modules(3)
    assert [m.k for m in mods] == [(8, 16, 32), (4, 8, 16), (2, 4, 8)]
    assert all(m.d == (64, 128, 256) for m in mods)


def test_default_encoder_widths():
    cfg = ModelConfig()
    assert cfg.module_widths == [448, 448]
    assert cfg.global_width == 896
    assert ablation_config(cfg, "no_multi_level").global_width == 448


def test_classification_shapes_and_levels():
    rng = np.random.default_rng(0)
    cfg = small_cfg(input_points=128, modules=(ModuleSpec((4, 8), (8, 16)), ModuleSpec((2, 4), (16, 24))))
    model = PointCloudTransformer(cfg, seed=1)
    inputs, coords = cloud(rng, 3, 128)
    state = model.encode(inputs, coords)
    assert state.point_counts == [128, 32, 8]
    assert [lv.features.shape for lv in state.levels] == [(3, 32, 24), (3, 8, 40)]
    assert state.global_feature.shape == (3, 64)
    assert model.classify(state).shape == (3, 4)


def test_segmentation_shapes():
    rng = np.random.default_rng(1)
    cfg = small_cfg(
        task="seg", input_points=128, num_parts=6, decoder_widths=(24, 16),
        modules=(ModuleSpec((4, 8), (8, 16)), ModuleSpec((2, 4), (16, 24))),
    )
    model = PointCloudTransformer(cfg, seed=2)
    inputs, coords = cloud(rng, 2, 128)
    assert model(inputs, coords).shape == (2, 128, 6)
    with pytest.raises(ContractError):
        model.classify(model.encode(inputs, coords))


def test_input_checks():
    model = PointCloudTransformer(small_cfg(), seed=0)
    rng = np.random.default_rng(2)
    inputs, coords = cloud(rng, 1, 64, channels=3)
    with pytest.raises(ConfigError) as info:
        model(inputs, coords)
    assert info.value.field == "in_channels"
    inputs, coords = cloud(rng, 1, 60)
    with pytest.raises(ConfigError) as info:
        model(inputs, coords)
    assert info.value.field == "input_points"


@pytest.mark.parametrize(
    "kw, field",
    [
        ({"task": "det"}, "task"),
        ({"in_channels": 4}, "in_channels"),
        ({"csa_mode": "x"}, "csa_mode"),
        ({"input_points": 40}, "input_points"),
        ({"modules": (ModuleSpec((8, 4), (16, 32)),)}, "module.0"),
        ({"task": "seg", "decoder_widths": (8, 8)}, "decoder_widths"),
        ({"dropout": 1.0}, "dropout"),
    ],
)
def test_config_errors_name_field(kw, field):
    with pytest.raises(ConfigError) as info:
        small_cfg(**kw)
    assert info.value.field == field


def test_config_text_round_trip():
    cfg = small_cfg(csa_mode="fps_subsample", ablate_ppsa=True, dropout=0.25)
    lines = dict(l.split(" = ", 1) for l in cfg.to_text().splitlines())
    assert ModelConfig.from_mapping(lines) == cfg
    with pytest.raises(ConfigError) as info:
        ModelConfig.from_mapping({"widht": "3"})
    assert info.value.field == "widht"


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.lists(st.integers(1, 64), min_size=1, max_size=3, unique=True), st.booleans())
def test_config_text_round_trip_property(count, ds, flag):
    ds = tuple(sorted(ds))
    ks = tuple(range(1, len(ds) + 1))
    mods = tuple(ModuleSpec(ks, ds) for _ in range(count))
    cfg = ModelConfig(input_points=4 ** (count + 2), modules=mods, multi_level=flag)
    lines = dict(l.split(" = ", 1) for l in cfg.to_text().splitlines())
    assert ModelConfig.from_mapping(lines) == cfg


def test_param_count_matches_checkpoint_walk(tmp_path):
    model = PointCloudTransformer(ModelConfig(), seed=0)
    pc = param_count(model)
    save_checkpoint(tmp_path / "m.ckpt", model.state_dict())
    walk = sum(v.size for k, v in load_checkpoint(tmp_path / "m.ckpt").items() if not is_buffer(k))
    assert pc.count == walk > 0
    assert pc.megabytes == pc.count * 4 / 2**20


def test_ablation_parameter_ordering():
    cfg = ModelConfig()
    counts = {name: param_count(PointCloudTransformer(ablation_config(cfg, name))).count for name in ABLATIONS}
    assert counts["full"] > counts["no_csa"] > counts["no_gfl"]
    assert counts["no_ppsa"] < counts["full"]
    assert counts["mlp_lfa"] < counts["full"]
    assert counts["standard_psa"] > counts["full"]
    with pytest.raises(ConfigError):
        ablation_config(cfg, "no_everything")


def test_permutation_invariance_fps_mode():
    rng = np.random.default_rng(3)
    model = PointCloudTransformer(small_cfg(csa_mode="fps_subsample"), seed=4).eval()
    inputs, coords = cloud(rng, 1, 64)
    perm = rng.permutation(64)
    a = model(inputs, coords).data
    b = model(inputs[:, perm], coords[:, perm]).data
    assert np.max(np.abs(a - b)) < 1e-9


def test_linear_point_mode_sees_fps_order():
    # the point-axis maps act on sampled points, which arrive in FPS order,
    # so relabelling the input cloud does not reach them either
    rng = np.random.default_rng(5)
    model = PointCloudTransformer(small_cfg(), seed=4).eval()
    inputs, coords = cloud(rng, 1, 64)
    perm = rng.permutation(64)
    assert np.max(np.abs(model(inputs, coords).data - model(inputs[:, perm], coords[:, perm]).data)) < 1e-9


def test_dropout_only_in_training():
    rng = np.random.default_rng(6)
    model = PointCloudTransformer(small_cfg(), seed=0)
    inputs, coords = cloud(rng, 2, 64)
    model.eval()
    assert np.array_equal(model(inputs, coords).data, model(inputs, coords).data)


def test_timer_records_blocks():
    rng = np.random.default_rng(7)
    model = PointCloudTransformer(small_cfg(), seed=0).eval()
    timer = Timer()
    model(*cloud(rng, 1, 64), timer)
    assert list(timer.times) == ["stem", "lfa0", "gfl0", "head"]
