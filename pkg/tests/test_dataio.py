import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from pct3d.dataio import (
    JITTER,
    PARTS_PER_SHAPE,
    Dataset,
    PointCloud,
    SynthConfig,
    load_manifest,
    load_off,
    load_xyz,
    normalize_unit_sphere,
    part_labels,
    random_rotation,
    resample_fps,
    sample_shape,
    save_xyz,
    synth_shapes,
    write_dataset,
)
from pct3d.errors import ParseError

from oracles import fps_oracle


def test_xyz_three_lines(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("0 0 0\n1 2 3\n# comment\n-1.5 2e-3 7\n")
    pc = load_xyz(p)
    assert pc.coords.shape == (3, 3)
    assert pc.coords[2].tolist() == [-1.5, 0.002, 7.0]
    assert pc.normals is None


def test_xyz_errors(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("0 0 0\n1 2\n")
    with pytest.raises(ParseError, match=":2:"):
        load_xyz(p)
    p.write_text("0 0 zero\n")
    with pytest.raises(ParseError) as info:
        load_xyz(p)
    assert info.value.line == 1


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 12), st.just(6)), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_xyz_round_trip_is_exact(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("xyz") / "r.xyz"
    save_xyz(path, PointCloud(arr[:, :3], arr[:, 3:]))
    back = load_xyz(path)
    assert np.array_equal(back.coords, arr[:, :3])
    assert np.array_equal(back.normals, arr[:, 3:])


def write_cube_off(path):
    """Unit cube with each face split along the diagonal joining its even-parity corners."""
    verts = [(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
    faces = []
    for axis in range(3):
        for side in (0, 1):
            quad = [i for i, v in enumerate(verts) if v[axis] == side]
            even = [i for i in quad if sum(verts[i]) % 2 == 0]
            odd = [i for i in quad if sum(verts[i]) % 2 == 1]
            outward = np.zeros(3)
            outward[axis] = 1 if side else -1
            for o in odd:
                tri = [even[0], o, even[1]]
                a, b, c = (np.array(verts[t], float) for t in tri)
                if np.dot(np.cross(b - a, c - a), outward) < 0:
                    tri = [tri[0], tri[2], tri[1]]
                faces.append(tri)
    lines = ["OFF", f"{len(verts)} {len(faces)} 0"]
    lines += [" ".join(map(str, v)) for v in verts]
    lines += ["3 " + " ".join(map(str, f)) for f in faces]
    path.write_text("\n".join(lines) + "\n")
    return verts, faces


def test_off_cube_normals(tmp_path):
    p = tmp_path / "cube.off"
    verts, faces = write_cube_off(p)
    assert len(faces) == 12
    pc = load_off(p)
    assert pc.coords.shape == (8, 3)
    expect = (np.array(verts, float) - 0.5) * 2 / math.sqrt(3)
    assert np.allclose(pc.normals, expect, atol=1e-12)


def test_off_counts_on_header_line(tmp_path):
    p = tmp_path / "tri.off"
    p.write_text("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    pc = load_off(p)
    assert np.allclose(pc.normals, [[0, 0, 1]] * 3)


def test_off_quad_fan_triangulation(tmp_path):
    p = tmp_path / "quad.off"
    p.write_text("OFF\n4 1 0\n0 0 0\n2 0 0\n2 1 0\n0 1 0\n4 0 1 2 3\n")
    assert np.allclose(load_off(p).normals, [[0, 0, 1]] * 4)


@pytest.mark.parametrize(
    "text, line",
    [
        ("OFX\n3 1 0\n", 1),
        ("OFF\n3 x 0\n", 2),
        ("OFF\n3 1 0\n0 0 0\n1 0 0\n", 5),
        ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n", 6),
        ("OFF\n3 1 0\n0 0 0\n1 a 0\n0 1 0\n3 0 1 2\n", 4),
    ],
)
def test_off_errors_name_the_line(tmp_path, text, line):
    p = tmp_path / "bad.off"
    p.write_text(text)
    with pytest.raises(ParseError) as info:
        load_off(p)
    assert info.value.line == line
    assert f":{line}:" in str(info.value)


def test_normalize_unit_sphere():
    single = normalize_unit_sphere(PointCloud(np.array([[3.0, -1.0, 2.0]])))
    assert single.coords.tolist() == [[0.0, 0.0, 0.0]]
    pc = PointCloud(np.random.default_rng(0).normal(4.0, 3.0, size=(50, 3)))
    out = normalize_unit_sphere(pc)
    assert np.linalg.norm(out.coords.mean(axis=0)) < 1e-12
    assert abs(np.linalg.norm(out.coords, axis=1).max() - 1) < 1e-12
    again = normalize_unit_sphere(out)
    assert np.allclose(again.coords, out.coords, atol=1e-15)


def test_resample_fps():
    rng = np.random.default_rng(1)
    pc = PointCloud(rng.normal(size=(40, 3)), point_labels=np.arange(40), class_label=2)
    full = resample_fps(pc, 40)
    assert sorted(full.point_labels.tolist()) == list(range(40))
    small = resample_fps(pc, 10)
    assert small.point_labels.tolist() == fps_oracle(pc.coords, 10)
    assert np.array_equal(small.coords, pc.coords[small.point_labels])
    assert small.class_label == 2
    with pytest.raises(ValueError):
        resample_fps(pc, 41)


def test_sphere_samples():
    cfg = SynthConfig(classes=("sphere",), n_points=64, samples_per_class=5, seed=3)
    for s in synth_shapes(cfg).samples:
        r = np.linalg.norm(s.coords, axis=1)
        assert np.all(np.abs(r - 1) <= math.sqrt(3) * JITTER + 1e-12)
        unit = s.coords / r[:, None]
        assert np.all(np.einsum("ij,ij->i", unit, s.normals) > 0.99)


def test_normals_are_unit():
    ds = synth_shapes(SynthConfig(n_points=32, samples_per_class=3, seed=4))
    for s in ds.samples:
        assert np.all(np.abs(np.linalg.norm(s.normals, axis=1) - 1) < 1e-6)


def test_cube_has_six_parts():
    for seed in range(20):
        ds = synth_shapes(SynthConfig(classes=("cube",), n_points=256, samples_per_class=1, seed=seed))
        assert len(np.unique(ds.samples[0].point_labels)) == 6


def test_synth_is_deterministic():
    cfg = SynthConfig(n_points=32, samples_per_class=4, seed=9)
    a, b = synth_shapes(cfg), synth_shapes(cfg)
    for x, y in zip(a.samples, b.samples):
        assert x.coords.tobytes() == y.coords.tobytes()
        assert x.normals.tobytes() == y.normals.tobytes()
        assert np.array_equal(x.point_labels, y.point_labels)


def test_synth_label_layout():
    ds = synth_shapes(SynthConfig(n_points=32, samples_per_class=2, seed=0))
    assert ds.num_classes == 4
    assert ds.num_parts == sum(PARTS_PER_SHAPE.values())
    assert [s.class_label for s in ds.samples] == [0, 0, 1, 1, 2, 2, 3, 3]
    # cube labels are offset past the sphere's two parts
    assert set(np.unique(ds.samples[2].point_labels)) <= set(range(2, 8))


@pytest.mark.parametrize("kind", ["sphere", "cube", "torus", "cylinder"])
def test_labels_rederivable_from_clean_coords(kind):
    rng = np.random.default_rng(11)
    p, nrm, lab = sample_shape(kind, 200, rng)
    assert np.array_equal(part_labels(kind, p), lab)
    assert np.all(np.abs(np.linalg.norm(nrm, axis=1) - 1) < 1e-12)


def test_small_rotation_bound():
    rng = np.random.default_rng(2)
    for _ in range(20):
        rot = random_rotation(rng, 15.0)
        angle = math.degrees(math.acos(np.clip((np.trace(rot) - 1) / 2, -1, 1)))
        assert angle <= 15.0 + 1e-9
        assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)


def test_synth_rejects_tiny_clouds():
    with pytest.raises(ValueError):
        synth_shapes(SynthConfig(n_points=8))


def test_dataset_validation():
    pc = PointCloud(np.zeros((4, 3)), class_label=3)
    with pytest.raises(ValueError):
        Dataset([pc], num_classes=2)
    with pytest.raises(ValueError):
        Dataset([PointCloud(np.zeros((4, 3))), PointCloud(np.zeros((5, 3)))], num_classes=1)


def test_manifest_round_trip(tmp_path):
    ds = synth_shapes(SynthConfig(classes=("cube", "torus"), n_points=20, samples_per_class=2, seed=1))
    manifest = write_dataset(tmp_path, ds)
    back = load_manifest(manifest)
    assert back.num_classes == 2
    for a, b in zip(ds.samples, back.samples):
        assert np.array_equal(a.coords, b.coords)
        assert np.array_equal(a.point_labels, b.point_labels)
        assert a.class_label == b.class_label
    bad = tmp_path / "bad.csv"
    bad.write_text("sample_00000.xyz\n")
    with pytest.raises(ParseError):
        load_manifest(bad)
