"""Point-cloud files (XYZ, OFF), normalisation, resampling and synthetic shapes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ParseError
from .geometry import farthest_point_sample

SHAPES = ("sphere", "cube", "torus", "cylinder")
PARTS_PER_SHAPE = {"sphere": 2, "cube": 6, "torus": 2, "cylinder": 3}
JITTER = 0.02
TORUS_R, TORUS_r = 0.7, 0.3
CYL_RADIUS, CYL_HALF_HEIGHT = 0.6, 0.8


@dataclass
class PointCloud:
    coords: np.ndarray
    normals: Optional[np.ndarray] = None
    point_labels: Optional[np.ndarray] = None
    class_label: Optional[int] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        n = len(self.coords)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != n:
                raise ValueError("normals and coords differ in count")
        if self.point_labels is not None:
            self.point_labels = np.asarray(self.point_labels, dtype=np.int64).reshape(-1)
            if len(self.point_labels) != n:
                raise ValueError("point labels and coords differ in count")

    def __len__(self):
        return len(self.coords)

    def features(self, in_channels: int) -> np.ndarray:
        """Network input: coords, plus normals when ``in_channels == 6``."""
        if in_channels == 3:
            return self.coords
        if in_channels == 6:
            if self.normals is None:
                raise ValueError("config asks for normals but the cloud has none")
            return np.concatenate([self.coords, self.normals], axis=1)
        raise ValueError(f"in_channels must be 3 or 6, got {in_channels}")

    def take(self, idx) -> "PointCloud":
        return PointCloud(
            self.coords[idx],
            None if self.normals is None else self.normals[idx],
            None if self.point_labels is None else self.point_labels[idx],
            self.class_label,
        )


@dataclass
class Dataset:
    samples: list
    num_classes: int
    num_parts: Optional[int] = None
    split: str = "train"
    class_names: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __post_init__(self):
        counts = {len(s) for s in self.samples}
        if len(counts) > 1:
            raise ValueError(f"samples differ in point count: {sorted(counts)}")
        for s in self.samples:
            if s.class_label is not None and not 0 <= s.class_label < self.num_classes:
                raise ValueError(f"class label {s.class_label} outside [0, {self.num_classes})")
            if s.point_labels is not None and self.num_parts is not None:
                if s.point_labels.min() < 0 or s.point_labels.max() >= self.num_parts:
                    raise ValueError(f"part labels outside [0, {self.num_parts})")


# -- files -----------------------------------------------------------------


def load_xyz(path) -> PointCloud:
    """Whitespace separated ``x y z [nx ny nz]`` per line; blank and ``#`` lines skipped."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                vals = [float(t) for t in text.split()]
            except ValueError:
                raise ParseError(f"non-numeric value in {text!r}", line=lineno, path=path) from None
            if len(vals) not in (3, 6) or (width is not None and len(vals) != width):
                raise ParseError(f"expected 3 or 6 columns consistently, got {len(vals)}", line=lineno, path=path)
            width = len(vals)
            rows.append(vals)
    if not rows:
        raise ParseError("no points", path=path)
    arr = np.array(rows)
    return PointCloud(arr[:, :3], arr[:, 3:] if width == 6 else None)


def save_xyz(path, pc: PointCloud):
    cols = [pc.coords] if pc.normals is None else [pc.coords, pc.normals]
    arr = np.concatenate(cols, axis=1)
    with open(path, "w") as fh:
        for row in arr:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def _tokens(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if text:
                yield lineno, text


def load_off(path) -> PointCloud:
    """Vertices of an OFF mesh, with area-weighted per-vertex normals from its faces."""
    lines = _tokens(path)
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise ParseError("empty file", line=1, path=path) from None
    rest = ""
    if head.startswith("OFF"):
        rest = head[3:].strip()
    else:
        raise ParseError(f"expected 'OFF' header, got {head!r}", line=lineno, path=path)
    if not rest:
        try:
            lineno, rest = next(lines)
        except StopIteration:
            raise ParseError("missing vertex/face counts", line=lineno + 1, path=path) from None
    try:
        counts = [int(t) for t in rest.split()]
        nv, nf = counts[0], counts[1]
    except (ValueError, IndexError):
        raise ParseError(f"bad counts line {rest!r}", line=lineno, path=path) from None
    if nv < 0 or nf < 0:
        raise ParseError("negative counts", line=lineno, path=path)

    verts = np.empty((nv, 3))
    for i in range(nv):
        try:
            lineno, text = next(lines)
        except StopIteration:
            raise ParseError(f"file ends after {i} of {nv} vertices", line=lineno + 1, path=path) from None
        try:
            verts[i] = [float(t) for t in text.split()[:3]]
        except ValueError:
            raise ParseError(f"bad vertex {text!r}", line=lineno, path=path) from None

    acc = np.zeros((nv, 3))
    for i in range(nf):
        try:
            lineno, text = next(lines)
        except StopIteration:
            raise ParseError(f"file ends after {i} of {nf} faces", line=lineno + 1, path=path) from None
        try:
            vals = [int(t) for t in text.split()]
            face = vals[1 : 1 + vals[0]]
        except (ValueError, IndexError):
            raise ParseError(f"bad face {text!r}", line=lineno, path=path) from None
        if len(face) < 3 or min(face) < 0 or max(face) >= nv:
            raise ParseError(f"invalid face {text!r}", line=lineno, path=path)
        # fan triangulation; the cross product is twice the signed area vector
        for a, b in zip(face[1:-1], face[2:]):
            cr = np.cross(verts[a] - verts[face[0]], verts[b] - verts[face[0]]) * 0.5
            acc[[face[0], a, b]] += cr

    normals = None
    if nf:
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        normals = np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)
    return PointCloud(verts, normals)


def load_manifest(path, n_points: Optional[int] = None) -> Dataset:
    """Read ``path,class_label`` lines; paths are relative to the manifest.

    A sibling ``<stem>.seg`` file with one integer per line supplies part labels.
    """
    base = Path(path).parent
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                rel, label = text.rsplit(",", 1)
                label = int(label)
            except ValueError:
                raise ParseError(f"expected 'path,class_label', got {text!r}", line=lineno, path=path) from None
            p = base / rel
            pc = load_off(p) if p.suffix.lower() == ".off" else load_xyz(p)
            seg = p.with_suffix(".seg")
            if seg.exists():
                pc.point_labels = np.loadtxt(seg, dtype=np.int64, ndmin=1)
            pc.class_label = label
            samples.append(pc)
    if not samples:
        raise ParseError("manifest lists no samples", path=path)
    if n_points is not None:
        samples = [resample_fps(s, n_points) for s in samples]
    num_classes = max(s.class_label for s in samples) + 1
    parts = [s.point_labels.max() + 1 for s in samples if s.point_labels is not None]
    return Dataset(samples, num_classes, int(max(parts)) if parts else None)


def write_dataset(out_dir, ds: Dataset) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(ds.samples):
        name = f"sample_{i:05d}.xyz"
        save_xyz(out / name, s)
        if s.point_labels is not None:
            np.savetxt(out / f"sample_{i:05d}.seg", s.point_labels, fmt="%d")
        lines.append(f"{name},{s.class_label}")
    manifest = out / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# -- preprocessing -----------------------------------------------------------


def normalize_unit_sphere(pc: PointCloud) -> PointCloud:
    c = pc.coords - pc.coords.mean(axis=0)
    r = np.sqrt((c * c).sum(axis=1)).max()
    coords = c / r if r > 0 else np.zeros_like(c)
    return replace(pc, coords=coords)


def resample_fps(pc: PointCloud, n_target: int) -> PointCloud:
    if len(pc) < n_target:
        raise ValueError(f"cloud has {len(pc)} points, fewer than the requested {n_target}")
    idx = farthest_point_sample(pc.coords, n_target).indices
    return pc.take(idx)


# -- synthetic shapes --------------------------------------------------------


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_shape(kind: str, n: int, rng: np.random.Generator) -> tuple:
    """Area-uniform surface samples in the shape's own frame: (coords, normals, part labels)."""
    if kind == "sphere":
        p = _unit_vectors(rng, n)
        return p, p.copy(), part_labels(kind, p)
    if kind == "cube":
        face = rng.integers(0, 6, size=n)
        axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
        p = rng.uniform(-1.0, 1.0, size=(n, 3))
        rows = np.arange(n)
        p[rows, axis] = sign
        nrm = np.zeros((n, 3))
        nrm[rows, axis] = sign
        return p, nrm, face
    if kind == "torus":
        u = rng.uniform(0, 2 * np.pi, size=n)
        # tube angle by rejection on the area element (R + r cos v)
        v = np.empty(0)
        while v.size < n:
            cand = rng.uniform(0, 2 * np.pi, size=2 * n)
            keep = rng.uniform(0, TORUS_R + TORUS_r, size=2 * n) < TORUS_R + TORUS_r * np.cos(cand)
            v = np.concatenate([v, cand[keep]])
        v = v[:n]
        ring = TORUS_R + TORUS_r * np.cos(v)
        p = np.stack([ring * np.cos(u), ring * np.sin(u), TORUS_r * np.sin(v)], axis=1)
        nrm = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=1)
        return p, nrm, part_labels(kind, p)
    if kind == "cylinder":
        side = 2 * np.pi * CYL_RADIUS * 2 * CYL_HALF_HEIGHT
        cap = np.pi * CYL_RADIUS**2
        part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
        th = rng.uniform(0, 2 * np.pi, size=n)
        rad = np.where(part == 0, CYL_RADIUS, CYL_RADIUS * np.sqrt(rng.uniform(size=n)))
        z = np.where(part == 0, rng.uniform(-CYL_HALF_HEIGHT, CYL_HALF_HEIGHT, size=n),
                     np.where(part == 1, CYL_HALF_HEIGHT, -CYL_HALF_HEIGHT))
        p = np.stack([rad * np.cos(th), rad * np.sin(th), z], axis=1)
        nrm = np.where((part == 0)[:, None], np.stack([np.cos(th), np.sin(th), np.zeros(n)], axis=1),
                       np.stack([np.zeros(n), np.zeros(n), np.where(part == 1, 1.0, -1.0)], axis=1))
        return p, nrm, part
    raise ValueError(f"unknown shape {kind!r}; choose from {SHAPES}")


def part_labels(kind: str, p: np.ndarray) -> np.ndarray:
    """Part label of surface points given in the shape's own (unrotated) frame."""
    if kind == "sphere":
        return (p[:, 2] < 0).astype(np.int64)
    if kind == "cube":
        axis = np.argmax(np.abs(p), axis=1)
        neg = p[np.arange(len(p)), axis] < 0
        return 2 * axis + neg
    if kind == "torus":
        return (np.hypot(p[:, 0], p[:, 1]) < TORUS_R).astype(np.int64)
    if kind == "cylinder":
        on_side = np.isclose(np.hypot(p[:, 0], p[:, 1]), CYL_RADIUS) & (np.abs(p[:, 2]) < CYL_HALF_HEIGHT)
        return np.where(on_side, 0, np.where(p[:, 2] > 0, 1, 2)).astype(np.int64)
    raise ValueError(f"unknown shape {kind!r}")


@dataclass
class SynthConfig:
    classes: Sequence[str] = SHAPES
    n_points: int = 64
    samples_per_class: int = 40
    seed: int = 0
    max_rotation_deg: Optional[float] = None  # None: uniform over all rotations
    jitter: float = JITTER


def random_rotation(rng: np.random.Generator, max_deg: Optional[float]) -> np.ndarray:
    if max_deg is None:
        return Rotation.random(random_state=rng).as_matrix()
    axis = _unit_vectors(rng, 1)[0]
    angle = math.radians(max_deg) * rng.uniform(-1.0, 1.0)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def synth_shapes(cfg: SynthConfig) -> Dataset:
    """Labelled surface samples of primitive shapes, rigidly rotated and jittered.

    Part labels are offset per class so that every (class, part) pair is a
    distinct global part label, in the order of ``cfg.classes``.
    """
    if cfg.n_points < 16:
        raise ValueError("n_points must be at least 16")
    classes = list(cfg.classes)
    for c in classes:
        if c not in PARTS_PER_SHAPE:
            raise ValueError(f"unknown shape {c!r}; choose from {SHAPES}")
    offsets = np.cumsum([0] + [PARTS_PER_SHAPE[c] for c in classes])
    rng = np.random.default_rng(cfg.seed)
    samples = []
    for ci, kind in enumerate(classes):
        for _ in range(cfg.samples_per_class):
            p, nrm, lab = sample_shape(kind, cfg.n_points, rng)
            rot = random_rotation(rng, cfg.max_rotation_deg)
            coords = p @ rot.T + rng.uniform(-cfg.jitter, cfg.jitter, size=p.shape)
            samples.append(PointCloud(coords, nrm @ rot.T, lab + offsets[ci], ci))
    return Dataset(samples, len(classes), int(offsets[-1]), class_names=classes)
