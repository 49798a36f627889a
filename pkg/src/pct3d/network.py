"""Encoder, classification head and segmentation decoder."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .diffcore import (
    LBR,
    Linear,
    Module,
    Tensor,
    broadcast_to,
    concat,
    dropout,
    max_reduce,
    reshape,
)
from .errors import ConfigError, ContractError
from .geometry import interpolate_idw
from .gfl import CSA_MODES, POS_HIDDEN, GFLBlock
from .lfa import LFABlock

BASE_K = (8, 16, 32)
BASE_D = (64, 128, 256)


@dataclass(frozen=True)
class ModuleSpec:
    k: tuple
    d: tuple


def default_modules(count: int) -> tuple:
    """Module 1 uses (8, 16, 32) / (64, 128, 256); each deeper module halves the k's."""
    return tuple(ModuleSpec(tuple(max(1, k >> i) for k in BASE_K), BASE_D) for i in range(count))


@dataclass
class ModelConfig:
    task: str = "cls"
    input_points: int = 1024
    in_channels: int = 6
    stem_width: int = 64
    modules: Optional[tuple] = None
    head_widths: tuple = (512, 256)
    decoder_widths: tuple = (256, 128, 128)
    num_classes: int = 40
    num_parts: Optional[int] = None
    csa_mode: str = "linear_point"
    dropout: float = 0.5
    pos_hidden: int = POS_HIDDEN
    # ablation switches
    mlp_lfa: bool = False
    ablate_gfl: bool = False
    ablate_csa: bool = False
    ablate_ppsa: bool = False
    standard_psa: bool = False
    multi_level: bool = True

    def __post_init__(self):
        if self.task not in ("cls", "seg"):
            raise ConfigError(f"task must be 'cls' or 'seg', got {self.task!r}", field="task")
        if self.modules is None:
            self.modules = default_modules(2 if self.task == "cls" else 3)
        self.modules = tuple(m if isinstance(m, ModuleSpec) else ModuleSpec(tuple(m[0]), tuple(m[1])) for m in self.modules)
        self.head_widths = tuple(self.head_widths)
        self.decoder_widths = tuple(self.decoder_widths)
        if self.task == "seg" and self.num_parts is None:
            self.num_parts = 50
        self.validate()

    def validate(self):
        if self.in_channels not in (3, 6):
            raise ConfigError("in_channels must be 3 (xyz) or 6 (xyz + normals)", field="in_channels")
        if self.stem_width < 1:
            raise ConfigError("stem_width must be positive", field="stem_width")
        if not self.modules:
            raise ConfigError("at least one module is required", field="modules")
        if self.csa_mode not in CSA_MODES:
            raise ConfigError(f"csa_mode must be one of {CSA_MODES}", field="csa_mode")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive", field="num_classes")
        if len(self.head_widths) != 2:
            raise ConfigError("head_widths needs exactly two entries", field="head_widths")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)", field="dropout")
        n = self.input_points
        for i, spec in enumerate(self.modules):
            if len(spec.k) != len(spec.d) or not spec.k:
                raise ConfigError(f"module {i}: k and d lists must match", field=f"module.{i}")
            if list(spec.k) != sorted(set(spec.k)) or list(spec.d) != sorted(set(spec.d)):
                raise ConfigError(f"module {i}: need k1<k2<... and d1<d2<...", field=f"module.{i}")
            if n < 4 * spec.k[-1]:
                raise ConfigError(f"module {i}: {n} incoming points, need >= 4*k={4 * spec.k[-1]}", field="input_points")
            n //= 4
        if self.task == "seg":
            if self.num_parts is None or self.num_parts < 1:
                raise ConfigError("segmentation needs num_parts", field="num_parts")
            if len(self.decoder_widths) != len(self.modules):
                raise ConfigError(
                    f"decoder_widths needs one entry per module ({len(self.modules)})", field="decoder_widths"
                )

    @property
    def point_counts(self) -> list:
        counts = [self.input_points]
        for _ in self.modules:
            counts.append(counts[-1] // 4)
        return counts

    @property
    def module_widths(self) -> list:
        return [sum(m.d) for m in self.modules]

    @property
    def global_width(self) -> int:
        w = self.module_widths
        return sum(w) if self.multi_level else w[-1]

    # -- flat key = value text form ------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "modules":
                for i, spec in enumerate(val):
                    lines.append(f"module.{i}.k = {','.join(map(str, spec.k))}")
                    lines.append(f"module.{i}.d = {','.join(map(str, spec.d))}")
                continue
            if isinstance(val, tuple):
                val = ",".join(map(str, val))
            elif val is None:
                val = "none"
            elif isinstance(val, bool):
                val = str(val).lower()
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "ModelConfig":
        kwargs = {}
        mods = {}
        known = {f.name: f for f in fields(cls)}
        for key, raw in values.items():
            if key.startswith("module."):
                try:
                    _, idx, which = key.split(".")
                    mods.setdefault(int(idx), {})[which] = _int_tuple(raw, key)
                except ValueError:
                    raise ConfigError(f"bad module key {key!r} (use module.<i>.k / module.<i>.d)", field=key) from None
                continue
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}", field=key)
            kwargs[key] = _coerce(key, raw, known[key].default)
        if mods:
            try:
                kwargs["modules"] = tuple(ModuleSpec(mods[i]["k"], mods[i]["d"]) for i in range(len(mods)))
            except KeyError:
                raise ConfigError("module entries must be numbered 0..n-1, each with k and d", field="modules") from None
        return cls(**kwargs)


def _int_tuple(raw, key) -> tuple:
    if isinstance(raw, (tuple, list)):
        return tuple(int(v) for v in raw)
    try:
        return tuple(int(v) for v in str(raw).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}", field=key) from None


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if key in ("head_widths", "decoder_widths"):
            return _int_tuple(text, key)
        if key == "num_parts":
            return None if text.lower() == "none" else int(text)
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}", field=key) from None
    return text


ABLATIONS = {
    "full": {},
    "mlp_lfa": {"mlp_lfa": True},
    "single_scale": "single_scale",
    "no_gfl": {"ablate_gfl": True},
    "no_csa": {"ablate_csa": True},
    "no_ppsa": {"ablate_ppsa": True},
    "standard_psa": {"standard_psa": True},
    "no_multi_level": {"multi_level": False},
}


def ablation_config(cfg: ModelConfig, name: str) -> ModelConfig:
    """The variants of the ablation table, derived from ``cfg``."""
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    change = ABLATIONS[name]
    if change == "single_scale":
        return replace(cfg, modules=tuple(ModuleSpec(m.k[-1:], m.d[-1:]) for m in cfg.modules))
    return replace(cfg, **change)


# -- model -------------------------------------------------------------------


@dataclass
class ModuleOutput:
    features: Tensor  # F_OUT (B, s, d)
    coords: np.ndarray  # (B, s, 3)
    pooled: Tensor  # per-level global vector (B, d)
    lfa_features: Tensor  # F_L, kept for inspection


@dataclass
class EncoderState:
    stem: Tensor  # (B, n, stem_width)
    coords: np.ndarray  # (B, n, 3)
    levels: list = field(default_factory=list)
    global_feature: Optional[Tensor] = None

    @property
    def point_counts(self) -> list:
        return [self.coords.shape[-2]] + [lv.coords.shape[-2] for lv in self.levels]


class Timer:
    """Accumulates wall time per named block."""

    def __init__(self):
        self.times = {}

    @contextmanager
    def block(self, name):
        t0 = time.perf_counter()
        yield
        self.times.setdefault(name, []).append(time.perf_counter() - t0)


@contextmanager
def _maybe(timer, name):
    if timer is None:
        yield
    else:
        with timer.block(name):
            yield


class FeaturePropagation(Module):
    def __init__(self, in_width: int, width: int, rng: np.random.Generator, layers: int = 2):
        self.lbrs = [LBR(in_width if i == 0 else width, width, rng) for i in range(layers)]

    def __call__(self, x: Tensor) -> Tensor:
        for lbr in self.lbrs:
            x = lbr(x)
        return x


class PointCloudTransformer(Module):
    """Stem MLP, stacked LFA + GFL modules, and a classification head or segmentation decoder."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.stem = [LBR(cfg.in_channels, cfg.stem_width, rng), LBR(cfg.stem_width, cfg.stem_width, rng)]
        self.lfa = []
        self.gfl = []
        width, n = cfg.stem_width, cfg.input_points
        for spec in cfg.modules:
            block = LFABlock(width, spec.k, spec.d, rng, mlp=cfg.mlp_lfa)
            n //= 4
            width = block.out_width
            self.lfa.append(block)
            self.gfl.append(
                GFLBlock(
                    width, n, rng,
                    csa_mode=cfg.csa_mode,
                    use_ppsa=not cfg.ablate_ppsa,
                    use_csa=not cfg.ablate_csa,
                    standard_psa=cfg.standard_psa,
                    enabled=not cfg.ablate_gfl,
                    pos_hidden=cfg.pos_hidden,
                )
            )
        g = cfg.global_width
        if cfg.task == "cls":
            h1, h2 = cfg.head_widths
            self.head = [LBR(g, h1, rng), LBR(h1, h2, rng)]
            self.classifier = Linear(h2, cfg.num_classes, rng)
        else:
            widths = cfg.module_widths
            cur = widths[-1] + g
            self.decoder = []
            for i, w in enumerate(cfg.decoder_widths[:-1]):
                skip = widths[-2 - i]
                self.decoder.append(FeaturePropagation(cur + skip, w, rng))
                cur = w
            self.decoder.append(FeaturePropagation(cur + cfg.stem_width, cfg.decoder_widths[-1], rng, layers=1))
            self.seg_out = Linear(cfg.decoder_widths[-1], cfg.num_parts, rng)
        self.dropout_rng = np.random.default_rng([seed, 1])

    def encode(self, inputs, coords, timer: Optional[Timer] = None) -> EncoderState:
        inputs = np.asarray(inputs, dtype=np.float64)
        coords = np.asarray(coords, dtype=np.float64)
        cfg = self.cfg
        if inputs.shape[-1] != cfg.in_channels:
            raise ConfigError(f"input has {inputs.shape[-1]} channels, config says {cfg.in_channels}", field="in_channels")
        if inputs.shape[-2] != cfg.input_points:
            raise ConfigError(f"input has {inputs.shape[-2]} points, config says {cfg.input_points}", field="input_points")
        with _maybe(timer, "stem"):
            x = Tensor(inputs)
            for lbr in self.stem:
                x = lbr(x)
        state = EncoderState(stem=x, coords=coords)
        feats, pts = x, coords
        for i, (lfa, gfl) in enumerate(zip(self.lfa, self.gfl)):
            with _maybe(timer, f"lfa{i}"):
                local = lfa(feats, pts)
            with _maybe(timer, f"gfl{i}"):
                out = gfl(local.features, local.sampled_coords, local.nmap)
                pooled = max_reduce(out, axis=-2, keepdims=False)
            state.levels.append(ModuleOutput(out, local.sampled_coords, pooled, local.features))
            feats, pts = out, local.sampled_coords
        pooled = [lv.pooled for lv in state.levels]
        state.global_feature = concat(pooled, axis=-1) if cfg.multi_level else pooled[-1]
        return state

    def classify(self, state: EncoderState, timer: Optional[Timer] = None) -> Tensor:
        if self.cfg.task != "cls":
            raise ContractError("classify called on a segmentation model")
        with _maybe(timer, "head"):
            x = state.global_feature
            for lbr in self.head:
                x = dropout(lbr(x), self.cfg.dropout, self.dropout_rng, self.training)
            return self.classifier(x)

    def segment(self, state: EncoderState, timer: Optional[Timer] = None) -> Tensor:
        if self.cfg.task != "seg":
            raise ContractError("segment called on a classification model")
        with _maybe(timer, "decoder"):
            levels = state.levels
            deep = levels[-1].features
            g = state.global_feature
            lead = deep.shape[:-1]
            g = broadcast_to(reshape(g, g.shape[:-1] + (1, g.shape[-1])), lead + (g.shape[-1],))
            x = concat([deep, g], axis=-1)
            src = levels[-1].coords
            for i, stage in enumerate(self.decoder):
                if i < len(self.decoder) - 1:
                    skip = levels[-2 - i]
                    dst, skip_feats = skip.coords, skip.features
                else:
                    dst, skip_feats = state.coords, state.stem
                x = stage(concat([interpolate_idw(dst, src, x), skip_feats], axis=-1))
                src = dst
            return self.seg_out(x)

    def __call__(self, inputs, coords, timer: Optional[Timer] = None) -> Tensor:
        state = self.encode(inputs, coords, timer)
        return self.classify(state, timer) if self.cfg.task == "cls" else self.segment(state, timer)


@dataclass
class ParamCount:
    count: int
    megabytes: float


def param_count(params) -> ParamCount:
    """Scalar count and the 32-bit size estimate ``count * 4 / 2**20``."""
    if isinstance(params, Module):
        params = params.parameters()
    n = sum(int(p.size) for p in params)
    return ParamCount(n, n * 4 / 2**20)
