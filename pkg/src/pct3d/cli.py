"""Command-line entry point: ``pct3d {train,eval,gradcheck,params,bench,synth}``.

Exit codes: 0 success, 1 runtime failure, 2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dataio import SHAPES, SynthConfig, load_manifest, synth_shapes, write_dataset
from .diffcore import load_checkpoint, no_grad
from .errors import ConfigError, ParseError
from .gradsuite import TOLERANCE, run_suite
from .network import ModelConfig, PointCloudTransformer, Timer, param_count
from .trainer import TrainConfig, evaluate, train

log = logging.getLogger("pct3d")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_text(self) -> str:
        lines = [self.model.to_text().rstrip("\n")]
        for prefix, obj in (("train", self.train), ("synth", self.synth)):
            for f in fields(obj):
                val = getattr(obj, f.name)
                if isinstance(val, (tuple, list)):
                    val = ",".join(map(str, val))
                elif val is None:
                    val = "none"
                lines.append(f"{prefix}.{f.name} = {val}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, path: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=lineno, path=path)
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", line=lineno, path=path)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", line=lineno, path=path)
        values[key] = val
    return values


def _section(cls, values: dict, prefix: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        name = key[len(prefix) + 1 :]
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}", field=key)
        default = known[name].default
        text = raw.strip()
        try:
            if name == "classes":
                kwargs[name] = tuple(c.strip() for c in text.split(",") if c.strip())
            elif text.lower() == "none":
                kwargs[name] = None
            elif isinstance(default, int) and not isinstance(default, bool):
                kwargs[name] = int(text)
            else:
                kwargs[name] = float(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r}", field=key) from None
    return cls(**kwargs)


def config_from_mapping(values: dict) -> RunConfig:
    model = {k: v for k, v in values.items() if not k.startswith(("train.", "synth."))}
    train_vals = {k: v for k, v in values.items() if k.startswith("train.")}
    synth_vals = {k: v for k, v in values.items() if k.startswith("synth.")}
    mcfg = ModelConfig.from_mapping(model)
    synth = _section(SynthConfig, synth_vals, "synth")
    if "synth.n_points" not in synth_vals:
        synth = replace(synth, n_points=mcfg.input_points)
    return RunConfig(mcfg, _section(TrainConfig, train_vals, "train"), synth)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return config_from_mapping({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="config") from None
    return config_from_mapping(parse_config_text(text, path))


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    train_over = {}
    for flag, name in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"), ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            train_over[name] = val
    if train_over:
        cfg.train = replace(cfg.train, **train_over)
    if getattr(args, "seed", None) is not None:
        cfg.synth = replace(cfg.synth, seed=args.seed)
    if getattr(args, "points", None) is not None:
        cfg.model = replace(cfg.model, input_points=args.points)
    print(cfg.to_text(), end="", file=sys.stderr)
    return cfg


def _dataset(spec: str, cfg: RunConfig):
    if spec == "synth":
        return synth_shapes(cfg.synth)
    path = Path(spec)
    manifest = path / "manifest.csv" if path.is_dir() else path
    return load_manifest(manifest, n_points=cfg.model.input_points)


def _load_weights(model: PointCloudTransformer, path: str):
    state = load_checkpoint(path)
    try:
        model.load_state_dict(state)
    except ConfigError as exc:
        name = exc.field or ""
        if name.startswith("classifier"):
            raise ConfigError(f"num_classes does not match the checkpoint ({exc})", field="num_classes") from None
        if name.startswith("seg_out"):
            raise ConfigError(f"num_parts does not match the checkpoint ({exc})", field="num_parts") from None
        raise


# -- subcommands -------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _resolve(args)
    data = _dataset(args.data, cfg)
    model = PointCloudTransformer(cfg.model, seed=cfg.train.seed)
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    result = train(model, data, cfg.train, checkpoint=args.out, log_path=log_path)
    best = result.log[result.best_epoch]
    print(f"checkpoint {args.out} (epoch {best.epoch}, loss {best.loss:.6f}, oa {best.oa!r}); log {log_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    data = _dataset(args.data, cfg)
    model = PointCloudTransformer(cfg.model, seed=cfg.train.seed)
    _load_weights(model, args.ckpt)
    print(evaluate(model, data).to_json())
    return 0


def cmd_gradcheck(args) -> int:
    _resolve(args)
    results = run_suite(seed=args.seed or 0)
    print("block,max_rel_error,worst_param,seconds")
    for r in results:
        print(f"{r.name},{r.max_error:.3e},{r.worst_param},{r.seconds:.3f}")
    bad = [r.name for r in results if not r.ok]
    if bad:
        print(f"gradient check failed (> {TOLERANCE:g}): {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def cmd_params(args) -> int:
    cfg = _resolve(args)
    pc = param_count(PointCloudTransformer(cfg.model, seed=0))
    print(f"parameters {pc.count}")
    print(f"megabytes {pc.megabytes:.4f}")
    return 0


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    model = PointCloudTransformer(cfg.model, seed=args.seed or 0)
    model.eval()
    rng = np.random.default_rng(args.seed or 0)
    coords = rng.normal(size=(args.batch, cfg.model.input_points, 3))
    coords /= np.linalg.norm(coords, axis=-1, keepdims=True)
    feats = coords if cfg.model.in_channels == 3 else np.concatenate([coords, coords], axis=-1)
    timer = Timer()
    with no_grad():
        for _ in range(args.repeat):
            model(feats, coords, timer)
    print("block,repeats,mean_ms,min_ms")
    for name, times in timer.times.items():
        t = np.asarray(times) * 1e3
        print(f"{name},{len(t)},{t.mean():.3f},{t.min():.3f}")
    return 0


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    synth = cfg.synth
    if args.classes:
        synth = replace(synth, classes=tuple(args.classes))
    if args.n_points:
        synth = replace(synth, n_points=args.n_points)
    if args.samples_per_class:
        synth = replace(synth, samples_per_class=args.samples_per_class)
    manifest = write_dataset(args.out, synth_shapes(synth))
    print(manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pct3d", description="Point cloud transformer tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat 'key = value' configuration file")
        p.add_argument("--seed", type=int)
        p.set_defaults(fn=fn)
        return p

    p = add("train", cmd_train, "train a model and write a checkpoint")
    p.add_argument("--data", required=True, help="dataset directory, manifest file, or 'synth'")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="CSV log path (default: <out>.log.csv)")

    p = add("eval", cmd_eval, "evaluate a checkpoint and print a JSON report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every block")
    p.add_argument("--scale", choices=["tiny"], default="tiny")

    add("params", cmd_params, "parameter count and size estimate")

    p = add("bench", cmd_bench, "per-block forward wall times as CSV")
    p.add_argument("--points", type=int)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--batch", type=int, default=1)

    p = add("synth", cmd_synth, "write a synthetic XYZ dataset with a manifest")
    p.add_argument("--classes", nargs="+", choices=SHAPES)
    p.add_argument("--n-points", type=int)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--out", required=True)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ParseError) as exc:
        where = f" [{exc.field}]" if getattr(exc, "field", None) else ""
        print(f"pct3d {args.command}: configuration error{where}: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"pct3d {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
