"""Command-line entry point: ``scnlab <command> --config run.json``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or I/O error.
Standard output carries only machine-readable payloads; diagnostics go to
standard error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, FormatError, InvalidInputError, ScnError
from .evaluation import ExperimentSpec, evaluate, run_experiment, write_reports
from .model import MODEL_KINDS, NetConfig, predict
from .synth import GenConfig, format_landmarks_csv, generate_dataset, load_dataset, read_pgm
from .training import Checkpoint, Hyperparams, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


def _section(cls, doc: dict, name: str, extra=()):
    raw = doc.get(name, {}) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)} | set(extra)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"section {name!r}: unknown keys {unknown}")
    return dict(raw)


@dataclass
class RunConfig:
    data: GenConfig = field(default_factory=GenConfig)
    model: dict = field(default_factory=dict)        # NetConfig overrides
    train: Hyperparams = field(default_factory=Hyperparams)
    experiment: dict = field(default_factory=dict)   # ExperimentSpec overrides
    paths: dict = field(default_factory=dict)
    n_samples: int = 400

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - {"data", "model", "train", "experiment", "paths"})
        if unknown:
            raise ConfigError(f"unknown config sections {unknown}")
        data = _section(GenConfig, doc, "data", extra=("n_samples",))
        n_samples = int(data.pop("n_samples", 400))
        try:
            return cls(
                data=GenConfig(**data),
                model=_section(NetConfig, doc, "model"),
                train=Hyperparams(**_section(Hyperparams, doc, "train")),
                experiment=_section(ExperimentSpec, doc, "experiment"),
                paths=dict(doc.get("paths", {}) or {}),
                n_samples=n_samples,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            doc = json.loads(p.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
        return cls.from_dict(doc)

    def net_config(self, height: int, width: int, n_landmarks: int) -> NetConfig:
        return NetConfig(**{"height": height, "width": width, "n_landmarks": n_landmarks, **self.model})

    def experiment_spec(self) -> ExperimentSpec:
        kw = dict(self.experiment)
        for key in ("train_sizes", "seeds", "model_kinds", "thresholds"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return ExperimentSpec(hyperparams=self.train, **kw)

    def path(self, name: str, override: Optional[str]) -> Path:
        value = override or self.paths.get(name)
        if not value:
            raise UsageError(f"no {name} given (use the command-line flag or paths.{name})")
        return Path(value)


def _err(msg: str) -> None:
    print(f"scnlab: {msg}", file=sys.stderr)


def cmd_gen_data(cfg: RunConfig, args) -> int:
    out = cfg.path("dataset_dir", args.out)
    manifest = generate_dataset(cfg.data, cfg.n_samples, out)
    print(manifest.path)
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    if args.kind not in MODEL_KINDS:
        raise UsageError(f"invalid model kind {args.kind!r}; valid kinds: {', '.join(MODEL_KINDS)}")
    data = load_dataset(cfg.path("dataset_dir", args.data))
    if not data:
        raise InvalidInputError("dataset is empty")
    h, w = data[0].image.shape
    net = cfg.net_config(h, w, len(data[0].landmarks))
    result = train(args.kind, data, cfg.train, net,
                   on_epoch=lambda e, loss: print(f"{e},{loss!r}", flush=True))
    out = cfg.path("checkpoint", args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(Checkpoint.from_training(result), out)
    _err(f"wrote {out}")
    return EXIT_OK


def cmd_predict(cfg: Optional[RunConfig], args) -> int:
    ckpt_path = Path(args.checkpoint) if args.checkpoint else cfg.path("checkpoint", None)
    ckpt = load_checkpoint(ckpt_path)
    image = read_pgm(args.image)
    want = (ckpt.config.height, ckpt.config.width)
    if image.shape != want:
        raise InvalidInputError(f"image {args.image} is {image.shape[0]}x{image.shape[1]} "
                                f"but the checkpoint expects {want[0]}x{want[1]}")
    coords = predict(ckpt.to_params(), image[None])
    sys.stdout.write(format_landmarks_csv(coords))
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ckpt = load_checkpoint(cfg.path("checkpoint", args.checkpoint))
    data = load_dataset(cfg.path("dataset_dir", args.data))
    rep = evaluate(ckpt.to_params(), data, ckpt.kind, len(data), 0)
    print("model,images,median_px,mean_px,max_px")
    print(f"{rep.model},{len(data)},{rep.median!r},{rep.mean!r},{rep.max!r}")
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, args) -> int:
    data = load_dataset(cfg.path("dataset_dir", args.data))
    spec = cfg.experiment_spec()
    out = cfg.path("report_dir", args.out)
    result = run_experiment(spec, data, log=_err)
    paths = write_reports(result, out, spec.thresholds)
    for key in ("report", "ced", "summary"):
        print(paths[key])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scnlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", help="dataset directory (overrides paths.dataset_dir)")

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--kind", default="scn", help="scn or baseline")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--out", help="checkpoint path (overrides paths.checkpoint)")

    pr = sub.add_parser("predict", help="print predicted landmarks of one PGM image as CSV")
    pr.add_argument("--config", help="optional; supplies paths.checkpoint")
    pr.add_argument("--checkpoint")
    pr.add_argument("--image", required=True)

    e = sub.add_parser("evaluate", help="error summary of a checkpoint on a dataset")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--data")

    x = sub.add_parser("experiment", help="reduced-training-set comparison of scn and baseline")
    x.add_argument("--config", required=True)
    x.add_argument("--data")
    x.add_argument("--out", help="report directory")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = RunConfig.load(args.config) if args.config else None
        if cfg is None and args.command == "predict" and not args.checkpoint:
            raise UsageError("predict needs --checkpoint or --config")
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (ScnError, OSError, FloatingPointError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
