"""Command line entry point.

Exit codes: 0 success, 1 usage error (bad flags, bad config, missing files),
2 numerical failure (non-finite values, failed gradient or self checks).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError, UsageError
from .pipeline.config import RunConfig

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: Optional[str], overrides: List[str],
                base: Optional[RunConfig] = None) -> RunConfig:
    """RunConfig from ``base`` (default RunConfig()), then a JSON file, then ``key=value`` overrides.

    Override values are parsed as JSON when possible, so ``--set widths=[4,8,16]`` works.
    """
    base = (base or RunConfig()).to_dict()
    if path:
        if not Path(path).is_file():
            raise UsageError(f"no such config file: {path}")
        base.update(json.loads(Path(path).read_text()))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        base[key.strip()] = _parse_value(value)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(base) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig.from_dict(base)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config field (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="refattn", description="Reference-based super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("match", help="top-1 similarity heatmap between an LR and a Ref image")
    p.add_argument("--lr", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--scale-level", type=int, default=3, choices=(1, 2, 3))
    p.add_argument("--out", required=True, help="grayscale PNG heatmap")
    p.add_argument("--map-out", help="optional NDAR dump of the correspondence map")
    _add_config_flags(p)

    p = sub.add_parser("transfer", help="reference attention features for one scale")
    p.add_argument("--lr", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--checkpoint", help="trained checkpoint; default is seeded init")
    p.add_argument("--scale-level", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--out", required=True, help="directory for NDAR dumps and heatmaps")
    _add_config_flags(p)

    p = sub.add_parser("sr", help="super-resolve an LR image with a Ref image")
    p.add_argument("--lr", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--dump-dir", help="directory for intermediate NDAR dumps")

    p = sub.add_parser("train-toy", help="train on procedural texture pairs")
    p.add_argument("--out", required=True, help="output directory (log + checkpoint)")
    p.add_argument("--pairs", type=int, default=1, help="number of procedural training pairs")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--tiny", action="store_true", help="start from the tiny-width preset")
    _add_config_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--module", default="all",
                   choices=("all", "numerics", "encoder", "rda", "aggregate", "losses"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)

    p = sub.add_parser("selftest", help="oracle and invariant self-test")
    p.add_argument("--seed", type=int, default=0)
    return parser


# -- commands ----------------------------------------------------------------

def _read_pair(args):
    from .pipeline.imageio import read_png
    for path in (args.lr, args.ref):
        if not Path(path).is_file():
            raise UsageError(f"no such image: {path}")
    return read_png(args.lr), read_png(args.ref)


def _cmd_match(args) -> int:
    from .encoder import bicubic_upsample, build_pyramid, seeded_init
    from .matcher import match, similarity_map
    from .pipeline.imageio import write_heatmap
    cfg = load_config(args.config, args.overrides)
    lr, ref = _read_pair(args)
    stack = seeded_init(cfg.seed, cfg.widths)
    pyr = build_pyramid(bicubic_upsample(lr, cfg.scale).pixels, ref.pixels, stack)
    l = args.scale_level - 1
    cmap = match(pyr.q[l], pyr.k[l], args.k, cfg.patch_size)
    meta = write_heatmap(args.out, similarity_map(cmap))
    if args.map_out:
        cmap.save(args.map_out)
    print(json.dumps({"out": args.out, "mean_top1": float(similarity_map(cmap).mean()), **meta}))
    return EXIT_OK


def _load_model(checkpoint, cfg):
    from .pipeline.model import RefSRModel
    return RefSRModel.load(checkpoint) if checkpoint else RefSRModel.init(cfg)


def _cmd_transfer(args) -> int:
    from .numerics import ndar, no_grad
    from .pipeline.imageio import write_heatmap
    cfg = load_config(args.config, args.overrides)
    lr, ref = _read_pair(args)
    model = _load_model(args.checkpoint, cfg)
    records = []
    with no_grad():
        lr_up, pyr = model.prepare(lr, ref)
        model.forward(lr_up, pyr, records=records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec = next(r for r in records if r.scale == args.scale_level and r.path == "down")
    ndar.save(out / "attention.ndar", rec.attention.data)
    ndar.save(out / "offsets.ndar", rec.fields.offsets.data)
    ndar.save(out / "masks.ndar", rec.fields.masks.data)
    write_heatmap(out / "attention_energy.png", np.sqrt((rec.attention.data ** 2).sum(axis=0)))
    write_heatmap(out / "mask_mean.png", rec.fields.masks.data.mean(axis=0))
    print(json.dumps({"out": str(out), "attention_shape": list(rec.attention.shape)}))
    return EXIT_OK


def _cmd_sr(args) -> int:
    from .pipeline.infer import run_sr
    lr, ref = _read_pair(args)
    result = run_sr(lr, ref, args.checkpoint, dump_dir=args.dump_dir, out_png=args.out)
    print(json.dumps({"out": args.out, "shape": list(result.image.pixels.shape)}))
    return EXIT_OK


def _cmd_train(args) -> int:
    from .pipeline.data import make_pair
    from .pipeline.train import train_toy
    cfg = load_config(args.config, args.overrides, RunConfig.tiny() if args.tiny else None)
    if args.pairs < 1:
        raise UsageError("--pairs must be at least 1")
    rng = np.random.default_rng(args.data_seed)
    pairs = [make_pair(rng, cfg.hr_patch, cfg.scale) for _ in range(args.pairs)]
    result = train_toy(pairs, cfg, args.out)
    last = result.reports[-1].total if result.reports else None
    print(json.dumps({"checkpoint": str(result.checkpoint), "log": str(result.log),
                      "steps": len(result.reports), "final_total": last}))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .pipeline.selftest import MODULES, gradient_suite
    modules = MODULES if args.module == "all" else (args.module,)
    worst = 0.0
    for module in modules:
        for name, err in gradient_suite(module, args.seed):
            worst = max(worst, err)
            print(f"{'PASS' if err < args.tol else 'FAIL'} {name} max_rel_error={err:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


def _cmd_selftest(args) -> int:
    from .pipeline.selftest import run_selftest
    passed, total = run_selftest(args.seed)
    return EXIT_OK if passed == total else EXIT_NUMERIC


_COMMANDS = {
    "match": _cmd_match,
    "transfer": _cmd_transfer,
    "sr": _cmd_sr,
    "train-toy": _cmd_train,
    "gradcheck": _cmd_gradcheck,
    "selftest": _cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    from .pipeline.model import CheckpointError
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ShapeError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
