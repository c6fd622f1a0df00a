"""``hyperdet`` command line: train, detect, eval, sweep, spectrum, filters, export-features.

Exit codes: 0 success, 1 invalid configuration or usage, 2 runtime failure.
Training configuration merges file < ``HYPERDET_*`` environment < flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, HyperDetError

log = logging.getLogger("hyperdet")

ENV_PREFIX = "HYPERDET_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# config loading ---------------------------------------------------------------

def _read_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}", kind="file-not-found")
    text = p.read_text()
    try:
        if p.suffix.lower() == ".json":
            return json.loads(text)
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        return tomllib.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(keys, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in keys:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = _parse_env_value(environ[name])
    return out


def effective_train_config(args, environ=None):
    from .trainer import TrainConfig

    cfg = dict(_read_config_file(args.config)) if args.config else {}
    # Training settings may sit at top level or under [train].
    if "train" in cfg and isinstance(cfg["train"], dict):
        nested = cfg.pop("train")
        cfg = {**cfg, **nested}
    keys = [f.name for f in fields(TrainConfig) if f.name != "model"]
    cfg.update(env_overrides(keys, environ))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["checkpoint_dir"] = args.out
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected key=value")
        cfg[key.strip()] = _parse_env_value(value)
    return TrainConfig.from_dict(cfg)


# subcommands ------------------------------------------------------------------

def cmd_train(args):
    from .trainer import train

    cfg = effective_train_config(args)
    log.info("effective config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    out = train(cfg, cfg.checkpoint_dir, resume_from=args.resume)
    manifest = json.loads((out / "manifest.json").read_text())
    print(json.dumps({"checkpoint": str(out), "metrics": manifest["metrics"].get("train")}, sort_keys=True))


def _load_detector(path):
    from .detector import DetectorModel

    return DetectorModel.load(path)


def cmd_detect(args):
    from .detector import Verdict, detect_batch

    model = _load_detector(args.checkpoint)
    threshold = -np.inf if args.threshold is None else args.threshold
    results, summary = detect_batch(model, [args.input], threshold)
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in results]
    if args.json == "-":
        sys.stdout.write("\n".join(lines) + "\n")
    else:
        if args.json:
            Path(args.json).write_text("\n".join(lines) + "\n")
        for r in results:
            if isinstance(r, Verdict):
                print(f"{r.path}\t{r.label}\t{r.normalized_score:.6f}")
            else:
                print(f"{r.path}\terror\t{r.error}: {r.message}")
    log.info("summary: %s", json.dumps(summary, sort_keys=True))


def _eval_config(model, args) -> dict:
    return {
        "checkpoint": str(args.checkpoint),
        "checkpoint_hash": model.checkpoint_hash,
        "dataset": str(args.dataset),
        "split": args.split,
    }


def cmd_eval(args):
    from .data import scan_dataset
    from .evalkit import evaluate

    model = _load_detector(args.checkpoint)
    dataset = scan_dataset(args.dataset, args.split)
    report = evaluate(model, dataset, args.perturb, config=_eval_config(model, args))
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")


def cmd_sweep(args):
    from .data import scan_dataset
    from .evalkit import ROBUSTNESS_GRID, parse_grid, robustness_sweep

    grid = parse_grid(args.grid) if args.grid else list(ROBUSTNESS_GRID)
    model = _load_detector(args.checkpoint)
    dataset = scan_dataset(args.dataset, args.split)
    reports = robustness_sweep(model, dataset, grid, out_dir=args.out, config=_eval_config(model, args))
    for r in reports:
        p = r.perturbation
        print(f"{p['kind']}\t{p['param']}\tacc={r.avg_acc:.2f}\tmAP={r.mAP if r.mAP is None else round(r.mAP, 2)}")
    if args.out:
        payload = [r.to_dict() for r in reports]
        (Path(args.out) / "sweep.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_spectrum(args):
    from .detector import expand_inputs
    from .evalkit import average_spectrum
    from .filterbank import get_group
    from .preprocess import load_image

    paths = expand_inputs(args.input)
    if not paths:
        raise ConfigError(f"no images under {args.input}")
    group = get_group(args.group) if args.group else None
    spec = average_spectrum((load_image(p) for p in paths), group, size=args.size)
    spec.save_png(args.out)
    print(json.dumps({"images": len(paths), "group": args.group, "low_band_fraction": spec.low_band_fraction,
                      "out": str(args.out)}, sort_keys=True))


def cmd_filters(args):
    from .filterbank import GROUPS, get_group, group_of, load_kernels

    bank = load_kernels(args.kernels)
    if args.id is not None:
        if args.id not in bank:
            raise ConfigError(f"--id {args.id}: expected 1..{len(bank)}")
        k = bank[args.id]
        print(f"kernel {k.id}  group {group_of(k.id)}  normalizer {k.normalizer:g}")
        for row in k.weights:
            print(" ".join(f"{v:5g}" for v in row))
        return
    groups = [get_group(args.group)] if args.group else GROUPS
    for g in groups:
        print(f"group {g.group_id} ({g.description}): kernels {list(g.kernel_ids)}")


def cmd_export_features(args):
    import torch

    from .detector import expand_inputs
    from .preprocess import load_image

    model = _load_detector(args.checkpoint)
    paths = expand_inputs(args.input)
    experts = list(range(1, 7)) if args.expert == "all" else [int(args.expert)]
    feats = {e: [] for e in experts}
    for p in paths:
        views = model.views(load_image(p))
        with torch.no_grad():
            for e in experts:
                feats[e].append(model.net.features(views[e - 1:e], e)[0].numpy())
    arrays = {f"expert_{e}": np.stack(v) for e, v in feats.items()}
    np.savez(args.out, paths=np.array([str(p) for p in paths]), **arrays)
    print(json.dumps({"images": len(paths), "experts": experts, "out": str(args.out)}))


def cmd_make_toy_data(args):
    from .data import make_checker_dataset

    make_checker_dataset(args.root, args.n, size=args.size, amplitude=args.amplitude,
                         seed=args.seed, split=args.split)
    print(Path(args.root) / args.split)


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hyperdet", description="Synthetic-image detection toolchain.")
    p.add_argument("--log-level", default=os.environ.get(ENV_PREFIX + "LOG_LEVEL", "WARNING"))
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("train", help="train the hypernetwork and head")
    s.add_argument("--config", help="TOML or JSON training config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="checkpoint directory")
    s.add_argument("--resume", help="continue from a checkpoint directory")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="score images")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True, help="image file or directory")
    s.add_argument("--threshold", type=float, help="early-exit threshold (default: disabled)")
    s.add_argument("--json", help="write JSON lines here ('-' for stdout)")
    s.set_defaults(func=cmd_detect)

    for name, helptext in (("eval", "per-generator accuracy and AP"), ("sweep", "robustness sweep")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--dataset", required=True)
        s.add_argument("--split", default="test")
        if name == "eval":
            s.add_argument("--perturb", help="blur:SIGMA or jpeg:QUALITY")
            s.add_argument("--out", help="report JSON path")
            s.set_defaults(func=cmd_eval)
        else:
            s.add_argument("--grid", nargs="*", help="e.g. blur=1,2,3,4 jpeg=90,80,70")
            s.add_argument("--out", help="directory for sweep.csv, sweep.json and plots")
            s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("spectrum", help="averaged Fourier spectrum of images or residuals")
    s.add_argument("--input", required=True)
    s.add_argument("--group", type=int, choices=range(1, 6))
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("filters", help="show kernels and groups")
    s.add_argument("--id", type=int)
    s.add_argument("--group", type=int)
    s.add_argument("--kernels", help="kernel file (default: bundled SRM set)")
    s.set_defaults(func=cmd_filters)

    s = sub.add_parser("export-features", help="dump pooled backbone features")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--expert", default="all", choices=["all"] + [str(i) for i in range(1, 7)])
    s.add_argument("--out", required=True, help=".npz path")
    s.set_defaults(func=cmd_export_features)

    s = sub.add_parser("make-toy-data", help="write the synthetic checkerboard corpus")
    s.add_argument("root")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--amplitude", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", default="train")
    s.set_defaults(func=cmd_make_toy_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=str(args.log_level).upper(), format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 1
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"hyperdet {args.command}: {exc}", file=sys.stderr)
        return 1
    except HyperDetError as exc:
        print(f"hyperdet {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        log.debug("unhandled error", exc_info=True)
        print(f"hyperdet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
