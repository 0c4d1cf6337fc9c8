"""Command line entry point: ``boxguide {scenes,train,generate,eval,ablate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .guidance import GuidanceConfig
from .layout import LayoutError, load_layout
from .losses import ConfigError

log = logging.getLogger("boxguide")

OUT_ENV = "BOXGUIDE_OUT"


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit code 2)."""


def parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise UsageError(f"no seeds in {text!r}")
    return seeds


class OutputDir:
    """Creates the run directory and refuses to clobber files unless forced."""

    def __init__(self, path: str | None, force: bool, default_name: str):
        root = Path(path) if path else Path(os.environ.get(OUT_ENV, "runs")) / default_name
        root.mkdir(parents=True, exist_ok=True)
        self.root = root
        self.force = force

    def claim(self, name: str) -> Path:
        p = self.root / name
        if p.exists() and not self.force:
            raise UsageError(f"{p} exists; pass --force to overwrite")
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_layout(path: str):
    try:
        return load_layout(_require_file(path, "layout"))
    except LayoutError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_model(path: str):
    from .toy_model.checkpoint import CheckpointError, load_checkpoint

    try:
        return load_checkpoint(_require_file(path, "checkpoint"))
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None


# config flag -> GuidanceConfig key
CONFIG_FLAGS = {
    "eta": float, "lambda": float, "alpha": float, "tau": int, "total_steps": int, "optim_steps": int,
    "max_inner_iters": int, "early_stop_threshold": float, "cfg_weight": float,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    for key, typ in CONFIG_FLAGS.items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", type=typ)
    p.add_argument("--ablation", type=str.lower, choices=["r", "rm", "rmreg"], help="loss terms: R, R+M or R+M+Reg")


def _effective_config(args) -> GuidanceConfig:
    cfg = GuidanceConfig()
    if args.config:
        with open(_require_file(args.config, "config")) as fh:
            cfg = GuidanceConfig.parse(fh.read(), cfg)
    overrides = {k: getattr(args, f"cfg_{k}") for k in CONFIG_FLAGS if getattr(args, f"cfg_{k}") is not None}
    if getattr(args, "ablation", None):
        overrides["ablation"] = args.ablation
    return GuidanceConfig.from_mapping(overrides, cfg)


# ---- subcommands ----------------------------------------------------------

def cmd_scenes(args) -> int:
    from .toy_model.scenes import make_manifest, scene_from_spec_line

    out = OutputDir(args.out, args.force, "scenes")
    lines = make_manifest(args.n, args.seed, args.max_count)
    with open(out.claim("manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if args.layouts:
        for i, line in enumerate(lines):
            scene = scene_from_spec_line(line)
            with open(out.claim(f"layouts/layout_{i:04d}.txt"), "w") as fh:
                fh.write(f"# scene {line}\n" + scene.layout.to_text())
    print(out.root / "manifest.txt")
    return 0


def cmd_train(args) -> int:
    from .toy_model.checkpoint import save_checkpoint
    from .toy_model.scenes import read_manifest, scene_from_spec_line
    from .toy_model.training import train, write_curve_csv
    from .toy_model.vocab import DEFAULT_VOCAB

    lines = read_manifest(_require_file(args.manifest, "manifest"))
    try:
        scenes = [scene_from_spec_line(ln) for ln in lines]
    except ValueError as exc:
        raise UsageError(f"{args.manifest}: {exc}") from None
    out = OutputDir(args.out, args.force, "train")
    ckpt, curve_path = out.claim("model.npz"), out.claim("loss.csv")
    result = train(scenes, epochs=args.epochs, lr=args.lr, cond_dropout=args.cond_dropout,
                   batch_size=args.batch_size, seed=args.seed, log_every=args.log_every)
    save_checkpoint(ckpt, result.model, result.schedule, DEFAULT_VOCAB)
    write_curve_csv(curve_path, result.curve)
    print(ckpt)
    return 0


def cmd_generate(args) -> int:
    from .guidance import generate
    from .imageio import write_png, write_ppm
    from .losses import write_trace_csv

    model, schedule, vocab = _load_model(args.checkpoint)
    layout = _load_layout(args.layout)
    config = _effective_config(args)
    seeds = parse_seeds(args.seeds)
    guided = not args.no_guidance and config.optim_steps > 0 and bool(layout.phrases)
    out = OutputDir(args.out, args.force, "generate")
    targets = {s: (out.claim(f"seed{s}.ppm"), out.claim(f"trace_seed{s}.csv") if guided else None) for s in seeds}
    with open(out.claim("config.txt"), "w") as fh:
        fh.write(config.to_text())
    for seed, (img_path, trace_path) in targets.items():
        cfg = config.replace(seed=seed)
        dump = str(out.root / f"attn_seed{seed}") if guided and not args.no_dump else None
        result = generate(layout.prompt_tokens, layout, cfg, model, schedule, vocab,
                          guidance=not args.no_guidance, dump_dir=dump)
        write_ppm(img_path, result.image.numpy())
        if args.png:
            write_png(out.claim(f"seed{seed}.png"), result.image.numpy())
        if trace_path is not None:
            write_trace_csv(trace_path, [r.as_tuple() for r in result.trace])
        for w in result.warnings:
            log.warning("seed %d: %s", seed, w)
        log.info("seed %d -> %s", seed, img_path)
    return 0


def _gather_eval_items(args):
    from .evaluation import assign_detections, detect, phrase_attributes, read_detections_csv
    from .imageio import read_ppm

    layouts = [_load_layout(p) for p in args.layouts]
    ids = [str(i) for i in range(len(layouts))]
    if args.images:
        if len(args.images) != len(layouts):
            raise UsageError(f"{len(args.images)} images but {len(layouts)} layouts")
        records = []
        items = []
        for image_id, path, layout in zip(ids, args.images, layouts):
            per_phrase = assign_detections(detect(read_ppm(_require_file(path, "image"))), phrase_attributes(layout))
            items.append((image_id, layout, per_phrase))
            records += [(image_id, idx, d) for idx, dets in per_phrase.items() for d in dets]
        return items, records
    dets = read_detections_csv(_require_file(args.detections, "detections"))
    unknown = set(dets) - set(ids)
    if unknown:
        raise UsageError(f"detections reference unknown image ids {sorted(unknown)} (expected 0..{len(ids) - 1})")
    return [(i, layout, dets.get(i, {})) for i, layout in zip(ids, layouts)], None


def cmd_eval(args) -> int:
    from .evaluation import evaluate, write_detections_csv

    if bool(args.images) == bool(args.detections):
        raise UsageError("pass exactly one of --images or --detections")
    items, records = _gather_eval_items(args)
    out = OutputDir(args.out, args.force, "eval")
    paths = (out.claim("metrics.json"), out.claim("metrics.csv"))
    det_path = out.claim("detections.csv") if records is not None else None
    report = evaluate(items)
    report.write(*paths)
    if det_path is not None:
        write_detections_csv(det_path, records)
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "rows"}, indent=2))
    return 0


def cmd_ablate(args) -> int:
    from .experiments import comparison_table, format_table, run_grid, score
    from .losses import Ablation

    model, schedule, vocab = _load_model(args.checkpoint)
    layouts = [(Path(p).stem, _load_layout(p)) for p in args.layouts]
    config = _effective_config(args)
    out = OutputDir(args.out, args.force, "ablate")
    table_path, json_path = out.claim("ablation.csv"), out.claim("ablation.json")
    modes = [None, Ablation.R, Ablation.RM, Ablation.RMREG]
    records = run_grid(layouts, parse_seeds(args.seeds), modes, config, model, schedule, vocab)
    reports = score(records, dict(layouts))
    rows = comparison_table(reports)
    with open(table_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    with open(json_path, "w") as fh:
        json.dump({m: r.to_dict() for m, r in reports.items()}, fh, indent=2, sort_keys=True)
    print(format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boxguide", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("scenes", help="write a random dataset manifest")
    common(p)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-count", type=int, default=4)
    p.add_argument("--layouts", action="store_true", help="also write one layout file per scene")
    p.set_defaults(func=cmd_scenes)

    p = sub.add_parser("train", help="train the toy denoiser")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=24)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--cond-dropout", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images for a layout")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layout", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--no-guidance", action="store_true")
    p.add_argument("--no-dump", action="store_true", help="skip attention dumps")
    p.add_argument("--png", action="store_true", help="also write PNG previews")
    _add_config_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score images or a detections file against layouts")
    common(p)
    p.add_argument("--layouts", nargs="+", required=True)
    p.add_argument("--images", nargs="+")
    p.add_argument("--detections")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare unguided, R, R+M and R+M+Reg")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layouts", nargs="+", required=True)
    p.add_argument("--seeds", default="0")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"boxguide {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"boxguide {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
