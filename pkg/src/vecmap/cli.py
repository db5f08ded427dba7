"""Command line entry points.

Verbs:
  synth   generate a synthetic dataset (scenes + manifest)
  train   fit a model on a dataset's train split
  infer   run a checkpoint over a split and write prediction files
  eval    score predictions against ground truth
  ablate  run the fusion/interaction grid over several seeds
  render  draw a scene (SVG) or dump a feature grid (PGM)

Exit codes: 0 success, 2 configuration error, 3 training divergence,
1 anything else.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, apply_overrides, default_config, load_config
from .fileio import (
    FormatError,
    open_dataset,
    read_predictions,
    write_manifest,
    write_predictions,
    write_scene,
)
from .mapeval import evaluate
from .model import MapModel
from .render import grid_pgm, render_svg
from .scenes import build_scene, dataset_projections, scene_seeds
from .trainer import TrainingDiverged, train_model

ABLATION_GRID = (
    ("concat", "single"),
    ("coupled", "single"),
    ("concat", "coupled"),
    ("coupled", "coupled"),
)


def _parse_set(pairs: list[str]) -> dict:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        key, _, raw = p.partition("=")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif base is not None:
        cfg = base
    else:
        cfg = default_config()
    if args.set:
        apply_overrides(cfg, _parse_set(args.set))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg


# ------------------------------------------------------------------- verbs


def _cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    root = Path(args.out)
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    counts = {"train": args.train, "test": args.test}
    total = args.train + args.test
    if total < 1:
        raise ConfigError("synth needs at least one scene")
    cam_proj, lidar_proj = dataset_projections(cfg.seed, cfg.model.channels)
    seeds = scene_seeds(cfg.seed, total)

    specs = []
    i = 0
    for split in ("train", "test"):
        for k in range(counts[split]):
            specs.append((i, f"{split}_{k:04d}", split))
            i += 1

    def build(spec):
        idx, sid, split = spec
        scene = build_scene(sid, cfg.model, cfg.scene, seeds[idx], cam_proj, lidar_proj)
        rel = f"scenes/{sid}.vmsc"
        write_scene(root / rel, scene)
        return {"scene_id": sid, "split": split, "file": rel, "seed": seeds[idx]}

    if cfg.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            rows = list(ex.map(build, specs))
    else:
        rows = [build(s) for s in specs]
    write_manifest(root, cfg, cfg.seed, rows)
    print(f"wrote {len(rows)} scenes ({args.train} train / {args.test} test) to {root}")
    return 0


def _cmd_train(args) -> int:
    ds = open_dataset(args.data)
    cfg = _resolve_config(args, base=ds.config)
    scenes = list(ds.scenes("train"))
    model = MapModel(cfg)
    summary = train_model(model, scenes, cfg, args.out, quiet=args.quiet)
    print(f"final loss {summary['final_loss']:.4f}; checkpoint at {summary['checkpoint']}")
    return 0


def _load_model(checkpoint: str) -> tuple[MapModel, dict]:
    from .config import config_from_dict
    from .fileio import load_checkpoint

    state, header = load_checkpoint(checkpoint)
    meta = header.get("meta", {})
    if "config" not in meta:
        raise FormatError(f"{checkpoint}: checkpoint carries no config")
    cfg = config_from_dict(meta["config"])
    if cfg.model_hash() != header.get("model_hash"):
        raise FormatError(f"{checkpoint}: config/hash mismatch")
    model = MapModel(cfg)
    model.load_state_dict(state)
    return model, meta


def _cmd_infer(args) -> int:
    ds = open_dataset(args.data)
    model, _ = _load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for entry in ds.entries(args.split):
        scene = ds.load(entry)
        preds = model.decode(model.forward(scene.cam, scene.lidar))
        write_predictions(out / f"{scene.scene_id}.json", scene.scene_id, preds)
        n += 1
    print(f"wrote predictions for {n} {args.split} scenes to {out}")
    return 0


def _collect_pairs(ds, pred_dir: Path, split: str) -> list:
    entries = ds.entries(split)
    expected = {e["scene_id"] for e in entries}
    found = {p.stem for p in pred_dir.glob("*.json")}
    if expected != found:
        missing = sorted(expected - found)[:5]
        extra = sorted(found - expected)[:5]
        raise FormatError(
            f"prediction set does not match the {split} split: "
            f"missing {missing}, unexpected {extra}"
        )
    pairs = []
    for entry in entries:
        sid, preds = read_predictions(pred_dir / f"{entry['scene_id']}.json")
        if sid != entry["scene_id"]:
            raise FormatError(f"{sid}: file name and scene_id disagree")
        scene = ds.load(entry)
        pairs.append((preds, scene.gt_map))
    return pairs


def _cmd_eval(args) -> int:
    ds = open_dataset(args.data)
    cfg = _resolve_config(args, base=ds.config)
    pairs = _collect_pairs(ds, Path(args.pred), args.split)
    report = evaluate(pairs, cfg.eval, workers=cfg.workers)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    print(report.to_text(), end="")
    return 0


def _cmd_ablate(args) -> int:
    ds = open_dataset(args.data)
    cfg = _resolve_config(args, base=ds.config)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0, 1, 2]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_scenes = list(ds.scenes("train"))
    test_entries = ds.entries("test")
    test_scenes = [ds.load(e) for e in test_entries]

    runs = []
    for fusion, interaction in ABLATION_GRID:
        for seed in seeds:
            variant = _resolve_config(args, base=ds.config)
            variant.ablation.fusion = fusion
            variant.ablation.interaction = interaction
            variant.seed = seed
            run_dir = out / f"run_{fusion}_{interaction}_s{seed}"
            model = MapModel(variant)
            train_model(model, train_scenes, variant, run_dir, quiet=True)
            pairs = []
            for scene in test_scenes:
                preds = model.decode(model.forward(scene.cam, scene.lidar))
                pairs.append((preds, scene.gt_map))
            report = evaluate(pairs, variant.eval, workers=variant.workers)
            row = {
                "fusion": fusion,
                "interaction": interaction,
                "seed": seed,
                "map_hard": report.map_for("hard"),
                "map_easy": report.map_for("easy"),
            }
            runs.append(row)
            print(
                f"fusion={fusion:<7} interaction={interaction:<7} seed={seed}  "
                f"hard {row['map_hard']:.4f}  easy {row['map_easy']:.4f}"
            )

    medians = {}
    for fusion, interaction in ABLATION_GRID:
        key = f"{fusion}+{interaction}"
        sel = [r for r in runs if r["fusion"] == fusion and r["interaction"] == interaction]
        medians[key] = {
            "map_hard": statistics.median(r["map_hard"] for r in sel),
            "map_easy": statistics.median(r["map_easy"] for r in sel),
        }
    doc = {"seeds": seeds, "runs": runs, "medians": medians}
    (out / "ablation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print("medians over seeds:")
    for key, m in medians.items():
        print(f"  {key:<18} hard {m['map_hard']:.4f}  easy {m['map_easy']:.4f}")
    return 0


def _cmd_render(args) -> int:
    ds = open_dataset(args.data)
    cfg = _resolve_config(args, base=ds.config)
    entry = next((e for e in ds.entries() if e["scene_id"] == args.scene), None)
    if entry is None:
        raise FormatError(f"scene {args.scene!r} not in dataset")
    scene = ds.load(entry)
    out = Path(args.out)
    if args.grid:
        feats = scene.cam if args.grid == "camera" else scene.lidar
        out.write_bytes(grid_pgm(feats))
    else:
        preds = []
        if args.pred:
            _, preds = read_predictions(Path(args.pred) / f"{scene.scene_id}.json")
        out.write_text(render_svg(scene.gt_map, preds, cfg.model))
    print(f"wrote {out}")
    return 0


# ------------------------------------------------------------------ parser


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vecmap", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults to the dataset's)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override, e.g. train.lr=0.001")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--test", type=int, default=50)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="train on a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="run a checkpoint over a split")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("eval", help="score predictions")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", help="also write the report as JSON")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the fusion/interaction grid")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", help="comma separated, default 0,1,2")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("render", help="draw a scene or dump a grid")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--pred", help="prediction dir for the right panel")
    p.add_argument("--grid", choices=("camera", "lidar"),
                   help="write this modality as PGM instead of the SVG map")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_render)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 3
    except (FormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
