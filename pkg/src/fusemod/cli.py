"""Command line front end.

Subcommands: annotate, synth, train, infer, eval, bench. Every tunable is a
config key as well as a flag; precedence is flag > FUSEMOD_SEED (seed only)
> config file > built-in default. Config files are INI, one section per
subcommand, unknown sections and keys rejected.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.
"""

import argparse
import configparser
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import report as rpt
from .annotation import DEFAULT_THRESHOLD, MotionLabel, export_dataset, label_objects, load_drive
from .errors import ConfigError, DataError, FusemodError, UndefinedIoU
from .evalbench import MOVING, BenchReport, ConfusionMatrix, bench_fps, iou, miou
from .kitti_ingest import load_mask_file, save_mask_file
from .models import (
    ENCODER_PROFILES,
    FusionNet,
    Hyper,
    build_model,
    parse_plan,
    read_manifest,
    train,
)
from .models.data import ManifestEntry, assemble_streams
from .synth import DegradeSpec, SceneObject, SceneSpec, write_scene

PLAN_ALIASES = {
    "baseline": "rgb",
    "two": "rgb + rgbflow",
    "three": "rgb + rgbflow + lidarflow",
}


@dataclass(frozen=True)
class Opt:
    name: str
    type: type
    default: object
    help: str
    flag: bool = False  # boolean, set by presence
    required: bool = False


def _workers_opt() -> Opt:
    return Opt("workers", int, os.cpu_count() or 1,
               "upper bound on internal parallelism")


OPTIONS: Dict[str, List[Opt]] = {
    "annotate": [
        Opt("root", str, None, "directory scanned recursively for drives"),
        Opt("out", str, None, "output dataset directory", required=True),
        Opt("threshold", float, DEFAULT_THRESHOLD, "moving-object speed threshold, m/s"),
        Opt("split_seed", int, 0, "seed for the drive-level train/val split"),
        _workers_opt(),
    ],
    "synth": [
        Opt("out", str, None, "output dataset directory", required=True),
        Opt("seed", int, 0, "scene seed"),
        Opt("frames", int, 12, "frames to render"),
        Opt("height", int, 64, "image height, px"),
        Opt("width", int, 96, "image width, px"),
        Opt("objects", int, 3, "object count (alternating moving/parked)"),
        Opt("max_speed", int, 3, "max |vx| of moving objects, px/frame"),
        Opt("lidar_fraction", float, 0.5, "valid-pixel fraction of the sparse flow"),
        Opt("split", str, "train", "split name written to the manifest"),
        Opt("append", bool, False, "append to an existing manifest", flag=True),
        Opt("gain", float, 1.0, "low-light gain on rgb, (0,1]"),
        Opt("gamma", float, 1.0, "low-light gamma on rgb, >= 1"),
        Opt("noise_sigma", float, 0.0, "additive rgb noise sigma"),
        Opt("flow_noise_sigma", float, 0.0, "dense-flow noise sigma, px"),
        Opt("flow_dropout", float, 0.0, "dense-flow dropout fraction, [0,1)"),
        _workers_opt(),
    ],
    "train": [
        Opt("manifest", str, None, "dataset manifest path", required=True),
        Opt("out", str, None, "checkpoint output path", required=True),
        Opt("plan", str, "rgb + rgbflow + lidarflow", "fusion plan"),
        Opt("profile", str, "tiny", "encoder profile: tiny or full"),
        Opt("epochs", int, 200, "training epochs"),
        Opt("batch", int, 6, "batch size"),
        Opt("lr", float, 1e-4, "learning rate"),
        Opt("l2", float, 5e-4, "weight decay on conv weights"),
        Opt("seed", int, 0, "init and shuffle seed"),
        Opt("checkpoint_every", int, 0, "checkpoint cadence in epochs, 0 disables"),
        Opt("report_dir", str, None, "write training records + figure here"),
        _workers_opt(),
    ],
    "infer": [
        Opt("checkpoint", str, None, "trained checkpoint path", required=True),
        Opt("manifest", str, None, "dataset manifest path", required=True),
        Opt("out", str, None, "predicted-mask output directory", required=True),
        Opt("split", str, "", "restrict to one split; empty = all rows"),
        _workers_opt(),
    ],
    "eval": [
        Opt("gt", str, None, "ground-truth mask directory", required=True),
        Opt("pred", str, None,
            "prediction dirs, comma separated, each DIR or LABEL=DIR",
            required=True),
        Opt("report_dir", str, None, "write metric records + figure here"),
        _workers_opt(),
    ],
    "bench": [
        Opt("plans", str, "baseline,two,three",
            "comma-separated plans; aliases: " + ", ".join(
                f"{k} = {v}" for k, v in PLAN_ALIASES.items())),
        Opt("height", int, 256, "input height, px"),
        Opt("width", int, 1224, "input width, px"),
        Opt("warmup", int, 10, "untimed warmup iterations"),
        Opt("iters", int, 100, "timed iterations"),
        Opt("profile", str, "tiny", "encoder profile: tiny or full"),
        Opt("seed", int, 0, "model init seed"),
        Opt("report_dir", str, None, "write bench records + figure here"),
        _workers_opt(),
    ],
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_config_value(opt: Opt, raw: str):
    if opt.flag:
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"config key {opt.name!r}: not a boolean: {raw!r}")
    try:
        return opt.type(raw)
    except ValueError as err:
        raise ConfigError(f"config key {opt.name!r}: {err}") from err


def _read_config(path: str, command: str) -> Dict[str, object]:
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from err
    except configparser.Error as err:
        raise ConfigError(f"malformed config file: {err}") from err
    for section in parser.sections():
        if section not in OPTIONS:
            raise ConfigError(f"unknown config section [{section}]")
    if command not in parser:
        return {}
    by_name = {o.name: o for o in OPTIONS[command]}
    values: Dict[str, object] = {}
    for key, raw in parser[command].items():
        if key not in by_name:
            raise ConfigError(f"unknown config key [{command}] {key}")
        values[key] = _parse_config_value(by_name[key], raw)
    return values


def _resolve(args: argparse.Namespace, command: str) -> Dict[str, object]:
    opts = OPTIONS[command]
    values = {o.name: o.default for o in opts}
    if args.config:
        values.update(_read_config(args.config, command))
    env_seed = os.environ.get("FUSEMOD_SEED")
    if env_seed is not None and "seed" in values:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"FUSEMOD_SEED must be an integer, got {env_seed!r}")
    for o in opts:
        given = getattr(args, o.name)
        if given is not None:
            values[o.name] = given
    for o in opts:
        if o.required and values[o.name] is None:
            raise ConfigError(f"{command}: {o.name.replace('_', '-')} is required")
    if values.get("workers") is not None and values["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    return values


def _add_command(sub, name: str, summary: str):
    keys = ", ".join(o.name for o in OPTIONS[name])
    p = sub.add_parser(
        name,
        help=summary,
        description=summary,
        epilog=f"config file section: [{name}]; keys: {keys}",
    )
    for o in OPTIONS[name]:
        flag = "--" + o.name.replace("_", "-")
        if o.flag:
            p.add_argument(flag, dest=o.name, action="store_true", default=None,
                           help=f"{o.help} [config key: {o.name}]")
        else:
            p.add_argument(flag, dest=o.name, type=o.type, default=None,
                           help=f"{o.help} [config key: {o.name}; "
                                f"default: {o.default}]")
    return p


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusemod",
        description="Camera + LiDAR moving-object detection toolkit",
    )
    parser.add_argument("--config", help="INI config file; flags override it")
    sub = parser.add_subparsers(dest="command")
    p = _add_command(sub, "annotate", "Label drives and export masks + manifest")
    p.add_argument("drives", nargs="*", help="drive directories (override --root)")
    _add_command(sub, "synth", "Render a synthetic scene dataset")
    _add_command(sub, "train", "Train a fusion model on a manifest")
    _add_command(sub, "infer", "Write predicted masks for manifest rows")
    _add_command(sub, "eval", "Score predicted masks against ground truth")
    _add_command(sub, "bench", "Measure inference fps per fusion plan")
    return parser


# ---------------------------------------------------------------------------
# annotate


def _discover_drives(root: str) -> List[Path]:
    base = Path(root)
    if not base.is_dir():
        raise DataError(f"not a directory: {root}")
    found = sorted(p.parent for p in base.rglob("tracklet_labels.xml"))
    if not found:
        raise DataError(f"no drives under {root}")
    return found


def cmd_annotate(cfg: Dict[str, object], drives: Sequence[str]) -> int:
    paths = [Path(d) for d in drives] if drives else _discover_drives(cfg["root"]) \
        if cfg["root"] else None
    if not paths:
        raise ConfigError("annotate: give drive paths or set root")
    loaded = [load_drive(p) for p in paths]
    threshold = float(cfg["threshold"])
    for drive in loaded:
        labels = label_objects(
            drive.camera, drive.oxts, drive.timestamps, drive.tracklets,
            drive.image_size, threshold,
        )
        flat = [l for frame in labels for l in frame]
        moving = sum(1 for l in flat if l.label is MotionLabel.MOVING)
        print(f"{drive.name}: frames {drive.n_frames} "
              f"moving {moving} static {len(flat) - moving}")
    manifest = export_dataset(
        loaded, cfg["out"], threshold=threshold, split_seed=int(cfg["split_seed"]),
    )
    print(f"wrote {manifest.n_frames} rows to {manifest.path}")
    return 0


# ---------------------------------------------------------------------------
# synth


def _place_objects(rng: np.random.Generator, cfg: Dict[str, object]) -> List[SceneObject]:
    height, width = int(cfg["height"]), int(cfg["width"])
    frames, max_speed = int(cfg["frames"]), int(cfg["max_speed"])
    objects = []
    for i in range(int(cfg["objects"])):
        moving = i % 2 == 0
        for _ in range(500):
            w = int(rng.integers(6, max(7, width // 4)))
            h = int(rng.integers(6, max(7, height // 4)))
            if moving:
                vx = int(rng.integers(1, max_speed + 1)) * (1 if rng.random() < 0.5 else -1)
                vy = int(rng.integers(-1, 2))
            else:
                vx = vy = 0
            x = int(rng.integers(0, width - w))
            y = int(rng.integers(0, height - h))
            span = frames - 1
            if (0 <= x + vx * span and x + w + vx * span <= width
                    and 0 <= y + vy * span and y + h + vy * span <= height):
                objects.append(SceneObject(x=x, y=y, width=w, height=h, vx=vx, vy=vy))
                break
        else:
            raise ConfigError("synth: cannot place objects inside the frame; "
                              "reduce objects, speed, or frame count")
    return objects


def cmd_synth(cfg: Dict[str, object]) -> int:
    rng = np.random.default_rng([int(cfg["seed"]), 7])
    spec = SceneSpec(
        seed=int(cfg["seed"]),
        height=int(cfg["height"]),
        width=int(cfg["width"]),
        objects=_place_objects(rng, cfg),
        lidar_fraction=float(cfg["lidar_fraction"]),
        frames=int(cfg["frames"]),
    )
    degrade = None
    if (cfg["gain"], cfg["gamma"], cfg["noise_sigma"],
            cfg["flow_noise_sigma"], cfg["flow_dropout"]) != (1.0, 1.0, 0.0, 0.0, 0.0):
        degrade = DegradeSpec(
            gain=float(cfg["gain"]),
            gamma=float(cfg["gamma"]),
            noise_sigma=float(cfg["noise_sigma"]),
            flow_noise_sigma=float(cfg["flow_noise_sigma"]),
            flow_dropout=float(cfg["flow_dropout"]),
        )
    manifest = write_scene(
        cfg["out"], spec, split=str(cfg["split"]), degrade=degrade,
        append=bool(cfg["append"]),
    )
    print(f"wrote {int(cfg['frames'])} frames to {manifest}")
    return 0


# ---------------------------------------------------------------------------
# train


def _encoder_spec(profile: str):
    try:
        return ENCODER_PROFILES[profile]
    except KeyError:
        raise ConfigError(
            f"unknown encoder profile {profile!r}; "
            f"choose from {', '.join(sorted(ENCODER_PROFILES))}")


def cmd_train(cfg: Dict[str, object]) -> int:
    plan = parse_plan(str(cfg["plan"]))
    net = build_model(plan, spec=_encoder_spec(str(cfg["profile"])),
                      seed=int(cfg["seed"]))
    entries = read_manifest(cfg["manifest"])
    out = Path(cfg["out"])
    hyper = Hyper(
        epochs=int(cfg["epochs"]),
        batch=int(cfg["batch"]),
        lr=float(cfg["lr"]),
        l2=float(cfg["l2"]),
        seed=int(cfg["seed"]),
        checkpoint_every=int(cfg["checkpoint_every"]),
        checkpoint_path=out if int(cfg["checkpoint_every"]) else None,
    )
    history = train(net, entries, hyper, log=print)
    out.parent.mkdir(parents=True, exist_ok=True)
    net.save(out, scalars={"epoch": float(hyper.epochs)})
    print(f"saved checkpoint to {out}")
    if cfg["report_dir"]:
        for path in rpt.write_training_report(history, cfg["report_dir"]):
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# infer


def _usable_rows(plan, entries: List[ManifestEntry]) -> List[Tuple[ManifestEntry, Optional[ManifestEntry]]]:
    rows = []
    for i, entry in enumerate(entries):
        entry_t1 = None
        if plan.temporal:
            if i + 1 >= len(entries) or entries[i + 1].split != entry.split:
                continue
            entry_t1 = entries[i + 1]
        rows.append((entry, entry_t1))
    return rows


def cmd_infer(cfg: Dict[str, object]) -> int:
    net, _ = FusionNet.load(cfg["checkpoint"])
    entries = read_manifest(cfg["manifest"])
    if cfg["split"]:
        entries = [e for e in entries if e.split == cfg["split"]]
    rows = _usable_rows(net.plan, entries)
    if not rows:
        raise DataError("no usable manifest rows for this plan and split")
    out = Path(cfg["out"])
    manifest_dir = Path(cfg["manifest"]).resolve().parent
    for i, (entry, entry_t1) in enumerate(rows):
        streams = [s[None] for s in assemble_streams(net.plan, entry, entry_t1)]
        mask = net.predict_mask(streams)[0]
        # mirror the manifest's mask layout so eval can pair files by path
        rel = os.path.relpath(Path(entry.mask).resolve(), manifest_dir)
        if rel.startswith(".."):
            rel = f"{i:06d}_{Path(entry.mask).name}"
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        save_mask_file(path, mask)
        print(f"{path}\t{int(mask.sum())}\t{mask.size}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _parse_pred_spec(spec: str) -> List[Tuple[str, Path]]:
    preds = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            label, _, path = part.partition("=")
        else:
            label, path = Path(part).name, part
        preds.append((label, Path(path)))
    if not preds:
        raise ConfigError("eval: no prediction directories given")
    return preds


def _score_dir(gt_dir: Path, pred_dir: Path) -> ConfusionMatrix:
    # predictions drive the pairing: every predicted mask needs a ground-truth
    # mask at the same path relative to its root
    pred_files = sorted(pred_dir.rglob("*.png"))
    if not pred_files:
        raise DataError(f"no predicted masks under {pred_dir}")
    cm = ConfusionMatrix()
    for pred_path in pred_files:
        gt_path = gt_dir / pred_path.relative_to(pred_dir)
        if not gt_path.is_file():
            raise DataError(f"missing ground truth for {pred_path.name}: {gt_path}")
        cm.update(load_mask_file(pred_path), load_mask_file(gt_path))
    return cm


def cmd_eval(cfg: Dict[str, object]) -> int:
    gt_dir = Path(cfg["gt"])
    rows = []
    for label, pred_dir in _parse_pred_spec(str(cfg["pred"])):
        cm = _score_dir(gt_dir, pred_dir)
        try:
            moving = iou(cm, MOVING)
            mean = miou(cm)
        except UndefinedIoU:
            moving = mean = float("nan")
        rows.append(rpt.MetricRow(label=label, miou=mean, moving_iou=moving))
    print(rpt.metric_table(rows), end="")
    if cfg["report_dir"]:
        for path in rpt.write_metric_report(rows, cfg["report_dir"]):
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# bench


def cmd_bench(cfg: Dict[str, object]) -> int:
    reports: List[BenchReport] = []
    for token in str(cfg["plans"]).split(","):
        token = token.strip()
        if not token:
            continue
        plan = parse_plan(PLAN_ALIASES.get(token, token))
        net = build_model(plan, spec=_encoder_spec(str(cfg["profile"])),
                          seed=int(cfg["seed"]))
        reports.append(bench_fps(
            net,
            (int(cfg["height"]), int(cfg["width"])),
            warmup=int(cfg["warmup"]),
            iters=int(cfg["iters"]),
            label=token if token in PLAN_ALIASES else plan.text,
        ))
    if not reports:
        raise ConfigError("bench: no plans given")
    print(rpt.bench_table(reports), end="")
    if cfg["report_dir"]:
        for path in rpt.write_bench_report(reports, cfg["report_dir"]):
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        cfg = _resolve(args, args.command)
        if args.command == "annotate":
            return cmd_annotate(cfg, args.drives)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "infer":
            return cmd_infer(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        return cmd_bench(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except (FusemodError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
