"""Command-line front end: synth, train, detect, eval."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import ArgumentError, ClhadError, DataError, FormatError
from .evalmetrics import (AucMatrix, anomaly_map, eval_report, load_anomaly_map, roc_triplet,
                          save_anomaly_map, write_report, write_roc_csv)
from .hsi_io import (GroundTruthMask, SceneSpec, load_cube, load_mask, mask_path_for, resample_bands,
                     save_cube, save_mask, synth_stream)
from .model import ModelState
from .trainer import CheckpointSet, TaskStream, TrainConfig, auc_matrix, reference_aucs, train

log = logging.getLogger("clhad")


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.stem + ".manifest.json")


def _write_manifest(command: str, out: Path, *, inputs, outputs, seed=None, config_hash=None,
                    started: float) -> Path:
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_clock_s": round(time.time() - started, 3),
    }
    path = _manifest_path(out)
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    started = time.time()
    if args.tasks < 1:
        raise ArgumentError(f"--tasks must be >= 1, got {args.tasks}")
    spec = SceneSpec(size=args.size, bands=args.bands, n_endmembers=args.endmembers,
                     anomaly_fraction=args.anomaly_frac, noise_sigma=args.noise, seed=args.seed,
                     name="task")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for cube, mask in synth_stream(args.tasks, spec):
        cube_path = save_cube(cube, out / f"{cube.name}.bsq")
        written += [cube_path, save_mask(mask, mask_path_for(cube_path), name=f"{cube.name}_gt")]
    _write_manifest("synth", out, inputs=[], outputs=written, seed=args.seed, started=started)
    print(f"wrote {args.tasks} scene(s) to {out}")
    return 0


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.mode:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seed"] = args.seed
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def cmd_train(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    stream = TaskStream.from_paths(args.tasks)
    out = Path(args.out)
    resume = None
    if args.resume and (out / "checkpoints.json").exists():
        resume = CheckpointSet.load(out)
        log.info("resuming after %d task(s)", len(resume.checkpoints))
    result = train(stream, cfg, resume=resume)
    result.save(out)
    outputs = [out / "checkpoints.json", out / "train_log.jsonl"]
    if cfg.mode != "joint" and all(m is not None for m in stream.masks):
        reference = reference_aucs(stream, cfg) if args.reference else None
        matrix = auc_matrix(result, stream, cfg, reference)
        doc = {**matrix.to_json(), "tasks": stream.names, "config_hash": cfg.config_hash()}
        (out / "auc_matrix.json").write_text(json.dumps(doc, indent=2) + "\n")
        outputs.append(out / "auc_matrix.json")
    _write_manifest("train", out, inputs=args.tasks, outputs=outputs, seed=cfg.seed,
                    config_hash=cfg.config_hash(), started=started)
    print(f"trained {len(result.checkpoints)} checkpoint(s) into {out}")
    return 0


def cmd_detect(args) -> int:
    started = time.time()
    ck = Path(args.checkpoint)
    if not ck.with_suffix(".bin").exists():
        raise FormatError(f"checkpoint {ck} not found")
    state = ModelState.load(ck)
    cube = load_cube(args.input, normalize=True)
    bands = state.input_dim // 2
    if cube.bands > bands:
        cube = resample_bands(cube, bands)
    amap = anomaly_map(cube, state, args.window)
    out = save_anomaly_map(amap, args.out, name=cube.name)
    _write_manifest("detect", out, inputs=[ck, args.input], outputs=[out, out.with_suffix(".json")],
                    seed=state.seed, started=started)
    print(f"anomaly map written to {out}")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    maps, gts = args.maps or [], args.gts or []
    if len(maps) != len(gts):
        raise ArgumentError(f"got {len(maps)} map(s) but {len(gts)} ground truth file(s)")
    triplets = {}
    roc_dir = Path(args.roc_dir) if args.roc_dir else None
    for map_path, gt_path in zip(maps, gts):
        scores = load_anomaly_map(map_path)
        gt: GroundTruthMask = load_mask(gt_path)
        name = Path(map_path).stem
        if name in triplets:
            raise DataError(f"duplicate map name {name!r}")
        triplets[name] = roc_triplet(scores, gt)
        if roc_dir is not None:
            write_roc_csv(triplets[name], roc_dir / f"{name}_roc.csv")
    matrix, config_hash = None, None
    if args.auc_matrix:
        doc = json.loads(Path(args.auc_matrix).read_text())
        matrix = AucMatrix.from_json(doc)
        config_hash = doc.get("config_hash") if isinstance(doc, dict) else None
    out = write_report(eval_report(triplets, matrix, config_hash), args.out)
    inputs = [*maps, *gts] + ([args.auc_matrix] if args.auc_matrix else [])
    _write_manifest("eval", out, inputs=inputs, outputs=[out], config_hash=config_hash, started=started)
    print(f"report written to {out}")
    return 0


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clhad", description="Continual hyperspectral anomaly detection toolkit.")
    parser.add_argument("--version", action="version", version=f"clhad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic cube/mask pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--tasks", type=int, default=1)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--bands", type=int, default=64)
    p.add_argument("--anomaly-frac", type=float, default=0.01)
    p.add_argument("--endmembers", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.003)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train over a stream of cubes")
    p.add_argument("--tasks", nargs="+", required=True, help="cube paths (.bsq or sidecar .json), in order")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--mode", choices=["continual", "fine_tune", "joint", "single_task"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true", help="continue from checkpoints already in --out")
    p.add_argument("--reference", action="store_true",
                   help="also train single-task references so the AUC matrix supports FWT")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score a cube with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=3)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="ROC triplets and continual metrics")
    p.add_argument("--maps", nargs="*")
    p.add_argument("--gts", nargs="*")
    p.add_argument("--auc-matrix")
    p.add_argument("--roc-dir", help="write one tau,pd,pf CSV per map here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CLHAD_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ClhadError as exc:
        print(f"clhad: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError) as exc:
        print(f"clhad: error: {exc}", file=sys.stderr)
        return FormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
