"""Command-line entry point: ``splatfuse <command> ...``.

Exit status is 0 on success, 1 on a domain error (message on stderr) and 2 on
a usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingAsset, SplatfuseError

log = logging.getLogger("splatfuse")


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict = field(default_factory=dict)
    seed: int = 0
    input_hash: str = ""
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.to_json() + "\n")
        os.replace(tmp, path)


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def hash_inputs(paths):
    """sha256 over the relative names and bytes of every file under ``paths``."""
    h = hashlib.sha256()
    for root in paths:
        if root is None:
            continue
        root = Path(root)
        files = sorted(p for p in root.rglob("*") if p.is_file()) if root.is_dir() else [root]
        for p in files:
            rel = p.relative_to(root).as_posix() if root.is_dir() else p.name
            h.update(rel.encode() + b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _config(args):
    from .config import load_config
    from .rasterizer import default_workers

    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "workers", None):
        overrides.append(f"workers={args.workers}")
    elif "SPLATFUSE_WORKERS" in os.environ:
        overrides.append(f"workers={default_workers()}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(getattr(args, "config", None), overrides)


def _frame(frames, index):
    if not 0 <= index < len(frames):
        raise SplatfuseError(f"frame {index} out of range (scene has {len(frames)} frames)")
    return frames[index]


def cmd_project(args, manifest):
    from .io import load_clouds, load_frames, write_image, write_mask
    from .pointcloud import fuse, project_pseudo_image
    from .shift import shift_pose

    if args.radius < 0:
        raise SplatfuseError("--radius must be >= 0")
    frames, _ = load_frames(args.scene)
    frame = _frame(frames, args.frame)
    static, dynamic = load_clouds(args.scene)
    cam = shift_pose(frame.camera, args.shift_meters)
    pseudo, coverage = project_pseudo_image(fuse(static, dynamic, args.frame), cam, args.radius)
    out = Path(args.out)
    cov_path = out.with_name(out.stem + "_coverage" + (out.suffix or ".png"))
    write_image(out, pseudo)
    write_mask(cov_path, coverage)
    manifest.input_hash = hash_inputs([args.scene])
    manifest.outputs = [str(out), str(cov_path)]
    return out.with_name(out.stem + ".manifest.json")


def cmd_train(args, manifest):
    from .checkpoint import save_checkpoint
    from .io import load_scene, write_image
    from .trainer import Trainer

    config = _config(args)
    scene = load_scene(args.scene, sh_degree=config.sh_degree)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.config = config.to_dict()
    manifest.seed = config.seed
    manifest.input_hash = hash_inputs([args.scene, args.config])
    (out / "config.toml").write_text(config.to_toml())

    trainer = Trainer(scene, config)
    has_masks = all(f.ref_mask is not None for f in scene.frames)
    if len(scene.dynamic_gaussians) and has_masks and config.mask_iterations:
        trainer.train_mask_phase(config.mask_iterations)
    elif len(scene.dynamic_gaussians) and not has_masks:
        log.warning("skipping mask phase: not every frame has a reference mask")

    outputs = []

    def on_step(tr):
        it = tr.iteration
        if config.snapshot_every and tr.joint_step % config.snapshot_every == 0:
            f = scene.frames[0]
            path = out / "snapshots" / f"iter_{it:06d}.png"
            write_image(path, np.clip(tr.render(f.camera, f.t).color, 0, 1))
            outputs.append(str(path))
        if config.checkpoint_every and tr.joint_step % config.checkpoint_every == 0:
            path = out / f"ckpt_{it:06d}.bin"
            save_checkpoint(path, tr.checkpoint())
            outputs.append(str(path))

    ck = trainer.train_joint_phase(config.joint_iterations, callback=on_step)
    final = out / f"ckpt_{ck.iteration:06d}.bin"
    save_checkpoint(final, ck)
    if str(final) not in outputs:
        outputs.append(str(final))

    metrics = out / "metrics.csv"
    with open(metrics, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "l1", "ssim", "psnr_train"])
        for h in trainer.history:
            if h.phase == "joint":
                w.writerow([h.iteration, repr(h.l1), repr(h.ssim), repr(h.psnr_train)])
    outputs.append(str(metrics))
    manifest.outputs = outputs
    print(f"trained {ck.iteration} iterations; final checkpoint {final}")
    return out / "manifest.json"


def cmd_render(args, manifest):
    from .checkpoint import load_checkpoint
    from .io import load_frames, write_image, write_mask
    from .rasterizer import binarize_mask
    from .shift import shift_pose
    from .trainer import render_checkpoint

    frames, _ = load_frames(args.scene)
    frame = _frame(frames, args.frame)
    ck = load_checkpoint(args.checkpoint)
    cam = shift_pose(frame.camera, args.shift_meters)
    out = render_checkpoint(ck, cam, frame.t)
    prefix = str(args.out)
    paths = [prefix + "_color.png", prefix + "_mask_value.png", prefix + "_mask.png"]
    write_image(paths[0], np.clip(out.color, 0, 1))
    write_mask(paths[1], out.mask_value)
    write_mask(paths[2], binarize_mask(out.mask_value))
    manifest.input_hash = hash_inputs([args.scene, args.checkpoint])
    manifest.outputs = paths
    return Path(prefix + "_manifest.json")


def _json_number(x):
    return "inf" if math.isinf(x) else x


def cmd_eval(args, manifest):
    from .io import read_image
    from .losses import psnr, ssim

    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise MissingAsset(f"directory {d} not found")
    names = sorted(p.name for p in gt_dir.glob("*.png"))
    if not names:
        raise MissingAsset(f"no PNG images in {gt_dir}")
    per_frame = []
    for name in names:
        if not (pred_dir / name).exists():
            raise MissingAsset(f"prediction {pred_dir / name} missing")
        pred, gt = read_image(pred_dir / name), read_image(gt_dir / name)
        per_frame.append({"name": name, "psnr": psnr(pred, gt), "ssim": ssim(pred, gt)[0]})
    p = [f["psnr"] for f in per_frame]
    report = {
        "frames": [{**f, "psnr": _json_number(f["psnr"])} for f in per_frame],
        "mean": {"psnr": _json_number(float(np.mean(p))),
                 "ssim": float(np.mean([f["ssim"] for f in per_frame]))},
        "lpips": "unavailable (needs a pretrained perceptual network)",
    }
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2) + "\n")
    manifest.input_hash = hash_inputs([pred_dir, gt_dir])
    manifest.outputs = [str(path)]
    print(f"{len(per_frame)} frames: mean PSNR {report['mean']['psnr']}, "
          f"mean SSIM {report['mean']['ssim']:.4f}")
    return path.with_name(path.stem + ".manifest.json")


class _DirOracle:
    """Oracle reading ground truth from ``<root>/stage_KK/NNNN.png`` in call order."""

    name = "oracle"
    single_threaded = True

    def __init__(self, root, n_frames):
        self.root = Path(root)
        self.n = n_frames
        self.calls = 0

    def refine(self, degraded, pseudo, mask, pose, t):
        from .io import read_image

        stage, index = divmod(self.calls, self.n)
        self.calls += 1
        path = self.root / f"stage_{stage + 1:02d}" / f"{index:04d}.png"
        return read_image(path)


def cmd_shift(args, manifest):
    from .checkpoint import load_checkpoint
    from .io import load_scene
    from .shift import ShiftSchedule, builtin_refiners, run_progressive
    from .trainer import Trainer

    overrides = list(args.set or [])
    overrides += [f"lateral_step={args.step_meters}", f"num_stages={args.stages}",
                  f"refiner={json.dumps(args.refiner)}"]
    args.set = overrides
    config = _config(args)
    ck = load_checkpoint(args.checkpoint)
    scene = load_scene(args.scene, sh_degree=config.sh_degree)
    trainer = Trainer.from_checkpoint(ck, scene, config)
    if args.refiner == "oracle":
        if not args.oracle_dir:
            raise SplatfuseError("the oracle refiner needs --oracle-dir with ground-truth images")
        refiner = _DirOracle(args.oracle_dir, len(scene.frames))
    else:
        refiner = builtin_refiners(args.refiner)
    schedule = ShiftSchedule.from_config(config)
    out = Path(args.out)
    result = run_progressive(scene, None, None, schedule, refiner, config, out_dir=out,
                             trainer=trainer)
    manifest.config = config.to_dict()
    manifest.seed = config.seed
    manifest.input_hash = hash_inputs([args.scene, args.checkpoint, args.config])
    manifest.outputs = [str(s.directory) for s in result.stages]
    print(f"{len(result.stages)} stages to offset {schedule.target_offset}; "
          f"{len(result.extra_frames)} extra frames")
    return out / "manifest.json"


def cmd_selftest(args, manifest):
    from .selftest import run_selftest

    results = run_selftest()
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail} ({r.seconds:.1f}s)")
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} suites passed")
    if passed != len(results):
        raise SplatfuseError(f"{len(results) - passed} selftest suite(s) failed")
    return None


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="splatfuse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common_config(sp):
        sp.add_argument("--config", metavar="TOML", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config value (repeatable)")
        sp.add_argument("--workers", type=int, help="worker threads for rendering")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("project", aliases=["fuse-project"],
                        help="project the fused point cloud to a pseudo-image")
    sp.add_argument("--scene", required=True, metavar="DIR")
    sp.add_argument("--frame", type=int, required=True, metavar="N")
    sp.add_argument("--shift-meters", type=float, default=0.0, metavar="X")
    sp.add_argument("--radius", type=float, default=1.0, metavar="R")
    sp.add_argument("--out", required=True, metavar="PNGPATH")
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("train", help="mask phase then joint phase")
    sp.add_argument("--scene", required=True, metavar="DIR")
    sp.add_argument("--out", required=True, metavar="DIR")
    common_config(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("render", help="render colour and dynamic mask from a checkpoint")
    sp.add_argument("--scene", required=True, metavar="DIR")
    sp.add_argument("--checkpoint", required=True, metavar="PATH")
    sp.add_argument("--frame", type=int, required=True, metavar="N")
    sp.add_argument("--shift-meters", type=float, default=0.0, metavar="X")
    sp.add_argument("--out", required=True, metavar="PREFIX")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("eval", help="PSNR / SSIM report over matching PNG names")
    sp.add_argument("--pred", required=True, metavar="DIR")
    sp.add_argument("--gt", required=True, metavar="DIR")
    sp.add_argument("--report", required=True, metavar="JSONPATH")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("shift", help="progressive lateral shifting from a checkpoint")
    sp.add_argument("--checkpoint", required=True, metavar="PATH")
    sp.add_argument("--scene", required=True, metavar="DIR")
    sp.add_argument("--step-meters", type=float, required=True, metavar="X")
    sp.add_argument("--stages", type=int, required=True, metavar="N")
    sp.add_argument("--refiner", default="identity", metavar="NAME",
                    help="identity, oracle or blur-degrade")
    sp.add_argument("--oracle-dir", metavar="DIR",
                    help="ground truth for the oracle refiner: stage_KK/NNNN.png")
    sp.add_argument("--out", required=True, metavar="DIR")
    common_config(sp)
    sp.set_defaults(func=cmd_shift)

    sp = sub.add_parser("selftest", help="run the oracle and gradient suites")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)  # exits 2 on usage errors, 0 on --help
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = RunManifest(command=args.command, argv=argv, started=_now())
    try:
        manifest_path = args.func(args, manifest)
    except (SplatfuseError, ValueError, OSError) as exc:
        print(f"splatfuse {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if manifest_path is not None:
        manifest.finished = _now()
        manifest.write(manifest_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
