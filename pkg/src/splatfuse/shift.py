"""Progressive lateral shifting with pluggable image refiners.

Each stage renders every original frame from a camera slid sideways along its
own right axis, hands the render (plus the rendered dynamic mask and a
point-cloud pseudo-image) to a refiner, and adds the refined images to the
training pool before training again.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import numpy as np
from scipy.ndimage import gaussian_filter

from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .errors import RefinerFailure, UnknownRefiner
from .io import write_image, write_mask
from .pointcloud import fuse, project_pseudo_image
from .rasterizer import binarize_mask
from .scene import Camera, Frame, Scene

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShiftSchedule:
    lateral_step: float
    num_stages: int
    stage_iterations: int = 1600
    refiner: str = "identity"

    def __post_init__(self):
        if not self.lateral_step > 0:
            raise ValueError("lateral_step must be > 0")
        if self.num_stages < 1:
            raise ValueError("num_stages must be >= 1")
        if self.stage_iterations < 0:
            raise ValueError("stage_iterations must be >= 0")

    @property
    def target_offset(self):
        return self.lateral_step * self.num_stages

    def offsets(self):
        return [self.lateral_step * k for k in range(1, self.num_stages + 1)]

    @classmethod
    def from_config(cls, config: TrainConfig):
        return cls(config.lateral_step, config.num_stages, config.stage_iterations,
                   config.refiner)


def shift_pose(cam: Camera, offset) -> Camera:
    """Slide the camera ``offset`` world units along its own right (+x) axis."""
    # centre c' = c + offset * R[0]; t' = -R c' = t - offset * e_x
    t = cam.t - np.array([offset, 0.0, 0.0])
    return cam.with_pose(cam.R, t)


# ---------------------------------------------------------------------------
# refiners
# ---------------------------------------------------------------------------

class Refiner(Protocol):
    name: str
    single_threaded: bool

    def refine(self, degraded, pseudo, mask, pose: Camera, t: float) -> np.ndarray: ...


class IdentityRefiner:
    name = "identity"
    single_threaded = False

    def refine(self, degraded, pseudo, mask, pose, t):
        return np.array(degraded, copy=True)


class OracleRefiner:
    """Returns known ground truth for registered (pose, time) pairs.

    Images can be registered one by one or produced by ``source(camera, t)``,
    typically the renderer of a synthetic world.
    """

    name = "oracle"
    single_threaded = False

    def __init__(self, source: Optional[Callable] = None):
        self.source = source
        self.table = {}

    def register(self, pose: Camera, t, image):
        self.table[(pose.key(), round(float(t), 12))] = np.asarray(image, np.float64)

    def refine(self, degraded, pseudo, mask, pose, t):
        key = (pose.key(), round(float(t), 12))
        if key in self.table:
            return self.table[key].copy()
        if self.source is not None:
            return np.asarray(self.source(pose, t), np.float64)
        raise RefinerFailure(f"oracle has no image for the pose at t={t:.4f}")


class BlurDegradeRefiner:
    """Gaussian blur; periodic boundaries keep the mean brightness unchanged."""

    name = "blur-degrade"
    single_threaded = False

    def __init__(self, sigma=2.0):
        self.sigma = float(sigma)

    def refine(self, degraded, pseudo, mask, pose, t):
        img = np.asarray(degraded, np.float64)
        return gaussian_filter(img, sigma=(self.sigma, self.sigma, 0), mode="wrap")


_BUILTIN = {"identity": IdentityRefiner, "oracle": OracleRefiner,
            "blur-degrade": BlurDegradeRefiner}


def builtin_refiners(name, **kwargs) -> Refiner:
    try:
        cls = _BUILTIN[name]
    except KeyError:
        raise UnknownRefiner(f"unknown refiner {name!r}; choose from {sorted(_BUILTIN)}") from None
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

@dataclass
class StageResult:
    stage: int
    offset: float
    frames: list
    checkpoint: Checkpoint
    directory: Optional[Path] = None


@dataclass
class ProgressiveResult:
    checkpoint: Checkpoint
    stages: list = field(default_factory=list)
    extra_frames: list = field(default_factory=list)


def _check_refined(img, like, stage, index):
    img = np.asarray(img, np.float64)
    if img.shape != like.shape:
        raise RefinerFailure(f"stage {stage}, frame {index}: refiner returned shape "
                             f"{img.shape}, expected {like.shape}", stage)
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise RefinerFailure(f"stage {stage}, frame {index}: refiner output outside [0, 1]", stage)
    return img


def shifted_inputs(trainer, scene: Scene, index, offset, splat_radius=1.0):
    """Render, binarized dynamic mask and pseudo-image for frame ``index`` at ``offset``."""
    frame = scene.frames[index]
    cam = shift_pose(frame.camera, offset)
    out = trainer.render(cam, frame.t)
    render = np.clip(out.color, 0.0, 1.0)
    mask = binarize_mask(out.mask_value, trainer.config.mask_threshold)
    if scene.static_cloud is not None:
        cloud = fuse(scene.static_cloud, scene.dynamic_clouds, index)
        pseudo, _ = project_pseudo_image(cloud, cam, splat_radius)
    else:
        pseudo = np.zeros_like(render)
    return cam, render, mask, pseudo


def run_progressive(scene: Scene, grid, decoder, schedule: ShiftSchedule, refiner: Refiner,
                    config: Optional[TrainConfig] = None, out_dir=None, trainer=None,
                    workers=None) -> ProgressiveResult:
    """Shift, refine and retrain stage by stage until the target offset.

    Pass ``trainer`` to continue from an existing training state (then ``grid``
    and ``decoder`` are ignored). If the refiner fails, :class:`RefinerFailure`
    is raised carrying the checkpoint of the last completed stage.
    """
    from .trainer import Trainer

    config = config or TrainConfig()
    trainer = trainer or Trainer(scene, config, grid, decoder)
    workers = workers or config.workers
    out_dir = Path(out_dir) if out_dir is not None else None
    result = ProgressiveResult(trainer.checkpoint())
    extras = list(trainer.extra_frames)
    n = len(scene.frames)

    for stage, offset in enumerate(schedule.offsets(), start=1):
        def inputs(i):
            return shifted_inputs(trainer, scene, i, offset, config.splat_radius)

        def refine(i, cam, render, mask, pseudo):
            try:
                img = refiner.refine(render, pseudo, mask, cam, scene.frames[i].t)
            except RefinerFailure as exc:
                raise RefinerFailure(f"stage {stage}, frame {i}: {exc}", stage,
                                     result.checkpoint) from exc
            except Exception as exc:
                raise RefinerFailure(f"stage {stage}, frame {i}: refiner raised {exc!r}", stage,
                                     result.checkpoint) from exc
            try:
                return _check_refined(img, render, stage, i)
            except RefinerFailure as exc:
                exc.checkpoint = result.checkpoint
                raise

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                staged = list(pool.map(inputs, range(n)))
                if getattr(refiner, "single_threaded", False):
                    refined = [refine(i, *staged[i]) for i in range(n)]
                else:
                    refined = list(pool.map(lambda i: refine(i, *staged[i]), range(n)))
        else:
            staged = [inputs(i) for i in range(n)]
            refined = [refine(i, *staged[i]) for i in range(n)]

        new_frames = []
        for i, ((cam, _, mask, _), img) in enumerate(zip(staged, refined)):
            src = scene.frames[i]
            new_frames.append(Frame(cam, src.t, img, mask, name=f"s{stage:02d}_{i:04d}.png",
                                    stamp=src.stamp))
        extras = extras + new_frames if config.cumulative_extra else new_frames

        stage_dir = None
        if out_dir is not None:
            stage_dir = out_dir / f"stage_{stage:02d}"
            for i, ((_, render, mask, pseudo), img) in enumerate(zip(staged, refined)):
                name = f"{i:04d}.png"
                write_image(stage_dir / "renders" / name, render)
                write_mask(stage_dir / "masks" / name, mask)
                write_image(stage_dir / "pseudo" / name, pseudo)
                write_image(stage_dir / "refined" / name, img)

        log.info("stage %d: offset %.3f, %d extra frames, %d iterations", stage, offset,
                 len(extras), schedule.stage_iterations)
        ck = trainer.train_joint_phase(schedule.stage_iterations, extras)
        if stage_dir is not None:
            save_checkpoint(stage_dir / f"ckpt_{ck.iteration:06d}.bin", ck)
        result.checkpoint = ck
        result.stages.append(StageResult(stage, offset, new_frames, ck, stage_dir))
        result.extra_frames = extras
    return result
