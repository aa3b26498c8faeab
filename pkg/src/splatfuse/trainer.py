"""Two-phase optimization: dynamic-mask pre-training, then joint 4D training."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .checkpoint import Checkpoint
from .config import TrainConfig
from .decoder import DeformationDecoder, deform, deform_backward
from .errors import EmptyCloud, MissingRefMask
from .hashgrid import HashGrid4D
from .losses import bce_mask_loss, photometric_loss, psnr
from .optim import Adam, exp_decay
from .rasterizer import binarize_mask, compose, rasterize, rasterize_backward
from .scene import Frame, GaussianSet, Scene, num_sh_coeffs

log = logging.getLogger(__name__)

INIT_OPACITY = 0.1
GAUSSIAN_PARAMS = ("mu", "log_scale", "rot", "opacity_logit", "color")


def logit(p):
    return float(np.log(p / (1.0 - p)))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _knn_log_scale(points, k=3):
    n = len(points)
    if n == 1:
        return np.full(1, np.log(1e-2))
    tree = cKDTree(points)
    kk = min(k, n - 1)
    dist, _ = tree.query(points, k=kk + 1)
    mean = np.maximum(dist[:, 1:].mean(axis=1), 1e-7)
    return np.log(mean)


def _gaussians_from_points(points, colors, log_scale, sh_degree, dynamic, dtype):
    n = len(points)
    color = np.zeros((n, num_sh_coeffs(sh_degree), 3), dtype)
    color[:, 0] = colors
    rot = np.zeros((n, 4), dtype)
    rot[:, 0] = 1.0
    return GaussianSet(
        np.asarray(points, dtype), np.repeat(log_scale[:, None], 3, axis=1).astype(dtype), rot,
        np.full(n, logit(INIT_OPACITY), dtype), color,
        np.zeros(n, dtype) if dynamic else None,
    )


def canonical_cloud(dynamic_clouds, stamps=None):
    """The dynamic cloud of the frame with the (lower) median timestamp."""
    if not dynamic_clouds:
        return None
    clouds = sorted(dynamic_clouds, key=lambda c: c.frame_index)
    if stamps is not None:
        clouds = sorted(clouds, key=lambda c: (stamps[c.frame_index], c.frame_index))
    return clouds[(len(clouds) - 1) // 2]


def init_gaussians(static_cloud, dynamic_clouds=(), *, stamps=None, sh_degree=0,
                   dtype=np.float64):
    """One Gaussian per point: isotropic 3-NN scale, identity rotation, opacity 0.1."""
    if static_cloud is None or len(static_cloud) == 0:
        raise EmptyCloud("static cloud is empty")
    canon = canonical_cloud(list(dynamic_clouds), stamps)
    pts = [static_cloud.points]
    if canon is not None:
        if len(canon) == 0:
            raise EmptyCloud(f"dynamic cloud of frame {canon.frame_index} is empty")
        pts.append(canon.points)
    log_scale = _knn_log_scale(np.concatenate(pts))
    ns = len(static_cloud)
    static = _gaussians_from_points(static_cloud.points, static_cloud.colors, log_scale[:ns],
                                    sh_degree, False, dtype)
    if canon is None:
        dynamic = GaussianSet.empty(sh_degree, dynamic=True, dtype=dtype)
    else:
        dynamic = _gaussians_from_points(canon.points, canon.colors, log_scale[ns:],
                                         sh_degree, True, dtype)
    return static, dynamic


def default_grid(dynamic: GaussianSet, config: TrainConfig, rng=None, margin=0.25):
    if len(dynamic):
        lo, hi = dynamic.mu.min(axis=0), dynamic.mu.max(axis=0)
        pad = np.maximum((hi - lo) * margin, 1.0)
        lo, hi = lo - pad, hi + pad
    else:
        lo, hi = -np.ones(3), np.ones(3)
    return HashGrid4D.create(lo, hi, config.hash_levels, config.hash_features,
                             config.hash_table_size, config.hash_base_resolution,
                             config.hash_growth, rng=rng, init_range=config.hash_init_range)


def default_decoder(grid: HashGrid4D, config: TrainConfig, rng=None):
    return DeformationDecoder.create(grid.dim, 3 * num_sh_coeffs(config.sh_degree),
                                     tuple(config.decoder_hidden), rng=rng,
                                     stop_mu_grad=config.stop_mu_grad)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

class FrameSampler:
    """Uniform over originals; strict original/extra alternation when extras exist."""

    def __init__(self, originals, extras=(), rng=None):
        self.originals = list(originals)
        self.extras = list(extras)
        self.rng = np.random.default_rng(rng)
        self.count = 0

    def draw(self):
        use_extra = bool(self.extras) and self.count % 2 == 1
        self.count += 1
        pool = self.extras if use_extra else self.originals
        i = int(self.rng.integers(len(pool)))
        return pool[i], use_extra, i


# ---------------------------------------------------------------------------
# density control
# ---------------------------------------------------------------------------

@dataclass
class DensityStats:
    grad_accum: np.ndarray
    denom: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    def add(self, grad2d_norm, visible):
        self.grad_accum += np.where(visible, grad2d_norm, 0.0)
        self.denom += visible

    def mean(self):
        return np.divide(self.grad_accum, self.denom, out=np.zeros_like(self.grad_accum),
                         where=self.denom > 0)


def _select(gs: GaussianSet, idx):
    return GaussianSet(**{k: v[idx] for k, v in gs.params().items()})


def densify_and_prune(gs: GaussianSet, stats: DensityStats, config: TrainConfig, extent,
                      rng=None):
    """Clone small / split large high-gradient Gaussians, then drop transparent ones.

    Returns ``(new_set, keep_idx, n_new)``: the survivors of the original rows come
    first (in order, ``keep_idx``) followed by ``n_new`` children.
    """
    rng = np.random.default_rng(rng)
    n = len(gs)
    grads = stats.mean()
    hot = grads >= config.densify_grad_threshold
    max_scale = np.exp(gs.log_scale).max(axis=1) if n else np.zeros(0)
    big = max_scale > config.percent_dense * extent
    clone_idx = np.nonzero(hot & ~big)[0]
    split_idx = np.nonzero(hot & big)[0]

    children = []
    if len(clone_idx):
        children.append(_select(gs, clone_idx))
    if len(split_idx):
        parent = _select(gs, np.repeat(split_idx, 2))
        from .scene import quat_to_rotmat
        R = quat_to_rotmat(parent.rot)
        s = np.exp(parent.log_scale)
        offs = rng.normal(size=(len(parent), 3)) * s
        parent.mu = parent.mu + np.einsum("nij,nj->ni", R, offs)
        parent.log_scale = parent.log_scale - np.log(1.6)
        children.append(parent)

    remove = np.zeros(n, bool)
    remove[split_idx] = True
    opacity = 1.0 / (1.0 + np.exp(-gs.opacity_logit))
    remove |= opacity < config.prune_opacity
    keep = np.nonzero(~remove)[0]
    if children:
        new_children = GaussianSet.concat(children)
        child_opacity = 1.0 / (1.0 + np.exp(-new_children.opacity_logit))
        new_children = _select(new_children, np.nonzero(child_opacity >= config.prune_opacity)[0])
        if gs.dyn_logit is None:
            new_children.dyn_logit = None
        out = GaussianSet.concat([_select(gs, keep), new_children])
        if gs.dyn_logit is None:
            out.dyn_logit = None
        return out, keep, len(new_children)
    return _select(gs, keep), keep, 0


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

@dataclass
class StepLog:
    iteration: int
    phase: str
    l1: float = float("nan")
    ssim: float = float("nan")
    psnr_train: float = float("nan")
    bce: float = float("nan")
    total: float = float("nan")
    extra: bool = False


class Trainer:
    """Holds the optimizable state of a scene and runs both training phases.

    The canonical Gaussians live in ``scene.static_gaussians`` and
    ``scene.dynamic_gaussians`` and are updated in place by the optimizer.
    """

    def __init__(self, scene: Scene, config: Optional[TrainConfig] = None,
                 grid: Optional[HashGrid4D] = None, decoder: Optional[DeformationDecoder] = None):
        self.config = config or TrainConfig()
        self.scene = scene
        self.rng = np.random.default_rng(self.config.seed)
        init_rng = np.random.default_rng([self.config.seed, 1])
        self.grid = grid if grid is not None else default_grid(scene.dynamic_gaussians,
                                                               self.config, init_rng)
        self.decoder = decoder if decoder is not None else default_decoder(
            self.grid, self.config, init_rng)
        self.background = np.asarray(self.config.background, np.float64)
        self.extent = (self.config.spatial_lr_scale if self.config.spatial_lr_scale > 0
                       else scene.extent())
        self.max_log_scale = float(np.log(scene.diameter()))
        self.iteration = 0
        self.joint_step = 0
        self.history: list[StepLog] = []
        self.extra_frames: list[Frame] = []
        self._build_optimizer()
        self._reset_stats()

    # -- optimizer ----------------------------------------------------------

    def _lrs(self):
        c = self.config
        return {"mu": c.lr_position * self.extent, "log_scale": c.lr_scale,
                "rot": c.lr_rotation, "opacity_logit": c.lr_opacity, "color": c.lr_color,
                "dyn_logit": c.lr_dyn_logit}

    def _build_optimizer(self):
        c = self.config
        self.optim = Adam((c.adam_beta1, c.adam_beta2), c.adam_eps)
        lrs = self._lrs()
        for prefix, gs in (("static", self.scene.static_gaussians),
                           ("dynamic", self.scene.dynamic_gaussians)):
            for name, arr in gs.params().items():
                self.optim.add(f"{prefix}.{name}", arr, lrs[name])
        self.optim.add("grid.tables", self.grid.tables, c.lr_hash)
        for name, arr in self.decoder.named_params().items():
            self.optim.add(f"decoder.{name}", arr, c.lr_decoder)

    def _rebind_gaussians(self, prefix, gs, keep, n_new):
        for name, arr in gs.params().items():
            self.optim.rebind(f"{prefix}.{name}", arr, keep, n_new)

    def _reset_stats(self):
        self.stats = {"static": DensityStats.zeros(len(self.scene.static_gaussians)),
                      "dynamic": DensityStats.zeros(len(self.scene.dynamic_gaussians))}

    def _post_step(self):
        for gs in (self.scene.static_gaussians, self.scene.dynamic_gaussians):
            if len(gs):
                gs.rot /= np.linalg.norm(gs.rot, axis=1, keepdims=True)
                np.minimum(gs.log_scale, self.max_log_scale, out=gs.log_scale)

    # -- rendering ----------------------------------------------------------

    def deformed_dynamic(self, t, deformation=None, return_cache=False):
        dyn = self.scene.dynamic_gaussians
        use = self.config.deformation if deformation is None else deformation
        if not use or len(dyn) == 0:
            return (dyn, None) if return_cache else dyn
        return deform(self.decoder, self.grid, dyn, t, return_cache=return_cache)

    def render(self, camera, t, deformation=None):
        dyn = self.deformed_dynamic(t, deformation)
        gs, _ = compose(self.scene.static_gaussians, dyn)
        return rasterize(gs, camera, self.background, workers=self.config.workers)

    def render_mask(self, camera, t, deformation=None):
        out = self.render(camera, t, deformation)
        return binarize_mask(out.mask_value, self.config.mask_threshold)

    # -- phase 1 --------------------------------------------------------------

    def train_mask_phase(self, iterations=None, frames=None):
        """Optimize only the dynamic logits against the reference masks (BCE)."""
        iterations = self.config.mask_iterations if iterations is None else iterations
        frames = self.scene.frames if frames is None else frames
        missing = [i for i, f in enumerate(frames) if f.ref_mask is None]
        if missing:
            raise MissingRefMask(f"frames without reference mask: {missing}")
        dyn = self.scene.dynamic_gaussians
        if len(dyn) == 0:
            # Nothing to learn: record the (constant) loss for the log.
            for _ in range(iterations):
                frame = frames[int(self.rng.integers(len(frames)))]
                out = self.render(frame.camera, frame.t, deformation=False)
                bce, _ = bce_mask_loss(out.mask_value, frame.ref_mask)
                self.iteration += 1
                self.history.append(StepLog(self.iteration, "mask", bce=bce, total=bce))
            return self.scene
        ns = len(self.scene.static_gaussians)
        mask_optim = Adam((self.config.adam_beta1, self.config.adam_beta2), self.config.adam_eps)
        mask_optim.add("dyn_logit", dyn.dyn_logit, self.config.lr_dyn_logit)
        for _ in range(iterations):
            frame = frames[int(self.rng.integers(len(frames)))]
            gs, is_dyn = compose(self.scene.static_gaussians, dyn)
            out = rasterize(gs, frame.camera, self.background, workers=self.config.workers)
            bce, g_mask = bce_mask_loss(out.mask_value, frame.ref_mask)
            g_mask = g_mask * self.config.weight_bce
            grads = rasterize_backward(gs, frame.camera, self.background, None, g_mask,
                                       is_dynamic=is_dyn, forward=out,
                                       workers=self.config.workers)
            mask_optim.step({"dyn_logit": grads.dyn_logit[ns:]})
            self.iteration += 1
            self.history.append(StepLog(self.iteration, "mask", bce=bce,
                                        total=self.config.weight_bce * bce))
        return self.scene

    # -- phase 2 --------------------------------------------------------------

    def train_joint_phase(self, iterations=None, extra_frames=None,
                          callback: Optional[Callable] = None):
        """Photometric training of every parameter group (dyn_logit frozen by default)."""
        c = self.config
        iterations = c.joint_iterations if iterations is None else iterations
        if extra_frames is not None:
            self.extra_frames = list(extra_frames)
        sampler = FrameSampler(self.scene.frames, self.extra_frames, self.rng)
        decay_steps = max(c.joint_iterations, 1)
        for _ in range(iterations):
            frame, is_extra, _ = sampler.draw()
            log_entry = self.step(frame, decay_steps)
            log_entry.extra = is_extra
            if c.densify and c.densify_from <= self.joint_step <= c.densify_until \
                    and self.joint_step % c.densify_interval == 0:
                self.densify()
            if callback is not None:
                callback(self)
        return self.checkpoint()

    def step(self, frame: Frame, decay_steps=None):
        c = self.config
        scene = self.scene
        ns = len(scene.static_gaussians)
        dyn, dcache = self.deformed_dynamic(frame.t, return_cache=True)
        gs, is_dyn = compose(scene.static_gaussians, dyn)
        out = rasterize(gs, frame.camera, self.background, workers=c.workers)
        report, g_img = photometric_loss(out.color, frame.image, c.lambda_ssim)
        rg = rasterize_backward(gs, frame.camera, self.background, g_img, None,
                                is_dynamic=is_dyn, forward=out, workers=c.workers)

        grads = {}
        for name in GAUSSIAN_PARAMS:
            grads[f"static.{name}"] = getattr(rg, name)[:ns]
        dyn_up = {name: getattr(rg, name)[ns:] for name in GAUSSIAN_PARAMS}
        dyn_up["dyn_logit"] = rg.dyn_logit[ns:] if rg.dyn_logit is not None else None
        if dcache is not None:
            dec_g, table_g, canon = deform_backward(self.decoder, self.grid, dcache, dyn_up)
            grads["grid.tables"] = table_g
            for k, v in dec_g.items():
                grads[f"decoder.{k}"] = v
        else:
            canon = dyn_up
        for name in GAUSSIAN_PARAMS:
            grads[f"dynamic.{name}"] = canon[name]
        if c.train_dyn_logit_joint and canon.get("dyn_logit") is not None:
            grads["dynamic.dyn_logit"] = canon["dyn_logit"]

        lr_pos = exp_decay(c.lr_position, c.lr_position_final, self.joint_step,
                           decay_steps or c.joint_iterations) * self.extent
        self.optim.step(grads, {"static.mu": lr_pos, "dynamic.mu": lr_pos})
        self._post_step()

        if c.densify:
            stats = out.per_gaussian_stats
            vis = stats.contrib > 0
            self.stats["static"].add(stats.grad2d_norm[:ns], vis[:ns])
            self.stats["dynamic"].add(stats.grad2d_norm[ns:], vis[ns:])

        self.iteration += 1
        self.joint_step += 1
        entry = StepLog(self.iteration, "joint", l1=report.l1, ssim=report.ssim,
                        psnr_train=psnr(np.clip(out.color, 0, 1), frame.image),
                        total=report.total)
        self.history.append(entry)
        return entry

    def densify(self):
        scene = self.scene
        for prefix in ("static", "dynamic"):
            gs = getattr(scene, f"{prefix}_gaussians")
            if len(gs) == 0:
                continue
            new, keep, n_new = densify_and_prune(gs, self.stats[prefix], self.config,
                                                 self.extent, self.rng)
            setattr(scene, f"{prefix}_gaussians", new)
            self._rebind_gaussians(prefix, new, keep, n_new)
        self._reset_stats()

    # -- checkpoints ---------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        f32 = np.float32
        grid = self.grid.copy()
        grid.tables = grid.tables.astype(f32)
        grid.box_min = grid.box_min.astype(f32).astype(np.float64)
        grid.box_max = grid.box_max.astype(f32).astype(np.float64)
        dec = self.decoder.copy()
        dec.weights = [w.astype(f32) for w in dec.weights]
        dec.biases = [b.astype(f32) for b in dec.biases]
        dec.head_w = {k: v.astype(f32) for k, v in dec.head_w.items()}
        dec.head_b = {k: v.astype(f32) for k, v in dec.head_b.items()}
        optim = {k: (m.astype(f32), v.astype(f32), s) for k, (m, v, s) in self.optim.state().items()}
        return Checkpoint(self.scene.static_gaussians.astype(f32),
                          self.scene.dynamic_gaussians.astype(f32), grid, dec, optim,
                          self.iteration, self.config.digest(), tuple(self.scene.time_range))

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint, scene: Scene, config: Optional[TrainConfig] = None):
        """Resume: ``scene`` supplies frames/clouds, ``ck`` supplies all trainables."""
        f64 = np.float64
        scene.static_gaussians = ck.static.astype(f64)
        scene.dynamic_gaussians = ck.dynamic.astype(f64)
        if scene.dynamic_gaussians.dyn_logit is None:
            scene.dynamic_gaussians.dyn_logit = np.zeros(len(scene.dynamic_gaussians))
        grid = ck.grid.copy()
        grid.tables = grid.tables.astype(f64)
        dec = ck.decoder.copy()
        dec.weights = [w.astype(f64) for w in dec.weights]
        dec.biases = [b.astype(f64) for b in dec.biases]
        dec.head_w = {k: v.astype(f64) for k, v in dec.head_w.items()}
        dec.head_b = {k: v.astype(f64) for k, v in dec.head_b.items()}
        tr = cls(scene, config, grid, dec)
        tr.optim.load_state(ck.optimizer)
        tr.iteration = ck.iteration
        return tr


def render_checkpoint(ck: Checkpoint, camera, t, background=(0.0, 0.0, 0.0), deformation=True):
    """Render straight from checkpoint arrays (no dtype conversion)."""
    dyn = ck.dynamic
    if deformation and len(dyn):
        dyn = deform(ck.decoder, ck.grid, dyn, t)
    gs, _ = compose(ck.static, dyn)
    return rasterize(gs, camera, np.asarray(background, gs.dtype))


# ---------------------------------------------------------------------------
# functional entry points
# ---------------------------------------------------------------------------

def train_mask_phase(scene: Scene, config: TrainConfig, trainer: Optional[Trainer] = None):
    trainer = trainer or Trainer(scene, config)
    trainer.train_mask_phase(config.mask_iterations)
    return trainer.scene


def train_joint_phase(scene: Scene, grid, decoder, config: TrainConfig, extra_frames=None,
                      trainer: Optional[Trainer] = None) -> Checkpoint:
    trainer = trainer or Trainer(scene, config, grid, decoder)
    return trainer.train_joint_phase(config.joint_iterations, extra_frames)
