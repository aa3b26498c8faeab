"""Differentiable 4D Gaussian splatting at desk scale.

Static and dynamic Gaussians are rendered by a tile rasterizer that also
composites a per-pixel dynamic mask; dynamic Gaussians are deformed over time
by a hashed 4D feature grid feeding a small multi-head decoder. A progressive
lateral-shift loop adds refined renders from sideways cameras as training data.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .decoder import DeformationDecoder, deform
from .errors import (BehindCamera, CheckpointError, ConfigError, EmptyCloud, MissingAsset,
                     MissingRefMask, ParseError, RefinerFailure, ShapeMismatch, SplatfuseError,
                     TooSmall, UnknownFrame, UnknownRefiner)
from .hashgrid import HashGrid4D, encode, encode_backward
from .io import load_scene, save_scene
from .losses import bce_mask_loss, l1_loss, photometric_loss, psnr, ssim
from .pointcloud import PointCloud, fuse, project_pseudo_image
from .rasterizer import binarize_mask, compose, rasterize, rasterize_backward
from .scene import Camera, Frame, Gaussian, GaussianSet, Scene
from .shift import ShiftSchedule, builtin_refiners, run_progressive, shift_pose
from .trainer import Trainer, init_gaussians, train_joint_phase, train_mask_phase

__version__ = "0.1.0"
