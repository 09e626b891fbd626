"""Gaussian splatting with a factorised illumination field and a neural shader."""
from .data import Dataset, generate_probe_scene, load_checkpoint, load_nerf_synthetic, save_checkpoint
from .field import IlluminationField, eval_field, init_field, shrink_resample
from .gaussians import CameraView, GaussianSet
from .losses import psnr, ssim, total_loss
from .render import render, render_backward
from .shader import NeuralShader, init_shader
from .trainer import TrainConfig, Trainer, TrainSchedule

__version__ = "0.1.0"
