"""Convex learned regularizers for undersampled Fourier imaging.

A small numpy toolkit: a reverse-mode autodiff core, input-convex
networks, masked Fourier sampling with exact data consistency,
adversarial training with latent optimization, projected subgradient
reconstruction, a TV baseline, metrics and toy-manifold checks.
"""

from .autodiff import Tensor, LayerSpec
from .icnn import ArchSpec, DenseArchSpec, ConvexNet, build, clip_weights, check_midpoint_convexity
from .forward_model import (SamplingMask, MaskedFourier, make_mask, apply_A, apply_A_adjoint,
                            project_data_consistency, add_noise)
from .training import TrainConfig, Checkpoint, train, latent_optimize
from .solver import PGDConfig, ReconResult, pgd_reconstruct
from .metrics import psnr, nmse, ssim
from .tv import tv_reconstruct
from .phantoms import make_phantom, phantom_set

__version__ = "0.1.0"
