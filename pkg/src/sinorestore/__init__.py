"""Reference-guided interpolation and denoising of undersampled CT sinograms."""
from ._validation import NumericalFailure
from .blockmatch import MatchParams, patchmatch_knn
from .estimators import FBPReconstructor, SinogramInterpolator
from .metrics import cnr, fbp_reconstruct, rmse, ssim
from .simulator import NoiseSpec, ScanGeometry, add_noise, forward_project, make_phantom, phantom_preset
from .solver import RestoreParams, run
from .volume import BlockSpec, ViewMask, load_mask, load_volume, save_mask, save_volume

__version__ = "0.1.0"

__all__ = [
    "BlockSpec",
    "FBPReconstructor",
    "MatchParams",
    "NoiseSpec",
    "NumericalFailure",
    "RestoreParams",
    "ScanGeometry",
    "SinogramInterpolator",
    "ViewMask",
    "add_noise",
    "cnr",
    "fbp_reconstruct",
    "forward_project",
    "load_mask",
    "load_volume",
    "make_phantom",
    "patchmatch_knn",
    "phantom_preset",
    "rmse",
    "run",
    "save_mask",
    "save_volume",
    "ssim",
]
