"""Unsupervised SAR change detection with a layer-attention, noise-tolerant CNN."""

__version__ = "0.1.0"

from .diff_image import log_ratio
from .kernels import BACKEND
from .metrics import EvalReport, confusion, evaluate, report
from .model import LossWeights, ModelParams, TrainConfig, init_params, predict_map, train
from .patches import PatchConfig, build_training_set, extract_patch, inject_label_noise
from .pipeline import DetectConfig, detect
from .preclassify import fcm, hierarchical_fcm
from .raster_io import ChangeMap, RasterImage, read_pgm, write_change_map, write_pgm
from .synth import SceneSpec, generate

__all__ = [
    "BACKEND", "ChangeMap", "DetectConfig", "EvalReport", "LossWeights", "ModelParams", "PatchConfig",
    "RasterImage", "SceneSpec", "TrainConfig", "build_training_set", "confusion", "detect", "evaluate",
    "extract_patch", "fcm", "generate", "hierarchical_fcm", "init_params", "inject_label_noise",
    "log_ratio", "predict_map", "read_pgm", "report", "train", "write_change_map", "write_pgm",
]
