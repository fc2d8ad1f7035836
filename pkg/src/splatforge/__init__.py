"""Compose pre-trained splat models and render annotated image datasets.

The package covers the full path from captured checkpoints to a
detector-ready dataset: load and save splat PLY files, cut a foreground
object out of its capture, tag it with an integer label, place it into
a background scene along a camera/pose trajectory, render color and
mask images with a tiled CPU rasterizer (checked against a brute-force
reference), and write bounding-box annotations plus quality metrics.
"""

from .annotation import (
    AnnotationRecord,
    annotate,
    binarize,
    components,
    to_annotation,
    write_annotations,
)
from .editing import (
    CompositeScene,
    ExtractionParams,
    assign_label,
    default_label_color,
    extract_foreground,
    fuse,
    robust_centroid,
    transform_cloud,
)
from .errors import ConfigError, FormatError, ParameterError, SplatError
from .gaussians import Camera, Gaussian, GaussianCloud, RigidTransform, covariance_of
from .metrics import QualityReport, diff_overlay, evaluate_directories, evaluate_pairs, psnr, ssim
from .pipeline import JobConfig, config_hash, generate, parse_config
from .ply_io import load_labels, load_ply, save_labels, save_ply
from .rasterizer import RenderOutput, Splat2D, project, render, render_reference
from .sh import evaluate_sh_color, rotate_sh, sh_basis
from .trajectory import CameraIntrinsics, FrameSpec, load_trajectory, sample_orbit, save_trajectory

__version__ = "0.1.0"

__all__ = [
    "AnnotationRecord",
    "Camera",
    "CameraIntrinsics",
    "CompositeScene",
    "ConfigError",
    "ExtractionParams",
    "FormatError",
    "FrameSpec",
    "Gaussian",
    "GaussianCloud",
    "JobConfig",
    "ParameterError",
    "QualityReport",
    "RenderOutput",
    "RigidTransform",
    "Splat2D",
    "SplatError",
    "annotate",
    "assign_label",
    "binarize",
    "components",
    "config_hash",
    "covariance_of",
    "default_label_color",
    "diff_overlay",
    "evaluate_directories",
    "evaluate_pairs",
    "evaluate_sh_color",
    "extract_foreground",
    "fuse",
    "generate",
    "load_labels",
    "load_ply",
    "load_trajectory",
    "parse_config",
    "project",
    "psnr",
    "render",
    "render_reference",
    "robust_centroid",
    "rotate_sh",
    "sample_orbit",
    "save_labels",
    "save_ply",
    "save_trajectory",
    "sh_basis",
    "ssim",
    "to_annotation",
    "transform_cloud",
    "write_annotations",
]
