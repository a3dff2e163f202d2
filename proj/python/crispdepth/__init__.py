"""Self-supervised monocular depth estimation with boundary refinement.

The heavy lifting lives in the compiled extension; this package re-exports
the core operations and the checkpoint-backed Model.
"""

from crispdepth._core import (  # noqa: F401
    CrispError,
    Model,
    boundary_alignment_loss,
    colormap_depth,
    dbe_accuracy,
    euclidean_distance_transform,
    extract_boundaries,
    geometric_consistency_loss,
    pose_to_matrix,
    render_scene,
    semantic_information_loss,
    ssim,
    standard_metrics,
    view_reconstruction_loss,
    warp_depth,
    warp_image,
    write_synthetic_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "CrispError",
    "Model",
    "boundary_alignment_loss",
    "colormap_depth",
    "dbe_accuracy",
    "euclidean_distance_transform",
    "extract_boundaries",
    "geometric_consistency_loss",
    "pose_to_matrix",
    "render_scene",
    "semantic_information_loss",
    "ssim",
    "standard_metrics",
    "view_reconstruction_loss",
    "warp_depth",
    "warp_image",
    "write_synthetic_dataset",
]
