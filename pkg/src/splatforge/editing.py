"""Cloud editing: foreground extraction, labeling, transforms, fusion.

All operations treat clouds as immutable and return new ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError
from .gaussians import GaussianCloud, RigidTransform, quat_multiply
from .sh import SH_C0, band_rotation_matrices, band_slice

# The radius pass keeps everything within _RADIUS_SLACK times the
# percentile distance.  The percentile estimates the object's scale, and
# the slack stops the cut from landing inside the object's own distance
# tail when the far background makes up slightly less of the cloud than
# the percentile allows for; genuinely distant background sits far
# beyond any reasonable slack.
_RADIUS_SLACK = 1.5


@dataclass
class ExtractionParams:
    """Knobs for separating a centered foreground object from its scene.

    center_mode:         "median" (robust, default) or "mean".
    radius_percentile:   percentile of the center-distance distribution
                         used to estimate the object radius, in (0, 100];
                         the keep-radius is 1.5x that distance.
    knn_k:               neighbor count for the density pass.
    knn_distance_factor: a Gaussian survives the density pass if its
                         k-th neighbor distance is at most this factor
                         times the median k-th neighbor distance.
    """

    center_mode: str = "median"
    radius_percentile: float = 95.0
    knn_k: int = 8
    knn_distance_factor: float = 4.0

    def __post_init__(self) -> None:
        if self.center_mode not in ("median", "mean"):
            raise ParameterError(f"unknown center mode {self.center_mode!r}")
        if not 0.0 < self.radius_percentile <= 100.0:
            raise ParameterError("radius_percentile must be in (0, 100]")
        if self.knn_k < 1:
            raise ParameterError("knn_k must be at least 1")
        if self.knn_distance_factor <= 0:
            raise ParameterError("knn_distance_factor must be positive")


def robust_centroid(cloud: GaussianCloud, mode: str = "median") -> np.ndarray:
    """Per-axis median (or mean) of the Gaussian means."""
    if len(cloud) == 0:
        raise ParameterError("cannot take the centroid of an empty cloud")
    if mode == "median":
        return np.median(cloud.means, axis=0)
    if mode == "mean":
        return np.mean(cloud.means, axis=0)
    raise ParameterError(f"unknown center mode {mode!r}")


def extract_foreground(
    cloud: GaussianCloud, params: ExtractionParams | None = None
) -> tuple[GaussianCloud, GaussianCloud]:
    """Split a capture into (foreground, residue).

    Assumes the object of interest sits at the dense center of the
    capture.  Two passes: a radius cut at 1.5x the given percentile of
    distances from the robust centroid, then a k-nearest-neighbor
    density cut that drops isolated floaters that survived the radius.

    Returns the kept and the discarded Gaussians, both in original
    relative order.
    """
    if params is None:
        params = ExtractionParams()
    n = len(cloud)
    if n == 0:
        raise ParameterError("cannot extract from an empty cloud")
    if params.knn_k >= n:
        raise ParameterError(f"knn_k {params.knn_k} needs at least {params.knn_k + 1} gaussians")

    center = robust_centroid(cloud, params.center_mode)
    dist = np.linalg.norm(cloud.means - center, axis=1)
    radius = _RADIUS_SLACK * np.percentile(dist, params.radius_percentile)
    keep = dist <= radius

    # density pass over the radius survivors; query k+1 because the
    # nearest hit of every point is itself
    idx = np.flatnonzero(keep)
    if idx.size > params.knn_k:
        tree = cKDTree(cloud.means[idx])
        kth, _ = tree.query(cloud.means[idx], k=params.knn_k + 1)
        kth = kth[:, -1]
        cutoff = params.knn_distance_factor * np.median(kth)
        keep[idx] = kth <= cutoff

    return cloud.select(keep), cloud.select(~keep)


@dataclass
class CompositeScene:
    """A fused cloud plus per-Gaussian provenance.

    sources holds 0 for background Gaussians and the tool id for
    Gaussians contributed by that tool.
    """

    cloud: GaussianCloud
    sources: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))

    def __post_init__(self) -> None:
        self.sources = np.asarray(self.sources, dtype=np.int32).reshape(-1)
        if self.sources.shape[0] != len(self.cloud):
            raise ParameterError(
                f"{self.sources.shape[0]} source tags for {len(self.cloud)} gaussians"
            )

    @classmethod
    def from_cloud(cls, cloud: GaussianCloud, source: int = 0) -> "CompositeScene":
        return cls(cloud, np.full(len(cloud), int(source), dtype=np.int32))

    def tool_ids(self) -> list[int]:
        """Distinct non-zero source ids, ascending."""
        ids = np.unique(self.sources)
        return [int(i) for i in ids if i != 0]


def default_label_color(label: int) -> np.ndarray:
    """A fixed, well-separated color for a label id.

    Label ids hash onto a small palette of saturated colors; 0 (the
    background tag) maps to black.
    """
    if label < 0:
        raise ParameterError("labels must be non-negative")
    if label == 0:
        return np.zeros(3)
    palette = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 1.0],
            [1.0, 0.5, 0.0],
            [0.5, 0.0, 1.0],
        ]
    )
    return palette[(label - 1) % len(palette)].copy()


def assign_label(
    cloud: GaussianCloud, label: int, label_color: np.ndarray | None = None
) -> tuple[GaussianCloud, GaussianCloud]:
    """Tag every Gaussian with `label` and build its flat-color twin.

    Returns (labeled, flat): `labeled` is a copy of the input with the
    label column set, geometry and appearance untouched; `flat` shares
    the exact geometry and opacities but its radiance is the constant
    `label_color` (DC term only, higher bands zeroed), which makes masks
    rendered from it directly thresholdable.
    """
    label = int(label)
    if label < 1:
        raise ParameterError("label 0 is reserved for the background; use ids >= 1")
    if label_color is None:
        label_color = default_label_color(label)
    label_color = np.asarray(label_color, dtype=np.float64).reshape(3)
    if np.any(label_color < 0) or np.any(label_color > 1):
        raise ParameterError("label color channels must lie in [0, 1]")

    labeled = cloud.with_labels(label)
    flat_sh = np.zeros_like(cloud.sh)
    # constant radiance c needs DC coefficient (c - 0.5) / Y00
    flat_sh[:, 0, :] = (label_color - 0.5) / SH_C0
    flat = GaussianCloud(
        means=cloud.means,
        rotations=cloud.rotations,
        scales=cloud.scales,
        opacities=cloud.opacities,
        sh=flat_sh,
        labels=np.full(len(cloud), label, dtype=np.int32),
        validate=False,
    )
    return labeled, flat


def transform_cloud(
    cloud: GaussianCloud, transform: RigidTransform, sh_mode: str = "exact"
) -> GaussianCloud:
    """Rigidly move a cloud: means, orientations and radiance together.

    sh_mode "exact" rotates every SH band so view-dependent appearance
    follows the object; "dc_only" zeroes bands above 0 instead, keeping
    only the view-independent base color.  Scales and opacities are
    invariant under rigid motion.
    """
    if sh_mode not in ("exact", "dc_only"):
        raise ParameterError(f"unknown sh_mode {sh_mode!r}")
    means = transform.apply(cloud.means)
    rotations = quat_multiply(transform.rotation[np.newaxis, :], cloud.rotations)
    if sh_mode == "dc_only" or cloud.sh_degree == 0:
        sh = np.zeros_like(cloud.sh) if sh_mode == "dc_only" else cloud.sh.copy()
        sh[:, 0, :] = cloud.sh[:, 0, :]
    else:
        sh = cloud.sh.copy()
        for l, M in enumerate(band_rotation_matrices(transform.rotation_matrix, cloud.sh_degree)):
            if l == 0:
                continue
            sh[:, band_slice(l), :] = np.einsum("mk,nkc->nmc", M, cloud.sh[:, band_slice(l), :])
    return GaussianCloud(
        means=means,
        rotations=rotations,
        scales=cloud.scales,
        opacities=cloud.opacities,
        sh=sh,
        labels=cloud.labels,
        validate=False,
    )


def fuse(
    background: GaussianCloud,
    tools: Sequence[tuple[GaussianCloud, RigidTransform]],
    sh_mode: str = "exact",
) -> CompositeScene:
    """Place tool clouds into a background scene.

    Each (cloud, transform) pair is moved by its transform and appended
    after the background, in the order given.  SH degrees are unified by
    zero-padding to the maximum, which leaves appearance unchanged.
    Source tags follow each Gaussian's label (background block is 0).
    """
    max_degree = background.sh_degree
    for tool, _ in tools:
        max_degree = max(max_degree, tool.sh_degree)

    parts = [background.with_sh_degree(max_degree)]
    sources = [np.zeros(len(background), dtype=np.int32)]
    for tool, transform in tools:
        moved = transform_cloud(tool.with_sh_degree(max_degree), transform, sh_mode)
        parts.append(moved)
        sources.append(moved.labels.astype(np.int32))

    fused = GaussianCloud(
        means=np.concatenate([p.means for p in parts]),
        rotations=np.concatenate([p.rotations for p in parts]),
        scales=np.concatenate([p.scales for p in parts]),
        opacities=np.concatenate([p.opacities for p in parts]),
        sh=np.concatenate([p.sh for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        validate=False,
    )
    return CompositeScene(fused, np.concatenate(sources))
