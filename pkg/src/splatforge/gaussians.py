"""Core scene primitives: Gaussians, clouds, cameras, rigid transforms.

All rotations are unit quaternions in (w, x, y, z) order, matching the
storage convention of splat checkpoints.  Scales are standard deviations
along the local axes (always positive); covariances are derived, never
stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ParameterError

# Quaternions with squared norm below this are considered degenerate.
QUAT_NORM_EPS = 1e-12


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return q scaled to unit norm. Raises ParameterError on (near-)zero norm."""
    q = np.asarray(q, dtype=np.float64)
    n = float(np.dot(q, q))
    if not np.isfinite(n) or n < QUAT_NORM_EPS:
        raise ParameterError(f"cannot normalize quaternion with norm^2 {n!r}")
    return q / np.sqrt(n)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b; composes rotations (a applied after b).

    Both arguments are (..., 4) in (w, x, y, z) order and broadcast
    against each other.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Convert a single unit quaternion (w, x, y, z) to a 3x3 rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * x * z + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * x * z - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ]
    )


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """Vectorized quat_to_matrix for an (N, 4) array of unit quaternions."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Convert a 3x3 rotation matrix to a unit quaternion (w, x, y, z).

    Uses the symmetric eigen construction, which is stable for all
    rotation angles. The sign is fixed so w >= 0.
    """
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = np.asarray(R, dtype=np.float64).flat
    K = (
        np.array(
            [
                [Rxx - Ryy - Rzz, 0, 0, 0],
                [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
                [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
                [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz],
            ]
        )
        / 3.0
    )
    eigvals, eigvecs = np.linalg.eigh(K)
    qvec = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if qvec[0] < 0:
        qvec = -qvec
    return qvec


def normalize_rows(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Normalize the last axis of v; raises ParameterError on zero rows."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < eps):
        raise ParameterError("cannot normalize zero-length vector")
    return v / n


def sh_coeff_count(degree: int) -> int:
    """Number of scalar SH coefficients (3 channels) for a given degree."""
    if degree not in (0, 1, 2, 3):
        raise ParameterError(f"unsupported SH degree {degree}; expected 0..3")
    return 3 * (degree + 1) ** 2


def sh_degree_from_count(count: int) -> int:
    """Inverse of sh_coeff_count; raises if count matches no degree in 0..3."""
    for degree in (0, 1, 2, 3):
        if count == 3 * (degree + 1) ** 2:
            return degree
    raise ParameterError(f"{count} scalars match no SH degree in 0..3")


@dataclass
class Gaussian:
    """A single anisotropic Gaussian primitive.

    Attributes
    ----------
    mean:      (3,) position.
    rotation:  (4,) unit quaternion (w, x, y, z); normalized on construction.
    scale:     (3,) positive standard deviations along the local axes.
    opacity:   base opacity in [0, 1].
    sh:        flat spherical-harmonic coefficients, 3*(degree+1)**2 scalars,
               grouped per basis function as (r, g, b) triples.
    label:     non-negative integer tag; 0 means untagged/background.
    """

    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    sh: np.ndarray
    label: int = 0

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(-1)
        self.opacity = float(self.opacity)
        self.label = int(self.label)
        self.rotation = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        if not np.all(np.isfinite(self.mean)):
            raise ParameterError("gaussian mean must be finite")
        if not np.all(np.isfinite(self.scale)) or np.any(self.scale <= 0):
            raise ParameterError("gaussian scale must be finite and positive")
        if not 0.0 <= self.opacity <= 1.0:
            raise ParameterError(f"opacity {self.opacity} outside [0, 1]")
        if self.label < 0:
            raise ParameterError(f"label {self.label} must be non-negative")
        self.sh_degree = sh_degree_from_count(self.sh.size)


def covariance_of(g: Gaussian) -> np.ndarray:
    """3x3 world covariance R * diag(scale^2) * R^T of a Gaussian."""
    if not np.all(np.isfinite(g.scale)) or np.any(g.scale <= 0):
        raise ParameterError("gaussian scale must be finite and positive")
    R = quat_to_matrix(quat_normalize(g.rotation))
    M = R * g.scale[np.newaxis, :]
    return M @ M.T


@dataclass
class RigidTransform:
    """Rotation about a pivot followed by a translation.

    Maps a point p to ``R @ (p - pivot) + pivot + translation`` where R is
    the matrix of ``rotation``.  The default is the identity transform.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pivot: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.rotation = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.pivot = np.asarray(self.pivot, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.translation)) and np.all(np.isfinite(self.pivot))):
            raise ParameterError("transform translation and pivot must be finite")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to a (3,) point or (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        out = (points - self.pivot) @ self.rotation_matrix.T + self.pivot + self.translation
        return out

    def inverse(self) -> "RigidTransform":
        """The transform that undoes this one (same pivot)."""
        R = self.rotation_matrix
        return RigidTransform(
            rotation=quat_conjugate(self.rotation),
            translation=-(R.T @ self.translation),
            pivot=self.pivot,
        )

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying `inner` first, then this one.

        The result uses a zero pivot; pivots are folded into the
        translation.
        """
        R_outer = self.rotation_matrix
        t_outer = self.apply(np.zeros(3))
        t_inner = inner.apply(np.zeros(3))
        return RigidTransform(
            rotation=quat_multiply(self.rotation, inner.rotation),
            translation=R_outer @ t_inner + t_outer,
            pivot=np.zeros(3),
        )


class GaussianCloud:
    """A structure-of-arrays collection of Gaussians sharing one SH degree.

    Arrays are owned by the cloud and read-only from the caller's point of
    view; editing operations return new clouds.
    """

    def __init__(
        self,
        means: np.ndarray,
        rotations: np.ndarray,
        scales: np.ndarray,
        opacities: np.ndarray,
        sh: np.ndarray,
        labels: np.ndarray | None = None,
        validate: bool = True,
    ) -> None:
        self.means = np.array(means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.rotations = np.array(rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.array(scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.array(opacities, dtype=np.float64).reshape(n)
        sh = np.array(sh, dtype=np.float64)
        if sh.ndim == 2:
            # flat per-gaussian layout; regroup into (basis, channel)
            if sh.shape[1] % 3:
                raise ParameterError("flat SH arrays must hold (r, g, b) triples")
            sh = sh.reshape(n, sh.shape[1] // 3, 3)
        if sh.ndim != 3 or sh.shape[0] != n or sh.shape[2] != 3:
            raise ParameterError("sh array must have shape (N, basis, 3) or (N, 3*basis)")
        self.sh = sh
        self.sh_degree = sh_degree_from_count(3 * self.sh.shape[1])
        if labels is None:
            self.labels = np.zeros(n, dtype=np.int32)
        else:
            self.labels = np.array(labels, dtype=np.int32).reshape(n)
        if validate:
            self._validate()

    def _validate(self) -> None:
        if not np.all(np.isfinite(self.means)):
            raise ParameterError("cloud means must be finite")
        if not np.all(np.isfinite(self.scales)) or np.any(self.scales <= 0):
            raise ParameterError("cloud scales must be finite and positive")
        if np.any(self.opacities < 0) or np.any(self.opacities > 1) or not np.all(
            np.isfinite(self.opacities)
        ):
            raise ParameterError("cloud opacities must lie in [0, 1]")
        if not np.all(np.isfinite(self.sh)):
            raise ParameterError("cloud SH coefficients must be finite")
        if np.any(self.labels < 0):
            raise ParameterError("cloud labels must be non-negative")
        norms2 = np.sum(self.rotations * self.rotations, axis=1)
        if np.any(norms2 < QUAT_NORM_EPS) or not np.all(np.isfinite(norms2)):
            raise ParameterError("cloud contains a degenerate rotation quaternion")
        self.rotations = self.rotations / np.sqrt(norms2)[:, np.newaxis]

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianCloud":
        basis = (sh_degree + 1) ** 2
        sh_coeff_count(sh_degree)
        return cls(
            means=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            scales=np.zeros((0, 3)),
            opacities=np.zeros(0),
            sh=np.zeros((0, basis, 3)),
        )

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian]) -> "GaussianCloud":
        if not gaussians:
            return cls.empty()
        degrees = {g.sh_degree for g in gaussians}
        if len(degrees) != 1:
            raise ParameterError(f"gaussians mix SH degrees {sorted(degrees)}")
        return cls(
            means=np.stack([g.mean for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            scales=np.stack([g.scale for g in gaussians]),
            opacities=np.array([g.opacity for g in gaussians]),
            sh=np.stack([g.sh.reshape(-1, 3) for g in gaussians]),
            labels=np.array([g.label for g in gaussians], dtype=np.int32),
        )

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, index: int) -> Gaussian:
        i = int(index)
        return Gaussian(
            mean=self.means[i].copy(),
            rotation=self.rotations[i].copy(),
            scale=self.scales[i].copy(),
            opacity=float(self.opacities[i]),
            sh=self.sh[i].reshape(-1).copy(),
            label=int(self.labels[i]),
        )

    def __iter__(self) -> Iterator[Gaussian]:
        for i in range(len(self)):
            yield self[i]

    def select(self, mask_or_indices: np.ndarray) -> "GaussianCloud":
        """New cloud holding the selected rows (boolean mask or index array)."""
        idx = np.asarray(mask_or_indices)
        return GaussianCloud(
            means=self.means[idx],
            rotations=self.rotations[idx],
            scales=self.scales[idx],
            opacities=self.opacities[idx],
            sh=self.sh[idx],
            labels=self.labels[idx],
            validate=False,
        )

    def with_labels(self, labels: int | np.ndarray) -> "GaussianCloud":
        """Copy of the cloud with the label column replaced."""
        if np.isscalar(labels):
            arr = np.full(len(self), int(labels), dtype=np.int32)
        else:
            arr = np.asarray(labels, dtype=np.int32).reshape(len(self))
        if np.any(arr < 0):
            raise ParameterError("labels must be non-negative")
        return GaussianCloud(
            means=self.means,
            rotations=self.rotations,
            scales=self.scales,
            opacities=self.opacities,
            sh=self.sh,
            labels=arr,
            validate=False,
        )

    def with_sh_degree(self, degree: int) -> "GaussianCloud":
        """Copy with the SH basis zero-padded up to `degree`.

        Padding with zeros leaves the radiance unchanged. Truncation is
        refused because it would change appearance.
        """
        sh_coeff_count(degree)
        if degree < self.sh_degree:
            raise ParameterError(
                f"cannot demote SH degree {self.sh_degree} to {degree} without losing terms"
            )
        if degree == self.sh_degree:
            return self.select(np.arange(len(self)))
        basis = (degree + 1) ** 2
        padded = np.zeros((len(self), basis, 3), dtype=np.float64)
        padded[:, : self.sh.shape[1], :] = self.sh
        return GaussianCloud(
            means=self.means,
            rotations=self.rotations,
            scales=self.scales,
            opacities=self.opacities,
            sh=padded,
            labels=self.labels,
            validate=False,
        )

    def covariances(self) -> np.ndarray:
        """(N, 3, 3) world covariances for all Gaussians."""
        R = quats_to_matrices(self.rotations)
        M = R * self.scales[:, np.newaxis, :]
        return M @ np.transpose(M, (0, 2, 1))


@dataclass
class Camera:
    """A pinhole camera: intrinsics plus a 4x4 world-to-camera matrix.

    The camera looks down +z in its own frame; x is right and y is down
    in image space. A world point p projects to
    ``u = fx * x/z + cx, v = fy * y/z + cy`` with (x, y, z) = R p + t.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray
    near: float = 0.01

    def __post_init__(self) -> None:
        self.fx = float(self.fx)
        self.fy = float(self.fy)
        self.cx = float(self.cx)
        self.cy = float(self.cy)
        self.width = int(self.width)
        self.height = int(self.height)
        self.near = float(self.near)
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ParameterError("image size must be at least 1x1")
        if self.near <= 0:
            raise ParameterError("near plane must be positive")
        R = self.world_to_camera[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ParameterError("world_to_camera rotation block is not orthonormal")
        if not np.allclose(self.world_to_camera[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ParameterError("world_to_camera bottom row must be [0, 0, 0, 1]")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -(self.rotation.T @ self.translation)

    @classmethod
    def from_quaternion(
        cls,
        fx: float,
        fy: float,
        cx: float,
        cy: float,
        width: int,
        height: int,
        qvec: np.ndarray,
        tvec: np.ndarray,
        near: float = 0.01,
    ) -> "Camera":
        """Build from a world-to-camera rotation quaternion and translation."""
        M = np.eye(4)
        M[:3, :3] = quat_to_matrix(quat_normalize(qvec))
        M[:3, 3] = np.asarray(tvec, dtype=np.float64).reshape(3)
        return cls(fx, fy, cx, cy, width, height, M, near)

    @classmethod
    def look_at(
        cls,
        position: np.ndarray,
        target: np.ndarray,
        fx: float,
        fy: float,
        cx: float,
        cy: float,
        width: int,
        height: int,
        up: np.ndarray = (0.0, 0.0, 1.0),
        near: float = 0.01,
    ) -> "Camera":
        """Camera at `position` whose +z axis points at `target`.

        `up` fixes the roll; the view direction must not be parallel to
        it.
        """
        position = np.asarray(position, dtype=np.float64).reshape(3)
        target = np.asarray(target, dtype=np.float64).reshape(3)
        up = np.asarray(up, dtype=np.float64).reshape(3)
        forward = target - position
        fn = np.linalg.norm(forward)
        if fn < 1e-12:
            raise ParameterError("camera position coincides with the look-at target")
        forward = forward / fn
        right = np.cross(forward, up)
        rn = np.linalg.norm(right)
        if rn < 1e-9:
            raise ParameterError("view direction is parallel to the up vector")
        right = right / rn
        down = np.cross(forward, right)
        M = np.eye(4)
        M[:3, :3] = np.stack([right, down, forward])
        M[:3, 3] = -(M[:3, :3] @ position)
        return cls(fx, fy, cx, cy, width, height, M, near)
