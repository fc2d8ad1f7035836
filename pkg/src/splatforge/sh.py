"""Real spherical harmonics up to degree 3: color evaluation and rotation.

The basis ordering and sign conventions match the splat checkpoint
training stack, so coefficients loaded from PLY files evaluate to the
same colors here as in the original renderer.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .gaussians import Gaussian, quat_to_matrix

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_DEGREE = 3


def sh_basis(degree: int, dirs: np.ndarray) -> np.ndarray:
    """Evaluate the SH basis functions at unit directions.

    Parameters
    ----------
    degree: band limit, 0 to 3.
    dirs:   (..., 3) unit vectors.

    Returns
    -------
    (..., (degree+1)**2) basis values, band-major (l=0 first).
    """
    if degree not in (0, 1, 2, 3):
        raise ParameterError(f"unsupported SH degree {degree}; expected 0..3")
    dirs = np.asarray(dirs, dtype=np.float64)
    shape = dirs.shape[:-1]
    out = np.empty(shape + ((degree + 1) ** 2,), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = SH_C2[0] * xy
        out[..., 5] = SH_C2[1] * yz
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * xz
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * xy * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def evaluate_sh_colors(sh: np.ndarray, degree: int, dirs: np.ndarray) -> np.ndarray:
    """Colors for many Gaussians at once.

    sh is (N, (degree+1)**2, 3) and dirs is (N, 3) unit view directions
    (from the camera toward each Gaussian). Returns (N, 3) colors clamped
    to [0, 1].
    """
    basis = sh_basis(degree, dirs)
    colors = 0.5 + np.einsum("nb,nbc->nc", basis, sh)
    return np.clip(colors, 0.0, 1.0)


def evaluate_sh_color(g: Gaussian, view_dir: np.ndarray) -> np.ndarray:
    """Color of a single Gaussian seen along `view_dir` (need not be unit)."""
    view_dir = np.asarray(view_dir, dtype=np.float64).reshape(3)
    n = np.linalg.norm(view_dir)
    if n < 1e-12:
        raise ParameterError("view direction must be non-zero")
    sh = g.sh.reshape(-1, 3)
    return evaluate_sh_colors(sh[np.newaxis], g.sh_degree, (view_dir / n)[np.newaxis])[0]


def _band_sample_dirs(l: int) -> np.ndarray:
    """Fixed, well-spread unit directions used to fit band rotations.

    Twice as many points as the band has functions, so the fit below is
    overdetermined; with few points a spiral can land almost coplanar and
    the solve degenerates.
    """
    n = 2 * (2 * l + 1)
    k = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * k + 1.0) / n
    phi = k * (np.pi * (3.0 - np.sqrt(5.0))) + 0.5
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def band_slice(l: int) -> slice:
    return slice(l * l, (l + 1) * (l + 1))


def _band_basis(l: int, dirs: np.ndarray) -> np.ndarray:
    return sh_basis(l, dirs)[:, band_slice(l)]


# Per-band pseudoinverses of the sample-direction basis matrices, built once.
_BAND_SOLVES: dict[int, tuple[np.ndarray, np.ndarray]] = {}
for _l in (1, 2, 3):
    _P = _band_sample_dirs(_l)
    _A = _band_basis(_l, _P)
    _BAND_SOLVES[_l] = (_P, np.linalg.pinv(_A))
del _l, _P, _A


def band_rotation_matrices(rotation: np.ndarray, degree: int) -> list[np.ndarray]:
    """Matrices M_l with c_out = M_l @ c_in per band, for l = 0..degree.

    `rotation` is a 3x3 matrix or a unit quaternion (w, x, y, z). Each M_l
    is fitted by evaluating the band at 2l+1 fixed directions before and
    after rotation; for a band-limited function this is exact up to
    floating point.
    """
    if degree not in (0, 1, 2, 3):
        raise ParameterError(f"unsupported SH degree {degree}; expected 0..3")
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape == (4,):
        rotation = quat_to_matrix(rotation / np.linalg.norm(rotation))
    if rotation.shape != (3, 3):
        raise ParameterError("rotation must be a quaternion (4,) or matrix (3, 3)")
    matrices = [np.eye(1)]
    for l in range(1, degree + 1):
        P, A_pinv = _BAND_SOLVES[l]
        # f'(d) = f(R^T d), so sample the original basis at R^T P
        B = _band_basis(l, P @ rotation)
        matrices.append(A_pinv @ B)
    return matrices


def rotate_sh(sh: np.ndarray, rotation: np.ndarray, degree: int) -> np.ndarray:
    """Rotate SH coefficients so the radiance field follows `rotation`.

    sh is (..., (degree+1)**2, 3); a flat (3*(degree+1)**2,) vector is
    also accepted and returned in kind. Band 0 is unchanged.
    """
    sh = np.asarray(sh, dtype=np.float64)
    flat = sh.ndim == 1
    if flat:
        sh = sh.reshape(-1, 3)
    if sh.shape[-2] != (degree + 1) ** 2:
        raise ParameterError(
            f"sh has {sh.shape[-2]} basis entries; degree {degree} needs {(degree + 1) ** 2}"
        )
    out = sh.copy()
    for l, M in enumerate(band_rotation_matrices(rotation, degree)):
        if l == 0:
            continue
        block = sh[..., band_slice(l), :]
        out[..., band_slice(l), :] = np.einsum("mk,...kc->...mc", M, block)
    return out.reshape(-1) if flat else out
