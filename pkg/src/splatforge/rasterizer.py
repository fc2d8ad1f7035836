"""CPU splat rasterizer: a tiled renderer and a brute-force reference.

Both paths implement the same blending contract and must agree to
numerical precision; the tiled path exists for speed, the reference for
trust.  The contract, per pixel with splats in front-to-back depth
order:

    alpha_i = sigma_i * exp(-0.5 * d^T conic_i d),  d = pixel_center - uv_i
    skip the splat if d^T conic_i d > 9 (outside 3 sigma) or alpha_i < 1/255
    C += alpha_i * T * c_i;  T *= 1 - alpha_i
    once T < 1e-4 the pixel is saturated: T freezes and later splats
    contribute nothing
    afterwards C += T * background (color mode)

Projection follows the EWA scheme: the world covariance is pushed
through the camera rotation and the perspective Jacobian, and a 0.3 px
isotropic floor is added before inversion so sub-pixel splats stay
visible.  Depth-order ties are broken by scene index, which makes
renders deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .editing import CompositeScene, default_label_color
from .errors import ParameterError
from .gaussians import Camera, Gaussian, GaussianCloud, quats_to_matrices
from .sh import evaluate_sh_colors

TILE = 16
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_MIN = 1e-4
COV2D_FLOOR = 0.3
CUTOFF_SQ = 9.0  # (3 sigma)^2 in conic units
_CHUNK = 64

RENDER_MODES = ("color", "label", "tool_mask")


@dataclass
class Splat2D:
    """A Gaussian after projection into one camera."""

    uv: np.ndarray          # (2,) pixel coordinates of the projected mean
    conic: np.ndarray       # (2, 2) inverse of the dilated 2D covariance
    depth: float            # camera-space z, used for ordering
    color: np.ndarray       # (3,) view-dependent color
    alpha_scale: float      # base opacity multiplying the 2D falloff
    source_index: int = 0   # position in the source cloud (ordering tie-break)


@dataclass
class RenderOutput:
    """Images produced by one render call.

    color: (H, W, 3) float in [0, 1].
    alpha: (H, W) float coverage, 1 - final transmittance.
    label: (H, W) int32 per-pixel winning label, only in "label" mode.
    """

    color: np.ndarray
    alpha: np.ndarray
    label: np.ndarray | None = None


def _project_arrays(cloud: GaussianCloud, cam: Camera, indices: np.ndarray) -> dict:
    """EWA-project a cloud; returns per-splat arrays for the visible subset.

    `indices` carries the scene position of every row (the depth
    tie-break key); rows culled by the near plane or the screen bounds
    are dropped.  "row" in the result maps back into the given cloud.
    """
    R = cam.rotation
    t = cam.translation
    p_cam = cloud.means @ R.T + t
    z_all = p_cam[:, 2]
    vis = np.flatnonzero(z_all > cam.near)
    p_cam = p_cam[vis]
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]

    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy

    rot = quats_to_matrices(cloud.rotations[vis])
    M = rot * cloud.scales[vis][:, np.newaxis, :]
    cov_world = M @ np.transpose(M, (0, 2, 1))
    cov_cam = np.einsum("ij,njk,lk->nil", R, cov_world, R)

    J = np.zeros((z.shape[0], 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / (z * z)
    cov2d = np.einsum("nij,njk,nlk->nil", J, cov_cam, J)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    conic_a = c / det
    conic_b = -b / det
    conic_c = a / det

    # Support rectangle of each splat.  The cutoff ellipse is q <= 9,
    # but where sigma * exp(-q/2) < 1/255 the alpha floor skips the
    # pixel anyway, so low-opacity splats get a tighter exact bound.
    sigma = np.clip(cloud.opacities[vis], ALPHA_MIN, None)
    qmax = np.minimum(CUTOFF_SQ, 2.0 * np.log(sigma / ALPHA_MIN))
    rx = np.sqrt(qmax * a)
    ry = np.sqrt(qmax * c)
    on = (u + rx >= 0) & (u - rx <= cam.width) & (v + ry >= 0) & (v - ry <= cam.height)

    keep = np.flatnonzero(on)
    return {
        "row": vis[keep],
        "index": indices[vis][keep],
        "u": u[keep],
        "v": v[keep],
        "depth": z[keep],
        "conic_a": conic_a[keep],
        "conic_b": conic_b[keep],
        "conic_c": conic_c[keep],
        "rx": rx[keep],
        "ry": ry[keep],
    }


def project(g: Gaussian, cam: Camera, source_index: int = 0) -> Splat2D | None:
    """Project a single Gaussian; None if it is culled."""
    cloud = GaussianCloud.from_gaussians([g])
    arrays = _project_arrays(cloud, cam, np.array([source_index]))
    if arrays["u"].shape[0] == 0:
        return None
    direction = g.mean - cam.position
    color = evaluate_sh_colors(
        cloud.sh, cloud.sh_degree, (direction / np.linalg.norm(direction))[np.newaxis]
    )[0]
    return Splat2D(
        uv=np.array([arrays["u"][0], arrays["v"][0]]),
        conic=np.array(
            [
                [arrays["conic_a"][0], arrays["conic_b"][0]],
                [arrays["conic_b"][0], arrays["conic_c"][0]],
            ]
        ),
        depth=float(arrays["depth"][0]),
        color=color,
        alpha_scale=float(g.opacity),
        source_index=source_index,
    )


def _as_cloud(scene: CompositeScene | GaussianCloud) -> GaussianCloud:
    return scene.cloud if isinstance(scene, CompositeScene) else scene


def _prepare(
    scene: CompositeScene | GaussianCloud,
    cam: Camera,
    mode: str,
    background,
    tool_id: int | None,
) -> dict:
    """Shared front end: validate, cull, color, and depth-sort the scene.

    The returned arrays are in blending order.  Splats whose base
    opacity is below the 1/255 contribution floor are dropped here; they
    could never pass the alpha test at any pixel, so both renderers see
    identical lists with or without them.
    """
    if mode not in RENDER_MODES:
        raise ParameterError(f"unknown render mode {mode!r}")
    if mode == "tool_mask":
        if tool_id is None or int(tool_id) < 1:
            raise ParameterError("tool_mask mode needs a tool id >= 1")
        tool_id = int(tool_id)

    background = np.asarray(background, dtype=np.float64).reshape(3)
    if np.any(background < 0) or np.any(background > 1) or not np.all(np.isfinite(background)):
        raise ParameterError("background color channels must lie in [0, 1]")
    if mode != "color":
        background = np.zeros(3)

    cloud = _as_cloud(scene)
    keep = cloud.opacities >= ALPHA_MIN
    if mode == "tool_mask":
        keep &= cloud.labels == tool_id
    indices = np.flatnonzero(keep)
    sub = cloud.select(indices)

    arrays = _project_arrays(sub, cam, indices)
    rows = arrays.pop("row")
    sigma = sub.opacities[rows]

    plane_labels = None
    planes = None
    if mode == "label":
        unique = np.unique(cloud.labels)
        plane_labels = np.concatenate([[0], unique[unique != 0]]).astype(np.int32)
        palette = np.stack([default_label_color(int(l)) for l in plane_labels])
        lut = {int(l): i for i, l in enumerate(plane_labels)}
        planes = np.array([lut[int(l)] for l in sub.labels[rows]], dtype=np.int32)
        colors = palette[planes] if rows.size else np.zeros((0, 3))
    else:
        direction = sub.means[rows] - cam.position
        if rows.size:
            colors = evaluate_sh_colors(
                sub.sh[rows], sub.sh_degree, direction / np.linalg.norm(direction, axis=1, keepdims=True)
            )
        else:
            colors = np.zeros((0, 3))

    order = np.lexsort((arrays["index"], arrays["depth"]))
    prepared = {k: val[order] for k, val in arrays.items()}
    prepared["sigma"] = sigma[order]
    prepared["color"] = colors[order]
    prepared["planes"] = planes[order] if planes is not None else None
    prepared["plane_labels"] = plane_labels
    prepared["background"] = background
    prepared["mode"] = mode
    return prepared


def _finalize(
    prepared: dict,
    C: np.ndarray,
    T: np.ndarray,
    label_weights: np.ndarray | None,
) -> RenderOutput:
    C = C + T[:, :, np.newaxis] * prepared["background"]
    label = None
    if prepared["mode"] == "label":
        label_weights[0] += T  # unclaimed transmittance counts as background
        winner = np.argmax(label_weights, axis=0)  # ties go to the lower label
        label = prepared["plane_labels"][winner].astype(np.int32)
    return RenderOutput(color=np.clip(C, 0.0, 1.0), alpha=1.0 - T, label=label)


def render_reference(
    scene: CompositeScene | GaussianCloud,
    cam: Camera,
    mode: str = "color",
    background=(0.0, 0.0, 0.0),
    tool_id: int | None = None,
) -> RenderOutput:
    """Brute-force renderer: one splat at a time over its 3 sigma support.

    No tiles, no batching, no early termination; each splat visits every
    pixel its cutoff ellipse can touch (outside that rectangle its
    contribution is exactly zero by the contract).  Slow, but each step
    mirrors the blending rules literally.
    """
    prepared = _prepare(scene, cam, mode, background, tool_id)
    H, W = cam.height, cam.width
    C = np.zeros((H, W, 3))
    T = np.ones((H, W))
    LW = (
        np.zeros((len(prepared["plane_labels"]), H, W))
        if prepared["mode"] == "label"
        else None
    )

    xs = np.arange(W) + 0.5
    ys = np.arange(H) + 0.5

    for s in range(prepared["u"].shape[0]):
        u, v = prepared["u"][s], prepared["v"][s]
        rx, ry = prepared["rx"][s], prepared["ry"][s]
        x0 = max(0, int(np.floor(u - rx - 0.5)))
        x1 = min(W, int(np.ceil(u + rx + 0.5)))
        y0 = max(0, int(np.floor(v - ry - 0.5)))
        y1 = min(H, int(np.ceil(v + ry + 0.5)))
        if x0 >= x1 or y0 >= y1:
            continue
        dx = xs[x0:x1][np.newaxis, :] - u
        dy = ys[y0:y1][:, np.newaxis] - v
        q = (
            prepared["conic_a"][s] * dx * dx
            + 2.0 * prepared["conic_b"][s] * dx * dy
            + prepared["conic_c"][s] * dy * dy
        )
        alpha = np.zeros_like(q)
        np.exp(-0.5 * q, out=alpha, where=q <= CUTOFF_SQ)
        alpha *= prepared["sigma"][s]
        alpha[alpha < ALPHA_MIN] = 0.0

        Tl = T[y0:y1, x0:x1]
        live = (alpha > 0.0) & (Tl >= TRANSMITTANCE_MIN)
        w = np.where(live, alpha * Tl, 0.0)
        C[y0:y1, x0:x1] += w[:, :, np.newaxis] * prepared["color"][s]
        if LW is not None:
            LW[prepared["planes"][s], y0:y1, x0:x1] += w
        T[y0:y1, x0:x1] = np.where(live, Tl * (1.0 - alpha), Tl)

    return _finalize(prepared, C, T, LW)


def _tile_pairs(prepared: dict, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """(splat position, tile id) pairs, sorted by tile then blending order."""
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    u, v = prepared["u"], prepared["v"]
    rx, ry = prepared["rx"], prepared["ry"]
    tx0 = np.clip(np.floor((u - rx) / TILE).astype(np.int64), 0, ntx - 1)
    tx1 = np.clip(np.floor((u + rx) / TILE).astype(np.int64), 0, ntx - 1)
    ty0 = np.clip(np.floor((v - ry) / TILE).astype(np.int64), 0, nty - 1)
    ty1 = np.clip(np.floor((v + ry) / TILE).astype(np.int64), 0, nty - 1)

    wx = tx1 - tx0 + 1
    wy = ty1 - ty0 + 1
    counts = wx * wy
    total = int(counts.sum())
    pos = np.repeat(np.arange(u.shape[0]), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    offsets = np.arange(total) - np.repeat(starts, counts)
    wx_rep = np.repeat(wx, counts)
    tx = np.repeat(tx0, counts) + offsets % wx_rep
    ty = np.repeat(ty0, counts) + offsets // wx_rep
    tiles = ty * ntx + tx

    order = np.lexsort((pos, tiles))
    return pos[order], tiles[order]


def render(
    scene: CompositeScene | GaussianCloud,
    cam: Camera,
    mode: str = "color",
    background=(0.0, 0.0, 0.0),
    tool_id: int | None = None,
) -> RenderOutput:
    """Tiled renderer; same contract as render_reference, much faster.

    Splats are binned into 16x16 pixel tiles by their cutoff rectangle
    and blended per tile in global depth order, a chunk of splats at a
    time.  A tile stops early once all of its pixels are saturated.
    """
    prepared = _prepare(scene, cam, mode, background, tool_id)
    H, W = cam.height, cam.width
    C = np.zeros((H, W, 3))
    T = np.ones((H, W))
    n_planes = len(prepared["plane_labels"]) if prepared["mode"] == "label" else 0
    LW = np.zeros((n_planes, H, W)) if n_planes else None

    if prepared["u"].shape[0]:
        pos, tiles = _tile_pairs(prepared, W, H)
        # gather per-pair attributes once so tile slices are contiguous;
        # conic entries carry the -1/2 of the exponent (exact scaling,
        # so alpha and the cutoff test match the reference bit for bit)
        pu = prepared["u"][pos]
        pv = prepared["v"][pos]
        pa = -0.5 * prepared["conic_a"][pos]
        pb2 = -prepared["conic_b"][pos]
        pc = -0.5 * prepared["conic_c"][pos]
        psig = prepared["sigma"][pos]
        pcol = prepared["color"][pos]
        pplane = prepared["planes"][pos] if LW is not None else None
        qcut = -0.5 * CUTOFF_SQ

        ntx = (W + TILE - 1) // TILE
        boundaries = np.flatnonzero(np.diff(tiles)) + 1
        starts = np.concatenate([[0], boundaries])
        ends = np.concatenate([boundaries, [tiles.shape[0]]])

        for t_start, t_end in zip(starts, ends):
            tile = int(tiles[t_start])
            tx, ty = tile % ntx, tile // ntx
            x0, y0 = tx * TILE, ty * TILE
            x1, y1 = min(W, x0 + TILE), min(H, y0 + TILE)
            w_t, h_t = x1 - x0, y1 - y0
            npix = w_t * h_t

            Tt = np.ones(npix)
            Ct = np.zeros((npix, 3))
            LWt = np.zeros((n_planes, npix)) if LW is not None else None

            # Saturated pixels accept no further contributions, so the
            # chunk kernel runs only on the still-live subset; in dense
            # scenes that shrinks fast and most splats touch few pixels.
            alive = np.arange(npix)
            pxa = np.tile(np.arange(x0, x1) + 0.5, h_t)
            pya = np.repeat(np.arange(y0, y1) + 0.5, w_t)
            Ta = np.ones(npix)  # transmittance entering the next chunk

            for c0 in range(t_start, t_end, _CHUNK):
                c1 = min(t_end, c0 + _CHUNK)
                dx = pxa[np.newaxis, :] - pu[c0:c1, np.newaxis]
                dy = pya[np.newaxis, :] - pv[c0:c1, np.newaxis]
                q = pa[c0:c1, np.newaxis] * dx
                q *= dx
                t = pb2[c0:c1, np.newaxis] * dx
                t *= dy
                q += t
                np.multiply(pc[c0:c1, np.newaxis], dy, out=t)
                t *= dy
                q += t
                alpha = t
                alpha[:] = 0.0
                np.exp(q, out=alpha, where=q >= qcut)
                alpha *= psig[c0:c1, np.newaxis]
                alpha[alpha < ALPHA_MIN] = 0.0

                np.subtract(1.0, alpha, out=q)
                trans = np.cumprod(q, axis=0, out=q)
                trans *= Ta[np.newaxis, :]  # absolute transmittance after each splat
                below = trans < TRANSMITTANCE_MIN
                crossed = below.any(axis=0)
                any_crossed = bool(crossed.any())
                w = alpha
                w[1:] *= trans[:-1]
                w[0] *= Ta
                if any_crossed:
                    w[1:][below[:-1]] = 0.0  # crossing freezes the rest of the chunk

                Ct[alive] += w.T @ pcol[c0:c1]
                if LWt is not None:
                    chunk_planes = pplane[c0:c1]
                    for plane in np.unique(chunk_planes):
                        LWt[plane, alive] += w[chunk_planes == plane].sum(axis=0)

                if any_crossed:
                    cols = np.flatnonzero(crossed)
                    first = below[:, cols].argmax(axis=0)
                    Tt[alive[cols]] = trans[first, cols]
                    live = ~crossed
                    alive = alive[live]
                    if alive.size == 0:
                        break
                    pxa = pxa[live]
                    pya = pya[live]
                    Ta = trans[-1, live]
                else:
                    Ta = trans[-1].copy()

            if alive.size:
                Tt[alive] = Ta

            C[y0:y1, x0:x1] = Ct.reshape(h_t, w_t, 3)
            T[y0:y1, x0:x1] = Tt.reshape(h_t, w_t)
            if LW is not None:
                LW[:, y0:y1, x0:x1] = LWt.reshape(n_planes, h_t, w_t)

    return _finalize(prepared, C, T, LW)
