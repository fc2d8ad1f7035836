"""Camera paths and per-frame tool poses.

A trajectory file is plain text, one frame per line, `#` starts a
comment.  Blocks are separated by `|`; the first block is the camera,
the rest are tool poses:

    frame_id fx fy cx cy width height qw qx qy qz tx ty tz \
        | tool_id qw qx qy qz tx ty tz [| ...]

The camera quaternion and translation give the world-to-camera mapping;
tool pose blocks give the model-to-world motion of the named tool
(rotation about the origin of the tool's model frame, then translation).
Floats are written with enough digits to round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ParameterError
from .gaussians import Camera, RigidTransform, matrix_to_quat


@dataclass
class CameraIntrinsics:
    """Projection parameters without a pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ParameterError("image size must be at least 1x1")
        if self.near <= 0:
            raise ParameterError("near plane must be positive")


@dataclass
class FrameSpec:
    """One dataset frame: an id, a camera, and tool placements."""

    frame_id: int
    camera: Camera
    tool_poses: list[tuple[int, RigidTransform]]


def sample_orbit(
    n: int,
    radius: float,
    elevation: float,
    target: np.ndarray,
    intrinsics: CameraIntrinsics,
) -> list[Camera]:
    """Cameras on a circle around `target`, all looking at it.

    Azimuths are 2*pi*k/n for k = 0..n-1 at the given elevation angle
    (radians above the horizontal plane); camera k sits at

        target + radius * (cos e cos a, cos e sin a, sin e).

    The world up direction is +z, so elevations near +-pi/2 make the
    view direction parallel to up and are rejected.
    """
    if n < 1:
        raise ParameterError("orbit needs at least one camera")
    if radius <= 0:
        raise ParameterError("orbit radius must be positive")
    target = np.asarray(target, dtype=np.float64).reshape(3)
    cameras = []
    for k in range(n):
        azimuth = 2.0 * np.pi * k / n
        offset = radius * np.array(
            [
                np.cos(elevation) * np.cos(azimuth),
                np.cos(elevation) * np.sin(azimuth),
                np.sin(elevation),
            ]
        )
        cameras.append(
            Camera.look_at(
                position=target + offset,
                target=target,
                fx=intrinsics.fx,
                fy=intrinsics.fy,
                cx=intrinsics.cx,
                cy=intrinsics.cy,
                width=intrinsics.width,
                height=intrinsics.height,
                near=intrinsics.near,
            )
        )
    return cameras


def _parse_floats(fields: Sequence[str], path: str, lineno: int) -> list[float]:
    out = []
    for f in fields:
        try:
            out.append(float(f))
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: {f!r} is not a number") from None
    return out


def _parse_int(field: str, what: str, path: str, lineno: int) -> int:
    try:
        return int(field)
    except ValueError:
        raise FormatError(f"{path}: line {lineno}: {what} {field!r} is not an integer") from None


def load_trajectory(
    path: str | Path, known_tool_ids: Sequence[int] | None = None
) -> list[FrameSpec]:
    """Parse a trajectory file; errors carry the offending line number.

    When known_tool_ids is given, a frame referencing any other tool id
    is rejected.
    """
    path = Path(path)
    known = None if known_tool_ids is None else {int(i) for i in known_tool_ids}
    frames: list[FrameSpec] = []
    seen_ids: set[int] = set()
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            blocks = [b.strip() for b in line.split("|")]
            cam_fields = blocks[0].split()
            if len(cam_fields) != 14:
                raise FormatError(
                    f"{path}: line {lineno}: camera block has {len(cam_fields)} fields, "
                    "expected 14 (id, 6 intrinsics, quaternion, translation)"
                )
            frame_id = _parse_int(cam_fields[0], "frame id", str(path), lineno)
            if frame_id < 0:
                raise FormatError(f"{path}: line {lineno}: negative frame id {frame_id}")
            if frame_id in seen_ids:
                raise FormatError(f"{path}: line {lineno}: duplicate frame id {frame_id}")
            seen_ids.add(frame_id)
            values = _parse_floats(cam_fields[1:], str(path), lineno)
            fx, fy, cx, cy, w, h = values[0:6]
            if w != int(w) or h != int(h):
                raise FormatError(f"{path}: line {lineno}: image size must be integral")
            qvec = np.array(values[6:10])
            tvec = np.array(values[10:13])
            try:
                camera = Camera.from_quaternion(fx, fy, cx, cy, int(w), int(h), qvec, tvec)
            except ParameterError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc

            poses: list[tuple[int, RigidTransform]] = []
            frame_tools: set[int] = set()
            for block in blocks[1:]:
                fields = block.split()
                if len(fields) != 8:
                    raise FormatError(
                        f"{path}: line {lineno}: tool block has {len(fields)} fields, "
                        "expected 8 (id, quaternion, translation)"
                    )
                tool_id = _parse_int(fields[0], "tool id", str(path), lineno)
                if tool_id < 1:
                    raise FormatError(f"{path}: line {lineno}: tool id {tool_id} must be >= 1")
                if known is not None and tool_id not in known:
                    raise FormatError(
                        f"{path}: line {lineno}: unknown tool id {tool_id}; "
                        f"configured ids are {sorted(known)}"
                    )
                if tool_id in frame_tools:
                    raise FormatError(f"{path}: line {lineno}: tool id {tool_id} repeated")
                frame_tools.add(tool_id)
                pose_values = _parse_floats(fields[1:], str(path), lineno)
                try:
                    pose = RigidTransform(
                        rotation=np.array(pose_values[0:4]),
                        translation=np.array(pose_values[4:7]),
                    )
                except ParameterError as exc:
                    raise FormatError(f"{path}: line {lineno}: {exc}") from exc
                poses.append((tool_id, pose))
            frames.append(FrameSpec(frame_id=frame_id, camera=camera, tool_poses=poses))
    return frames


def save_trajectory(frames: Sequence[FrameSpec], path: str | Path) -> None:
    """Inverse of load_trajectory; floats round-trip exactly."""

    def fmt(v: float) -> str:
        return format(float(v), ".17g")

    with open(path, "w", encoding="ascii") as fh:
        for frame in frames:
            cam = frame.camera
            qvec = matrix_to_quat(cam.rotation)
            parts = [str(frame.frame_id)]
            parts += [fmt(v) for v in (cam.fx, cam.fy, cam.cx, cam.cy)]
            parts += [str(cam.width), str(cam.height)]
            parts += [fmt(v) for v in qvec]
            parts += [fmt(v) for v in cam.translation]
            line = " ".join(parts)
            for tool_id, pose in frame.tool_poses:
                fields = [str(tool_id)]
                fields += [fmt(v) for v in pose.rotation]
                fields += [fmt(v) for v in pose.translation]
                line += " | " + " ".join(fields)
            fh.write(line + "\n")
