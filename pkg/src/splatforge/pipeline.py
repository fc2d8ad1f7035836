"""Batch dataset generation: config files, job execution, manifests.

A job config is a flat text file of `key = value` lines (# comments).
Example:

    background = scenes/kitchen.ply
    tool = 1 tools/spatula.ply
    tool = 2 tools/whisk.ply
    tool.1.label_color = 1 0 0
    tool.2.pose = 0.92 0 0.38 0  0.1 0 0.4

    trajectory = poses.txt        # or orbit_frames/orbit_radius/...
    width = 640
    height = 480
    fx = 500
    fy = 500

Relative paths are resolved against the config file location.  The
output directory is not part of the config (and not part of its hash),
so the same job can be generated anywhere and compared byte for byte.

Per frame the pipeline writes images/<id>.png (the composed color
render), masks/<id>_<tool>.png (one flat-color mask render per placed
tool) and labels/<id>.txt (bounding boxes), plus a manifest.json tying
everything together.  The manifest records no wall-clock times other
than durations, so two runs of one job differ only in *_seconds fields.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .annotation import annotate, write_annotations
from .editing import (
    ExtractionParams,
    assign_label,
    default_label_color,
    extract_foreground,
    fuse,
)
from .errors import ConfigError, SplatError
from .gaussians import GaussianCloud, RigidTransform
from .imgio import write_color_png
from .ply_io import load_ply
from .rasterizer import render
from .trajectory import CameraIntrinsics, FrameSpec, load_trajectory, sample_orbit

_KNOWN_KEYS = {
    "background",
    "trajectory",
    "orbit_frames",
    "orbit_radius",
    "orbit_elevation_deg",
    "orbit_target",
    "width",
    "height",
    "fx",
    "fy",
    "cx",
    "cy",
    "near",
    "background_color",
    "threshold",
    "min_area",
    "merge_components",
    "sh_rotation",
    "seed",
}
_TOOL_KEYS = {
    "label_color",
    "extract",
    "center_mode",
    "radius_percentile",
    "knn_k",
    "knn_distance_factor",
    "pose",
}


@dataclass
class ToolConfig:
    tool_id: int
    path: Path
    label_color: np.ndarray
    extract: bool = True
    extraction: ExtractionParams = field(default_factory=ExtractionParams)
    pose: RigidTransform = field(default_factory=RigidTransform)


@dataclass
class OrbitSpec:
    frames: int
    radius: float
    elevation: float  # radians
    target: np.ndarray


@dataclass
class JobConfig:
    background_path: Path
    tools: list[ToolConfig]
    intrinsics: CameraIntrinsics
    trajectory_path: Path | None = None
    orbit: OrbitSpec | None = None
    background_color: np.ndarray = field(default_factory=lambda: np.zeros(3))
    threshold: float = 0.1
    min_area: int = 16
    merge_components: bool = False
    sh_rotation: str = "exact"
    seed: int = 0
    output_dir: Path | None = None

    def __post_init__(self) -> None:
        if (self.trajectory_path is None) == (self.orbit is None):
            raise ConfigError("exactly one of a trajectory file or an orbit must be given")
        if self.sh_rotation not in ("exact", "dc_only"):
            raise ConfigError(f"unknown sh_rotation {self.sh_rotation!r}")
        ids = [t.tool_id for t in self.tools]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate tool ids in config: {sorted(ids)}")


def _parse_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: {value!r} is not a boolean")


def _parse_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: {value!r} is not a number") from None


def _parse_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: {value!r} is not an integer") from None


def _parse_vector(value: str, key: str, n: int) -> np.ndarray:
    fields = value.split()
    if len(fields) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {len(fields)}")
    return np.array([_parse_float(f, key) for f in fields])


def parse_config(path: str | Path) -> JobConfig:
    """Read a job config file. Raises ConfigError on any problem."""
    path = Path(path)
    base = path.parent
    entries: dict[str, str] = {}
    tool_lines: list[str] = []
    tool_overrides: dict[int, dict[str, str]] = {}

    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not value:
                raise ConfigError(f"{path}: line {lineno}: empty value for {key!r}")
            if key == "tool":
                tool_lines.append(value)
            elif key.startswith("tool."):
                parts = key.split(".")
                if len(parts) != 3 or parts[2] not in _TOOL_KEYS:
                    raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
                tool_id = _parse_int(parts[1], key)
                tool_overrides.setdefault(tool_id, {})
                if parts[2] in tool_overrides[tool_id]:
                    raise ConfigError(f"{path}: line {lineno}: duplicate key {key!r}")
                tool_overrides[tool_id][parts[2]] = value
            elif key in _KNOWN_KEYS:
                if key in entries:
                    raise ConfigError(f"{path}: line {lineno}: duplicate key {key!r}")
                entries[key] = value
            else:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")

    if "background" not in entries:
        raise ConfigError(f"{path}: missing required key 'background'")
    for required in ("width", "height", "fx", "fy"):
        if required not in entries:
            raise ConfigError(f"{path}: missing required key {required!r}")

    width = _parse_int(entries["width"], "width")
    height = _parse_int(entries["height"], "height")
    intrinsics = CameraIntrinsics(
        fx=_parse_float(entries["fx"], "fx"),
        fy=_parse_float(entries["fy"], "fy"),
        cx=_parse_float(entries["cx"], "cx") if "cx" in entries else width / 2.0,
        cy=_parse_float(entries["cy"], "cy") if "cy" in entries else height / 2.0,
        width=width,
        height=height,
        near=_parse_float(entries["near"], "near") if "near" in entries else 0.01,
    )

    tools = []
    for value in tool_lines:
        fields = value.split(None, 1)
        if len(fields) != 2:
            raise ConfigError(f"tool: expected '<id> <path>', got {value!r}")
        tool_id = _parse_int(fields[0], "tool id")
        if tool_id < 1:
            raise ConfigError(f"tool id {tool_id} must be >= 1 (0 is the background)")
        overrides = tool_overrides.pop(tool_id, {})
        extraction = ExtractionParams(
            center_mode=overrides.get("center_mode", "median"),
            radius_percentile=_parse_float(
                overrides["radius_percentile"], "radius_percentile"
            )
            if "radius_percentile" in overrides
            else 95.0,
            knn_k=_parse_int(overrides["knn_k"], "knn_k") if "knn_k" in overrides else 8,
            knn_distance_factor=_parse_float(
                overrides["knn_distance_factor"], "knn_distance_factor"
            )
            if "knn_distance_factor" in overrides
            else 4.0,
        )
        if "label_color" in overrides:
            label_color = _parse_vector(overrides["label_color"], "label_color", 3)
        else:
            label_color = default_label_color(tool_id)
        pose = RigidTransform()
        if "pose" in overrides:
            pv = _parse_vector(overrides["pose"], "pose", 7)
            pose = RigidTransform(rotation=pv[:4], translation=pv[4:])
        tools.append(
            ToolConfig(
                tool_id=tool_id,
                path=base / fields[1],
                label_color=label_color,
                extract=_parse_bool(overrides["extract"], "extract")
                if "extract" in overrides
                else True,
                extraction=extraction,
                pose=pose,
            )
        )
    if tool_overrides:
        missing = sorted(tool_overrides)
        raise ConfigError(f"{path}: tool.{missing[0]}.* keys but no 'tool = {missing[0]} ...' line")

    orbit = None
    trajectory_path = None
    if "trajectory" in entries:
        for key in entries:
            if key.startswith("orbit_"):
                raise ConfigError(f"{path}: both a trajectory and {key!r} given")
        trajectory_path = base / entries["trajectory"]
    elif "orbit_frames" in entries:
        for required in ("orbit_radius",):
            if required not in entries:
                raise ConfigError(f"{path}: missing required key {required!r}")
        orbit = OrbitSpec(
            frames=_parse_int(entries["orbit_frames"], "orbit_frames"),
            radius=_parse_float(entries["orbit_radius"], "orbit_radius"),
            elevation=np.deg2rad(
                _parse_float(entries.get("orbit_elevation_deg", "0"), "orbit_elevation_deg")
            ),
            target=_parse_vector(entries.get("orbit_target", "0 0 0"), "orbit_target", 3),
        )
    else:
        raise ConfigError(f"{path}: needs either 'trajectory' or 'orbit_frames'")

    threshold = _parse_float(entries.get("threshold", "0.1"), "threshold")
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold {threshold} outside (0, 1)")
    min_area = _parse_int(entries.get("min_area", "16"), "min_area")
    if min_area < 1:
        raise ConfigError("min_area must be at least 1")

    background_color = (
        _parse_vector(entries["background_color"], "background_color", 3)
        if "background_color" in entries
        else np.zeros(3)
    )
    if np.any(background_color < 0) or np.any(background_color > 1):
        raise ConfigError("background_color channels must lie in [0, 1]")

    return JobConfig(
        background_path=base / entries["background"],
        tools=tools,
        intrinsics=intrinsics,
        trajectory_path=trajectory_path,
        orbit=orbit,
        background_color=background_color,
        threshold=threshold,
        min_area=min_area,
        merge_components=_parse_bool(entries["merge_components"], "merge_components")
        if "merge_components" in entries
        else False,
        sh_rotation=entries.get("sh_rotation", "exact"),
        seed=_parse_int(entries.get("seed", "0"), "seed"),
    )


def config_hash(config: JobConfig) -> str:
    """Stable digest of everything that affects output content.

    The output directory is deliberately excluded so identical jobs
    generated into different places produce identical manifests.
    """
    canon = {
        "background": str(config.background_path),
        "trajectory": None if config.trajectory_path is None else str(config.trajectory_path),
        "orbit": None
        if config.orbit is None
        else {
            "frames": config.orbit.frames,
            "radius": config.orbit.radius,
            "elevation": config.orbit.elevation,
            "target": list(config.orbit.target),
        },
        "intrinsics": [
            config.intrinsics.fx,
            config.intrinsics.fy,
            config.intrinsics.cx,
            config.intrinsics.cy,
            config.intrinsics.width,
            config.intrinsics.height,
            config.intrinsics.near,
        ],
        "background_color": list(config.background_color),
        "threshold": config.threshold,
        "min_area": config.min_area,
        "merge_components": config.merge_components,
        "sh_rotation": config.sh_rotation,
        "seed": config.seed,
        "tools": [
            {
                "id": t.tool_id,
                "path": str(t.path),
                "label_color": list(t.label_color),
                "extract": t.extract,
                "center_mode": t.extraction.center_mode,
                "radius_percentile": t.extraction.radius_percentile,
                "knn_k": t.extraction.knn_k,
                "knn_distance_factor": t.extraction.knn_distance_factor,
                "pose": list(t.pose.rotation) + list(t.pose.translation),
            }
            for t in config.tools
        ],
    }
    text = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("ascii")).hexdigest()


def _frame_paths(frame: FrameSpec) -> dict:
    stem = f"{frame.frame_id:06d}"
    return {
        "image": f"images/{stem}.png",
        "masks": {tool_id: f"masks/{stem}_{tool_id}.png" for tool_id, _ in frame.tool_poses},
        "labels": f"labels/{stem}.txt",
    }


def _count_lines(path: Path) -> int:
    with open(path, "r", encoding="ascii") as fh:
        return sum(1 for line in fh if line.strip())


def generate(
    config: JobConfig,
    resume: bool = False,
    keep_going: bool = False,
    progress: Callable[[str], None] | None = None,
) -> dict:
    """Run a whole job; returns the manifest (also written to disk).

    resume skips frames whose outputs already exist.  keep_going records
    a frame failure in the manifest and moves on instead of aborting; on
    abort the partial manifest is still written first.
    """
    if config.output_dir is None:
        raise ConfigError("config.output_dir must be set before generating")
    out = Path(config.output_dir)
    for sub in ("images", "masks", "labels"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    def say(msg: str) -> None:
        if progress is not None:
            progress(msg)

    job_start = time.perf_counter()
    background = load_ply(config.background_path)
    say(f"background: {len(background)} gaussians from {config.background_path}")

    tool_entries = []
    labeled: dict[int, GaussianCloud] = {}
    flat: dict[int, GaussianCloud] = {}
    for tc in config.tools:
        raw = load_ply(tc.path)
        kept = raw
        if tc.extract:
            kept, _ = extract_foreground(raw, tc.extraction)
        labeled[tc.tool_id], flat[tc.tool_id] = assign_label(kept, tc.tool_id, tc.label_color)
        tool_entries.append(
            {
                "id": tc.tool_id,
                "path": str(tc.path),
                "gaussians_raw": len(raw),
                "gaussians_kept": len(kept),
                "label_color": [float(v) for v in tc.label_color],
            }
        )
        say(f"tool {tc.tool_id}: kept {len(kept)}/{len(raw)} gaussians from {tc.path}")

    if config.trajectory_path is not None:
        frames = load_trajectory(config.trajectory_path, known_tool_ids=list(labeled))
    else:
        cameras = sample_orbit(
            config.orbit.frames,
            config.orbit.radius,
            config.orbit.elevation,
            config.orbit.target,
            config.intrinsics,
        )
        static = [(tc.tool_id, tc.pose) for tc in config.tools]
        frames = [
            FrameSpec(frame_id=k, camera=cam, tool_poses=list(static))
            for k, cam in enumerate(cameras)
        ]

    manifest = {
        "config_hash": config_hash(config),
        "image_width": config.intrinsics.width,
        "image_height": config.intrinsics.height,
        "background": {
            "path": str(config.background_path),
            "gaussians": len(background),
        },
        "tools": tool_entries,
        "frames": [],
        "frames_total": len(frames),
        "frames_rendered": 0,
        "frames_skipped": 0,
        "frames_failed": 0,
    }

    def flush(total_seconds: float) -> None:
        manifest["total_seconds"] = total_seconds
        with open(out / "manifest.json", "w", encoding="ascii") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    for frame in frames:
        paths = _frame_paths(frame)
        entry = {
            "frame_id": frame.frame_id,
            "image": paths["image"],
            "masks": {str(k): v for k, v in sorted(paths["masks"].items())},
            "labels": paths["labels"],
        }
        expected = [paths["image"], paths["labels"]]
        expected += list(paths["masks"].values())
        if resume and all((out / rel).exists() for rel in expected):
            entry["status"] = "skipped"
            entry["annotations"] = _count_lines(out / paths["labels"])
            manifest["frames"].append(entry)
            manifest["frames_skipped"] += 1
            say(f"frame {frame.frame_id:06d}: skipped (outputs exist)")
            continue

        start = time.perf_counter()
        try:
            placed = [(labeled[t], pose) for t, pose in frame.tool_poses]
            scene = fuse(background, placed, sh_mode=config.sh_rotation)
            color_out = render(scene, frame.camera, "color", config.background_color)
            write_color_png(color_out.color, out / paths["image"])

            flat_placed = [(flat[t], pose) for t, pose in frame.tool_poses]
            mask_scene = fuse(GaussianCloud.empty(0), flat_placed, sh_mode="dc_only")
            records = []
            for tool_id, _ in frame.tool_poses:
                mask_out = render(mask_scene, frame.camera, "tool_mask", tool_id=tool_id)
                write_color_png(mask_out.color, out / paths["masks"][tool_id])
                records.extend(
                    annotate(
                        mask_out,
                        class_id=tool_id - 1,
                        threshold=config.threshold,
                        min_area=config.min_area,
                        merge_components=config.merge_components,
                    )
                )
            records.sort(key=lambda r: r.class_id)
            write_annotations(records, out / paths["labels"])
        except SplatError as exc:
            entry["status"] = "failed"
            entry["error"] = str(exc)
            manifest["frames"].append(entry)
            manifest["frames_failed"] += 1
            say(f"frame {frame.frame_id:06d}: FAILED: {exc}")
            if keep_going:
                continue
            flush(time.perf_counter() - job_start)
            raise SplatError(f"frame {frame.frame_id} failed: {exc}") from exc

        entry["status"] = "rendered"
        entry["annotations"] = len(records)
        entry["gaussians"] = len(scene.cloud)
        entry["render_seconds"] = time.perf_counter() - start
        manifest["frames"].append(entry)
        manifest["frames_rendered"] += 1
        say(f"frame {frame.frame_id:06d}: {len(records)} boxes")

    flush(time.perf_counter() - job_start)
    return manifest


def strip_timings(manifest: dict) -> dict:
    """Copy of a manifest without *_seconds fields, for comparing runs."""
    out = json.loads(json.dumps(manifest))
    out.pop("total_seconds", None)
    for frame in out.get("frames", []):
        frame.pop("render_seconds", None)
    return out
