"""Reading and writing splat checkpoints as binary little-endian PLY.

Layout per vertex (all float32, in this order):

    x y z nx ny nz f_dc_0 f_dc_1 f_dc_2 [f_rest_0 .. f_rest_{K-1}]
    opacity scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3

with K in {0, 9, 24, 45} for SH degrees 0 to 3.  Stored values use the
training parametrization: opacity is a logit, scales are logs, and the
quaternion is unnormalized (w, x, y, z).  ``f_rest`` is channel-major:
all red coefficients for bases 1..B-1, then all green, then all blue.
Normals are carried but ignored; we write zeros.

Integer labels ride in a sidecar text file (one label per line, same
order as the vertices) so the PLY itself stays loadable by standard
splat viewers.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .errors import FormatError, ParameterError
from .gaussians import GaussianCloud

_PLY_TYPES = {
    "float": ("<f4", 4),
    "float32": ("<f4", 4),
    "double": ("<f8", 8),
    "float64": ("<f8", 8),
    "uchar": ("u1", 1),
    "uint8": ("u1", 1),
    "char": ("i1", 1),
    "int8": ("i1", 1),
    "ushort": ("<u2", 2),
    "uint16": ("<u2", 2),
    "short": ("<i2", 2),
    "int16": ("<i2", 2),
    "uint": ("<u4", 4),
    "uint32": ("<u4", 4),
    "int": ("<i4", 4),
    "int32": ("<i4", 4),
}

_REST_COUNTS = {0: 0, 1: 9, 2: 24, 3: 45}

# Opacities are clamped into this open interval before the logit when
# saving, so 0 and 1 survive a round trip as their nearest representable
# activation values.
_OPACITY_CLAMP = 1e-6


def _property_names(sh_rest: int) -> list[str]:
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(sh_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def ply_header(count: int, sh_degree: int) -> bytes:
    """The exact header bytes written in front of `count` vertices."""
    if sh_degree not in _REST_COUNTS:
        raise ParameterError(f"unsupported SH degree {sh_degree}; expected 0..3")
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    lines += [f"property float {name}" for name in _property_names(_REST_COUNTS[sh_degree])]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def _parse_header(stream: io.BufferedReader, path: str) -> tuple[int, list[tuple[str, str]]]:
    """Returns (vertex count, ordered [(name, ply type)] for element vertex)."""

    def next_line() -> str:
        raw = stream.readline(1024)
        if not raw.endswith(b"\n"):
            raise FormatError(f"{path}: header ended before end_header")
        return raw.decode("latin-1").strip()

    if next_line() != "ply":
        raise FormatError(f"{path}: not a PLY file (missing 'ply' magic)")
    fmt = next_line()
    if fmt != "format binary_little_endian 1.0":
        raise FormatError(f"{path}: unsupported format {fmt!r}; "
                          "only binary_little_endian 1.0 is handled")

    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        line = next_line()
        if line == "end_header":
            break
        fields = line.split()
        if not fields or fields[0] == "comment":
            continue
        if fields[0] == "element":
            if len(fields) != 3:
                raise FormatError(f"{path}: malformed element line {line!r}")
            in_vertex = fields[1] == "vertex"
            if in_vertex:
                if count is not None:
                    raise FormatError(f"{path}: duplicate vertex element")
                try:
                    count = int(fields[2])
                except ValueError:
                    raise FormatError(f"{path}: bad vertex count {fields[2]!r}") from None
                if count < 0:
                    raise FormatError(f"{path}: negative vertex count")
            elif count is None:
                # another element before vertex would shift the payload
                raise FormatError(f"{path}: element {fields[1]!r} precedes vertex data")
        elif fields[0] == "property" and in_vertex:
            if len(fields) != 3:
                raise FormatError(f"{path}: unsupported property line {line!r}")
            if fields[1] == "list":
                raise FormatError(f"{path}: list properties are not supported")
            if fields[1] not in _PLY_TYPES:
                raise FormatError(f"{path}: unknown property type {fields[1]!r}")
            props.append((fields[2], fields[1]))
    if count is None:
        raise FormatError(f"{path}: no vertex element in header")
    names = [n for n, _ in props]
    if len(set(names)) != len(names):
        raise FormatError(f"{path}: duplicate property names in vertex element")
    return count, props


def load_ply(path: str | Path) -> GaussianCloud:
    """Load a splat checkpoint. Labels are zero; see load_labels for sidecars.

    Raises FormatError naming the offending property when required fields
    are missing or have a non-float type, and on truncated payloads.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        count, props = _parse_header(fh, str(path))
        dtype = np.dtype([(name, _PLY_TYPES[typ][0]) for name, typ in props])
        payload = fh.read(count * dtype.itemsize + 1)
    if len(payload) < count * dtype.itemsize:
        raise FormatError(
            f"{path}: payload truncated, expected {count * dtype.itemsize} bytes "
            f"for {count} vertices but found {len(payload)}"
        )
    if len(payload) > count * dtype.itemsize:
        raise FormatError(f"{path}: trailing bytes after {count} vertices")

    by_name = dict(props)
    rest_names = sorted(
        (n for n in by_name if n.startswith("f_rest_")),
        key=lambda n: int(n.split("_")[-1]),
    )
    n_rest = len(rest_names)
    if n_rest not in (0, 9, 24, 45):
        raise FormatError(
            f"{path}: {n_rest} f_rest properties match no SH degree (expected 0, 9, 24 or 45)"
        )
    expected = [f"f_rest_{i}" for i in range(n_rest)]
    if rest_names != expected:
        missing = sorted(set(expected) - set(rest_names))
        raise FormatError(f"{path}: f_rest indices not contiguous, missing {missing[0]}")

    needed = _property_names(n_rest)
    for name in needed:
        if name not in by_name:
            raise FormatError(f"{path}: missing required property {name!r}")
        if by_name[name] not in ("float", "float32"):
            raise FormatError(
                f"{path}: property {name!r} has type {by_name[name]!r}, expected float"
            )

    rows = np.frombuffer(payload, dtype=dtype, count=count)

    def col(name: str) -> np.ndarray:
        return np.asarray(rows[name], dtype=np.float64)

    means = np.stack([col("x"), col("y"), col("z")], axis=1) if count else np.zeros((0, 3))
    if not np.all(np.isfinite(means)):
        raise FormatError(f"{path}: non-finite vertex position")

    basis = n_rest // 3 + 1
    sh = np.zeros((count, basis, 3), dtype=np.float64)
    for c in range(3):
        sh[:, 0, c] = col(f"f_dc_{c}")
    for c in range(3):  # channel-major on disk: bases vary fastest
        for b in range(1, basis):
            sh[:, b, c] = col(f"f_rest_{c * (basis - 1) + (b - 1)}")

    opacities = expit(col("opacity"))
    scales = np.exp(np.stack([col("scale_0"), col("scale_1"), col("scale_2")], axis=1)
                    if count else np.zeros((0, 3)))
    if not np.all(np.isfinite(scales)):
        raise FormatError(f"{path}: non-finite scale after exp")
    rots = (np.stack([col("rot_0"), col("rot_1"), col("rot_2"), col("rot_3")], axis=1)
            if count else np.zeros((0, 4)))
    norms = np.linalg.norm(rots, axis=1)
    bad = np.flatnonzero(~np.isfinite(norms) | (norms < 1e-12))
    if bad.size:
        raise FormatError(f"{path}: zero-norm rotation quaternion at vertex {bad[0]}")
    rots = rots / norms[:, np.newaxis] if count else rots

    try:
        return GaussianCloud(means, rots, scales, opacities, sh)
    except ParameterError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_ply(cloud: GaussianCloud, path: str | Path) -> None:
    """Write a cloud as a checkpoint PLY (labels go to a sidecar, not here)."""
    path = Path(path)
    n = len(cloud)
    basis = cloud.sh.shape[1]
    columns = [
        cloud.means[:, 0], cloud.means[:, 1], cloud.means[:, 2],
        np.zeros(n), np.zeros(n), np.zeros(n),
        cloud.sh[:, 0, 0], cloud.sh[:, 0, 1], cloud.sh[:, 0, 2],
    ]
    for c in range(3):
        for b in range(1, basis):
            columns.append(cloud.sh[:, b, c])
    columns.append(logit(np.clip(cloud.opacities, _OPACITY_CLAMP, 1.0 - _OPACITY_CLAMP)))
    for a in range(3):
        columns.append(np.log(cloud.scales[:, a]))
    for a in range(4):
        columns.append(cloud.rotations[:, a])
    data = np.stack(columns, axis=1).astype("<f4") if n else np.zeros((0, len(columns)), "<f4")
    with open(path, "wb") as fh:
        fh.write(ply_header(n, cloud.sh_degree))
        fh.write(data.tobytes())


def load_labels(path: str | Path, expected_count: int | None = None) -> np.ndarray:
    """Read a label sidecar: one non-negative integer per line."""
    path = Path(path)
    labels = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                value = int(text)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: {text!r} is not an integer") from None
            if value < 0:
                raise FormatError(f"{path}: line {lineno}: negative label {value}")
            labels.append(value)
    out = np.array(labels, dtype=np.int32)
    if expected_count is not None and out.size != expected_count:
        raise FormatError(
            f"{path}: {out.size} labels but the cloud has {expected_count} gaussians"
        )
    return out


def save_labels(labels: np.ndarray, path: str | Path) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise ParameterError("labels must be non-negative")
    with open(path, "w", encoding="ascii") as fh:
        for value in labels:
            fh.write(f"{int(value)}\n")


def label_sidecar_path(ply_path: str | Path) -> Path:
    """Conventional sidecar location: <stem>.labels.txt next to the PLY."""
    ply_path = Path(ply_path)
    return ply_path.with_name(ply_path.stem + ".labels.txt")
