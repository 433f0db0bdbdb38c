"""File formats: scene JSON, measurement and map binaries, PGM/CSV export.

Binary layouts (all little-endian, no padding):

ISPD (measurement sets)
    magic   4 bytes  b"ISPD"
    version u32      currently 1
    noise   f64      noise level used to synthesize the data (0.0 = clean)
    length  u64      number of complex samples = n_freq*n_tx*n_rx
    data    f64 x 2*length  interleaved re, im; sample index runs
                            rx fastest, then tx, then frequency

ISPM (property maps)
    magic   4 bytes  b"ISPM"
    version u32      currently 1
    nx      u32
    ny      u32
    eps_r   f64 x nx*ny   row-major (ny, nx)
    sigma_e f64 x nx*ny   row-major (ny, nx)

Writers are byte-deterministic: identical inputs produce identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .scene import PropertyMaps, Scene, SceneError

ISPD_MAGIC = b"ISPD"
ISPM_MAGIC = b"ISPM"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """File exists but its content does not parse as the expected format."""


def load_scene(path: str | Path) -> Scene:
    text = Path(path).read_text()
    try:
        return Scene.from_json(text)
    except (json.JSONDecodeError, SceneError) as exc:
        raise FormatError(f"{path}: not a valid scene file: {exc}") from exc


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(scene.to_json() + "\n")


def save_measurements(
    data: np.ndarray, path: str | Path, noise_level: float = 0.0
) -> None:
    """Write a (n_freq, n_tx, n_rx) complex array as an ISPD file."""
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise ValueError(f"measurement array must be 3-D (freq, tx, rx), got {arr.shape}")
    flat = np.ascontiguousarray(arr, dtype=np.complex128).reshape(-1)
    inter = np.empty(2 * flat.size, dtype="<f8")
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    header = ISPD_MAGIC + struct.pack("<IdQ", FORMAT_VERSION, float(noise_level), flat.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(inter.tobytes())


def load_measurements(
    path: str | Path, shape: tuple[int, int, int] | None = None
) -> tuple[np.ndarray, float]:
    """Read an ISPD file, returning (data, noise_level).

    With ``shape`` the flat sample vector is reshaped to (n_freq, n_tx, n_rx)
    and the sample count is checked against it; otherwise a 1-D array is
    returned.
    """
    raw = Path(path).read_bytes()
    head_len = 4 + struct.calcsize("<IdQ")
    if len(raw) < head_len or raw[:4] != ISPD_MAGIC:
        raise FormatError(f"{path}: not an ISPD file")
    version, noise_level, length = struct.unpack("<IdQ", raw[4:head_len])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported ISPD version {version}")
    expect = head_len + 16 * length
    if len(raw) != expect:
        raise FormatError(
            f"{path}: truncated or oversized payload ({len(raw)} bytes, expected {expect})"
        )
    inter = np.frombuffer(raw, dtype="<f8", offset=head_len)
    data = inter[0::2] + 1j * inter[1::2]
    if shape is not None:
        if int(np.prod(shape)) != length:
            raise FormatError(
                f"{path}: holds {length} samples, scene expects {tuple(shape)}"
            )
        data = data.reshape(shape)
    return data, float(noise_level)


def save_maps(maps: PropertyMaps, path: str | Path) -> None:
    """Write property maps as an ISPM file."""
    ny, nx = maps.shape
    header = ISPM_MAGIC + struct.pack("<III", FORMAT_VERSION, nx, ny)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(maps.eps_r, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(maps.sigma_e, dtype="<f8").tobytes())


def load_maps(path: str | Path) -> PropertyMaps:
    raw = Path(path).read_bytes()
    head_len = 4 + struct.calcsize("<III")
    if len(raw) < head_len or raw[:4] != ISPM_MAGIC:
        raise FormatError(f"{path}: not an ISPM file")
    version, nx, ny = struct.unpack("<III", raw[4:head_len])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported ISPM version {version}")
    n = nx * ny
    expect = head_len + 16 * n
    if len(raw) != expect:
        raise FormatError(
            f"{path}: truncated or oversized payload ({len(raw)} bytes, expected {expect})"
        )
    plane = np.frombuffer(raw, dtype="<f8", offset=head_len)
    eps_r = plane[:n].reshape(ny, nx).copy()
    sigma_e = plane[n:].reshape(ny, nx).copy()
    try:
        return PropertyMaps(eps_r, sigma_e)
    except SceneError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_pgm(
    values: np.ndarray,
    path: str | Path,
    vmin: float | None = None,
    vmax: float | None = None,
) -> None:
    """Write a 2-D array as a binary (P5) 8-bit PGM image.

    Values are mapped linearly from [vmin, vmax] to [0, 255]; the data range
    is used when bounds are omitted. Row 0 of the array is the top image row.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D array, got shape {arr.shape}")
    lo = float(np.min(arr)) if vmin is None else float(vmin)
    hi = float(np.max(arr)) if vmax is None else float(vmax)
    span = hi - lo
    if span <= 0:
        pix = np.zeros(arr.shape, dtype=np.uint8)
    else:
        pix = np.clip(np.round((arr - lo) / span * 255.0), 0, 255).astype(np.uint8)
    ny, nx = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM image back as a uint8 array."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":  # comment line
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    nx, ny, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported max value {maxval}")
    pos += 1  # single whitespace byte after the header
    if len(raw) - pos < nx * ny:
        raise FormatError(f"{path}: truncated pixel payload")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=nx * ny, offset=pos)
    return pixels.reshape(ny, nx).copy()


def write_csv_matrix(values: np.ndarray, path: str | Path) -> None:
    """Write a 2-D array as plain CSV with repr-exact floats."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"CSV export needs a 2-D array, got shape {arr.shape}")
    lines = [",".join(repr(float(v)) for v in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(obj: dict, path: str | Path) -> None:
    """Write a JSON document deterministically (sorted keys, fixed layout)."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
