"""Weight container: named f32 tensors plus metadata, one file per network.

Binary layout (little-endian, no padding):

    magic    4 bytes  b"LDWT"
    version  u32      currently 1
    mlen     u32      byte length of the metadata JSON blob
    metadata mlen bytes of UTF-8 JSON
    count    u32      number of tensors
    per tensor:
        nlen u16      byte length of the name
        name nlen bytes of UTF-8
        ndim u8
        dims u32 x ndim
        data f32 x prod(dims), row-major

Writers emit tensors in sorted name order so identical containers are
byte-identical. The metadata JSON carries:

    arch            "encoder" | "decoder" | "score"
    latent          [N_u, N_v] latent grid (rows, cols)
    channels        property channels C (encoder/decoder; 1 = eps only,
                    2 = eps then conductivity)
    channel_ranges  C pairs [lo, hi]; physical units mapped onto [-1, 1]
    sigma_d         diffusion scale the score net was trained for (score)
    fourier_w       256 fixed time-embedding frequencies (score)

Tensor names are a fixed contract per architecture tag (any writer must
match them exactly; extra tensors such as a training-time variance head
under "enc_var." are kept but ignored by the forward passes):

    encoder   enc1.*, enc2.*       downsampling blocks C->16, 16->64
              enc_mu.conv{1,2,3}   mean head 64->32->16->1
    decoder   dec_in.conv{1,2,3}   input head 1->16->32->64
              dec2.*, dec1.*       upsampling blocks 64->16, 16->C
    score     temb.dense           512->512 embedding layer
              ds{1,2,3}.*          encoder path, widths 32/64/128
              us{3,2,1}.*          decoder path with skip concatenation
              out.conv{1,2,3}      output head 64->64->64->1

Within a block, conv1..conv3 are the normalized 3x3 convolutions, gn1..gn3
their group norms (suffixes .g/.b for scale/shift), conv4/conv5 the plain
refinement convolutions, down*/up* the stride-2 and post-upsample
convolutions, and temb the per-block 512->width time projection. Weights
are (C_out, C_in, 3, 3) for convolutions and (out, in) for dense layers;
every bias, scale and shift is 1-D.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

LDWT_MAGIC = b"LDWT"
LDWT_VERSION = 1

ARCH_TAGS = ("encoder", "decoder", "score")


class WeightsFormatError(ValueError):
    """File is not a parseable weight container of the supported version."""


class MissingTensorError(ValueError):
    """A tensor the architecture requires is absent from the container."""


class TensorShapeError(ValueError):
    """A tensor is present but its shape contradicts the architecture."""


def _conv(prefix: str, c_out: int, c_in: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.w": (c_out, c_in, 3, 3), f"{prefix}.b": (c_out,)}


def _gn(prefix: str, c: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.g": (c,), f"{prefix}.b": (c,)}


def _dense(prefix: str, n_out: int, n_in: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.w": (n_out, n_in), f"{prefix}.b": (n_out,)}


def _head(prefix: str, widths: tuple[int, int, int, int]) -> dict:
    c0, c1, c2, c3 = widths
    t = _conv(f"{prefix}.conv1", c1, c0)
    t |= _conv(f"{prefix}.conv2", c2, c1)
    t |= _conv(f"{prefix}.conv3", c3, c2)
    return t


def _enc_block(prefix: str, c_in: int, c: int) -> dict:
    t = _conv(f"{prefix}.conv1", c, c_in) | _gn(f"{prefix}.gn1", c)
    t |= _conv(f"{prefix}.conv2", c, c) | _gn(f"{prefix}.gn2", c)
    t |= _conv(f"{prefix}.conv3", c, c) | _gn(f"{prefix}.gn3", c)
    t |= _conv(f"{prefix}.down1", c, c)
    t |= _conv(f"{prefix}.conv4", c, c)
    t |= _conv(f"{prefix}.conv5", c, c)
    t |= _conv(f"{prefix}.down2", c, c)
    return t


def _dec_block(prefix: str, c_in: int, c: int) -> dict:
    t = _conv(f"{prefix}.conv1", 2 * c, c_in) | _gn(f"{prefix}.gn1", 2 * c)
    t |= _conv(f"{prefix}.conv2", 2 * c, 2 * c) | _gn(f"{prefix}.gn2", 2 * c)
    t |= _conv(f"{prefix}.conv3", 2 * c, 2 * c) | _gn(f"{prefix}.gn3", 2 * c)
    t |= _conv(f"{prefix}.up1", c, 2 * c)
    t |= _conv(f"{prefix}.up2", c, 2 * c)
    t |= _conv(f"{prefix}.conv4", c, c)
    t |= _conv(f"{prefix}.conv5", c, c)
    return t


def _ds_block(prefix: str, c_in: int, c: int) -> dict:
    t = _conv(f"{prefix}.conv1", c, c_in) | _gn(f"{prefix}.gn1", c)
    t |= _conv(f"{prefix}.conv2", c, c) | _gn(f"{prefix}.gn2", c)
    t |= _dense(f"{prefix}.temb", c, 512)
    t |= _conv(f"{prefix}.conv3", c, c) | _gn(f"{prefix}.gn3", c)
    t |= _conv(f"{prefix}.conv4", c, c) | _gn(f"{prefix}.gn4", c)
    t |= _conv(f"{prefix}.down", c, c)
    return t


def _us_block(prefix: str, c_in: int, c: int) -> dict:
    t = _conv(f"{prefix}.conv1", 2 * c, c_in) | _gn(f"{prefix}.gn1", 2 * c)
    t |= _conv(f"{prefix}.conv2", 2 * c, 2 * c) | _gn(f"{prefix}.gn2", 2 * c)
    t |= _dense(f"{prefix}.temb", 2 * c, 512)
    t |= _conv(f"{prefix}.conv3", 2 * c, 2 * c) | _gn(f"{prefix}.gn3", 2 * c)
    t |= _conv(f"{prefix}.conv4", 2 * c, 2 * c) | _gn(f"{prefix}.gn4", 2 * c)
    t |= _conv(f"{prefix}.up", c, 2 * c)
    return t


def architecture_tensors(arch: str, channels: int) -> dict[str, tuple[int, ...]]:
    """Expected tensor name -> shape table for one architecture tag."""
    if arch == "encoder":
        return (
            _enc_block("enc1", channels, 16)
            | _enc_block("enc2", 16, 64)
            | _head("enc_mu", (64, 32, 16, 1))
        )
    if arch == "decoder":
        return (
            _head("dec_in", (1, 16, 32, 64))
            | _dec_block("dec2", 64, 16)
            | _dec_block("dec1", 16, channels)
        )
    if arch == "score":
        return (
            _dense("temb.dense", 512, 512)
            | _ds_block("ds1", 1, 32)
            | _ds_block("ds2", 32, 64)
            | _ds_block("ds3", 64, 128)
            | _us_block("us3", 128, 128)
            | _us_block("us2", 256, 64)
            | _us_block("us1", 128, 32)
            | _head("out", (64, 64, 64, 1))
        )
    raise WeightsFormatError(f"unknown architecture tag {arch!r}")


def _validate_metadata(meta: dict) -> None:
    arch = meta.get("arch")
    if arch not in ARCH_TAGS:
        raise WeightsFormatError(f"unknown architecture tag {arch!r}")
    latent = meta.get("latent")
    if (
        not isinstance(latent, (list, tuple))
        or len(latent) != 2
        or any(int(n) <= 0 for n in latent)
    ):
        raise WeightsFormatError(f"latent dims must be two positive ints, got {latent}")
    if arch == "score":
        if any(int(n) % 8 for n in latent):
            raise WeightsFormatError(
                f"score latent dims must be divisible by 8 (three halvings), "
                f"got {latent}"
            )
        sigma_d = meta.get("sigma_d")
        if sigma_d is None or not float(sigma_d) > 1.0:
            raise WeightsFormatError(f"score container needs sigma_d > 1, got {sigma_d}")
        w = meta.get("fourier_w")
        if w is None or len(w) != 256 or not np.all(np.isfinite(w)):
            raise WeightsFormatError("score container needs 256 finite fourier_w values")
        return
    channels = meta.get("channels")
    if channels not in (1, 2):
        raise WeightsFormatError(f"channels must be 1 or 2, got {channels}")
    ranges = meta.get("channel_ranges")
    if ranges is None or len(ranges) != channels:
        raise WeightsFormatError("channel_ranges must give [lo, hi] per channel")
    for pair in ranges:
        if len(pair) != 2 or not float(pair[1]) > float(pair[0]):
            raise WeightsFormatError(f"channel range must satisfy hi > lo, got {pair}")


@dataclasses.dataclass
class WeightsContainer:
    """Validated, immutable-by-convention bundle of one network's tensors."""

    metadata: dict
    tensors: dict[str, np.ndarray]
    sha256: str | None = None

    def __post_init__(self) -> None:
        _validate_metadata(self.metadata)
        self.tensors = {
            name: np.ascontiguousarray(arr, dtype=np.float32)
            for name, arr in self.tensors.items()
        }
        channels = int(self.metadata.get("channels", 1))
        expected = architecture_tensors(self.arch, channels)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise MissingTensorError(f"missing tensor {name!r} ({self.arch})")
            got = self.tensors[name].shape
            if got != shape:
                raise TensorShapeError(
                    f"tensor {name!r} has shape {got}, expected {shape}"
                )

    @property
    def arch(self) -> str:
        return self.metadata["arch"]

    @property
    def latent(self) -> tuple[int, int]:
        return tuple(int(n) for n in self.metadata["latent"])

    @property
    def channels(self) -> int:
        return int(self.metadata.get("channels", 1))

    @property
    def channel_ranges(self) -> np.ndarray:
        return np.asarray(self.metadata["channel_ranges"], dtype=float)

    @property
    def sigma_d(self) -> float:
        return float(self.metadata["sigma_d"])

    @property
    def fourier_w(self) -> np.ndarray:
        return np.asarray(self.metadata["fourier_w"], dtype=float)


def save_weights(w: WeightsContainer, path: str | Path) -> None:
    blob = json.dumps(w.metadata).encode()
    parts = [
        LDWT_MAGIC,
        struct.pack("<I", LDWT_VERSION),
        struct.pack("<I", len(blob)),
        blob,
        struct.pack("<I", len(w.tensors)),
    ]
    for name in sorted(w.tensors):
        arr = w.tensors[name]
        enc = name.encode()
        parts.append(struct.pack("<H", len(enc)) + enc)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Cursor:
    """Bounds-checked reader over the raw container bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsFormatError("truncated weight container")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_weights(path: str | Path) -> WeightsContainer:
    """Parse and validate a weight container; records its content hash."""
    data = Path(path).read_bytes()
    cur = _Cursor(data)
    magic = cur.take(4)
    if magic != LDWT_MAGIC:
        raise WeightsFormatError(f"bad magic {magic!r}, expected {LDWT_MAGIC!r}")
    version = cur.u32()
    if version != LDWT_VERSION:
        raise WeightsFormatError(
            f"unsupported container version {version}, expected {LDWT_VERSION}"
        )
    try:
        meta = json.loads(cur.take(cur.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"metadata is not valid JSON: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    for _ in range(cur.u32()):
        name = cur.take(cur.u16()).decode()
        ndim = cur.u8()
        dims = struct.unpack(f"<{ndim}I", cur.take(4 * ndim))
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = cur.take(4 * count)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if cur.pos != len(data):
        raise WeightsFormatError(
            f"{len(data) - cur.pos} trailing bytes after the last tensor"
        )
    return WeightsContainer(
        metadata=meta,
        tensors=tensors,
        sha256=hashlib.sha256(data).hexdigest(),
    )
