"""On-disk formats: raw tensor container, model file, PNG images with sidecars.

Raw tensor layout (little-endian)::

    b"PSTN" | u16 version | u8 dtype code | u8 rank | u64 dims[rank] | payload | u32 CRC32

dtype codes: 0 = float32, 1 = complex64, 2 = uint8. The CRC covers every
preceding byte. Model files wrap a JSON header and one raw tensor per
parameter::

    b"PSTM" | u16 version | u32 header length | JSON header | (u64 length | raw tensor)* | u32 CRC32
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

TENSOR_MAGIC = b"PSTN"
MODEL_MAGIC = b"PSTM"
FORMAT_VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<c8"): 1, np.dtype("u1"): 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class FormatError(ValueError):
    pass


def encode_tensor(array) -> bytes:
    array = np.asarray(array)
    key = array.dtype.newbyteorder("<")
    if key not in DTYPE_CODES:
        raise FormatError(f"unsupported dtype {array.dtype}; use float32, complex64 or uint8")
    if array.ndim > 255:
        raise FormatError("rank too large")
    header = TENSOR_MAGIC + struct.pack("<HBB", FORMAT_VERSION, DTYPE_CODES[key], array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    body = header + np.ascontiguousarray(array, dtype=key).tobytes(order="C")
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 12 or blob[:4] != TENSOR_MAGIC:
        raise FormatError("not a raw tensor (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise FormatError("CRC mismatch")
    version, code, rank = struct.unpack("<HBB", blob[4:8])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", blob[8:8 + 8 * rank])
    dtype = CODE_DTYPES[code]
    payload = blob[8 + 8 * rank:-4]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"payload has {len(payload)} bytes, dims {dims} need {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_tensor(path, array):
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def save_model(path, generator, extra=None):
    """Write generator weights, architecture and phase normalization constants."""
    from .neural.train import PHASE_MAX, PHASE_MIN

    names = list(generator.params)
    header = {
        "kind": "generator",
        "architecture": generator.arch.to_dict(),
        "normalization": {"phase_min": PHASE_MIN, "phase_max": PHASE_MAX, "output": "YCbCr BT.601 full range"},
        "parameters": names,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = MODEL_MAGIC + struct.pack("<HI", FORMAT_VERSION, len(head)) + head
    for name in names:
        blob = encode_tensor(np.asarray(generator.params[name], dtype=np.float32))
        body += struct.pack("<Q", len(blob)) + blob
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_model(path):
    """Returns (Generator, header dict)."""
    from .neural.nets import Architecture, Generator

    blob = Path(path).read_bytes()
    if blob[:4] != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise FormatError("model CRC mismatch")
    version, head_len = struct.unpack("<HI", blob[4:10])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model version {version}")
    header = json.loads(blob[10:10 + head_len])
    pos = 10 + head_len
    params = {}
    for name in header["parameters"]:
        (n,) = struct.unpack("<Q", blob[pos:pos + 8])
        params[name] = decode_tensor(blob[pos + 8:pos + 8 + n])
        pos += 8 + n
    return Generator(Architecture(**header["architecture"]), params), header


def save_rgb_png(path, rgb):
    rgb = np.clip(np.asarray(rgb, dtype=float), 0, 1)
    Image.fromarray(np.round(rgb * 255).astype(np.uint8), mode="RGB").save(path)


def load_rgb_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=float) / 255.0


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_phase_png(path, phase, lo=None, hi=None):
    """16-bit grey PNG with the (min, max) radian scale stored in a JSON sidecar."""
    phase = np.asarray(phase, dtype=float)
    lo = float(phase.min()) if lo is None else float(lo)
    hi = float(phase.max()) if hi is None else float(hi)
    scale = (hi - lo) or 1.0
    q = np.round(np.clip((phase - lo) / scale, 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(q).save(path)
    sidecar_path(path).write_text(json.dumps({"min": lo, "max": hi, "units": "rad"}))


def load_phase_png(path) -> np.ndarray:
    meta = json.loads(sidecar_path(path).read_text())
    q = np.asarray(Image.open(path), dtype=float)
    return meta["min"] + q / 65535.0 * (meta["max"] - meta["min"])


def load_image(path) -> np.ndarray:
    """Read a phase map or colour image from .pstn or .png by extension."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix == ".pstn":
        return read_tensor(path).astype(np.float64)
    if path.suffix == ".png":
        if sidecar_path(path).exists():
            return load_phase_png(path)
        return load_rgb_png(path)
    raise FormatError(f"unsupported image extension {path.suffix!r}")
