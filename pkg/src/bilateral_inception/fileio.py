"""Readers and writers for the on-disk formats.

* images: binary PPM (P6, maxval 255)
* partitions and label maps: binary PGM (P5), maxval 65535, big-endian samples
* matrices: ``BIMX`` container (magic, u32 rows, u32 cols, row-major f64 LE)
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .errors import ChecksumError, FileFormatError, InvalidArgumentError

BIMX_MAGIC = b"BIMX"


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc.strerror}") from exc


def _parse_netpbm_header(data: bytes, path, magic: bytes):
    if data[:2] != magic:
        raise FileFormatError(f"{path}: not a {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FileFormatError(f"{path}: malformed header")
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates header from raster
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FileFormatError(f"{path}: invalid header values {fields}")
    return width, height, maxval, pos


def _raster(data: bytes, offset: int, count: int, maxval: int, path) -> np.ndarray:
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = count * dtype.itemsize
    if len(data) - offset < nbytes:
        raise FileFormatError(f"{path}: truncated raster")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset)


def read_ppm(path) -> np.ndarray:
    """Load a P6 file as an ``(H, W, 3)`` float64 array scaled to [0, 1]."""
    data = _read_bytes(path)
    width, height, maxval, offset = _parse_netpbm_header(data, path, b"P6")
    raw = _raster(data, offset, width * height * 3, maxval, path)
    return raw.reshape(height, width, 3).astype(np.float64) / maxval


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError(f"expected (H, W, 3) image, got shape {image.shape}")
    if image.dtype == np.uint8:
        raw = image
    else:
        raw = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    height, width = raw.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (width, height))
        fh.write(np.ascontiguousarray(raw).tobytes())


def read_pgm(path) -> np.ndarray:
    """Load a P5 file (8- or 16-bit) as an ``(H, W)`` int64 array."""
    data = _read_bytes(path)
    width, height, maxval, offset = _parse_netpbm_header(data, path, b"P5")
    raw = _raster(data, offset, width * height, maxval, path)
    return raw.reshape(height, width).astype(np.int64)


def write_pgm(path, labels: np.ndarray) -> None:
    """Write integer ids as a 16-bit big-endian P5 file with maxval 65535."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise InvalidArgumentError(f"expected (H, W) label array, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 65535):
        raise InvalidArgumentError("label ids must lie in [0, 65535]")
    height, width = labels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (width, height))
        fh.write(labels.astype(">u2").tobytes())


def write_bimx(path, matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2:
        raise InvalidArgumentError(f"BIMX holds 2-d matrices, got shape {matrix.shape}")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(BIMX_MAGIC + struct.pack("<II", rows, cols))
        fh.write(matrix.astype("<f8").tobytes())


def read_bimx(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 12 or data[:4] != BIMX_MAGIC:
        raise FileFormatError(f"{path}: not a BIMX file")
    rows, cols = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 8 * rows * cols:
        raise FileFormatError(f"{path}: size does not match {rows}x{cols} header")
    values = np.frombuffer(data, dtype="<f8", offset=12).astype(np.float64)
    return values.reshape(rows, cols)


def sha256_of(path) -> str:
    return hashlib.sha256(_read_bytes(path)).hexdigest()


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON ({exc})") from exc


def save_tensors(directory, tensors: dict, extra: dict | None = None,
                 manifest_name: str = "manifest.json") -> str:
    """Write each tensor as ``<name>.bimx`` plus a manifest with checksums."""
    os.makedirs(directory, exist_ok=True)
    files = {}
    for name, value in tensors.items():
        fname = f"{name}.bimx"
        write_bimx(os.path.join(directory, fname), value)
        files[name] = {"file": fname, "sha256": sha256_of(os.path.join(directory, fname)),
                       "shape": list(np.shape(value))}
    manifest = dict(extra or {})
    manifest["tensors"] = files
    path = os.path.join(directory, manifest_name)
    write_json(path, manifest)
    return path


def load_tensors(directory, manifest_name: str = "manifest.json"):
    """Inverse of :func:`save_tensors`; verifies every checksum."""
    manifest = read_json(os.path.join(directory, manifest_name))
    if "tensors" not in manifest:
        raise ChecksumError(f"{directory}: manifest lists no tensors")
    tensors = {}
    for name, entry in manifest["tensors"].items():
        path = os.path.join(directory, entry["file"])
        if sha256_of(path) != entry["sha256"]:
            raise ChecksumError(f"{path}: checksum mismatch")
        value = read_bimx(path)
        tensors[name] = value.reshape(entry["shape"])
    return manifest, tensors
