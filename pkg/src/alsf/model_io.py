"""Binary serialization of trained models.

Layout (all integers u32 little-endian, all floats f64 little-endian,
matrices row-major):

    magic b"ALSF" | version | d | C | k_1..k_C | k_0
    | per class: label byte-length + UTF-8 label
    | D_1..D_C | D_0 | A_1..A_C | A_0
    | CRC-32 of every preceding byte

Readers check magic, then version, then the checksum, before touching the
body, so a reader meeting a future version reports the version mismatch
even though the checksum differs too.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

from .exceptions import ChecksumFailure, ModelFileError, VersionMismatch
from .model import AlsfModel

MAGIC = b"ALSF"
VERSION = 1


def _pack_matrix(M: np.ndarray) -> bytes:
    return np.ascontiguousarray(M, dtype="<f8").tobytes()


def serialize_model(model: AlsfModel) -> bytes:
    """Encode a model as the versioned checksummed byte string."""
    parts = [MAGIC, struct.pack("<III", VERSION, model.d, model.num_classes)]
    for k in model.k_per_class:
        parts.append(struct.pack("<I", k))
    parts.append(struct.pack("<I", model.k_shared))
    for lab in model.labels:
        raw = lab.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    for D in model.class_dicts:
        parts.append(_pack_matrix(D))
    parts.append(_pack_matrix(model.shared_dict))
    for A in model.class_analysis:
        parts.append(_pack_matrix(A))
    parts.append(_pack_matrix(model.shared_analysis))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFileError("model file truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        raw = self.take(rows * cols * 8)
        return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)


def deserialize_model(blob: bytes) -> AlsfModel:
    """Decode bytes produced by :func:`serialize_model`.

    Raises ModelFileError for a bad magic or truncation, VersionMismatch
    for an unknown version, ChecksumFailure when the CRC disagrees.
    """
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    version = struct.unpack_from("<I", blob, len(MAGIC))[0]
    if version != VERSION:
        raise VersionMismatch(f"file version {version}, reader supports {VERSION}")
    stored = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise ChecksumFailure("checksum mismatch; file is corrupt")

    r = _Reader(blob[:-4])
    r.take(len(MAGIC) + 4)
    d = r.u32()
    C = r.u32()
    if C == 0:
        raise ModelFileError("model file declares zero classes")
    ks = [r.u32() for _ in range(C)]
    k0 = r.u32()
    labels = [r.take(r.u32()).decode("utf-8") for _ in range(C)]
    dicts = [r.matrix(d, ks[c]) for c in range(C)]
    D0 = r.matrix(d, k0)
    analysis = [r.matrix(ks[c], d) for c in range(C)]
    A0 = r.matrix(k0, d)
    if r.pos != len(r.buf):
        raise ModelFileError(f"{len(r.buf) - r.pos} trailing bytes after model body")
    try:
        return AlsfModel(class_dicts=dicts, shared_dict=D0, class_analysis=analysis,
                         shared_analysis=A0, labels=labels)
    except Exception as e:
        raise ModelFileError(f"model body inconsistent: {e}") from e


def save_model(path, model: AlsfModel) -> None:
    """Atomically write the model: temp file in the target directory, then rename."""
    blob = serialize_model(model)
    directory = os.path.dirname(os.path.abspath(os.fspath(path)))
    fd, tmp = tempfile.mkstemp(prefix=".alsf-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path) -> AlsfModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    model = deserialize_model(blob)
    try:
        model.validate()
    except Exception as e:
        raise ModelFileError(f"{path}: {e}") from e
    return model
