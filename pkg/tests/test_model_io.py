import struct

import numpy as np
import pytest

from alsf.exceptions import ChecksumFailure, ModelFileError, VersionMismatch
from alsf.model_io import (
    MAGIC,
    VERSION,
    deserialize_model,
    load_model,
    save_model,
    serialize_model,
)
from helpers import random_model


def small_model(seed=0, labels=None):
    rng = np.random.default_rng(seed)
    return random_model(rng, d=8, ks=(3, 5), k0=2, labels=labels)


def assert_models_bitwise_equal(a, b):
    assert a.labels == b.labels
    for Da, Db in zip(a.class_dicts, b.class_dicts):
        np.testing.assert_array_equal(Da, Db)
    np.testing.assert_array_equal(a.shared_dict, b.shared_dict)
    for Aa, Ab in zip(a.class_analysis, b.class_analysis):
        np.testing.assert_array_equal(Aa, Ab)
    np.testing.assert_array_equal(a.shared_analysis, b.shared_analysis)


def test_roundtrip_is_bitwise():
    m = small_model(labels=["healthy", "tumor"])
    assert_models_bitwise_equal(deserialize_model(serialize_model(m)), m)


def test_roundtrip_preserves_subnormals_and_negative_zero():
    m = small_model()
    m.class_dicts[0][0, 0] = 5e-324  # smallest subnormal
    m.class_dicts[0][1, 0] = -0.0
    m.class_analysis[1][0, 0] = np.nextafter(1.0, 2.0)
    back = deserialize_model(serialize_model(m))
    assert back.class_dicts[0][0, 0] == 5e-324
    assert np.signbit(back.class_dicts[0][1, 0])
    assert back.class_analysis[1][0, 0] == np.nextafter(1.0, 2.0)


def test_serialization_is_deterministic():
    assert serialize_model(small_model(3)) == serialize_model(small_model(3))


def test_every_flipped_body_byte_fails_checksum():
    blob = bytearray(serialize_model(small_model()))
    header = len(MAGIC) + 4
    # flip a sample of body bytes (past magic+version, before the CRC)
    for pos in range(header, len(blob) - 4, max(1, (len(blob) - header) // 40)):
        corrupted = bytearray(blob)
        corrupted[pos] ^= 0x01
        with pytest.raises(ChecksumFailure):
            deserialize_model(bytes(corrupted))


def test_version_bump_reported_before_checksum():
    blob = bytearray(serialize_model(small_model()))
    struct.pack_into("<I", blob, len(MAGIC), VERSION + 1)
    # both version and CRC are now wrong; version wins
    with pytest.raises(VersionMismatch):
        deserialize_model(bytes(blob))


def test_bad_magic():
    blob = bytearray(serialize_model(small_model()))
    blob[0] = ord(b"X")
    with pytest.raises(ModelFileError):
        deserialize_model(bytes(blob))
    with pytest.raises(ModelFileError):
        deserialize_model(b"")


def test_truncated_file():
    blob = serialize_model(small_model())
    with pytest.raises((ModelFileError, ChecksumFailure)):
        deserialize_model(blob[: len(blob) // 2])


def test_trailing_garbage_detected():
    blob = bytearray(serialize_model(small_model()))
    # splice extra bytes into the body and restamp the CRC so only the
    # structural trailing-byte check can catch it
    import zlib
    body = bytes(blob[:-4]) + b"\x00" * 16
    forged = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    with pytest.raises(ModelFileError):
        deserialize_model(forged)


def test_save_load_paths(tmp_path):
    m = small_model(7, labels=["a", "b"])
    p = tmp_path / "model.alsf"
    save_model(p, m)
    assert_models_bitwise_equal(load_model(p), m)
    # no stray temp files left behind
    assert [f.name for f in tmp_path.iterdir()] == ["model.alsf"]


def test_save_overwrites_atomically(tmp_path):
    p = tmp_path / "model.alsf"
    save_model(p, small_model(1))
    save_model(p, small_model(2))
    assert_models_bitwise_equal(load_model(p), small_model(2))


def test_load_rejects_corrupt_file_on_disk(tmp_path):
    p = tmp_path / "model.alsf"
    save_model(p, small_model())
    raw = bytearray(p.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(ChecksumFailure):
        load_model(p)


def test_unicode_labels_roundtrip():
    m = small_model(labels=["sain", "tumeuré"])
    assert deserialize_model(serialize_model(m)).labels == ["sain", "tumeuré"]


def test_zero_shared_atoms_roundtrip():
    rng = np.random.default_rng(4)
    m = random_model(rng, d=6, ks=(2, 2), k0=0)
    back = deserialize_model(serialize_model(m))
    assert back.k_shared == 0
    assert back.shared_dict.shape == (6, 0)
    assert_models_bitwise_equal(back, m)
