"""Round-trip and corruption tests for the binary model container."""

import struct

import numpy as np
import pytest

from deepreflecs import container


def sample_blob():
    arrays = [
        ("layer.weights", np.arange(6, dtype=np.float32).reshape(2, 3)),
        ("layer.bias", np.array([1.5, -2.5], dtype=np.float32)),
        ("tree.nodes", np.array([[1, 2], [3, 4]], dtype=np.int64)),
    ]
    return container.write_container(
        b"TEST",
        {"alpha": 1, "beta": "two"},
        (np.array([0.5, 1.5]), np.array([1.0, 2.0])),
        arrays,
    )


def test_round_trip():
    blob = sample_blob()
    parsed = container.read_container(blob, b"TEST")
    assert parsed.version == container.FORMAT_VERSION
    assert parsed.config == {"alpha": 1, "beta": "two"}
    np.testing.assert_array_equal(parsed.norm_means, [0.5, 1.5])
    np.testing.assert_array_equal(parsed.norm_stds, [1.0, 2.0])
    np.testing.assert_array_equal(
        parsed.arrays["layer.weights"], np.arange(6, dtype=np.float32).reshape(2, 3)
    )
    assert parsed.arrays["tree.nodes"].dtype == np.int64


def test_wrong_magic():
    with pytest.raises(container.MagicError):
        container.read_container(sample_blob(), b"RFLN")


def test_future_version_names_both_versions():
    blob = bytearray(sample_blob())
    blob[4:8] = struct.pack("<I", 7)
    with pytest.raises(container.VersionError) as err:
        container.read_container(bytes(blob), b"TEST")
    message = str(err.value)
    assert "7" in message and str(container.FORMAT_VERSION) in message


def test_truncated_file():
    blob = sample_blob()
    with pytest.raises(container.TruncationError):
        container.read_container(blob[:-10], b"TEST")


def test_corrupted_length_field_is_truncation():
    blob = bytearray(sample_blob())
    # inflate the config-length field so the declared content overruns the file
    blob[8:12] = struct.pack("<I", 10_000_000)
    with pytest.raises(container.TruncationError):
        container.read_container(bytes(blob), b"TEST")


def test_flipped_payload_bit_is_checksum_failure():
    blob = bytearray(sample_blob())
    blob[-20] ^= 0x40  # inside the last array's data
    with pytest.raises(container.ChecksumError):
        container.read_container(bytes(blob), b"TEST")


def test_empty_norm_block():
    blob = container.write_container(b"TEST", {}, None, [])
    parsed = container.read_container(blob, b"TEST")
    assert parsed.norm_means.size == 0
    assert parsed.arrays == {}
