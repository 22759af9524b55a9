import pytest
import numpy as np

from medvt.core.exceptions import SerializationError
from medvt.infrastructure.serialization import decode_pgm, encode_pgm, read_pgm, write_pgm


def test_encoding_is_binary_p5():
    data = encode_pgm(np.array([[0, 1, 2], [255, 0, 1]]))
    assert data.startswith(b"P5\n3 2\n255\n")
    assert data[-6:] == bytes([0, 1, 2, 255, 0, 1])


def test_decoding_gives_integer_class_maps():
    mask = np.array([[0, 1], [1, 0], [2, 0]])
    decoded = decode_pgm(encode_pgm(mask))
    assert decoded.dtype == np.int64
    np.testing.assert_array_equal(decoded, mask)


def test_header_comments_are_skipped():
    data = b"P5\n# written elsewhere\n2 1\n255\n" + bytes([3, 4])
    np.testing.assert_array_equal(decode_pgm(data), [[3, 4]])


@pytest.mark.parametrize("mask", [np.zeros((2, 2, 2)), np.array([[0, 256]]), np.array([[-1, 0]])])
def test_unencodable_masks(mask):
    with pytest.raises(SerializationError):
        encode_pgm(mask)


@pytest.mark.parametrize("data", [
    b"P2\n2 1\n255\n01",
    b"P5\n2 1\n65535\n" + bytes(4),
    b"P5\n2 2\n255\n" + bytes(3),
])
def test_malformed_streams(data):
    with pytest.raises(SerializationError):
        decode_pgm(data)


def test_files(tmp_path):
    write_pgm(tmp_path / "masks" / "000_0.pgm", np.eye(3, dtype=np.int64))
    np.testing.assert_array_equal(read_pgm(tmp_path / "masks" / "000_0.pgm"), np.eye(3))
    with pytest.raises(SerializationError):
        read_pgm(tmp_path / "masks" / "000_1.pgm")
