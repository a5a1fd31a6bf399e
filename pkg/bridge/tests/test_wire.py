"""Framing round-trips and failure modes."""

import io
import json

import numpy as np
import pytest

from segbridge.wire import (
    StreamClosed,
    WireError,
    encode_message,
    payload_nbytes,
    read_message,
    write_message,
)


def _round_trip(header, payload=None):
    stream = io.BytesIO(encode_message(header, payload))
    return read_message(stream)


def test_u8_payload_round_trip():
    rng = np.random.default_rng(5)
    arr = rng.integers(0, 256, (7, 13), dtype=np.uint8)
    header, back = _round_trip({"op": "echo", "id": 4, "dtype": "u8"}, arr)
    assert header["op"] == "echo" and header["id"] == 4
    assert header["shape"] == [7, 13]
    assert back.tobytes() == arr.tobytes()


def test_f32_payload_round_trip_bit_exact():
    arr = np.array([[0.1, -2.5e8], [np.inf, 3.25]], dtype=np.float32)
    _, back = _round_trip({"op": "echo", "id": 1, "dtype": "f32"}, arr)
    assert back.dtype == np.dtype("<f4")
    assert back.tobytes() == arr.tobytes()


def test_payload_free_message_defaults_shape_zero():
    raw = encode_message({"op": "hello", "id": 0, "version": 1})
    line, _, rest = raw.partition(b"\n")
    assert rest == b""
    header = json.loads(line)
    assert header["shape"] == [0] and header["dtype"] == "u8"


def test_header_line_is_compact_and_sorted():
    raw = encode_message({"op": "hello", "id": 0})
    line = raw.split(b"\n", 1)[0].decode()
    assert line == '{"dtype":"u8","id":0,"op":"hello","shape":[0]}'


def test_unknown_dtype_rejected():
    with pytest.raises(WireError):
        encode_message({"op": "echo", "dtype": "f64"}, np.zeros(3))
    with pytest.raises(WireError):
        payload_nbytes("i16", [4])


def test_negative_dimension_rejected():
    with pytest.raises(WireError):
        payload_nbytes("u8", [3, -1])


def test_eof_returns_none():
    assert read_message(io.BytesIO(b"")) is None


def test_garbage_header_raises_wire_error():
    with pytest.raises(WireError):
        read_message(io.BytesIO(b"not json at all\n"))


def test_header_without_op_rejected():
    with pytest.raises(WireError):
        read_message(io.BytesIO(b'{"id":3}\n'))


def test_truncated_payload_raises_stream_closed():
    raw = encode_message({"op": "echo", "id": 1, "dtype": "u8"}, np.zeros(10, np.uint8))
    with pytest.raises(StreamClosed):
        read_message(io.BytesIO(raw[:-3]))


def test_write_message_flushes_full_frame():
    sink = io.BytesIO()
    arr = np.arange(6, dtype=np.uint8).reshape(2, 3)
    write_message(sink, {"op": "result", "id": 2, "dtype": "u8"}, arr)
    header, back = read_message(io.BytesIO(sink.getvalue()))
    assert header["id"] == 2
    assert np.array_equal(back, arr)
