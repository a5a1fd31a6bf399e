"""Serve loop behavior over an in-process pipe pair."""

import contextlib
import io
import os
import threading

import numpy as np
import pytest

from segbridge.manifest import AdapterManifest, stub_manifest
from segbridge.server import serve
from segbridge.wire import read_message, write_message


class _Session:
    """Client handles for a serve() running on its own thread."""

    def __init__(self, manifest):
        c2s_read, c2s_write = os.pipe()
        s2c_read, s2c_write = os.pipe()
        server_reader = os.fdopen(c2s_read, "rb")
        server_writer = os.fdopen(s2c_write, "wb")
        self.reader = os.fdopen(s2c_read, "rb")
        self.writer = os.fdopen(c2s_write, "wb")
        self.thread = threading.Thread(
            target=serve,
            args=(manifest, None, server_reader, server_writer),
            daemon=True,
        )
        self.thread.start()

    def ask(self, header, payload=None):
        write_message(self.writer, header, payload)
        return read_message(self.reader)

    def close(self):
        self.writer.close()
        self.thread.join(timeout=5.0)
        self.reader.close()


@contextlib.contextmanager
def stub_session():
    session = _Session(stub_manifest())
    try:
        yield session
    finally:
        session.close()


def test_hello_answers_capabilities():
    with stub_session() as s:
        header, payload = s.ask({"op": "hello", "id": 0, "version": 1})
        assert payload is None
        assert header["op"] == "capabilities"
        assert header["id"] == 0
        assert header["version"] == 1
        assert header["capabilities"] == ["InstanceSegmentation"]
        assert header["models"] == {"InstanceSegmentation": "stub-centered-box"}


def test_echo_is_bit_exact_for_both_dtypes():
    rng = np.random.default_rng(11)
    with stub_session() as s:
        small = rng.integers(0, 256, (5, 9), dtype=np.uint8)
        header, back = s.ask({"op": "echo", "id": 1, "dtype": "u8"}, small)
        assert header["op"] == "result" and header["id"] == 1
        assert back.tobytes() == small.tobytes()

        floats = rng.normal(size=(4, 6)).astype(np.float32)
        header, back = s.ask({"op": "echo", "id": 2, "dtype": "f32"}, floats)
        assert header["dtype"] == "f32"
        assert back.tobytes() == floats.tobytes()


def test_infer_streams_one_centered_proposal():
    frame = np.full((20, 30, 3), 90, dtype=np.uint8)
    with stub_session() as s:
        header, payload = s.ask(
            {"op": "infer", "id": 3, "capability": "InstanceSegmentation", "dtype": "u8"},
            frame,
        )
        assert header["op"] == "result" and header["count"] == 1 and payload is None
        prop_header, mask = read_message(s.reader)
        assert prop_header["op"] == "proposal"
        assert prop_header["id"] == 3 and prop_header["index"] == 0
        assert prop_header["box"] == [7, 5, 16, 10]
        assert prop_header["is_human"] is False
        assert 0.0 <= prop_header["score"] <= 1.0
        assert mask.shape == (20, 30)
        assert set(np.unique(mask)) <= {0, 1}


def test_unsupported_capability_answered_with_error():
    with stub_session() as s:
        header, _ = s.ask(
            {"op": "infer", "id": 4, "capability": "Depth", "dtype": "u8"},
            np.zeros((4, 4, 3), dtype=np.uint8),
        )
        assert header["op"] == "error" and header["id"] == 4
        assert "unsupported" in header["message"]


def test_unknown_op_answered_with_error():
    with stub_session() as s:
        header, _ = s.ask({"op": "reticulate", "id": 5})
        assert header["op"] == "error"
        assert "unsupported op" in header["message"]


def test_garbage_header_gets_error_and_loop_survives():
    with stub_session() as s:
        s.writer.write(b"this is not a header\n")
        s.writer.flush()
        header, _ = read_message(s.reader)
        assert header["op"] == "error" and header["id"] == -1

        header, _ = s.ask({"op": "hello", "id": 6, "version": 1})
        assert header["op"] == "capabilities"


def test_adapter_failure_answered_and_loop_survives():
    with stub_session() as s:
        # stub needs a frame payload; shape [0] means none arrives
        header, _ = s.ask(
            {"op": "infer", "id": 7, "capability": "InstanceSegmentation"}
        )
        assert header["op"] == "error" and header["id"] == 7

        follow_up, _ = s.ask({"op": "hello", "id": 8, "version": 1})
        assert follow_up["op"] == "capabilities"


def test_eof_shuts_the_loop_down():
    session = _Session(stub_manifest())
    session.writer.close()
    session.thread.join(timeout=5.0)
    assert not session.thread.is_alive()
    session.reader.close()


def test_serve_refuses_manifest_with_unserved_capability():
    manifest = AdapterManifest(("InstanceSegmentation", "Depth"))
    with pytest.raises(ValueError, match="Depth"):
        serve(manifest, {}, io.BytesIO(), io.BytesIO())
