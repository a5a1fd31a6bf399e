"""Framing for the perception wire protocol.

Every message is one JSON header line (compact separators, sorted keys)
terminated by a newline, followed by exactly prod(shape) * itemsize bytes
of row-major little-endian payload. Headers always carry
`{"op": str, "id": int, "dtype": "u8"|"f32", "shape": [ints]}`; messages
without a payload use shape [0]. Op-specific fields ride in the header.

Two failure modes are kept apart on purpose: `WireError` marks a malformed
message the peer can be told about, `StreamClosed` marks a dead stream
nothing can be written to or read from anymore.
"""

from __future__ import annotations

import json
from typing import IO, Any

import numpy as np

PROTOCOL_VERSION = 1
DTYPES = {"u8": np.dtype("<u1"), "f32": np.dtype("<f4")}


class WireError(RuntimeError):
    """Malformed header or payload declaration."""


class StreamClosed(RuntimeError):
    """Peer hung up: end of stream before a complete message."""


def payload_nbytes(dtype: str, shape: list[int]) -> int:
    if dtype not in DTYPES:
        raise WireError(f"unknown dtype {dtype!r}")
    n = 1
    for dim in shape:
        if not isinstance(dim, int) or dim < 0:
            raise WireError(f"bad dimension in shape {shape!r}")
        n *= dim
    return n * DTYPES[dtype].itemsize


def encode_message(header: dict[str, Any], payload: np.ndarray | None = None) -> bytes:
    """Serialize one header (+ optional array payload) to wire bytes."""
    header = dict(header)
    if payload is None:
        header.setdefault("dtype", "u8")
        header.setdefault("shape", [0])
        body = b""
    else:
        dtype = header.get("dtype")
        if dtype not in DTYPES:
            raise WireError(f"unknown dtype {dtype!r}")
        arr = np.ascontiguousarray(payload, dtype=DTYPES[dtype])
        header["shape"] = list(arr.shape)
        body = arr.tobytes(order="C")
    line = json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n"
    return line.encode("utf-8") + body


def read_exact(reader: IO[bytes], n: int) -> bytes:
    chunks: list[bytes] = []
    remaining = n
    while remaining > 0:
        chunk = reader.read(remaining)
        if not chunk:
            raise StreamClosed("stream closed mid-payload")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(reader: IO[bytes]) -> tuple[dict[str, Any], np.ndarray | None] | None:
    """Read one message; None on a clean end of stream.

    A header that does not parse raises WireError without consuming any
    payload bytes, so the caller can answer with an error and keep going.
    """
    line = reader.readline()
    if not line:
        return None
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"unparsable header ({exc})") from exc
    if not isinstance(header, dict) or "op" not in header:
        raise WireError("header missing op")
    dtype = header.get("dtype", "u8")
    shape = header.get("shape", [0])
    if not isinstance(shape, list):
        raise WireError(f"malformed shape {shape!r}")
    nbytes = payload_nbytes(dtype, shape)
    if nbytes == 0:
        return header, None
    raw = read_exact(reader, nbytes)
    payload = np.frombuffer(raw, dtype=DTYPES[dtype]).reshape(shape)
    return header, payload


def write_message(
    writer: IO[bytes], header: dict[str, Any], payload: np.ndarray | None = None
) -> None:
    try:
        writer.write(encode_message(header, payload))
        writer.flush()
    except (BrokenPipeError, ValueError) as exc:
        raise StreamClosed(f"cannot write: {exc}") from exc
