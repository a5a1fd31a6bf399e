"""Wire protocol for external perception processes.

Framing: every message is one JSON header line terminated by a newline,
followed by exactly prod(shape) * dtype-size bytes of row-major
little-endian payload. Header fields always include
`{"op": str, "id": int, "dtype": "u8"|"f32", "shape": [ints]}`; payload-free
messages use shape [0]. Extra op-specific fields ride in the header.

Ops used by the engine:
    hello         engine -> bridge, {"version": 1}; bridge answers
                  op "capabilities" with a "capabilities" list.
    infer         engine -> bridge, {"capability": name} plus payload
                  (frame u8 [H,W,3], frame pair u8 [2,H,W,3] for flow).
    echo          engine -> bridge, any payload; echoed back bit-exact.
    result        bridge -> engine. Map capabilities answer f32 arrays;
                  InstanceSegmentation/SemanticSegmentation answer
                  {"count": k} then k op "proposal" messages each carrying
                  {"index", "box", "category", "score", "is_human"} and a
                  u8 {0,1} mask payload; PoseSkeleton answers
                  {"skeletons": [...]} json-only.
    error         bridge -> engine, {"message": str}.
"""

from __future__ import annotations

import json
import select
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import IO, Any

import numpy as np

from ..errors import ProviderError

PROTOCOL_VERSION = 1
_DTYPES = {"u8": np.dtype("<u1"), "f32": np.dtype("<f4")}
_DEFAULT_TIMEOUT = 30.0


def _shape_bytes(dtype: str, shape: list[int]) -> int:
    if dtype not in _DTYPES:
        raise ProviderError(f"unknown dtype {dtype!r}")
    n = 1
    for dim in shape:
        if dim < 0:
            raise ProviderError(f"negative dimension in shape {shape}")
        n *= dim
    return n * _DTYPES[dtype].itemsize


def encode_message(header: dict[str, Any], payload: np.ndarray | None = None) -> bytes:
    header = dict(header)
    if payload is None:
        header.setdefault("dtype", "u8")
        header.setdefault("shape", [0])
        body = b""
    else:
        dtype = header.get("dtype")
        if dtype not in _DTYPES:
            raise ProviderError(f"unknown dtype {dtype!r}")
        arr = np.ascontiguousarray(payload, dtype=_DTYPES[dtype])
        header["shape"] = list(arr.shape)
        body = arr.tobytes(order="C")
    line = json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n"
    return line.encode("utf-8") + body


def decode_message(
    header_line: bytes, read_exact
) -> tuple[dict[str, Any], np.ndarray | None]:
    """Parse one header line and pull its payload via read_exact(n)."""
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProviderError(f"bad magic: unparsable header ({exc})") from exc
    if not isinstance(header, dict) or "op" not in header:
        raise ProviderError("bad magic: header missing op")
    dtype = header.get("dtype", "u8")
    shape = header.get("shape", [0])
    if not isinstance(shape, list) or not all(isinstance(d, int) for d in shape):
        raise ProviderError(f"bad magic: malformed shape {shape!r}")
    nbytes = _shape_bytes(dtype, shape)
    if nbytes == 0:
        return header, None
    raw = read_exact(nbytes)
    payload = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(shape)
    return header, payload


class WireStream:
    """Blocking reader/writer pair with a receive timeout."""

    def __init__(self, reader: IO[bytes], writer: IO[bytes], timeout: float):
        self._reader = reader
        self._writer = writer
        self._timeout = timeout

    def _wait_readable(self) -> None:
        fileno = getattr(self._reader, "fileno", None)
        if fileno is None:
            return
        try:
            fd = fileno()
        except (OSError, ValueError):
            return
        ready, _, _ = select.select([fd], [], [], self._timeout)
        if not ready:
            raise ProviderError("provider timeout")

    def send(self, header: dict[str, Any], payload: np.ndarray | None = None) -> None:
        self._writer.write(encode_message(header, payload))
        self._writer.flush()

    def _read_exact(self, n: int) -> bytes:
        chunks: list[bytes] = []
        remaining = n
        while remaining > 0:
            self._wait_readable()
            chunk = self._reader.read(remaining)
            if not chunk:
                raise ProviderError("endpoint closed mid-payload")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def receive(self) -> tuple[dict[str, Any], np.ndarray | None]:
        self._wait_readable()
        line = self._reader.readline()
        if not line:
            raise ProviderError("endpoint closed")
        return decode_message(line, self._read_exact)


@dataclass(slots=True)
class ConformanceReport:
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append((name, passed, detail))

    @property
    def all_passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def format(self) -> str:
        lines = []
        for name, ok, detail in self.checks:
            status = "PASS" if ok else "FAIL"
            suffix = f" ({detail})" if detail else ""
            lines.append(f"[{status}] {name}{suffix}")
        return "\n".join(lines)


class BridgeClient:
    """Serializing client for one external endpoint.

    Endpoint spec is either a shell command to spawn (talks over its
    stdin/stdout) or `pipe:<engine-out path>:<engine-in path>` naming a
    pre-existing FIFO pair.
    """

    def __init__(self, endpoint: str, timeout: float = _DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self._lock = threading.Lock()
        self._next_id = 1
        self._proc: subprocess.Popen | None = None
        self._owned_files: list[IO[bytes]] = []
        if endpoint.startswith("pipe:"):
            parts = endpoint.split(":", 2)
            if len(parts) != 3:
                raise ProviderError(f"malformed pipe endpoint {endpoint!r}")
            writer = open(parts[1], "wb")
            reader = open(parts[2], "rb")
            self._owned_files = [writer, reader]
            self._stream = WireStream(reader, writer, timeout)
        else:
            argv = shlex.split(endpoint)
            if not argv:
                raise ProviderError("empty endpoint command")
            try:
                self._proc = subprocess.Popen(
                    argv,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    bufsize=0,
                )
            except OSError as exc:
                raise ProviderError(f"cannot spawn endpoint {endpoint!r}: {exc}")
            assert self._proc.stdin is not None and self._proc.stdout is not None
            self._stream = WireStream(self._proc.stdout, self._proc.stdin, timeout)
        try:
            self.capabilities = self._handshake()
        except ProviderError:
            self.close()
            raise

    def _handshake(self) -> list[str]:
        self._stream.send(
            {"op": "hello", "id": 0, "version": PROTOCOL_VERSION, "dtype": "u8", "shape": [0]}
        )
        header, _ = self._stream.receive()
        if header.get("op") != "capabilities":
            raise ProviderError(f"handshake failed: got op {header.get('op')!r}")
        if header.get("version") != PROTOCOL_VERSION:
            raise ProviderError(
                f"protocol version mismatch: {header.get('version')!r}"
            )
        caps = header.get("capabilities")
        if not isinstance(caps, list):
            raise ProviderError("handshake missing capability list")
        return [str(c) for c in caps]

    def close(self) -> None:
        if self._proc is not None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
            self._proc = None
        for handle in self._owned_files:
            try:
                handle.close()
            except OSError:
                pass
        self._owned_files = []

    def _roundtrip(
        self, header: dict[str, Any], payload: np.ndarray | None
    ) -> tuple[dict[str, Any], np.ndarray | None, list[tuple[dict, np.ndarray | None]]]:
        """One request, one result; proposal sub-messages are collected."""
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            header = dict(header, id=request_id)
            self._stream.send(header, payload)
            reply, reply_payload = self._stream.receive()
            if reply.get("op") == "error":
                raise ProviderError(
                    f"endpoint error: {reply.get('message', 'unspecified')}"
                )
            if reply.get("op") != "result" or reply.get("id") != request_id:
                raise ProviderError(f"out-of-order reply {reply!r}")
            extras: list[tuple[dict, np.ndarray | None]] = []
            count = reply.get("count")
            if isinstance(count, int):
                for _ in range(count):
                    sub, sub_payload = self._stream.receive()
                    if sub.get("op") != "proposal" or sub.get("id") != request_id:
                        raise ProviderError(f"malformed proposal stream {sub!r}")
                    extras.append((sub, sub_payload))
            return reply, reply_payload, extras

    def echo(self, payload: np.ndarray, dtype: str) -> np.ndarray:
        reply, data, _ = self._roundtrip({"op": "echo", "dtype": dtype}, payload)
        if data is None:
            raise ProviderError("echo returned no payload")
        return data

    def infer_map(self, capability: str, frame: np.ndarray, expect_shape: tuple[int, ...]) -> np.ndarray:
        reply, data, _ = self._roundtrip(
            {"op": "infer", "capability": capability, "dtype": "u8"}, frame
        )
        if data is None or tuple(data.shape) != expect_shape:
            got = None if data is None else tuple(data.shape)
            raise ProviderError(
                f"{capability}: expected shape {expect_shape}, got {got}"
            )
        return np.asarray(data, dtype=np.float32)

    def infer_vector(self, capability: str, image: np.ndarray) -> np.ndarray:
        reply, data, _ = self._roundtrip(
            {"op": "infer", "capability": capability, "dtype": "u8"}, image
        )
        if data is None or data.ndim != 1 or data.size == 0:
            raise ProviderError(f"{capability}: expected a 1-d feature vector")
        return np.asarray(data, dtype=np.float64)

    def infer_proposals(
        self, capability: str, frame: np.ndarray
    ) -> list[dict[str, Any]]:
        h, w = frame.shape[:2]
        _, _, extras = self._roundtrip(
            {"op": "infer", "capability": capability, "dtype": "u8"}, frame
        )
        proposals: list[dict[str, Any]] = []
        for sub, payload in extras:
            if payload is None or tuple(payload.shape) != (h, w):
                raise ProviderError(f"{capability}: proposal mask shape mismatch")
            if not np.isin(payload, (0, 1)).all():
                raise ProviderError(f"{capability}: proposal mask not in {{0,1}}")
            score = float(sub.get("score", 0.0))
            if not 0.0 <= score <= 1.0:
                raise ProviderError(f"{capability}: score {score} outside [0,1]")
            proposals.append(
                {
                    "mask": payload.astype(bool),
                    "score": score,
                    "category": str(sub.get("category", "unknown")),
                    "is_human": bool(sub.get("is_human", False)),
                    "box": sub.get("box"),
                }
            )
        return proposals

    def infer_skeletons(self, frame: np.ndarray) -> list[dict[str, Any]]:
        reply, _, _ = self._roundtrip(
            {"op": "infer", "capability": "PoseSkeleton", "dtype": "u8"}, frame
        )
        skeletons = reply.get("skeletons", [])
        if not isinstance(skeletons, list):
            raise ProviderError("PoseSkeleton: malformed skeleton list")
        return skeletons


def run_conformance(endpoint: str, timeout: float = _DEFAULT_TIMEOUT) -> ConformanceReport:
    """Engine-side conformance checks against any bridge endpoint."""
    report = ConformanceReport()
    try:
        client = BridgeClient(endpoint, timeout=timeout)
    except ProviderError as exc:
        report.add("handshake", False, str(exc))
        return report
    report.add("handshake", True, f"capabilities: {', '.join(client.capabilities)}")
    rng = np.random.default_rng(7)
    try:
        mask = (rng.random((17, 23)) > 0.5).astype(np.uint8)
        echoed = client.echo(mask, "u8")
        ok = echoed.shape == mask.shape and np.array_equal(echoed, mask)
        report.add("echo u8 bit-exact", ok)
        real = rng.standard_normal((9, 11)).astype(np.float32)
        echoed_f = client.echo(real, "f32")
        report.add(
            "echo f32 bit-exact",
            echoed_f.shape == real.shape
            and echoed_f.tobytes() == real.astype("<f4").tobytes(),
        )
        frame = rng.integers(0, 256, size=(32, 48, 3), dtype=np.uint8)
        if "InstanceSegmentation" in client.capabilities:
            first = client.infer_proposals("InstanceSegmentation", frame)
            second = client.infer_proposals("InstanceSegmentation", frame)
            report.add("proposal schema", True, f"{len(first)} proposals")
            same = len(first) == len(second) and all(
                np.array_equal(a["mask"], b["mask"]) and a["score"] == b["score"]
                for a, b in zip(first, second)
            )
            report.add("determinism", same)
        try:
            client._roundtrip(
                {"op": "infer", "capability": "NoSuchCapability", "dtype": "u8"},
                frame,
            )
            report.add("unsupported capability rejected", False, "no error raised")
        except ProviderError as exc:
            report.add(
                "unsupported capability rejected", "unsupported" in str(exc).lower(), str(exc)
            )
    except ProviderError as exc:
        report.add("protocol", False, str(exc))
    finally:
        client.close()
    return report
