"""Conformance harness run against any bridge endpoint.

`conformance_suite` drives a live endpoint through the handshake, echo
round-trips, proposal schema checks, a determinism probe, and an
unsupported-capability rejection. Failures never raise, they become
report entries; the suite is itself a diagnostic, not a test runner.
"""

from __future__ import annotations

import select
import shlex
import subprocess
from dataclasses import dataclass, field
from typing import IO, Any

import numpy as np

from .wire import PROTOCOL_VERSION, StreamClosed, WireError, read_message, write_message

_PROBE_TIMEOUT = 10.0


@dataclass(slots=True)
class ConformanceReport:
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append((name, passed, detail))

    @property
    def all_passed(self) -> bool:
        return bool(self.checks) and all(ok for _, ok, _ in self.checks)

    def failed(self) -> list[str]:
        return [name for name, ok, _ in self.checks if not ok]

    def format(self) -> str:
        lines = []
        for name, ok, detail in self.checks:
            status = "PASS" if ok else "FAIL"
            suffix = f" ({detail})" if detail else ""
            lines.append(f"[{status}] {name}{suffix}")
        return "\n".join(lines)


class EndpointAnswerError(RuntimeError):
    """Endpoint answered with an op \"error\" message."""


class EndpointProbe:
    """One conformance session against a command or pipe endpoint.

    Command endpoints are spawned and spoken to over stdin/stdout;
    `pipe:<probe-out path>:<probe-in path>` attaches to a FIFO pair the
    endpoint already serves.
    """

    def __init__(self, endpoint: str, timeout: float = _PROBE_TIMEOUT):
        self.endpoint = endpoint
        self._timeout = timeout
        self._next_id = 1
        self._proc: subprocess.Popen | None = None
        self._owned: list[IO[bytes]] = []
        if endpoint.startswith("pipe:"):
            parts = endpoint.split(":", 2)
            if len(parts) != 3:
                raise WireError(f"malformed pipe endpoint {endpoint!r}")
            writer = open(parts[1], "wb")
            # unbuffered: the receive timeout selects on the fd, which must
            # see exactly the bytes a buffered readahead would have hidden
            reader = open(parts[2], "rb", buffering=0)
            self._owned = [writer, reader]
            self._reader, self._writer = reader, writer
        else:
            argv = shlex.split(endpoint)
            if not argv:
                raise WireError("empty endpoint command")
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
            assert self._proc.stdin is not None and self._proc.stdout is not None
            self._reader, self._writer = self._proc.stdout, self._proc.stdin

    def close(self) -> None:
        for handle in (self._writer, self._reader):
            try:
                handle.close()
            except OSError:
                pass
        for handle in self._owned:
            try:
                handle.close()
            except OSError:
                pass
        if self._proc is not None:
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "EndpointProbe":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- plumbing ----------------------------------------------------------

    def _receive(self) -> tuple[dict[str, Any], np.ndarray | None]:
        fd = self._reader.fileno()
        ready, _, _ = select.select([fd], [], [], self._timeout)
        if not ready:
            raise WireError("endpoint timeout")
        message = read_message(self._reader)
        if message is None:
            raise StreamClosed("endpoint closed")
        return message

    def hello(self) -> dict[str, Any]:
        write_message(
            self._writer, {"op": "hello", "id": 0, "version": PROTOCOL_VERSION}
        )
        header, _ = self._receive()
        return header

    def request(
        self, header: dict[str, Any], payload: np.ndarray | None = None
    ) -> tuple[dict[str, Any], np.ndarray | None]:
        rid = self._next_id
        self._next_id += 1
        header = dict(header)
        header["id"] = rid
        write_message(self._writer, header, payload)
        reply, body = self._receive()
        if reply.get("op") == "error":
            raise EndpointAnswerError(str(reply.get("message", "")))
        if reply.get("id") != rid:
            raise WireError(f"reply id {reply.get('id')} for request {rid}")
        return reply, body

    def echo(self, payload: np.ndarray, dtype: str) -> np.ndarray | None:
        _, body = self.request({"op": "echo", "dtype": dtype}, payload)
        return body

    def proposals(
        self, capability: str, frame: np.ndarray
    ) -> list[tuple[dict[str, Any], np.ndarray | None]]:
        reply, _ = self.request(
            {"op": "infer", "capability": capability, "dtype": "u8"}, frame
        )
        count = reply.get("count")
        if not isinstance(count, int) or count < 0:
            raise WireError(f"bad proposal count {count!r}")
        out = []
        for _ in range(count):
            out.append(self._receive())
        return out


def _proposal_fingerprint(items: list[tuple[dict[str, Any], np.ndarray | None]]):
    fingerprint = []
    for header, mask in items:
        fingerprint.append(
            (
                header.get("index"),
                tuple(header.get("box") or ()),
                header.get("category"),
                header.get("score"),
                header.get("is_human"),
                None if mask is None else mask.tobytes(),
            )
        )
    return fingerprint


def _check_schema(
    items: list[tuple[dict[str, Any], np.ndarray | None]], shape: tuple[int, int]
) -> str:
    for header, mask in items:
        if header.get("op") != "proposal":
            return f"op {header.get('op')!r} in proposal stream"
        if mask is None or mask.shape != shape:
            got = None if mask is None else mask.shape
            return f"mask shape {got} != {shape}"
        values = np.unique(mask)
        if not np.isin(values, (0, 1)).all():
            return f"mask values {values.tolist()} outside {{0, 1}}"
        score = header.get("score")
        if not isinstance(score, (int, float)) or not 0.0 <= float(score) <= 1.0:
            return f"score {score!r} outside [0, 1]"
        for fname in ("index", "category", "is_human", "box"):
            if fname not in header:
                return f"proposal missing field {fname!r}"
    return ""


def conformance_suite(endpoint: str, timeout: float = _PROBE_TIMEOUT) -> ConformanceReport:
    """Probe a live endpoint; every check lands in the report, pass or fail."""
    report = ConformanceReport()
    try:
        probe = EndpointProbe(endpoint, timeout=timeout)
    except (OSError, WireError) as exc:
        report.add("handshake", False, f"cannot attach: {exc}")
        return report

    capabilities: list[str] = []
    with probe:
        try:
            greeting = probe.hello()
            caps = greeting.get("capabilities")
            problems = []
            if greeting.get("op") != "capabilities":
                problems.append(f"op {greeting.get('op')!r}")
            if greeting.get("version") != PROTOCOL_VERSION:
                problems.append(f"version {greeting.get('version')!r}")
            if not isinstance(caps, list) or not all(isinstance(c, str) for c in caps):
                problems.append(f"capability list {caps!r}")
            else:
                capabilities = caps
            report.add("handshake", not problems, "; ".join(problems))
        except (WireError, StreamClosed, EndpointAnswerError, OSError) as exc:
            report.add("handshake", False, str(exc))
            return report

        rng = np.random.default_rng(0)
        for name, dtype, payload in (
            ("echo u8 bit-exact", "u8", rng.integers(0, 256, (17, 23), dtype=np.uint8)),
            (
                "echo f32 bit-exact",
                "f32",
                rng.normal(size=(9, 11)).astype(np.float32),
            ),
        ):
            try:
                back = probe.echo(payload, dtype)
                same = (
                    back is not None
                    and back.shape == payload.shape
                    and back.tobytes() == payload.tobytes()
                )
                detail = "" if same else "payload altered"
                report.add(name, same, detail)
            except (WireError, StreamClosed, EndpointAnswerError, OSError) as exc:
                report.add(name, False, str(exc))

        rows, cols = np.indices((32, 48))
        frame = np.stack(
            [(rows + cols) % 251, (rows * 3) % 251, (cols * 5) % 251], axis=-1
        ).astype(np.uint8)
        if "InstanceSegmentation" in capabilities:
            try:
                first = probe.proposals("InstanceSegmentation", frame)
                problem = _check_schema(first, (32, 48))
                report.add("proposal schema", not problem, problem)
            except (WireError, StreamClosed, EndpointAnswerError, OSError) as exc:
                first = None
                report.add("proposal schema", False, str(exc))
            try:
                if first is None:
                    raise WireError("schema probe failed")
                second = probe.proposals("InstanceSegmentation", frame)
                same = _proposal_fingerprint(first) == _proposal_fingerprint(second)
                report.add(
                    "proposal determinism", same, "" if same else "replies differ"
                )
            except (WireError, StreamClosed, EndpointAnswerError, OSError) as exc:
                report.add("proposal determinism", False, str(exc))
        else:
            report.add(
                "proposal schema", False, "InstanceSegmentation not advertised"
            )
            report.add(
                "proposal determinism", False, "InstanceSegmentation not advertised"
            )

        try:
            probe.request(
                {"op": "infer", "capability": "__not_a_capability__", "dtype": "u8"},
                frame,
            )
            report.add("unsupported capability rejected", False, "request accepted")
        except EndpointAnswerError as exc:
            ok = "unsupported" in str(exc)
            report.add(
                "unsupported capability rejected",
                ok,
                "" if ok else f"error lacks 'unsupported': {exc}",
            )
        except (WireError, StreamClosed, OSError) as exc:
            report.add("unsupported capability rejected", False, str(exc))

    return report
