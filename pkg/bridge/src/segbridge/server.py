"""Request loop of a bridge process.

The loop answers one request at a time in arrival order, matching the
engine's serializing gateway. Anything malformed is answered with an op
"error" message and the loop keeps going; only a closed stream stops it.
stdout is the wire, so nothing here may ever print.
"""

from __future__ import annotations

import logging
import sys
from typing import IO, Any

import numpy as np

from .adapters import Adapter, JsonResult, MapResult, ProposalResult, stub_registry
from .manifest import AdapterManifest
from .wire import StreamClosed, WireError, read_message, write_message

log = logging.getLogger(__name__)


def _reply_error(writer: IO[bytes], rid: int, message: str) -> None:
    write_message(writer, {"op": "error", "id": rid, "message": message})


def _reply_infer(
    writer: IO[bytes],
    rid: int,
    result: ProposalResult | MapResult | JsonResult,
) -> None:
    if isinstance(result, ProposalResult):
        write_message(
            writer, {"op": "result", "id": rid, "count": len(result.proposals)}
        )
        for index, prop in enumerate(result.proposals):
            write_message(
                writer,
                {
                    "op": "proposal",
                    "id": rid,
                    "index": index,
                    "box": [int(v) for v in prop.box],
                    "category": prop.category,
                    "score": float(prop.score),
                    "is_human": bool(prop.is_human),
                    "dtype": "u8",
                },
                prop.mask.astype(np.uint8),
            )
    elif isinstance(result, MapResult):
        write_message(
            writer,
            {"op": "result", "id": rid, "dtype": "f32"},
            np.asarray(result.values, dtype=np.float32),
        )
    else:
        header = {"op": "result", "id": rid}
        header.update(result.fields)
        write_message(writer, header)


def _handle(
    writer: IO[bytes],
    manifest: AdapterManifest,
    registry: dict[str, Adapter],
    header: dict[str, Any],
    payload: np.ndarray | None,
) -> None:
    rid = header.get("id")
    rid = rid if isinstance(rid, int) else -1
    op = header.get("op")
    if op == "hello":
        write_message(
            writer,
            {
                "op": "capabilities",
                "id": rid,
                "version": manifest.protocol_version,
                "capabilities": list(manifest.capabilities),
                "models": dict(manifest.models),
                "device": manifest.device,
            },
        )
    elif op == "echo":
        if payload is None:
            write_message(writer, {"op": "result", "id": rid})
        else:
            write_message(
                writer,
                {"op": "result", "id": rid, "dtype": header.get("dtype", "u8")},
                payload,
            )
    elif op == "infer":
        capability = header.get("capability")
        adapter = registry.get(capability) if isinstance(capability, str) else None
        if adapter is None:
            _reply_error(writer, rid, f"unsupported capability {capability!r}")
            return
        _reply_infer(writer, rid, adapter(payload, header))
    else:
        _reply_error(writer, rid, f"unsupported op {op!r}")


def serve(
    manifest: AdapterManifest,
    registry: dict[str, Adapter] | None = None,
    reader: IO[bytes] | None = None,
    writer: IO[bytes] | None = None,
) -> None:
    """Answer wire requests until the peer closes the stream.

    With no registry the manifest's capabilities are backed by stub
    adapters. The manifest invariant is enforced up front: serving a
    capability nothing answers is a configuration bug, not a wire error.
    """
    reader = sys.stdin.buffer if reader is None else reader
    writer = sys.stdout.buffer if writer is None else writer
    registry = stub_registry(manifest.capabilities) if registry is None else registry
    manifest.require_served(registry)

    while True:
        try:
            message = read_message(reader)
        except WireError as exc:
            # recoverable: the bad header line was consumed, resync on the next
            try:
                _reply_error(writer, -1, str(exc))
            except StreamClosed:
                return
            continue
        except StreamClosed:
            return
        if message is None:
            return
        header, payload = message
        rid = header.get("id")
        rid = rid if isinstance(rid, int) else -1
        try:
            _handle(writer, manifest, registry, header, payload)
        except StreamClosed:
            return
        except Exception as exc:  # noqa: BLE001  adapter bugs must not kill the loop
            log.exception("request %s failed", rid)
            try:
                _reply_error(writer, rid, f"{type(exc).__name__}: {exc}")
            except StreamClosed:
                return
