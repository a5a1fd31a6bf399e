"""Minimal wire-protocol endpoint used by the client tests.

Implements the framed JSON-header protocol with nothing but the standard
library so the tests exercise the real codec rather than a shared import.
Supports hello/echo, a deterministic proposal reply for
InstanceSegmentation, and a couple of misbehaviour flags for failure
tests.
"""

from __future__ import annotations

import argparse
import json
import math
import struct
import sys

DTYPE_SIZES = {"u8": 1, "f32": 4}


def read_message(stream):
    line = bytearray()
    while True:
        ch = stream.read(1)
        if not ch:
            return None, None
        if ch == b"\n":
            break
        line.extend(ch)
    header = json.loads(line.decode("utf-8"))
    shape = header.get("shape", [0])
    count = math.prod(shape) if shape else 0
    size = count * DTYPE_SIZES[header.get("dtype", "u8")]
    payload = b""
    while len(payload) < size:
        chunk = stream.read(size - len(payload))
        if not chunk:
            raise EOFError("peer closed mid-payload")
        payload += chunk
    return header, payload


def write_message(stream, header, payload=b""):
    stream.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    if payload:
        stream.write(payload)
    stream.flush()


def centered_proposal(height, width):
    top, left = height // 4, width // 4
    bottom, right = top + height // 2, left + width // 2
    mask = bytearray(height * width)
    for y in range(top, bottom):
        row = y * width
        for x in range(left, right):
            mask[row + x] = 1
    box = [left, top, right - left, bottom - top]
    return box, bytes(mask)


def serve(args):
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    caps = [c for c in args.caps.split(",") if c]
    while True:
        try:
            header, payload = read_message(stdin)
        except (ValueError, KeyError) as exc:
            write_message(stdout, {"op": "error", "message": f"bad magic: {exc}"})
            continue
        if header is None:
            return
        op = header.get("op")
        mid = header.get("id", 0)
        if op == "hello":
            write_message(
                stdout,
                {"op": "capabilities", "version": args.version, "capabilities": caps},
            )
        elif op == "echo":
            reply = {
                "op": "result",
                "id": mid,
                "dtype": header.get("dtype", "u8"),
                "shape": header.get("shape", [0]),
            }
            if args.truncate_results:
                stdout.write(json.dumps(reply).encode("utf-8") + b"\n")
                stdout.write(payload[: max(0, len(payload) - 1)])
                stdout.flush()
                return
            write_message(stdout, reply, payload)
        elif op == "infer":
            capability = header.get("capability", "")
            if capability not in caps:
                write_message(
                    stdout,
                    {
                        "op": "error",
                        "id": mid,
                        "message": f"unsupported capability: {capability}",
                    },
                )
                continue
            if capability == "InstanceSegmentation":
                height, width = header["shape"][0], header["shape"][1]
                box, mask = centered_proposal(height, width)
                write_message(stdout, {"op": "result", "id": mid, "count": 1})
                write_message(
                    stdout,
                    {
                        "op": "proposal",
                        "id": mid,
                        "index": 0,
                        "box": box,
                        "category": "unknown",
                        "score": 0.75,
                        "is_human": False,
                        "dtype": "u8",
                        "shape": [height, width],
                    },
                    mask,
                )
            elif capability == "PoseSkeleton":
                height, width = header["shape"][0], header["shape"][1]
                skeletons = [
                    {
                        "joints": [
                            {"x": width / 2, "y": height / 4, "confidence": 0.9},
                            {"x": width / 2, "y": 3 * height / 4, "confidence": 0.9},
                        ],
                        "bones": [[0, 1]],
                    }
                ]
                write_message(
                    stdout, {"op": "result", "id": mid, "skeletons": skeletons}
                )
            else:
                # Scalar field reply: a flat f32 map of 0.5 at input size.
                height, width = header["shape"][0], header["shape"][1]
                flat = struct.pack(
                    f"<{height * width}f", *([0.5] * (height * width))
                )
                write_message(
                    stdout,
                    {
                        "op": "result",
                        "id": mid,
                        "dtype": "f32",
                        "shape": [height, width],
                    },
                    flat,
                )
        else:
            write_message(
                stdout, {"op": "error", "id": mid, "message": f"bad magic: op {op!r}"}
            )


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--caps", default="InstanceSegmentation")
    parser.add_argument("--version", type=int, default=1)
    parser.add_argument("--truncate-results", action="store_true")
    serve(parser.parse_args())


if __name__ == "__main__":
    main()
