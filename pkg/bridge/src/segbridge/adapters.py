"""Adapter layer: capability name -> callable answering one request.

An adapter takes the decoded request payload plus its header and returns
one of three reply kinds: a proposal list, a dense float map, or bare JSON
fields. The server turns those into wire messages; adapters never touch
the stream, never keep state between calls, and never make pipeline
decisions (thresholds live in the engine).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


@dataclass(slots=True)
class Proposal:
    """One instance candidate: binary mask plus descriptive fields."""

    mask: np.ndarray
    box: list[int]
    category: str
    score: float
    is_human: bool

    def __post_init__(self) -> None:
        if self.mask.ndim != 2:
            raise ValueError(f"proposal mask must be 2-d, got {self.mask.shape}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"proposal score {self.score} outside [0, 1]")


@dataclass(slots=True)
class ProposalResult:
    proposals: list[Proposal]


@dataclass(slots=True)
class MapResult:
    values: np.ndarray


@dataclass(slots=True)
class JsonResult:
    fields: dict[str, Any] = field(default_factory=dict)


Adapter = Callable[[np.ndarray | None, dict[str, Any]], "ProposalResult | MapResult | JsonResult"]

STUB_SCORE = 0.9
STUB_CATEGORY = "stub"


def centered_box_proposal(
    payload: np.ndarray | None, header: dict[str, Any]
) -> ProposalResult:
    """Stub segmenter: exactly one box covering the middle half of the frame.

    Pure function of the frame shape, so identical requests get identical
    replies; that is the whole point of the stub, it anchors conformance
    and end-to-end tests without any model weights.
    """
    if payload is None or payload.ndim not in (2, 3):
        got = "nothing" if payload is None else f"shape {payload.shape}"
        raise ValueError(f"expected one frame [H,W] or [H,W,3], got {got}")
    h, w = int(payload.shape[0]), int(payload.shape[1])
    if h < 1 or w < 1:
        raise ValueError(f"degenerate frame {payload.shape}")
    top, left = h // 4, w // 4
    bottom = max(top + 1, h - h // 4)
    right = max(left + 1, w - w // 4)
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[top:bottom, left:right] = 1
    return ProposalResult(
        [
            Proposal(
                mask=mask,
                box=[left, top, right - left, bottom - top],
                category=STUB_CATEGORY,
                score=STUB_SCORE,
                is_human=False,
            )
        ]
    )


STUB_ADAPTERS: dict[str, Adapter] = {
    "InstanceSegmentation": centered_box_proposal,
}


def stub_registry(capabilities: tuple[str, ...] | list[str]) -> dict[str, Adapter]:
    """Registry backing every requested capability with its stub, or fail."""
    missing = [c for c in capabilities if c not in STUB_ADAPTERS]
    if missing:
        raise ValueError(f"no stub adapter for {', '.join(sorted(missing))}")
    return {c: STUB_ADAPTERS[c] for c in capabilities}
