"""Shared data model and geometric primitives used by every pass.

Rasters are numpy arrays throughout: frames are uint8 (H, W, 3) or (H, W),
binary masks are bool (H, W), label maps are int32 (H, W) with 0 meaning
background. Dataclasses below carry the per-instance bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DataError

RIGID = "rigid"
DEFORMABLE = "deformable"
UNKNOWN_CATEGORY = "unknown"


@dataclass(slots=True, frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left corner plus size, in whole pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box {self}")

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.bottom), slice(self.x, self.right)

    def clamp(self, frame_w: int, frame_h: int) -> "BoundingBox | None":
        """Intersect with the frame; None when nothing is left."""
        x0 = max(self.x, 0)
        y0 = max(self.y, 0)
        x1 = min(self.right, frame_w)
        y1 = min(self.bottom, frame_h)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and self.right >= other.right
            and self.bottom >= other.bottom
        )

    def shift(self, dx: int, dy: int) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)


def expand_box(
    box: BoundingBox,
    fraction: float,
    frame_w: int | None = None,
    frame_h: int | None = None,
) -> BoundingBox | None:
    """Grow width and height by `fraction` about the center, then clamp.

    Growth is symmetric up to integer rounding (the odd pixel goes to the
    right/bottom side, keeping the result monotone in `fraction`). Passing
    no frame size skips clamping.
    """
    if fraction < 0:
        raise ValueError("fraction must be >= 0")
    grow_w = int(round(box.w * fraction))
    grow_h = int(round(box.h * fraction))
    out = BoundingBox(
        box.x - grow_w // 2,
        box.y - grow_h // 2,
        box.w + grow_w,
        box.h + grow_h,
    )
    if frame_w is None or frame_h is None:
        return out
    return out.clamp(frame_w, frame_h)


def mask_to_box(mask: np.ndarray) -> BoundingBox | None:
    """Tightest box around the true pixels; None for an empty mask."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return BoundingBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; both-empty counts as 1.0."""
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return inter / union


def box_to_mask(box: BoundingBox, shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    clamped = box.clamp(shape[1], shape[0])
    if clamped is not None:
        mask[clamped.slices()] = True
    return mask


@dataclass(slots=True)
class TrackState:
    """Per-frame tracking state of one instance."""

    box: BoundingBox | None
    mask: np.ndarray
    confidence: float
    present: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0,1]")


@dataclass(slots=True)
class ContextProfile:
    """Routing attributes extracted during the preview pass."""

    is_human: bool
    category: str
    rigidity: str
    rigidity_ratio: float


@dataclass(slots=True)
class InstanceRecord:
    """One tracked instance with its context and per-frame trajectory."""

    id: int
    initial_mask: np.ndarray
    is_human: bool = False
    category: str = UNKNOWN_CATEGORY
    rigidity: str = DEFORMABLE
    rigidity_ratio: float = 0.0
    is_rare: bool = False
    trajectory: dict[int, TrackState] = field(default_factory=dict)
    classifier: Any = None
    descriptor: np.ndarray | None = None

    def mask_at(self, t: int) -> np.ndarray:
        state = self.trajectory.get(t)
        if state is None:
            return np.zeros_like(self.initial_mask)
        return state.mask

    def present_at(self, t: int) -> bool:
        state = self.trajectory.get(t)
        return bool(state is not None and state.present)


@dataclass(slots=True)
class SequenceStore:
    """A loaded sequence: ordered frames plus the frame-0 annotation."""

    name: str
    frames: list[np.ndarray]
    first_annotation: np.ndarray

    def __post_init__(self) -> None:
        if len(self.frames) < 2:
            raise DataError(f"sequence {self.name}: needs at least 2 frames")
        h, w = self.frames[0].shape[:2]
        if self.first_annotation.shape != (h, w):
            raise DataError(f"sequence {self.name}: annotation size mismatch")

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape[:2]

    def instance_ids(self) -> list[int]:
        ids = np.unique(self.first_annotation)
        return [int(v) for v in ids if v != 0]


def labelmap_to_masks(labels: np.ndarray, ids: list[int]) -> dict[int, np.ndarray]:
    return {i: labels == i for i in ids}


def masks_are_disjoint(masks: list[np.ndarray]) -> bool:
    if not masks:
        return True
    claimed = np.zeros(masks[0].shape, dtype=np.int32)
    for m in masks:
        claimed += m.astype(np.int32)
    return bool((claimed <= 1).all())


def resolve_contested_pixels(
    masks: dict[int, np.ndarray], probs: dict[int, np.ndarray]
) -> dict[int, np.ndarray]:
    """Make per-instance masks pairwise disjoint.

    A contested pixel goes to the instance with the highest foreground
    probability there; exact ties go to the lower instance id.
    """
    if not masks:
        return {}
    ids = sorted(masks)
    shape = masks[ids[0]].shape
    best_prob = np.full(shape, -1.0, dtype=np.float64)
    winner = np.zeros(shape, dtype=np.int64)
    for i in ids:
        m = masks[i]
        p = np.where(m, probs[i].astype(np.float64), -1.0)
        # strict > keeps the lower id on exact ties (ids scanned ascending)
        take = m & (p > best_prob)
        best_prob = np.where(take, p, best_prob)
        winner = np.where(take, i, winner)
    return {i: winner == i for i in ids}
