"""Final stage: rare-instance protection, boundary snapping, and merging
the per-instance masks into one labelmap per frame.

Painting order is far to near: transportation first, then people and plain
objects, then held objects, each tier sorted by descending mean depth, with
rare instances always painted last so overlap never erases them.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from .core import (
    BoundingBox,
    InstanceRecord,
    SequenceStore,
    expand_box,
    mask_to_box,
)
from .errors import DataError
from .preview import PreviewOutput
from .providers import PerceptionHub, Skeleton

log = logging.getLogger(__name__)

RARE_FRACTION = 0.05
D_SNAP = 3
RIDGE_THRESHOLD = 0.5
SALIENCY_SPLIT = 0.5
HELD_RADIUS_FACTOR = 1.5

# painted first (farthest tier): things people ride or stand on
TRANSPORT_CATEGORIES = frozenset(
    {
        "horse", "bike", "bicycle", "motorcycle", "motorbike", "surfboard",
        "skateboard", "car", "boat", "bus", "train", "truck",
    }
)

TIER_TRANSPORT = 0
TIER_PLAIN = 1
TIER_HELD = 2

_EIGHT = np.ones((3, 3), dtype=bool)


def detect_rare_instances(initial_masks: dict[int, np.ndarray]) -> set[int]:
    """Ids whose first-frame area is under 5% of all first-frame area."""
    if not initial_masks:
        return set()
    areas = {i: int(m.sum()) for i, m in initial_masks.items()}
    total = sum(areas.values())
    if total == 0:
        return set()
    return {i for i, a in areas.items() if a / total < RARE_FRACTION}


def recover_rare(
    rare_id: int,
    prob_map: np.ndarray,
    tracked_box: BoundingBox | None,
    labelmap: np.ndarray,
) -> np.ndarray:
    """Give confident pixels near the tracked box back to a rare instance.

    Pixels with probability > 0.5 inside the 10%-expanded box are relabeled
    to rare_id. Pixels the rare instance already owns are never taken away.
    """
    if tracked_box is None:
        return labelmap
    h, w = labelmap.shape
    box = expand_box(tracked_box, 0.10, w, h)
    out = labelmap.copy()
    window = np.zeros((h, w), dtype=bool)
    window[box.slices()] = True
    out[window & (prob_map > 0.5)] = rare_id
    return out


def _component_count(mask: np.ndarray) -> int:
    _, count = ndimage.label(mask, structure=_EIGHT)
    return count


def boundary_snap(
    mask: np.ndarray,
    contour_map: np.ndarray,
    saliency: np.ndarray,
    d_snap: int = D_SNAP,
) -> np.ndarray:
    """Move the mask edge onto nearby contour ridges when saliency agrees.

    A ridge is any pixel with contour > 0.5. Candidate moves are the bands
    within d_snap of the original boundary that span from the edge to a
    ridge; ridges act as walls, so a band never crosses one. An outward band
    joins the mask when its mean saliency is >= 0.5 (the edge advances to
    the ridge), an inward band leaves when its mean saliency is < 0.5 (the
    edge retreats to the ridge). The whole adjustment is reverted when it
    would change the number of connected components, and skipped entirely
    when the band would re-decide more than half of the instance: without a
    stable core the snap has no anchor and can erase or balloon a small
    mask.
    """
    if mask.shape != contour_map.shape or mask.shape != saliency.shape:
        raise DataError("contour or saliency map does not match the mask")
    if not mask.any():
        return mask.copy()
    ridge = contour_map > RIDGE_THRESHOLD
    if not ridge.any():
        return mask.copy()
    boundary = mask & ~ndimage.binary_erosion(mask, structure=_EIGHT)
    band = ndimage.distance_transform_edt(~boundary) <= d_snap
    zone = band & ~ridge
    if 2 * int((zone & mask).sum()) > int(mask.sum()):
        return mask.copy()
    near_mask = ndimage.binary_dilation(mask, structure=_EIGHT)
    near_ridge = ndimage.binary_dilation(ridge, structure=_EIGHT)
    out = mask.copy()
    outer, n_outer = ndimage.label(zone & ~mask, structure=_EIGHT)
    for idx in range(1, n_outer + 1):
        comp = outer == idx
        if not (comp & near_mask).any() or not (comp & near_ridge).any():
            continue
        if float(saliency[comp].mean()) >= SALIENCY_SPLIT:
            out[comp] = True
            # the edge lands on the ridge itself, never past the band
            out[band & ridge & ndimage.binary_dilation(comp, structure=_EIGHT)] = True
    inner, n_inner = ndimage.label(zone & mask, structure=_EIGHT)
    for idx in range(1, n_inner + 1):
        comp = inner == idx
        if not (comp & boundary).any() or not (comp & near_ridge).any():
            continue
        if float(saliency[comp].mean()) < SALIENCY_SPLIT:
            out[comp] = False
    if _component_count(out) != _component_count(mask):
        return mask.copy()
    return out


def _mask_centroid(mask: np.ndarray) -> tuple[float, float]:
    ys, xs = np.nonzero(mask)
    return float(xs.mean()), float(ys.mean())


def _wrist_zones(skeleton: Skeleton) -> list[tuple[float, float, float]]:
    """(x, y, radius) around each wrist, radius = 1.5 x its hand-bone length."""
    zones = []
    for idx, joint in enumerate(skeleton.joints):
        if "wrist" not in joint.name.lower():
            continue
        bone_lengths = []
        for a, b in skeleton.bones:
            if idx not in (a, b):
                continue
            other = skeleton.joints[b if a == idx else a]
            bone_lengths.append(np.hypot(joint.x - other.x, joint.y - other.y))
        if not bone_lengths:
            continue
        radius = HELD_RADIUS_FACTOR * float(min(bone_lengths))
        zones.append((joint.x, joint.y, radius))
    return zones


def _is_held(mask: np.ndarray, zones: list[tuple[float, float, float]]) -> bool:
    if not mask.any() or not zones:
        return False
    cx, cy = _mask_centroid(mask)
    return any(np.hypot(cx - x, cy - y) <= r for x, y, r in zones)


def estimate_topological_order(
    masks: dict[int, np.ndarray],
    records: dict[int, InstanceRecord],
    frame: np.ndarray,
    hub: PerceptionHub,
    rare_ids: set[int] | None = None,
) -> list[int]:
    """Painting order for one frame, far to near, rare instances last."""
    rare_ids = rare_ids or set()
    present = [i for i in sorted(masks) if masks[i].any()]
    if not present:
        return []
    depth = hub.depth(frame)

    zones: list[tuple[float, float, float]] = []
    for i in present:
        rec = records.get(i)
        if rec is not None and rec.is_human:
            for sk in hub.skeletons(frame, mask_hint=masks[i]):
                zones.extend(_wrist_zones(sk))

    def tier_of(i: int) -> int:
        rec = records.get(i)
        category = rec.category if rec is not None else ""
        is_human = rec.is_human if rec is not None else False
        if not is_human and category in TRANSPORT_CATEGORIES:
            return TIER_TRANSPORT
        if not is_human and _is_held(masks[i], zones):
            return TIER_HELD
        return TIER_PLAIN

    keyed = sorted(
        present, key=lambda i: (tier_of(i), -float(depth[masks[i]].mean()), i)
    )
    return [i for i in keyed if i not in rare_ids] + [
        i for i in keyed if i in rare_ids
    ]


def merge_labelmap(
    masks: dict[int, np.ndarray], order: list[int], shape: tuple[int, int]
) -> np.ndarray:
    """Paint masks over each other in the given order."""
    out = np.zeros(shape, dtype=np.int32)
    for i in order:
        out[masks[i]] = i
    return out


def run_refine(
    store: SequenceStore,
    hub: PerceptionHub,
    preview: PreviewOutput,
    masks: dict[int, list[np.ndarray]],
    snap: bool = True,
) -> list[np.ndarray]:
    """Merge per-instance masks into final labelmaps, one per frame.

    Frame 0 reproduces the input annotation verbatim.
    """
    rare_ids = detect_rare_instances(
        {i: preview.records[i].initial_mask for i in masks}
    )
    out: list[np.ndarray] = [store.first_annotation.astype(np.int32)]
    for t in range(1, store.frame_count):
        frame = store.frames[t]
        frame_masks: dict[int, np.ndarray] = {}
        contour_map = saliency = None
        for i in sorted(masks):
            m = masks[i][t]
            if snap and m.any():
                if contour_map is None:
                    contour_map = hub.contour(frame)
                    saliency = hub.saliency(frame)
                m = boundary_snap(m, contour_map, saliency)
            frame_masks[i] = m
        order = estimate_topological_order(
            frame_masks, preview.records, frame, hub, rare_ids
        )
        labelmap = merge_labelmap(frame_masks, order, store.shape)
        for i in sorted(rare_ids):
            if i not in masks:
                continue
            state = preview.records[i].trajectory.get(t)
            box = state.box if state is not None and state.present else None
            if box is None:
                box = mask_to_box(frame_masks[i])
            if box is None:
                continue
            labelmap = recover_rare(i, preview.probabilities[i][t], box, labelmap)
        out.append(labelmap)
    return out
