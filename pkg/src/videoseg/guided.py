"""Third pass: re-segment suspicious frames inside a guided region.

A soft region of interest is built from the temporal neighbors' masks,
the frame is blended toward the mean color outside it, and the blend is
re-segmented. A forward sweep (frame 1 onward) runs before a backward
sweep (frame T-2 down to 1); frame 0 is never touched.
"""

from __future__ import annotations

import enum
import logging
import math

import numpy as np
from scipy import ndimage

from .core import BoundingBox, InstanceRecord, SequenceStore, mask_iou, mask_to_box
from .errors import DataError
from .preview import (
    FlowCache,
    PreviewOutput,
    _instance_seed,
    _region_descriptor,
    grabcut_refine,
)
from .providers import Capability, PerceptionHub
from .providers.fallbacks import cosine_similarity

log = logging.getLogger(__name__)

ROI_RADIUS_FLOOR = 5
MISMATCH_IOU = 0.5
AREA_RATIO_LOW = 0.5
AREA_RATIO_HIGH = 2.0
APPEARANCE_GATE = 0.7
# weight 1 maps to probability 0.7: a soft foreground seed the segmenter
# may still trim, never a hard one
WEIGHT_GAIN = 0.7


class Trigger(enum.Enum):
    NONE = "None"
    REAPPEARANCE = "Reappearance"
    MISMATCH = "Mismatch"


def compute_motion_intensity(flow: np.ndarray, mask: np.ndarray) -> float:
    """Median flow magnitude over the mask; 0 for an empty mask."""
    if not mask.any():
        return 0.0
    mag = np.hypot(flow[..., 0], flow[..., 1])
    return float(np.median(mag[mask]))


def build_guided_roi(
    shape: tuple[int, int], neighbor_masks: list[np.ndarray], motion: float
) -> tuple[np.ndarray, BoundingBox]:
    """Soft attention map around the union of neighbor masks.

    The union dilated by r = max(5, ceil(2 x motion)) px forms a full-weight
    core, so an object that moved by up to 2 x motion still sits entirely at
    weight 1. Past the core the weight falls off as a Gaussian of sigma =
    ceil(r/2) in the distance to the core, truncated at 3 sigma. Returns the
    map and the bounding box of its support.
    """
    union = np.zeros(shape, dtype=bool)
    for m in neighbor_masks:
        union |= m
    if not union.any():
        raise DataError("no guidance: every neighbor mask is empty")
    radius = max(ROI_RADIUS_FLOOR, math.ceil(2.0 * motion))
    sigma = float(math.ceil(radius / 2.0))
    excess = ndimage.distance_transform_edt(~union) - radius
    weight = np.exp(-np.maximum(excess, 0.0) ** 2 / (2.0 * sigma**2))
    weight[excess > 3.0 * sigma] = 0.0
    box = mask_to_box(weight > 0)
    return weight.astype(np.float32), box


def apply_guided_roi(
    frame: np.ndarray, weight: np.ndarray, box: BoundingBox | None = None
) -> np.ndarray:
    """Blend the frame toward its mean color where the weight is low."""
    if frame.shape[:2] != weight.shape:
        raise DataError("weight map does not match the frame")
    mean_color = frame.reshape(-1, frame.shape[2]).mean(axis=0)
    w3 = weight[..., None].astype(np.float64)
    out = np.rint(w3 * frame + (1.0 - w3) * mean_color).astype(np.uint8)
    if box is not None:
        out = out[box.slices()]
    return out


def should_propagate(
    cur_mask: np.ndarray,
    neighbor_mask: np.ndarray,
    mismatch_iou: float = MISMATCH_IOU,
    area_band: tuple[float, float] = (AREA_RATIO_LOW, AREA_RATIO_HIGH),
) -> Trigger:
    """Decide whether a frame needs guided re-segmentation."""
    cur_any, nb_any = bool(cur_mask.any()), bool(neighbor_mask.any())
    if not cur_any and not nb_any:
        return Trigger.NONE
    if not cur_any:
        return Trigger.REAPPEARANCE
    if not nb_any:
        return Trigger.MISMATCH
    iou = mask_iou(cur_mask, neighbor_mask)
    ratio = float(cur_mask.sum()) / float(neighbor_mask.sum())
    if iou < mismatch_iou or not (area_band[0] <= ratio <= area_band[1]):
        return Trigger.MISMATCH
    return Trigger.NONE


def fine_grained_segment(
    frame: np.ndarray,
    weight: np.ndarray,
    box: BoundingBox,
    hub: PerceptionHub,
    seed: int,
) -> np.ndarray:
    """Segment inside the guided region.

    An external detector, when configured, is asked on the blended crop and
    its best proposal against the weight-1 zone wins. The fallback is a
    seeded cut on the raw crop: there the weight map alone carries the
    background suppression, so true background colors stay visible to the
    color models and the full-weight halo around the old position can still
    be trimmed.
    """
    zone = (weight >= 1.0)[box.slices()]
    out = np.zeros(weight.shape, dtype=bool)

    if hub.registered(Capability.InstanceSegmentation):
        blended = apply_guided_roi(frame, weight, box)
        best, best_iou = None, 0.0
        for prop in hub.instance_proposals(blended, prob_hint=None):
            iou = mask_iou(prop.mask, zone)
            if iou > best_iou:
                best_iou, best = iou, prop
        if best is not None:
            out[box.slices()] = best.mask
            return out

    sub_raw = np.ascontiguousarray(frame[box.slices()])
    sub_prob = (WEIGHT_GAIN * weight[box.slices()]).astype(np.float32)
    sub_box = BoundingBox(0, 0, box.w, box.h)
    refined = grabcut_refine(sub_raw, sub_prob, sub_box, seed=seed)
    out[box.slices()] = refined
    return out


class GuidedPropagator:
    """Bidirectional guided re-segmentation of one instance's mask list.

    forward() must run before backward(); both mutate self.masks in place,
    never frame 0.
    """

    def __init__(
        self,
        store: SequenceStore,
        hub: PerceptionHub,
        record: InstanceRecord,
        masks: list[np.ndarray],
        seed: int,
        flows: FlowCache | None = None,
    ):
        if len(masks) != store.frame_count:
            raise DataError("mask list does not cover the sequence")
        self.store = store
        self.hub = hub
        self.record = record
        self.masks = [m.copy() for m in masks]
        self.seed = seed
        self.flows = flows if flows is not None else FlowCache(store.frames, hub)
        self._forward_done = False

    def _neighbors(self, t: int, direction: int) -> list[np.ndarray]:
        out = []
        for k in (1, 2):
            j = t + direction * k
            if 0 <= j < len(self.masks):
                out.append(self.masks[j])
        return out

    def _resegment(self, t: int, direction: int) -> np.ndarray | None:
        neighbors = self._neighbors(t, direction)
        flow = self.flows.get(t + direction, t)
        union = np.zeros(self.store.shape, dtype=bool)
        for m in neighbors:
            union |= m
        motion = compute_motion_intensity(flow, union)
        try:
            weight, box = build_guided_roi(self.store.shape, neighbors, motion)
        except DataError:
            return None
        return fine_grained_segment(
            self.store.frames[t],
            weight,
            box,
            self.hub,
            seed=_instance_seed(self.seed, self.record.id, t, 4 + direction),
        )

    def _passes_appearance(self, t: int, mask: np.ndarray) -> bool:
        if self.record.descriptor is None:
            return True
        desc = _region_descriptor(
            self.store.frames[t], mask, self.hub, self.record.is_human
        )
        return cosine_similarity(desc, self.record.descriptor) >= APPEARANCE_GATE

    def _step(self, t: int, direction: int, allow_restore: bool) -> str:
        """One guided visit of frame t; returns what happened."""
        neighbors = self._neighbors(t, direction)
        anchored = [m for m in neighbors if m.any()]
        if not anchored:
            return "skipped"
        trigger = should_propagate(self.masks[t], anchored[0])
        if trigger is Trigger.NONE:
            return "kept"
        if trigger is Trigger.REAPPEARANCE and not allow_restore:
            return "blocked"
        new_mask = self._resegment(t, direction)
        if new_mask is None or not new_mask.any():
            return "empty"
        if trigger is Trigger.REAPPEARANCE and not self._passes_appearance(
            t, new_mask
        ):
            return "empty"
        self.masks[t] = new_mask
        return "replaced"

    def forward(self) -> None:
        for t in range(1, len(self.masks)):
            self._step(t, direction=-1, allow_restore=True)
        self._forward_done = True

    def backward(self) -> None:
        if not self._forward_done:
            raise DataError("backward sweep requested before the forward sweep")
        restore_open = True
        for t in range(len(self.masks) - 2, 0, -1):
            if self.masks[t].any():
                restore_open = True
            outcome = self._step(t, direction=+1, allow_restore=restore_open)
            if outcome == "empty" and not self.masks[t].any():
                # a failed restoration closes the streak: do not hallucinate
                # the instance deeper into the gap
                restore_open = False


def run_guided(
    store: SequenceStore,
    hub: PerceptionHub,
    preview: PreviewOutput,
    masks: dict[int, list[np.ndarray]],
    seed: int,
    flows: FlowCache | None = None,
    executor=None,
) -> dict[int, list[np.ndarray]]:
    """Forward then backward guided pass for every instance."""
    shared_flows = flows if flows is not None else FlowCache(store.frames, hub)
    ids = sorted(masks)

    def job(i: int) -> tuple[int, list[np.ndarray]]:
        prop = GuidedPropagator(
            store, hub, preview.records[i], masks[i], seed, flows=shared_flows
        )
        prop.forward()
        prop.backward()
        return i, prop.masks

    results: dict[int, list[np.ndarray]] = {}
    if executor is None:
        for i in ids:
            results[i] = job(i)[1]
    else:
        for i, value in executor.map(job, ids):
            results[i] = value
    return results
