"""Second pass: route every instance to a scheme by its context.

Humans get skeleton-guided segmentation with flow-consistency voting;
rigid objects get homography-chain propagation; deformable objects of a
known category get proposal association; everything else keeps its
preview mask untouched.
"""

from __future__ import annotations

import enum
import functools
import logging
from importlib import resources

import numpy as np

import cv2
from scipy import ndimage

from .core import (
    ContextProfile,
    InstanceRecord,
    RIGID,
    SequenceStore,
    UNKNOWN_CATEGORY,
    mask_iou,
    mask_to_box,
)
from .errors import DataError
from .homography import estimate_homography_ransac, fit_contour_homography
from .preview import FlowCache, PreviewOutput, _instance_seed
from .providers import PerceptionHub, Skeleton

log = logging.getLogger(__name__)

ASSOCIATION_IOU = 0.3
JOINT_CONFIDENCE = 0.2
SKELETON_RADIUS_FRACTION = 0.15
SKELETON_RADIUS_FLOOR = 10
# same floor that certifies rigidity during context extraction
CONTOUR_FIT_RATIO = 0.8


class Scheme(enum.Enum):
    HumanSkeletonGuided = "HumanSkeletonGuided"
    RigidPropagation = "RigidPropagation"
    DeformableKnown = "DeformableKnown"
    DeformableUnknown = "DeformableUnknown"


@functools.lru_cache(maxsize=1)
def known_categories() -> frozenset[str]:
    text = resources.files("videoseg").joinpath("data/coco_labels.txt").read_text()
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def route_scheme(profile: ContextProfile) -> Scheme:
    """Total routing function over (human, rigidity, category known)."""
    if profile.is_human:
        return Scheme.HumanSkeletonGuided
    if profile.rigidity == RIGID:
        return Scheme.RigidPropagation
    if profile.category != UNKNOWN_CATEGORY and profile.category in known_categories():
        return Scheme.DeformableKnown
    return Scheme.DeformableUnknown


def build_skeleton_guided_region(frame: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Frame with everything away from the dilated skeleton flattened.

    Each bone is drawn and dilated by max(0.15 x bone length, 10 px);
    outside pixels are replaced by the mean frame color so a detector sees
    only the figure.
    """
    h, w = frame.shape[:2]
    region = np.zeros((h, w), dtype=np.uint8)
    drew = False
    for a, b in skeleton.bones:
        ja, jb = skeleton.joints[a], skeleton.joints[b]
        if ja.confidence <= JOINT_CONFIDENCE or jb.confidence <= JOINT_CONFIDENCE:
            continue
        length = float(np.hypot(ja.x - jb.x, ja.y - jb.y))
        radius = max(SKELETON_RADIUS_FRACTION * length, SKELETON_RADIUS_FLOOR)
        bone = np.zeros((h, w), dtype=np.uint8)
        cv2.line(
            bone,
            (int(round(ja.x)), int(round(ja.y))),
            (int(round(jb.x)), int(round(jb.y))),
            1,
            thickness=1,
        )
        ksize = 2 * int(np.ceil(radius)) + 1
        kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (ksize, ksize))
        region |= cv2.dilate(bone, kernel)
        drew = True
    if not drew:
        raise DataError("no skeleton evidence")
    mean_color = frame.reshape(-1, frame.shape[2]).mean(axis=0)
    out = np.where(region[..., None] > 0, frame, mean_color.astype(frame.dtype))
    return out


def warp_mask_by_flow(mask: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Carry a mask along a flow field (backward nearest-neighbor sampling)."""
    h, w = mask.shape
    ys, xs = np.mgrid[0:h, 0:w]
    src_x = np.clip(np.round(xs - flow[..., 0]).astype(np.int32), 0, w - 1)
    src_y = np.clip(np.round(ys - flow[..., 1]).astype(np.int32), 0, h - 1)
    return mask[src_y, src_x]


def flow_consistency_refine(
    mask_prev: np.ndarray, mask_cur: np.ndarray, flow: np.ndarray
) -> np.ndarray:
    """2-of-3 vote among {flow-warped previous, current, dilated overlap}."""
    if mask_prev.shape != mask_cur.shape:
        raise DataError("mask dimensions disagree")
    warped = warp_mask_by_flow(mask_prev, flow)
    overlap = warped & mask_cur
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (7, 7))
    dilated = cv2.dilate(overlap.astype(np.uint8), kernel).astype(bool)
    votes = (
        warped.astype(np.uint8) + mask_cur.astype(np.uint8) + dilated.astype(np.uint8)
    )
    return votes >= 2


def segment_human(
    record: InstanceRecord,
    t: int,
    frame: np.ndarray,
    preview_mask: np.ndarray,
    hub: PerceptionHub,
) -> np.ndarray:
    """Detector proposals matched to the tracked box, retried on the
    skeleton-guided region when the raw frame yields nothing."""
    tracked = record.trajectory.get(t)
    box = tracked.box if tracked is not None else None
    if box is None:
        box = mask_to_box(preview_mask)
    if box is None:
        return preview_mask
    box_mask = np.zeros(frame.shape[:2], dtype=bool)
    box_mask[box.slices()] = True

    def best_proposal(image):
        best, best_key = None, (0.0, -1.0)
        for prop in hub.instance_proposals(image, prob_hint=None):
            key = (mask_iou(prop.mask, box_mask), prop.score)
            if key > best_key:
                best_key, best = key, prop
        return best if best_key[0] > 0.0 else None

    chosen = best_proposal(frame)
    if chosen is None:
        skeletons = hub.skeletons(frame, mask_hint=preview_mask)
        for skeleton in skeletons:
            try:
                guided = build_skeleton_guided_region(frame, skeleton)
            except DataError:
                continue
            chosen = best_proposal(guided)
            if chosen is not None:
                break
    if chosen is None:
        return preview_mask
    return chosen.mask.astype(bool)


# a warp reproducing at least this fraction of the evidence carries no new
# structure; below it the shapes genuinely disagree
RIGID_EVIDENCE_IOU = 0.9


def _agrees_within_boundary_wobble(
    warped: np.ndarray, evidence: np.ndarray
) -> bool:
    """True when the warp and the evidence have the same outer shape, either
    up to a one-pixel boundary band (small objects, where fit noise is a
    large area fraction) or up to 10 percent of their union (large objects,
    where a perimeter band is needlessly strict). Keeping the evidence in
    that case stops chained warps from accumulating rounding drift. Both
    masks are compared with interior holes filled: a rigid warp carries
    occlusion holes from the previous frame, but holes are transient
    photometric evidence that the direct observation places better.
    Structural disagreement (spill blobs, real motion error) fails both
    tests and the warp still wins."""
    filled_w = ndimage.binary_fill_holes(warped)
    filled_e = ndimage.binary_fill_holes(evidence)
    diff = filled_w ^ filled_e
    if not diff.any():
        return True
    kernel = np.ones((3, 3), dtype=bool)
    band = ndimage.binary_dilation(filled_e, structure=kernel) & ~ndimage.binary_erosion(
        filled_e, structure=kernel
    )
    if not np.any(diff & ~band):
        return True
    union = int((filled_w | filled_e).sum())
    inter = int((filled_w & filled_e).sum())
    return inter >= RIGID_EVIDENCE_IOU * union


def segment_rigid(
    record: InstanceRecord,
    t: int,
    frame: np.ndarray,
    prev_mask: np.ndarray,
    preview_mask: np.ndarray,
    flow: np.ndarray,
    hub: PerceptionHub,
    rng_seed: int,
) -> np.ndarray:
    """Warp the previous mask onto the current frame by a rigid-scene
    homography. An external detector, when configured, is asked first; its
    best match against the flow-warped previous mask wins. Otherwise the
    homography comes from contour correspondences between the previous mask
    and the current evidence; when that alignment fails the preview evidence
    is kept unless it has collapsed, in which case flow-tracked contour
    points bridge the gap. A fit that agrees with the evidence up to
    boundary wobble also yields the evidence (the direct observation
    carries the finer detail)."""
    from .providers import Capability

    if hub.registered(Capability.InstanceSegmentation):
        warped = warp_mask_by_flow(prev_mask, flow)
        best, best_iou = None, ASSOCIATION_IOU
        for prop in hub.instance_proposals(frame, prob_hint=None):
            iou = mask_iou(warped, prop.mask)
            if iou >= best_iou:
                best_iou, best = iou, prop
        if best is not None:
            return best.mask.astype(bool)

    h, w = prev_mask.shape
    fit = fit_contour_homography(prev_mask, preview_mask, rng_seed=rng_seed)
    if fit is not None and fit[1] >= CONTOUR_FIT_RATIO:
        warped = cv2.warpPerspective(
            prev_mask.astype(np.uint8),
            fit[0],
            (w, h),
            flags=cv2.INTER_NEAREST,
            borderMode=cv2.BORDER_CONSTANT,
            borderValue=0,
        ).astype(bool)
        if warped.any():
            if preview_mask.any() and _agrees_within_boundary_wobble(
                warped, preview_mask
            ):
                return preview_mask.copy()
            return warped

    # contour alignment failed; healthy direct evidence beats a warp built
    # from quantised flow, so the flow-tracked bridge below only applies
    # when the evidence has collapsed
    if 4 * int(preview_mask.sum()) >= int(prev_mask.sum()):
        return preview_mask.copy()

    contours, _ = cv2.findContours(
        prev_mask.astype(np.uint8), cv2.RETR_LIST, cv2.CHAIN_APPROX_NONE
    )
    if not contours:
        return preview_mask
    pts = np.concatenate([c.reshape(-1, 2) for c in contours], axis=0)
    if pts.shape[0] < 4:
        return preview_mask
    if pts.shape[0] > 200:
        idx = np.linspace(0, pts.shape[0] - 1, 200).round().astype(int)
        pts = pts[np.unique(idx)]
    fx = flow[pts[:, 1], pts[:, 0], 0]
    fy = flow[pts[:, 1], pts[:, 0], 1]
    dst = pts + np.stack([fx, fy], axis=1)
    fit = estimate_homography_ransac(
        pts.astype(np.float64), dst.astype(np.float64), rng_seed=rng_seed
    )
    if fit is None:
        return preview_mask
    warped = cv2.warpPerspective(
        prev_mask.astype(np.uint8),
        fit[0],
        (w, h),
        flags=cv2.INTER_NEAREST,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    ).astype(bool)
    if (
        warped.any()
        and preview_mask.any()
        and _agrees_within_boundary_wobble(warped, preview_mask)
    ):
        return preview_mask.copy()
    return warped


def segment_deformable_known(
    record: InstanceRecord,
    t: int,
    frame: np.ndarray,
    prev_mask: np.ndarray,
    preview_mask: np.ndarray,
    flow: np.ndarray,
    hub: PerceptionHub,
) -> np.ndarray:
    """Category-matched proposal with the best IoU against the flow-warped
    previous mask; preview mask below the association floor."""
    warped = warp_mask_by_flow(prev_mask, flow)
    proposals = hub.instance_proposals(frame, prob_hint=None)
    best, best_key = None, (ASSOCIATION_IOU, -1.0)
    for prop in proposals:
        if prop.category != record.category:
            continue
        key = (mask_iou(warped, prop.mask), prop.score)
        if key > best_key:
            best_key, best = key, prop
    if best is None or best_key[0] < ASSOCIATION_IOU:
        return preview_mask
    return best.mask.astype(bool)


def segment_deformable_unknown(preview_mask: np.ndarray) -> np.ndarray:
    """Preview passthrough, bit-exact."""
    return preview_mask.copy()


def run_contextual(
    store: SequenceStore,
    hub: PerceptionHub,
    preview: PreviewOutput,
    seed: int,
    executor=None,
) -> dict[int, list[np.ndarray]]:
    """Produce second-pass masks for every instance."""
    flows = FlowCache(store.frames, hub)
    ids = sorted(preview.records)

    def job(i: int) -> tuple[int, list[np.ndarray]]:
        record = preview.records[i]
        profile = ContextProfile(
            is_human=record.is_human,
            category=record.category,
            rigidity=record.rigidity,
            rigidity_ratio=record.rigidity_ratio,
        )
        scheme = route_scheme(profile)
        source = preview.masks[i]
        out = [source[0].copy()]
        for t in range(1, store.frame_count):
            preview_mask = source[t]
            prev_mask = out[t - 1]
            if not preview_mask.any():
                out.append(preview_mask.copy())
                continue
            if scheme is Scheme.DeformableUnknown:
                out.append(segment_deformable_unknown(preview_mask))
                continue
            flow = flows.get(t - 1, t)
            if scheme is Scheme.HumanSkeletonGuided:
                mask = segment_human(record, t, store.frames[t], preview_mask, hub)
                if prev_mask.any():
                    mask = flow_consistency_refine(prev_mask, mask, flow)
                if not mask.any():
                    mask = preview_mask.copy()
            elif scheme is Scheme.RigidPropagation:
                if prev_mask.any():
                    mask = segment_rigid(
                        record,
                        t,
                        store.frames[t],
                        prev_mask,
                        preview_mask,
                        flow,
                        hub,
                        rng_seed=_instance_seed(seed, i, t, 3),
                    )
                else:
                    mask = preview_mask.copy()
            else:  # DeformableKnown
                mask = segment_deformable_known(
                    record, t, store.frames[t], prev_mask, preview_mask, flow, hub
                )
            out.append(mask)
        return i, out

    results: dict[int, list[np.ndarray]] = {}
    if executor is None:
        for i in ids:
            results[i] = job(i)[1]
    else:
        for i, value in executor.map(job, ids):
            results[i] = value
    return results
