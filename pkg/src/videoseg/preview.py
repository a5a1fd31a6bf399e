"""First pass: per-instance tracking, online pixel classification,
graph-cut refinement, re-appearance recovery, and context extraction.

Each instance is handled independently: its box is carried frame to frame
by flow warping plus appearance re-scoring, a small online linear
classifier scores pixels inside the box, and a graph cut snaps the
probability map to image edges. The pass also measures how rigid the
instance moves, which the second pass uses for routing.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field

import numpy as np

import cv2

from .core import (
    BoundingBox,
    ContextProfile,
    DEFORMABLE,
    InstanceRecord,
    RIGID,
    SequenceStore,
    TrackState,
    UNKNOWN_CATEGORY,
    box_to_mask,
    expand_box,
    labelmap_to_masks,
    mask_iou,
    mask_to_box,
    resolve_contested_pixels,
)
from .errors import DataError
from .homography import fit_contour_homography
from .providers import PerceptionHub
from .providers.fallbacks import cosine_similarity

log = logging.getLogger(__name__)


@dataclass(slots=True)
class PreviewParams:
    history_n: int = 8
    history_delta: int = 2
    preview_window: int = 10
    presence_threshold: float = 0.3
    area_band: float = 1.3
    grabcut_iterations: int = 5
    box_expand: float = 0.10
    reappear_similarity: float = 0.7
    rigid_inlier_ratio: float = 0.8
    rigid_frame_fraction: float = 0.7
    feature_cell: int = 8
    max_train_per_class: int = 5000


def sample_history_frames(t: int, n: int = 8, delta: int = 2) -> list[int]:
    """Frame indices {t-delta, t-2*delta, ...}, non-negative, at most n.

    Strictly decreasing; an empty window degenerates to [0] since the
    annotated first frame is always available.
    """
    if t < 1:
        raise DataError("history sampling needs t >= 1")
    out = []
    k = t - delta
    while k >= 0 and len(out) < n:
        out.append(k)
        k -= delta
    return out if out else [0]


@dataclass(slots=True)
class FrameFeatures:
    """Per-frame feature inputs shared by all instances.

    Descriptors are computed per `cell` x `cell` patch and looked up per
    pixel, keeping the per-pixel feature assembly cheap.
    """

    saliency: np.ndarray  # (H, W) float32
    cells: np.ndarray  # (ch, cw, D) float32
    cell: int

    @property
    def dim(self) -> int:
        return 6 + self.cells.shape[2]

    def gather(self, frame: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
        h, w = self.saliency.shape
        color = frame[ys, xs].astype(np.float64) / 255.0
        pos = np.stack([xs / w, ys / h], axis=1)
        sal = self.saliency[ys, xs].astype(np.float64)[:, None]
        desc = self.cells[ys // self.cell, xs // self.cell].astype(np.float64)
        return np.concatenate([color, pos, sal, desc], axis=1)


def compute_frame_features(
    frame: np.ndarray, hub: PerceptionHub, cell: int = 8
) -> FrameFeatures:
    h, w = frame.shape[:2]
    saliency = hub.saliency(frame).astype(np.float32)
    ch = math.ceil(h / cell)
    cw = math.ceil(w / cell)
    first = hub.scene_feature(frame[0:cell, 0:cell])
    cells = np.zeros((ch, cw, first.shape[0]), dtype=np.float32)
    cells[0, 0] = first
    for cy in range(ch):
        for cx in range(cw):
            if cy == 0 and cx == 0:
                continue
            patch = frame[cy * cell : (cy + 1) * cell, cx * cell : (cx + 1) * cell]
            cells[cy, cx] = hub.scene_feature(patch)
    return FrameFeatures(saliency=saliency, cells=cells, cell=cell)


@dataclass(slots=True)
class HistoryWindow:
    """Recent (frame index, mask, features) triples feeding the classifier."""

    n: int
    delta: int
    entries: list[tuple[int, np.ndarray, FrameFeatures]] = field(default_factory=list)


@dataclass(slots=True)
class PixelClassifier:
    """Linear max-margin pixel scorer with standardized features."""

    mean: np.ndarray
    scale: np.ndarray
    weights: np.ndarray
    bias: float
    trained_area: int
    gain: float = 4.0  # logistic sharpness applied to the margin

    def decision(self, feats: np.ndarray) -> np.ndarray:
        z = (feats - self.mean) / self.scale
        return z @ self.weights + self.bias

    def predict(self, feats: np.ndarray) -> np.ndarray:
        margin = np.clip(self.decision(feats) * self.gain, -60.0, 60.0)
        return 1.0 / (1.0 + np.exp(-margin))


def train_pixel_classifier(
    history: HistoryWindow,
    frames: list[np.ndarray],
    seed: int,
    max_per_class: int = 5000,
    iterations: int = 200,
    reg: float = 1e-4,
) -> PixelClassifier:
    """Fit the hinge-loss linear model on balanced fg/bg pixel samples."""
    if not history.entries:
        raise DataError("degenerate training set: empty history")
    rng = np.random.default_rng(seed)
    fg_feats: list[np.ndarray] = []
    bg_feats: list[np.ndarray] = []
    fg_total = sum(int(mask.sum()) for _, mask, _ in history.entries)
    bg_total = sum(int((~mask).sum()) for _, mask, _ in history.entries)
    if fg_total == 0 or bg_total == 0:
        raise DataError("degenerate training set: one class is empty")
    for idx, mask, feats in history.entries:
        frame = frames[idx]
        for selector, bucket, total in (
            (mask, fg_feats, fg_total),
            (~mask, bg_feats, bg_total),
        ):
            ys, xs = np.nonzero(selector)
            if ys.size == 0:
                continue
            # proportional share of the per-class budget, at least 1
            budget = max(1, int(round(max_per_class * ys.size / total)))
            if ys.size > budget:
                pick = rng.choice(ys.size, size=budget, replace=False)
                pick.sort()
                ys, xs = ys[pick], xs[pick]
            bucket.append(feats.gather(frame, ys, xs))
    x = np.concatenate(fg_feats + bg_feats, axis=0)
    y = np.concatenate(
        [
            np.ones(sum(len(f) for f in fg_feats)),
            -np.ones(sum(len(f) for f in bg_feats)),
        ]
    )
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-6] = 1.0
    z = (x - mean) / scale
    w = np.zeros(z.shape[1])
    b = 0.0
    for it in range(iterations):
        lr = 0.5 / (1.0 + 0.01 * it)
        margin = y * (z @ w + b)
        active = margin < 1.0
        if active.any():
            grad_w = reg * w - (y[active, None] * z[active]).mean(axis=0)
            grad_b = -float(y[active].mean())
        else:
            grad_w = reg * w
            grad_b = 0.0
        w -= lr * grad_w
        b -= lr * grad_b
    area = int(history.entries[-1][1].sum())
    return PixelClassifier(mean=mean, scale=scale, weights=w, bias=b, trained_area=area)


def should_update_classifier(
    prev_area: int, cur_area: int, band: float = 1.3
) -> bool:
    """True when the area ratio leaves [1/band, band]."""
    if prev_area <= 0:
        raise DataError("previous area must be positive")
    ratio = cur_area / prev_area
    return ratio > band or ratio < 1.0 / band


def predict_probability_map(
    classifier: PixelClassifier,
    frame: np.ndarray,
    feats: FrameFeatures,
    box: BoundingBox | None = None,
) -> np.ndarray:
    """Foreground probability, zero outside `box` when one is given."""
    h, w = frame.shape[:2]
    prob = np.zeros((h, w), dtype=np.float32)
    if box is None:
        region = (slice(0, h), slice(0, w))
    else:
        clamped = box.clamp(w, h)
        if clamped is None:
            return prob
        region = clamped.slices()
    ys, xs = np.mgrid[region]
    ys = ys.reshape(-1)
    xs = xs.reshape(-1)
    values = classifier.predict(feats.gather(frame, ys, xs))
    prob[ys, xs] = values.astype(np.float32)
    return prob


def classify_human(
    annotation: np.ndarray,
    frame0: np.ndarray,
    hub: PerceptionHub,
    iou_floor: float = 0.3,
) -> dict[int, tuple[bool, str]]:
    """Per-instance (is_human, category) from frame-0 proposals.

    Instances with no proposal reaching the IoU floor stay non-human with
    an unknown category; IoU ties go to the higher-scoring proposal.
    """
    ids = [int(v) for v in np.unique(annotation) if v != 0]
    hint = (annotation > 0).astype(np.float32)
    proposals = hub.instance_proposals(frame0, prob_hint=hint)
    out: dict[int, tuple[bool, str]] = {}
    for i in ids:
        inst_mask = annotation == i
        best = None
        best_key = (iou_floor, -1.0)
        for prop in proposals:
            key = (mask_iou(inst_mask, prop.mask), prop.score)
            if key > best_key:
                best_key = key
                best = prop
        if best is None or best_key[0] < iou_floor:
            out[i] = (False, UNKNOWN_CATEGORY)
        else:
            out[i] = (best.is_human, best.category)
    return out


def _region_descriptor(
    frame: np.ndarray, mask: np.ndarray, hub: PerceptionHub, is_human: bool
) -> np.ndarray:
    if is_human:
        return hub.reid_descriptor(frame, mask)
    return hub.scene_feature(frame, mask)


def track_instance(
    record: InstanceRecord,
    t: int,
    frames: list[np.ndarray],
    flow: np.ndarray,
    prob_map: np.ndarray | None,
    hub: PerceptionHub,
    presence_threshold: float = 0.3,
) -> tuple[BoundingBox | None, float]:
    """Flow-warped box re-scored by appearance; low score means absent."""
    h, w = frames[t].shape[:2]
    last_t = None
    for k in range(t - 1, -1, -1):
        if record.present_at(k):
            last_t = k
            break
    if last_t is None:
        return None, 0.0
    prev = record.trajectory[last_t]
    assert prev.box is not None
    support = prev.mask if prev.mask.any() else box_to_mask(prev.box, (h, w))
    dx = float(np.median(flow[..., 0][support]))
    dy = float(np.median(flow[..., 1][support]))
    warped = prev.box.shift(int(round(dx)), int(round(dy))).clamp(w, h)
    if warped is None:
        return None, 0.0

    candidates: list[tuple[BoundingBox, np.ndarray]] = [
        (warped, box_to_mask(warped, (h, w)))
    ]
    if prob_map is not None:
        # components only refine the warped box locally; picking one that
        # does not touch the predicted neighbourhood would let the track
        # teleport onto a look-alike elsewhere (re-detection after a loss
        # is recover_reappearance's job, behind a stricter gate)
        near = expand_box(warped, 0.5, w, h) or warped
        fg = (prob_map > 0.5).astype(np.uint8)
        count, labels = cv2.connectedComponents(fg, connectivity=8)
        comps = []
        for i in range(1, count):
            comp = labels == i
            area = int(comp.sum())
            if area >= max(16, prev.mask.sum() // 4):
                comps.append((area, i, comp))
        comps.sort(key=lambda item: (-item[0], item[1]))
        for _, _, comp in comps[:3]:
            box = mask_to_box(comp)
            if box is None:
                continue
            overlaps = (
                box.x < near.right
                and near.x < box.right
                and box.y < near.bottom
                and near.y < box.bottom
            )
            if overlaps:
                candidates.append((box, comp))

    best_box: BoundingBox | None = None
    best_sim = -1.0
    for box, region in candidates:
        desc = _region_descriptor(frames[t], region, hub, record.is_human)
        sim = cosine_similarity(desc, record.descriptor)
        if sim > best_sim:
            best_sim = sim
            best_box = box
    confidence = max(0.0, min(1.0, best_sim))
    if confidence < presence_threshold:
        return None, confidence
    return best_box, confidence


def grabcut_refine(
    frame: np.ndarray,
    prob: np.ndarray,
    box: BoundingBox,
    iterations: int = 5,
    box_expand: float = 0.10,
    seed: int = 0,
) -> np.ndarray:
    """Graph-cut refinement of a probability map inside the expanded box.

    prob > 0.8 seeds hard foreground, < 0.2 hard background, the rest
    stays soft. Zero iterations or an empty soft-foreground seed return
    the thresholded map unchanged.
    """
    h, w = prob.shape
    region = expand_box(box, box_expand, w, h)
    base = np.zeros((h, w), dtype=bool)
    if region is None:
        return base
    sl = region.slices()
    base[sl] = prob[sl] > 0.5
    if iterations <= 0 or not base.any():
        return base
    sub_prob = prob[sl]
    sub_img = np.ascontiguousarray(frame[sl])
    gc = np.full(sub_prob.shape, cv2.GC_PR_BGD, dtype=np.uint8)
    gc[sub_prob >= 0.5] = cv2.GC_PR_FGD
    gc[sub_prob > 0.8] = cv2.GC_FGD
    gc[sub_prob < 0.2] = cv2.GC_BGD
    fg_any = bool(((gc == cv2.GC_FGD) | (gc == cv2.GC_PR_FGD)).any())
    bg_any = bool(((gc == cv2.GC_BGD) | (gc == cv2.GC_PR_BGD)).any())
    if not fg_any or not bg_any:
        return base
    bgd = np.zeros((1, 65), dtype=np.float64)
    fgd = np.zeros((1, 65), dtype=np.float64)
    cv2.setRNGSeed(seed & 0x7FFFFFFF)
    try:
        cv2.grabCut(
            sub_img, gc, None, bgd, fgd, iterations, cv2.GC_INIT_WITH_MASK
        )
    except cv2.error:
        return base
    out = np.zeros((h, w), dtype=bool)
    out[sl] = (gc == cv2.GC_FGD) | (gc == cv2.GC_PR_FGD)
    return out


def recover_reappearance(
    record: InstanceRecord,
    t: int,
    frame: np.ndarray,
    hub: PerceptionHub,
    prob_hint: np.ndarray | None,
    similarity_threshold: float = 0.7,
) -> np.ndarray | None:
    """Best semantic region matching the instance's look, or None.

    Regions of a known category different from the instance's known
    category are rejected; unknown categories on either side pass through
    to the appearance check.
    """
    regions = hub.semantic_regions(frame, prob_hint=prob_hint)
    best_mask: np.ndarray | None = None
    best_sim = similarity_threshold
    for region in regions:
        if not region.mask.any():
            continue
        if (
            record.category != UNKNOWN_CATEGORY
            and region.category != UNKNOWN_CATEGORY
            and region.category != record.category
        ):
            continue
        desc = _region_descriptor(frame, region.mask, hub, record.is_human)
        sim = cosine_similarity(desc, record.descriptor)
        if sim > best_sim:
            best_sim = sim
            best_mask = region.mask.astype(bool)
    return best_mask


def extract_context(
    record: InstanceRecord,
    preview_masks: list[np.ndarray | None],
    seed: int,
    inlier_ratio: float = 0.8,
    frame_fraction: float = 0.7,
) -> ContextProfile:
    """Rigidity of the first preview-window masks against frame 0.

    A frame counts as rigid when a contour-fit homography reaches the
    inlier ratio; the instance is rigid when enough frames pass.
    """
    present = [
        (k, m) for k, m in enumerate(preview_masks) if m is not None and m.any()
    ]
    if len(present) < 3:
        return ContextProfile(
            is_human=record.is_human,
            category=record.category,
            rigidity=DEFORMABLE,
            rigidity_ratio=0.0,
        )
    base = present[0][1]
    passes = 0
    total = 0
    for k, mask in present[1:]:
        total += 1
        fit = fit_contour_homography(base, mask, rng_seed=seed + k)
        if fit is not None and fit[1] >= inlier_ratio:
            passes += 1
    ratio = passes / total
    rigidity = RIGID if ratio >= frame_fraction else DEFORMABLE
    return ContextProfile(
        is_human=record.is_human,
        category=record.category,
        rigidity=rigidity,
        rigidity_ratio=ratio,
    )


class FeatureCache:
    """Thread-safe lazy per-frame feature computation shared by instances."""

    def __init__(self, frames: list[np.ndarray], hub: PerceptionHub, cell: int):
        self._frames = frames
        self._hub = hub
        self._cell = cell
        self._lock = threading.Lock()
        self._cache: dict[int, FrameFeatures] = {}

    def get(self, t: int) -> FrameFeatures:
        with self._lock:
            hit = self._cache.get(t)
        if hit is not None:
            return hit
        feats = compute_frame_features(self._frames[t], self._hub, self._cell)
        with self._lock:
            return self._cache.setdefault(t, feats)


class FlowCache:
    """Thread-safe lazy pairwise flow, keyed (src frame, dst frame)."""

    def __init__(self, frames: list[np.ndarray], hub: PerceptionHub):
        self._frames = frames
        self._hub = hub
        self._lock = threading.Lock()
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def get(self, src: int, dst: int) -> np.ndarray:
        key = (src, dst)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        flow = self._hub.flow(self._frames[src], self._frames[dst])
        with self._lock:
            return self._cache.setdefault(key, flow)


@dataclass(slots=True)
class PreviewOutput:
    records: dict[int, InstanceRecord]
    masks: dict[int, list[np.ndarray]]
    probabilities: dict[int, list[np.ndarray]]


def _instance_seed(seed: int, instance_id: int, *extra: int) -> int:
    ss = np.random.SeedSequence([seed, instance_id, *extra])
    return int(ss.generate_state(1)[0])


def run_preview_instance(
    store: SequenceStore,
    record: InstanceRecord,
    hub: PerceptionHub,
    features: FeatureCache,
    flows: FlowCache,
    seed: int,
    params: PreviewParams,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Track one instance across all frames; returns (masks, prob maps)."""
    frames = store.frames
    total = store.frame_count
    h, w = store.shape
    mask0 = record.initial_mask
    record.descriptor = _region_descriptor(frames[0], mask0, hub, record.is_human)
    record.trajectory[0] = TrackState(
        box=mask_to_box(mask0), mask=mask0, confidence=1.0, present=True
    )
    history = HistoryWindow(n=params.history_n, delta=params.history_delta)
    history.entries = [(0, mask0, features.get(0))]
    classifier = train_pixel_classifier(
        history,
        frames,
        seed=_instance_seed(seed, record.id, 0),
        max_per_class=params.max_train_per_class,
    )
    record.classifier = classifier
    masks: list[np.ndarray] = [mask0.copy()]
    probs: list[np.ndarray] = [mask0.astype(np.float32)]

    for t in range(1, total):
        feats_t = features.get(t)
        last_present = None
        for k in range(t - 1, -1, -1):
            if record.present_at(k):
                last_present = k
                break

        # refresh the model when the instance size left the allowed band
        if last_present is not None:
            last_area = int(record.trajectory[last_present].mask.sum())
            if last_area > 0 and should_update_classifier(
                classifier.trained_area, last_area, params.area_band
            ):
                entries = []
                for idx in sample_history_frames(
                    t, params.history_n, params.history_delta
                ):
                    if record.present_at(idx):
                        entries.append(
                            (idx, record.trajectory[idx].mask, features.get(idx))
                        )
                if entries:
                    try:
                        classifier = train_pixel_classifier(
                            HistoryWindow(
                                n=params.history_n,
                                delta=params.history_delta,
                                entries=entries,
                            ),
                            frames,
                            seed=_instance_seed(seed, record.id, t),
                            max_per_class=params.max_train_per_class,
                        )
                        record.classifier = classifier
                    except DataError:
                        log.debug(
                            "instance %d: keeping stale classifier at frame %d",
                            record.id,
                            t,
                        )

        prob_full = predict_probability_map(classifier, frames[t], feats_t)

        mask_t = np.zeros((h, w), dtype=bool)
        state = TrackState(box=None, mask=mask_t, confidence=0.0, present=False)
        if last_present is not None:
            flow = flows.get(last_present, t)
            box, confidence = track_instance(
                record,
                t,
                frames,
                flow,
                prob_full,
                hub,
                params.presence_threshold,
            )
            if box is not None:
                refined = grabcut_refine(
                    frames[t],
                    prob_full,
                    box,
                    iterations=params.grabcut_iterations,
                    box_expand=params.box_expand,
                    seed=_instance_seed(seed, record.id, t, 1),
                )
                if refined.any():
                    mask_t = refined
                    state = TrackState(
                        box=box, mask=mask_t, confidence=confidence, present=True
                    )

        if not state.present and last_present is not None and last_present < t - 1:
            # absent for at least one full frame: look for a re-appearance
            recovered = recover_reappearance(
                record,
                t,
                frames[t],
                hub,
                prob_hint=prob_full,
                similarity_threshold=params.reappear_similarity,
            )
            if recovered is not None and recovered.any():
                mask_t = recovered
                state = TrackState(
                    box=mask_to_box(recovered),
                    mask=mask_t,
                    confidence=params.reappear_similarity,
                    present=True,
                )

        record.trajectory[t] = state
        masks.append(mask_t)
        probs.append(prob_full)

    return masks, probs


def run_preview(
    store: SequenceStore,
    hub: PerceptionHub,
    seed: int,
    params: PreviewParams | None = None,
    executor=None,
) -> PreviewOutput:
    """Run the first pass for every instance and resolve overlaps."""
    params = params or PreviewParams()
    ids = store.instance_ids()
    if not ids:
        raise DataError(f"sequence {store.name}: no instances declared")
    kinds = classify_human(store.first_annotation, store.frames[0], hub)
    instance_masks = labelmap_to_masks(store.first_annotation, ids)
    records = {}
    for i in ids:
        is_human, category = kinds[i]
        records[i] = InstanceRecord(
            id=i,
            initial_mask=instance_masks[i],
            is_human=is_human,
            category=category,
        )
    features = FeatureCache(store.frames, hub, params.feature_cell)
    flows = FlowCache(store.frames, hub)

    def job(i: int):
        return i, run_preview_instance(
            store, records[i], hub, features, flows, seed, params
        )

    results: dict[int, tuple[list[np.ndarray], list[np.ndarray]]] = {}
    if executor is None:
        for i in ids:
            results[i] = job(i)[1]
    else:
        for i, value in executor.map(job, ids):
            results[i] = value

    masks = {i: results[i][0] for i in ids}
    probs = {i: results[i][1] for i in ids}
    for t in range(1, store.frame_count):
        frame_masks = {i: masks[i][t] for i in ids}
        frame_probs = {i: probs[i][t] for i in ids}
        resolved = resolve_contested_pixels(frame_masks, frame_probs)
        for i in ids:
            masks[i][t] = resolved[i]
            state = records[i].trajectory[t]
            state.mask = resolved[i]
            if state.present and not resolved[i].any():
                state.present = False
                state.box = None

    window_len = min(params.preview_window, store.frame_count)
    for i in ids:
        profile = extract_context(
            records[i],
            [masks[i][k] for k in range(window_len)],
            seed=_instance_seed(seed, i, 2),
            inlier_ratio=params.rigid_inlier_ratio,
            frame_fraction=params.rigid_frame_fraction,
        )
        records[i].rigidity = profile.rigidity
        records[i].rigidity_ratio = profile.rigidity_ratio
    return PreviewOutput(records=records, masks=masks, probabilities=probs)
