"""Training-pair synthesis: retrieve backgrounds, augment the annotated
foreground, and composite.

A per-category hierarchical k-means index over pool appearance features
serves diversity-ranked background queries. The annotated first frame is
warped (similarity + thin-plate perturbation), relit, feathered, and pasted
onto each retrieved background; every pair carries a JSON sidecar with the
exact parameters so the pair can be regenerated bit for bit.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import ndimage

import cv2

from . import seqio
from .errors import ConfigError, DataError
from .tps import backward_map, control_grid
from .core import mask_to_box

log = logging.getLogger(__name__)

LEAF_CAPACITY = 200
BRANCH_CAP = 200
QUOTA_SCHEDULE_START = 80
QUOTA_STEP = 10
QUOTA_FLOOR = 10

SCALE_RANGE = (0.7, 1.3)
ROTATION_RANGE = (-math.pi / 6.0, math.pi / 6.0)
TPS_GRID = 4
TPS_MAGNITUDE = 0.05  # of the foreground box diagonal
GAIN_RANGE = (0.7, 1.3)
GAMMA_RANGE = (0.8, 1.2)
MAX_RESAMPLE = 20


# --- background pool ---------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class PoolEntry:
    path: Path
    category: str


def load_pool_manifest(path: Path | str) -> list[PoolEntry]:
    """Read `path<TAB>category` lines; relative paths resolve next to the
    manifest."""
    manifest = Path(path)
    if not manifest.is_file():
        raise ConfigError(f"pool manifest not found: {manifest}")
    entries: list[PoolEntry] = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ConfigError(f"{manifest}:{lineno}: expected `path<TAB>category`")
        raw, category = parts
        p = Path(raw)
        if not p.is_absolute():
            p = manifest.parent / p
        entries.append(PoolEntry(path=p, category=category))
    if not entries:
        raise ConfigError(f"pool manifest is empty: {manifest}")
    return entries


def branching_factor(m: int, leaf_capacity: int = LEAF_CAPACITY,
                     branch_cap: int = BRANCH_CAP) -> int:
    """Children count for a node of m members; < 2 means it stays a leaf."""
    return min(m // leaf_capacity, branch_cap)


def _lloyd(features: np.ndarray, k: int, rng: np.random.Generator,
           iterations: int = 50) -> np.ndarray | None:
    """Seeded k-means labels, or None when k distinct points do not exist.

    Seeding is maximin (farthest point first): random seeding can drop two
    centers into one real cluster and split it while merging others.
    """
    m = features.shape[0]
    first = int(rng.integers(m))
    chosen = [first]
    min_d = ((features - features[first]) ** 2).sum(axis=1)
    while len(chosen) < k:
        far = int(min_d.argmax())
        if min_d[far] <= 0.0:
            return None  # fewer than k distinct points
        chosen.append(far)
        min_d = np.minimum(min_d, ((features - features[far]) ** 2).sum(axis=1))
    centers_arr = features[chosen].astype(np.float64)
    labels = np.zeros(m, dtype=np.int64)
    for _ in range(iterations):
        dists = ((features[:, None, :] - centers_arr[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        for j in range(k):
            members = new_labels == j
            if members.any():
                centers_arr[j] = features[members].mean(axis=0)
            else:
                # revive an empty cluster at the point farthest from its center
                farthest = dists[np.arange(m), new_labels].argmax()
                centers_arr[j] = features[farthest]
                new_labels[farthest] = j
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels


@dataclasses.dataclass
class _Leaf:
    category: str
    centroid: np.ndarray
    order: np.ndarray  # permuted member indices into the global entry list


class SceneIndex:
    """Per-category hierarchical k-means over pool features.

    Nodes with at most leaf_capacity members, or whose branching factor
    min(m // leaf_capacity, branch_cap) falls under 2, become leaves. Leaf
    member order is a build-seeded permutation, so queries are deterministic.
    """

    def __init__(self, entries: list[PoolEntry], features: np.ndarray,
                 seed: int = 0, leaf_capacity: int = LEAF_CAPACITY,
                 branch_cap: int = BRANCH_CAP):
        if features.shape[0] != len(entries):
            raise DataError("feature rows do not match pool entries")
        self.entries = entries
        self.features = np.asarray(features, dtype=np.float64)
        self.leaf_capacity = leaf_capacity
        self.branch_cap = branch_cap
        self._leaves: list[_Leaf] = []
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        by_category: dict[str, list[int]] = {}
        for i, entry in enumerate(entries):
            by_category.setdefault(entry.category, []).append(i)
        for category in sorted(by_category):
            idx = np.array(by_category[category], dtype=np.int64)
            self._split(category, idx, rng)

    def _split(self, category: str, idx: np.ndarray,
               rng: np.random.Generator) -> None:
        m = idx.size
        k = branching_factor(m, self.leaf_capacity, self.branch_cap)
        if m <= self.leaf_capacity or k < 2:
            self._add_leaf(category, idx, rng)
            return
        labels = _lloyd(self.features[idx], k, rng)
        if labels is None or np.unique(labels).size < 2:
            self._add_leaf(category, idx, rng)
            return
        for j in range(k):
            members = idx[labels == j]
            if members.size:
                self._split(category, members, rng)

    def _add_leaf(self, category: str, idx: np.ndarray,
                  rng: np.random.Generator) -> None:
        centroid = self.features[idx].mean(axis=0)
        self._leaves.append(
            _Leaf(category=category, centroid=centroid, order=rng.permutation(idx))
        )

    @property
    def leaf_sizes(self) -> list[int]:
        return [leaf.order.size for leaf in self._leaves]

    def query(self, feature: np.ndarray, n: int,
              categories: set[str] | None = None
              ) -> tuple[list[int], bool]:
        """First n of the deterministic retrieval stream, plus shortfall flag.

        Leaves are ranked by centroid distance (ties keep build order). A
        quota pass takes floor(pct x size) from each leaf, pct starting at 80
        and stepping down 10 per rank to a floor of 10; a fill pass then
        appends everything left. The stream covers the whole pool, so results
        for smaller n are prefixes of results for larger n.
        """
        if n < 0:
            raise DataError("negative sample count")
        leaves = [
            leaf for leaf in self._leaves
            if categories is None or leaf.category in categories
        ]
        if not leaves:
            return [], n > 0
        f = np.asarray(feature, dtype=np.float64).ravel()
        dists = [float(((leaf.centroid - f) ** 2).sum()) for leaf in leaves]
        rank = np.argsort(np.array(dists), kind="stable")
        stream: list[int] = []
        taken: list[int] = []
        for pos, leaf_i in enumerate(rank):
            leaf = leaves[leaf_i]
            pct = max(QUOTA_FLOOR, QUOTA_SCHEDULE_START - QUOTA_STEP * pos)
            quota = (pct * leaf.order.size) // 100
            stream.extend(int(v) for v in leaf.order[:quota])
            taken.append(quota)
        for pos, leaf_i in enumerate(rank):
            leaf = leaves[leaf_i]
            stream.extend(int(v) for v in leaf.order[taken[pos]:])
        return stream[:n], n > len(stream)


# --- augmentation specs ------------------------------------------------------


def _pair(values) -> tuple[float, float]:
    a, b = values
    return (float(a), float(b))


@dataclasses.dataclass
class AugmentationSpec:
    """Exact parameters of one synthesized pair; JSON-serializable."""

    scale: float = 1.0
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    tps: list[tuple[float, float]] = dataclasses.field(
        default_factory=lambda: [(0.0, 0.0)] * (TPS_GRID * TPS_GRID)
    )
    gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    gamma: float = 1.0
    bg_scale: float = 1.0
    bg_rotation: float = 0.0
    bg_translation: tuple[float, float] = (0.0, 0.0)
    bg_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bg_gamma: float = 1.0

    def validate(self, fg_diag: float) -> None:
        def check(name, value, lo, hi):
            if not (lo <= value <= hi) or not math.isfinite(value):
                raise DataError(f"{name} {value} outside [{lo}, {hi}]")

        check("scale", self.scale, *SCALE_RANGE)
        check("rotation", self.rotation, *ROTATION_RANGE)
        check("bg_scale", self.bg_scale, *SCALE_RANGE)
        check("bg_rotation", self.bg_rotation, *ROTATION_RANGE)
        check("gamma", self.gamma, *GAMMA_RANGE)
        check("bg_gamma", self.bg_gamma, *GAMMA_RANGE)
        for g in (*self.gains, *self.bg_gains):
            check("gain", g, *GAIN_RANGE)
        if len(self.tps) != TPS_GRID * TPS_GRID:
            raise DataError(f"tps wants {TPS_GRID * TPS_GRID} control offsets")
        limit = TPS_MAGNITUDE * fg_diag + 1e-9
        for dx, dy in self.tps:
            if math.hypot(dx, dy) > limit:
                raise DataError("tps displacement exceeds 5% of the box diagonal")
        for v in (*self.translation, *self.bg_translation):
            if not math.isfinite(v):
                raise DataError("non-finite translation")

    def geometry_is_identity(self) -> bool:
        return (
            self.scale == 1.0
            and self.rotation == 0.0
            and self.translation == (0.0, 0.0)
            and all(dx == 0.0 and dy == 0.0 for dx, dy in self.tps)
        )

    def appearance_is_identity(self) -> bool:
        return self.gains == (1.0, 1.0, 1.0) and self.gamma == 1.0

    def to_json(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": self.rotation,
            "translation": list(self.translation),
            "tps": [list(p) for p in self.tps],
            "gains": list(self.gains),
            "gamma": self.gamma,
            "bg_scale": self.bg_scale,
            "bg_rotation": self.bg_rotation,
            "bg_translation": list(self.bg_translation),
            "bg_gains": list(self.bg_gains),
            "bg_gamma": self.bg_gamma,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "AugmentationSpec":
        try:
            return cls(
                scale=float(raw["scale"]),
                rotation=float(raw["rotation"]),
                translation=_pair(raw["translation"]),
                tps=[_pair(p) for p in raw["tps"]],
                gains=tuple(float(g) for g in raw["gains"]),
                gamma=float(raw["gamma"]),
                bg_scale=float(raw["bg_scale"]),
                bg_rotation=float(raw["bg_rotation"]),
                bg_translation=_pair(raw["bg_translation"]),
                bg_gains=tuple(float(g) for g in raw["bg_gains"]),
                bg_gamma=float(raw["bg_gamma"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed augmentation record: {exc}") from exc


def draw_spec(rng: np.random.Generator, fg_diag: float,
              canvas_shape: tuple[int, int]) -> AugmentationSpec:
    """Random spec within bounds; every rng draw is unconditional so the
    stream stays aligned across retries."""
    h, w = canvas_shape
    tps = []
    for _ in range(TPS_GRID * TPS_GRID):
        radius = rng.uniform(0.0, TPS_MAGNITUDE * fg_diag)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        tps.append((radius * math.cos(theta), radius * math.sin(theta)))
    return AugmentationSpec(
        scale=rng.uniform(*SCALE_RANGE),
        rotation=rng.uniform(*ROTATION_RANGE),
        translation=(
            rng.uniform(-0.25 * w, 0.25 * w),
            rng.uniform(-0.25 * h, 0.25 * h),
        ),
        tps=tps,
        gains=tuple(rng.uniform(*GAIN_RANGE) for _ in range(3)),
        gamma=rng.uniform(*GAMMA_RANGE),
        bg_scale=rng.uniform(*SCALE_RANGE),
        bg_rotation=rng.uniform(*ROTATION_RANGE),
        bg_translation=(
            rng.uniform(-0.25 * w, 0.25 * w),
            rng.uniform(-0.25 * h, 0.25 * h),
        ),
        bg_gains=tuple(rng.uniform(*GAIN_RANGE) for _ in range(3)),
        bg_gamma=rng.uniform(*GAMMA_RANGE),
    )


# --- warping and compositing -------------------------------------------------


def _illuminate(image: np.ndarray, gains: tuple[float, float, float],
                gamma: float) -> np.ndarray:
    if gains == (1.0, 1.0, 1.0) and gamma == 1.0:
        return image
    x = image.astype(np.float64) / 255.0
    x = np.power(x, gamma) * np.asarray(gains, dtype=np.float64)
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def _alpha_from_mask(mask: np.ndarray) -> np.ndarray:
    """Feathered alpha: interior 1, inner ring 0.75, outer ring 0.25."""
    eight = np.ones((3, 3), dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=eight)
    outer = ndimage.binary_dilation(mask, structure=eight) & ~mask
    alpha = np.zeros(mask.shape, dtype=np.float32)
    alpha[outer] = 0.25
    alpha[mask] = 0.75
    alpha[interior] = 1.0
    return alpha


def _fill_labels(labels: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Give every target pixel the nearest nonzero label."""
    missing = target & (labels == 0)
    if not missing.any():
        return np.where(target, labels, 0)
    if not (labels > 0).any():
        return np.zeros_like(labels)
    iy, ix = ndimage.distance_transform_edt(
        labels == 0, return_indices=True, return_distances=False
    )
    filled = labels[iy, ix]
    return np.where(target, filled, 0).astype(labels.dtype)


def transform_foreground(
    image: np.ndarray,
    labelmap: np.ndarray,
    spec: AugmentationSpec,
    canvas_shape: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Warp, relight and feather the annotated foreground.

    Returns (warped image, warped labelmap, alpha) on the canvas. The
    warped footprint satisfies (labelmap > 0) == (alpha > 0.5) exactly.
    """
    union = labelmap > 0
    if not union.any():
        raise DataError("foreground annotation is empty")
    box = mask_to_box(union)
    diag = math.hypot(box.w, box.h)
    spec.validate(diag)
    h, w = canvas_shape

    if spec.geometry_is_identity() and image.shape[:2] == canvas_shape:
        warped_img = image.copy()
        warped_labels = labelmap.astype(np.int32).copy()
    else:
        cx = box.x + (box.w - 1) / 2.0
        cy = box.y + (box.h - 1) / 2.0
        cos_t = math.cos(spec.rotation) * spec.scale
        sin_t = math.sin(spec.rotation) * spec.scale
        src_controls = control_grid(box.x, box.y, box.w, box.h, side=TPS_GRID)
        rel = src_controls - np.array([cx, cy])
        dst_controls = np.stack(
            [
                cos_t * rel[:, 0] - sin_t * rel[:, 1] + cx + spec.translation[0],
                sin_t * rel[:, 0] + cos_t * rel[:, 1] + cy + spec.translation[1],
            ],
            axis=1,
        ) + np.asarray(spec.tps, dtype=np.float64)
        map_x, map_y = backward_map(src_controls, dst_controls, canvas_shape)
        warped_img = cv2.remap(
            image, map_x, map_y, interpolation=cv2.INTER_LINEAR,
            borderMode=cv2.BORDER_CONSTANT, borderValue=0,
        )
        mask_f = cv2.remap(
            union.astype(np.float32), map_x, map_y,
            interpolation=cv2.INTER_LINEAR,
            borderMode=cv2.BORDER_CONSTANT, borderValue=0.0,
        )
        warped_union = mask_f > 0.5
        nearest = cv2.remap(
            labelmap.astype(np.int32), map_x, map_y,
            interpolation=cv2.INTER_NEAREST,
            borderMode=cv2.BORDER_CONSTANT, borderValue=0,
        )
        warped_labels = _fill_labels(nearest, warped_union)

    warped_img = _illuminate(warped_img, spec.gains, spec.gamma)
    alpha = _alpha_from_mask(warped_labels > 0)
    return warped_img, warped_labels, alpha


def transform_background(
    image: np.ndarray, spec: AugmentationSpec, canvas_shape: tuple[int, int]
) -> np.ndarray:
    """Resize to the canvas, apply the affine-only jitter, relight."""
    h, w = canvas_shape
    if image.shape[:2] != canvas_shape:
        image = cv2.resize(image, (w, h), interpolation=cv2.INTER_AREA)
    bg_identity = (
        spec.bg_scale == 1.0
        and spec.bg_rotation == 0.0
        and spec.bg_translation == (0.0, 0.0)
    )
    if not bg_identity:
        m = cv2.getRotationMatrix2D(
            ((w - 1) / 2.0, (h - 1) / 2.0),
            math.degrees(spec.bg_rotation),
            spec.bg_scale,
        )
        m[0, 2] += spec.bg_translation[0]
        m[1, 2] += spec.bg_translation[1]
        image = cv2.warpAffine(
            image, m, (w, h), flags=cv2.INTER_LINEAR,
            borderMode=cv2.BORDER_REFLECT_101,
        )
    return _illuminate(image, spec.bg_gains, spec.bg_gamma)


def composite_pair(
    fg_image: np.ndarray,
    fg_labelmap: np.ndarray,
    bg_image: np.ndarray,
    spec: AugmentationSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """One synthesized (frame, labelmap) pair on the foreground's canvas."""
    canvas_shape = fg_image.shape[:2]
    warped_img, warped_labels, alpha = transform_foreground(
        fg_image, fg_labelmap, spec, canvas_shape
    )
    if not (warped_labels > 0).any():
        raise DataError("foreground fully outside canvas")
    background = transform_background(bg_image, spec, canvas_shape)
    a = alpha[..., None].astype(np.float64)
    frame = np.clip(
        np.rint(a * warped_img + (1.0 - a) * background), 0, 255
    ).astype(np.uint8)
    return frame, warped_labels


# --- dataset generation ------------------------------------------------------


def generate_dataset(
    frame0: np.ndarray,
    annotation: np.ndarray,
    index: SceneIndex,
    out_root: Path | str,
    name: str,
    count: int,
    seed: int,
    hub=None,
    categories: set[str] | None = None,
    workers: int = 1,
) -> Path:
    """Write `count` augmented pairs under <out_root>/wonderland/<name>/.

    Pair i is seeded by SeedSequence([seed, i]) alone, so the output tree is
    byte-identical for any worker count.
    """
    if count < 1:
        raise ConfigError("pair count must be positive")
    labelmap = annotation.astype(np.int32)
    if not (labelmap > 0).any():
        raise DataError("foreground annotation is empty")
    out_dir = Path(out_root) / "wonderland" / name
    out_dir.mkdir(parents=True, exist_ok=True)

    if hub is None:
        from .providers import PerceptionHub

        hub = PerceptionHub()
    query_feature = hub.scene_feature(frame0, None)
    picks, shortfall = index.query(query_feature, count, categories=categories)
    if not picks:
        raise DataError("background pool query returned nothing")
    if shortfall:
        log.info(
            "pool smaller than requested pair count (%d < %d); cycling",
            len(picks), count,
        )

    needed = {picks[i % len(picks)] for i in range(count)}
    bg_cache = {
        pool_idx: seqio.load_image(index.entries[pool_idx].path)
        for pool_idx in sorted(needed)
    }

    diag_box = mask_to_box(labelmap > 0)
    fg_diag = math.hypot(diag_box.w, diag_box.h)

    def emit(i: int) -> None:
        pool_idx = picks[i % len(picks)]
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        last_error: DataError | None = None
        for _ in range(MAX_RESAMPLE):
            spec = draw_spec(rng, fg_diag, frame0.shape[:2])
            try:
                frame, labels = composite_pair(
                    frame0, labelmap, bg_cache[pool_idx], spec
                )
            except DataError as exc:
                last_error = exc
                continue
            seqio.save_image_png(out_dir / f"{i:06d}.png", frame)
            seqio.save_labelmap_png(out_dir / f"{i:06d}_mask.png", labels)
            record = {
                "background": str(index.entries[pool_idx].path),
                "background_category": index.entries[pool_idx].category,
                "index": i,
                "seed": seed,
                "spec": spec.to_json(),
            }
            seqio.atomic_write_json(out_dir / f"{i:06d}.json", record)
            return
        raise DataError(
            f"pair {i}: foreground stayed out of frame after "
            f"{MAX_RESAMPLE} draws: {last_error}"
        )

    if workers <= 1:
        for i in range(count):
            emit(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(emit, range(count)))
    return out_dir
