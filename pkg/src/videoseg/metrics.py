"""Per-instance segmentation quality: region overlap, boundary agreement,
temporal statistics and the global score, plus directory-level evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError

DEFAULT_BOUNDARY_FRACTION = 0.008  # of the image diagonal


def _check_dims(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise DataError(f"mask shape mismatch {pred.shape} vs {gt.shape}")


def region_jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    """|pred ∩ gt| / |pred ∪ gt|; two empty masks score 1.0."""
    _check_dims(pred, gt)
    p = pred.astype(bool)
    g = gt.astype(bool)
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(p & g)) / union


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Pixels of the mask with at least one 8-neighbor outside it.

    The image border counts as outside, so masks touching the border keep
    a boundary there.
    """
    m = mask.astype(bool)
    if not m.any():
        return np.zeros_like(m)
    eroded = ndimage.binary_erosion(m, structure=np.ones((3, 3)), border_value=0)
    return m & ~eroded


def _disk(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    if r < 0:
        r = 0
    coords = np.arange(-r, r + 1)
    dx, dy = np.meshgrid(coords, coords)
    return (dx * dx + dy * dy) <= radius * radius + 1e-9


def boundary_f(pred: np.ndarray, gt: np.ndarray, tol: float | None = None) -> float:
    """F-measure of tolerance-matched boundary pixels.

    A boundary pixel counts as matched when the other mask has a boundary
    pixel within Euclidean distance tol. Default tol is 0.8% of the image
    diagonal, rounded up. Both boundaries empty scores 1.0; exactly one
    empty scores 0.0.
    """
    _check_dims(pred, gt)
    if tol is None:
        h, w = pred.shape
        tol = math.ceil(DEFAULT_BOUNDARY_FRACTION * math.hypot(h, w))
    pb = mask_boundary(pred)
    gb = mask_boundary(gt)
    np_pix = int(pb.sum())
    ng_pix = int(gb.sum())
    if np_pix == 0 and ng_pix == 0:
        return 1.0
    if np_pix == 0 or ng_pix == 0:
        return 0.0
    disk = _disk(tol)
    gb_zone = ndimage.binary_dilation(gb, structure=disk)
    pb_zone = ndimage.binary_dilation(pb, structure=disk)
    precision = int((pb & gb_zone).sum()) / np_pix
    recall = int((gb & pb_zone).sum()) / ng_pix
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def sequence_statistics(per_frame: list[float]) -> tuple[float, float, float]:
    """(mean, recall, decay) of a per-frame score series.

    Recall is the fraction of frames strictly above 0.5. Decay is the mean
    of the first temporal quartile minus the mean of the last; series
    shorter than 4 frames report decay 0.
    """
    if not per_frame:
        raise DataError("empty score series")
    values = np.asarray(per_frame, dtype=np.float64)
    mean = float(values.mean())
    recall = float((values > 0.5).mean())
    if values.size < 4:
        return mean, recall, 0.0
    quartiles = np.array_split(values, 4)
    decay = float(quartiles[0].mean() - quartiles[3].mean())
    return mean, recall, decay


def global_score(mean_j: float, mean_f: float) -> float:
    return (mean_j + mean_f) / 2


@dataclass(slots=True)
class InstanceScore:
    """Scores for one instance over the evaluated frames (frame 0 excluded)."""

    per_frame_j: list[float]
    per_frame_f: list[float]
    mean_j: float = field(init=False)
    mean_f: float = field(init=False)

    def __post_init__(self) -> None:
        self.mean_j = float(np.mean(self.per_frame_j)) if self.per_frame_j else 0.0
        self.mean_f = float(np.mean(self.per_frame_f)) if self.per_frame_f else 0.0


@dataclass(slots=True)
class BenchmarkReport:
    per_instance: dict[int, InstanceScore]
    j_mean: float
    j_recall: float
    j_decay: float
    f_mean: float
    f_recall: float
    f_decay: float
    global_g: float
    scale: float = 1.0

    def to_json_dict(self) -> dict:
        return {
            "global_g": self.global_g * self.scale,
            "j": {
                "mean": self.j_mean * self.scale,
                "recall": self.j_recall,
                "decay": self.j_decay * self.scale,
            },
            "f": {
                "mean": self.f_mean * self.scale,
                "recall": self.f_recall,
                "decay": self.f_decay * self.scale,
            },
            "instances": {
                str(i): {
                    "mean_j": s.mean_j * self.scale,
                    "mean_f": s.mean_f * self.scale,
                    "per_frame_j": [v * self.scale for v in s.per_frame_j],
                    "per_frame_f": [v * self.scale for v in s.per_frame_f],
                }
                for i, s in sorted(self.per_instance.items())
            },
        }

    def format_table(self) -> str:
        s = self.scale
        header = (
            f"{'':12s} {'Global G':>9s} "
            f"{'J Mean':>7s} {'Recall':>7s} {'Decay':>6s} "
            f"{'F Mean':>7s} {'Recall':>7s} {'Decay':>6s}"
        )
        rows = [header, "-" * len(header)]
        rows.append(
            f"{'all':12s} {self.global_g * s:9.3f} "
            f"{self.j_mean * s:7.3f} {self.j_recall:7.3f} {self.j_decay * s:6.3f} "
            f"{self.f_mean * s:7.3f} {self.f_recall:7.3f} {self.f_decay * s:6.3f}"
        )
        for i, score in sorted(self.per_instance.items()):
            g = global_score(score.mean_j, score.mean_f)
            rows.append(
                f"{'inst %d' % i:12s} {g * s:9.3f} "
                f"{score.mean_j * s:7.3f} {'':7s} {'':6s} "
                f"{score.mean_f * s:7.3f} {'':7s} {'':6s}"
            )
        return "\n".join(rows)


def score_sequences(
    pred_frames: list[np.ndarray],
    gt_frames: list[np.ndarray],
    tol: float | None = None,
) -> BenchmarkReport:
    """Score aligned prediction/ground-truth label maps.

    Instance ids come from the ground truth; frame 0 is the given
    annotation and is excluded from every statistic.
    """
    if len(pred_frames) != len(gt_frames):
        raise DataError(
            f"frame count mismatch: {len(pred_frames)} predicted vs "
            f"{len(gt_frames)} ground truth"
        )
    if len(gt_frames) < 2:
        raise DataError("need at least 2 frames to evaluate")
    ids = sorted(
        {int(v) for frame in gt_frames for v in np.unique(frame) if v != 0}
    )
    if not ids:
        raise DataError("ground truth declares no instances")
    per_instance: dict[int, InstanceScore] = {}
    for i in ids:
        js: list[float] = []
        fs: list[float] = []
        for t in range(1, len(gt_frames)):
            pred_mask = pred_frames[t] == i
            gt_mask = gt_frames[t] == i
            js.append(region_jaccard(pred_mask, gt_mask))
            fs.append(boundary_f(pred_mask, gt_mask, tol))
        per_instance[i] = InstanceScore(js, fs)
    j_stats = [sequence_statistics(s.per_frame_j) for s in per_instance.values()]
    f_stats = [sequence_statistics(s.per_frame_f) for s in per_instance.values()]
    j_mean = float(np.mean([s[0] for s in j_stats]))
    f_mean = float(np.mean([s[0] for s in f_stats]))
    return BenchmarkReport(
        per_instance=per_instance,
        j_mean=j_mean,
        j_recall=float(np.mean([s[1] for s in j_stats])),
        j_decay=float(np.mean([s[2] for s in j_stats])),
        f_mean=f_mean,
        f_recall=float(np.mean([s[1] for s in f_stats])),
        f_decay=float(np.mean([s[2] for s in f_stats])),
        global_g=global_score(j_mean, f_mean),
    )


def evaluate_directories(
    pred_dir: Path | str,
    gt_dir: Path | str,
    tol: float | None = None,
    percent: bool = False,
) -> BenchmarkReport:
    from .seqio import load_labelmap_png

    pred_dir = Path(pred_dir)
    gt_dir = Path(gt_dir)
    gt_paths = sorted(gt_dir.glob("*.png"))
    if not gt_paths:
        raise DataError(f"no ground-truth frames under {gt_dir}")
    pred_frames = []
    gt_frames = []
    for gt_path in gt_paths:
        pred_path = pred_dir / gt_path.name
        if not pred_path.is_file():
            raise DataError(f"missing predicted frame {pred_path.name}")
        pred_frames.append(load_labelmap_png(pred_path))
        gt_frames.append(load_labelmap_png(gt_path))
    report = score_sequences(pred_frames, gt_frames, tol)
    if percent:
        report.scale = 100.0
    return report
