"""RANSAC homography estimation and contour-based mask alignment.

Planar consistency between an instance's boundary at frame 0 and at later
frames is the rigidity evidence; the same machinery drives rigid mask
propagation between adjacent frames.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

import cv2

_MIN_POINTS = 4


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: zero centroid, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    mean_dist = np.sqrt((centered**2).sum(axis=1)).mean()
    scale = np.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    T = np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return (pts * scale - scale * centroid), T


def _dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Direct linear transform on normalized coordinates."""
    src_n, Ts = _normalize_points(src)
    dst_n, Td = _normalize_points(dst)
    n = src.shape[0]
    A = np.zeros((2 * n, 9))
    x, y = src_n[:, 0], src_n[:, 1]
    u, v = dst_n[:, 0], dst_n[:, 1]
    A[0::2, 0] = -x
    A[0::2, 1] = -y
    A[0::2, 2] = -1.0
    A[0::2, 6] = u * x
    A[0::2, 7] = u * y
    A[0::2, 8] = u
    A[1::2, 3] = -x
    A[1::2, 4] = -y
    A[1::2, 5] = -1.0
    A[1::2, 6] = v * x
    A[1::2, 7] = v * y
    A[1::2, 8] = v
    try:
        _, _, vt = np.linalg.svd(A)
    except np.linalg.LinAlgError:
        return None
    H_n = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ H_n @ Ts
    if abs(H[2, 2]) < 1e-12:
        return None
    return H / H[2, 2]


def _project(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ones = np.ones((pts.shape[0], 1))
    hom = np.hstack([pts, ones]) @ H.T
    w = hom[:, 2:3]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    return hom[:, :2] / w


def symmetric_transfer_error(
    H: np.ndarray, src: np.ndarray, dst: np.ndarray
) -> np.ndarray:
    """Per-point max of forward and backward reprojection distance."""
    try:
        H_inv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(src.shape[0], np.inf)
    fwd = np.sqrt(((_project(H, src) - dst) ** 2).sum(axis=1))
    bwd = np.sqrt(((_project(H_inv, dst) - src) ** 2).sum(axis=1))
    return np.maximum(fwd, bwd)


def _noncollinear(pts: np.ndarray) -> bool:
    """Reject samples where any 3 of the 4 points are (nearly) collinear."""
    idx = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
    for i, j, k in idx:
        a, b, c = pts[i], pts[j], pts[k]
        area2 = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area2 < 1e-6:
            return False
    return True


def estimate_homography_ransac(
    src_points: np.ndarray,
    dst_points: np.ndarray,
    inlier_tol: float = 2.0,
    iterations: int = 500,
    rng_seed: int = 0,
) -> tuple[np.ndarray, float] | None:
    """Seeded RANSAC over 4-point samples, symmetric transfer error scoring.

    Returns (3x3 matrix, inlier ratio) or None when fewer than 4
    correspondences are given or every sample is degenerate. The winning
    model is refit by least squares on its inliers.
    """
    src = np.asarray(src_points, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_points, dtype=np.float64).reshape(-1, 2)
    n = src.shape[0]
    if n < _MIN_POINTS or dst.shape[0] != n:
        return None
    rng = np.random.default_rng(rng_seed)
    best_H: np.ndarray | None = None
    best_inliers: np.ndarray | None = None
    best_count = 0
    for _ in range(max(1, iterations)):
        sample = rng.choice(n, size=_MIN_POINTS, replace=False)
        if not _noncollinear(src[sample]) or not _noncollinear(dst[sample]):
            continue
        H = _dlt(src[sample], dst[sample])
        if H is None:
            continue
        err = symmetric_transfer_error(H, src, dst)
        inliers = err <= inlier_tol
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            best_H = H
            if count == n:
                break
    if best_H is None or best_inliers is None or best_count < _MIN_POINTS:
        return None
    refit = _dlt(src[best_inliers], dst[best_inliers])
    if refit is not None:
        err = symmetric_transfer_error(refit, src, dst)
        refit_inliers = err <= inlier_tol
        if int(refit_inliers.sum()) >= best_count:
            best_H, best_inliers = refit, refit_inliers
            best_count = int(refit_inliers.sum())
    # one more pass on the tight half-tolerance inliers: the wide refit
    # averages over borderline pairs and can bias the model by a pixel
    err = symmetric_transfer_error(best_H, src, dst)
    tight = err <= 0.5 * inlier_tol
    if int(tight.sum()) >= max(_MIN_POINTS, best_count // 2):
        sharp = _dlt(src[tight], dst[tight])
        if sharp is not None:
            sharp_err = symmetric_transfer_error(sharp, src, dst)
            sharp_inliers = sharp_err <= inlier_tol
            if int(sharp_inliers.sum()) >= best_count:
                return sharp, float(sharp_inliers.sum()) / n
    return best_H, best_count / n


def contour_points(mask: np.ndarray) -> np.ndarray:
    """Boundary polyline pixels of a mask as float (x, y) rows."""
    m = mask.astype(np.uint8)
    contours, _ = cv2.findContours(m, cv2.RETR_LIST, cv2.CHAIN_APPROX_NONE)
    if not contours:
        return np.zeros((0, 2), dtype=np.float64)
    pts = np.concatenate([c.reshape(-1, 2) for c in contours], axis=0)
    return pts.astype(np.float64)


def subsample_points(pts: np.ndarray, k: int) -> np.ndarray:
    if pts.shape[0] <= k:
        return pts
    idx = np.linspace(0, pts.shape[0] - 1, k).round().astype(int)
    return pts[np.unique(idx)]


def fit_contour_homography(
    mask_a: np.ndarray,
    mask_b: np.ndarray,
    inlier_tol: float = 2.0,
    iterations: int = 300,
    samples: int = 120,
    icp_rounds: int = 4,
    rng_seed: int = 0,
) -> tuple[np.ndarray, float] | None:
    """Align mask_a's boundary onto mask_b's and score planarity.

    Correspondences come from nearest-contour matching after a centroid and
    isotropic-scale prealignment; a few ICP rounds re-match under the current
    model. Returns (homography, inlier ratio of the boundary samples) or
    None when either boundary is too small or no model survives.
    """
    pa = subsample_points(contour_points(mask_a), samples)
    pb = contour_points(mask_b)
    if pa.shape[0] < _MIN_POINTS or pb.shape[0] < _MIN_POINTS:
        return None
    ca, cb = pa.mean(axis=0), pb.mean(axis=0)
    spread_a = np.sqrt(((pa - ca) ** 2).sum(axis=1).mean())
    spread_b = np.sqrt(((pb - cb) ** 2).sum(axis=1).mean())
    s = spread_b / spread_a if spread_a > 1e-9 else 1.0
    H = np.array(
        [
            [s, 0.0, cb[0] - s * ca[0]],
            [0.0, s, cb[1] - s * ca[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    tree = cKDTree(pb)
    result: tuple[np.ndarray, float] | None = None
    for round_idx in range(max(1, icp_rounds)):
        warped = _project(H, pa)
        _, nn = tree.query(warped)
        fit = estimate_homography_ransac(
            pa, pb[nn], inlier_tol=inlier_tol, iterations=iterations,
            rng_seed=rng_seed + round_idx,
        )
        if fit is None:
            break
        H, _ = fit
        result = fit
        if fit[1] >= 1.0:
            break
    return result
