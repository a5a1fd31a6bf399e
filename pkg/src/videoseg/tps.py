"""Thin-plate spline interpolation and dense warp maps.

Used for non-rigid mask deformation: a small grid of control points with
displacements defines a smooth warp over the whole canvas. Fitting maps
destination control points back to source positions, so the resulting
field plugs straight into cv2.remap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import cv2

from .errors import DataError


def _kernel(r2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log(r^2), with U(0) = 0
    out = np.zeros_like(r2)
    nz = r2 > 0
    out[nz] = r2[nz] * np.log(r2[nz])
    return out


@dataclass(slots=True)
class TpsModel:
    controls: np.ndarray  # (n, 2) control point positions
    weights: np.ndarray  # (n + 3, 2) kernel weights plus affine part

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        d2 = ((pts[:, None, :] - self.controls[None, :, :]) ** 2).sum(axis=2)
        basis = np.hstack(
            [_kernel(d2), np.ones((pts.shape[0], 1)), pts]
        )  # (m, n + 3)
        return basis @ self.weights


def fit_tps(controls: np.ndarray, values: np.ndarray, reg: float = 1e-9) -> TpsModel:
    """Fit an interpolating spline sending each control point to its value."""
    c = np.asarray(controls, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 2 or c.shape != v.shape:
        raise DataError("control points and values must both be (n, 2)")
    n = c.shape[0]
    if n < 3:
        raise DataError("thin-plate spline needs at least 3 control points")
    d2 = ((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    k = _kernel(d2) + reg * np.eye(n)
    p = np.hstack([np.ones((n, 1)), c])
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = k
    system[:n, n:] = p
    system[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = v
    try:
        weights = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise DataError(f"degenerate control grid: {exc}")
    return TpsModel(controls=c, weights=weights)


def backward_map(
    src_controls: np.ndarray,
    dst_controls: np.ndarray,
    shape: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Dense (map_x, map_y) pulling each destination pixel from its source.

    Fits the spline from destination control positions back to the source
    positions, which is the direction cv2.remap consumes.
    """
    model = fit_tps(dst_controls, src_controls)
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    pts = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1).astype(np.float64)
    mapped = model(pts)
    map_x = mapped[:, 0].reshape(h, w).astype(np.float32)
    map_y = mapped[:, 1].reshape(h, w).astype(np.float32)
    return map_x, map_y


def warp_image(
    image: np.ndarray,
    src_controls: np.ndarray,
    dst_controls: np.ndarray,
    interpolation: int = cv2.INTER_LINEAR,
) -> np.ndarray:
    map_x, map_y = backward_map(src_controls, dst_controls, image.shape[:2])
    return cv2.remap(
        image,
        map_x,
        map_y,
        interpolation=interpolation,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )


def warp_mask(
    mask: np.ndarray, src_controls: np.ndarray, dst_controls: np.ndarray
) -> np.ndarray:
    warped = warp_image(
        mask.astype(np.float32), src_controls, dst_controls, cv2.INTER_LINEAR
    )
    return warped > 0.5


def control_grid(
    box_left: float, box_top: float, box_w: float, box_h: float, side: int = 4
) -> np.ndarray:
    """`side` x `side` grid of (x, y) controls spanning a box, row-major."""
    xs = np.linspace(box_left, box_left + box_w, side)
    ys = np.linspace(box_top, box_top + box_h, side)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
