"""Independent reference implementations used to pin expected test values.

Everything here is deliberately written the slow, obvious way and shares no
code with the package under test.
"""

from __future__ import annotations

import numpy as np


def oracle_jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    """Set-count arithmetic over explicit coordinate sets."""
    pset = {(int(y), int(x)) for y, x in zip(*np.nonzero(pred))}
    gset = {(int(y), int(x)) for y, x in zip(*np.nonzero(gt))}
    union = pset | gset
    if not union:
        return 1.0
    return len(pset & gset) / len(union)


def oracle_boundary_pixels(mask: np.ndarray) -> list[tuple[int, int]]:
    """A true pixel is boundary when any 8-neighbor (or the image edge)
    falls outside the mask. Plain double loop."""
    h, w = mask.shape
    out = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            on_edge = False
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    ny, nx = y + dy, x + dx
                    if ny < 0 or ny >= h or nx < 0 or nx >= w or not mask[ny, nx]:
                        on_edge = True
            if on_edge:
                out.append((y, x))
    return out


def oracle_boundary_f(pred: np.ndarray, gt: np.ndarray, tol: float) -> float:
    """Brute-force tolerance matching between boundary pixel sets."""
    pb = oracle_boundary_pixels(pred)
    gb = oracle_boundary_pixels(gt)
    if not pb and not gb:
        return 1.0
    if not pb or not gb:
        return 0.0
    limit = tol * tol + 1e-9

    def matched(points, targets):
        hits = 0
        for y, x in points:
            for ty, tx in targets:
                if (y - ty) ** 2 + (x - tx) ** 2 <= limit:
                    hits += 1
                    break
        return hits

    precision = matched(pb, gb) / len(pb)
    recall = matched(gb, pb) / len(gb)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def oracle_homography_lstsq(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Unnormalized DLT solved with lstsq under the h22=1 gauge."""
    n = src.shape[0]
    A = np.zeros((2 * n, 8))
    b = np.zeros(2 * n)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    params, *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.append(params, 1.0).reshape(3, 3)


def apply_homography(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    hom = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ H.T
    return hom[:, :2] / hom[:, 2:3]


def oracle_linear_decay(n: int) -> float:
    """Decay of the series 1 -> 0 over n frames, via explicit quartiles."""
    values = [1.0 - i / (n - 1) for i in range(n)]
    q = n // 4
    sizes = [q + (1 if i < n % 4 else 0) for i in range(4)]
    first = values[: sizes[0]]
    last = values[n - sizes[3] :]
    return sum(first) / len(first) - sum(last) / len(last)
