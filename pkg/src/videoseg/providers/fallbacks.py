"""Deterministic classical stand-ins for every perception capability.

These keep the whole pipeline runnable with no models attached. Every
function is a pure function of its inputs.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.sparse.csgraph import minimum_spanning_tree

import cv2

from ..errors import DataError

# small blocks keep compact objects visible at coarse pyramid levels,
# where an 8px grid would drown them in static background
_FLOW_BLOCK = 4
_FLOW_SEARCH = 3
_TEXTURE_EPS = 1e-6


def to_gray(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 2:
        return frame.astype(np.float32)
    return cv2.cvtColor(frame.astype(np.uint8), cv2.COLOR_RGB2GRAY).astype(np.float32)


def _pad_to_multiple(img: np.ndarray, block: int) -> np.ndarray:
    h, w = img.shape
    ph = (-h) % block
    pw = (-w) % block
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw)), mode="edge")


def _search_offsets(radius: int) -> list[tuple[int, int]]:
    offs = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
    ]
    # nearest-first so exact ties keep the smallest adjustment
    offs.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))
    return offs


def _match_blocks(
    prev: np.ndarray, nxt: np.ndarray, init: np.ndarray, block: int, radius: int
) -> np.ndarray:
    h, w = prev.shape
    gh, gw = h // block, w // block
    flow = np.zeros((gh, gw, 2), dtype=np.float32)
    offsets = _search_offsets(radius)
    for by in range(gh):
        y0 = by * block
        for bx in range(gw):
            x0 = bx * block
            patch = prev[y0 : y0 + block, x0 : x0 + block]
            base_dx = int(round(float(init[by, bx, 0])))
            base_dy = int(round(float(init[by, bx, 1])))
            if float(patch.max() - patch.min()) < _TEXTURE_EPS:
                flow[by, bx] = (base_dx, base_dy)
                continue
            best_ssd = np.inf
            best = (base_dx, base_dy)
            for dy, dx in offsets:
                ty = y0 + base_dy + dy
                tx = x0 + base_dx + dx
                if not (0 <= ty <= h - block and 0 <= tx <= w - block):
                    continue
                cand = nxt[ty : ty + block, tx : tx + block]
                ssd = float(((patch - cand) ** 2).sum())
                if ssd < best_ssd - 1e-9:
                    best_ssd = ssd
                    best = (base_dx + dx, base_dy + dy)
            flow[by, bx] = best
    if gh >= 3 and gw >= 3:
        flow[..., 0] = ndimage.median_filter(flow[..., 0], size=3)
        flow[..., 1] = ndimage.median_filter(flow[..., 1], size=3)
    return flow


def estimate_flow_fallback(prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """Coarse-to-fine block-matching flow, (H, W, 2) of (dx, dy) pixels.

    Identical frames and textureless frames produce an exactly-zero field.
    """
    if prev.shape != nxt.shape:
        raise DataError("flow inputs differ in shape")
    h, w = prev.shape[:2]
    if np.array_equal(prev, nxt):
        return np.zeros((h, w, 2), dtype=np.float32)
    ga = _pad_to_multiple(to_gray(prev), _FLOW_BLOCK)
    gb = _pad_to_multiple(to_gray(nxt), _FLOW_BLOCK)
    pyramid = [(ga, gb)]
    while min(pyramid[-1][0].shape) >= 2 * _FLOW_BLOCK * 2 and len(pyramid) < 4:
        pa, pb = pyramid[-1]
        pyramid.append(
            (
                _pad_to_multiple(cv2.pyrDown(pa), _FLOW_BLOCK),
                _pad_to_multiple(cv2.pyrDown(pb), _FLOW_BLOCK),
            )
        )
    level_flow: np.ndarray | None = None
    for pa, pb in reversed(pyramid):
        gh, gw = pa.shape[0] // _FLOW_BLOCK, pa.shape[1] // _FLOW_BLOCK
        if level_flow is None:
            init = np.zeros((gh, gw, 2), dtype=np.float32)
        else:
            init = 2.0 * cv2.resize(level_flow, (gw, gh), interpolation=cv2.INTER_NEAREST)
        level_flow = _match_blocks(pa, pb, init, _FLOW_BLOCK, _FLOW_SEARCH)
    assert level_flow is not None
    dense = np.repeat(np.repeat(level_flow, _FLOW_BLOCK, axis=0), _FLOW_BLOCK, axis=1)
    return dense[:h, :w].astype(np.float32)


def estimate_saliency_fallback(frame: np.ndarray) -> np.ndarray:
    """Spectral-residual saliency, normalized so the max is 1 when nonzero."""
    gray = to_gray(frame)
    h, w = gray.shape
    if float(gray.max() - gray.min()) < _TEXTURE_EPS:
        return np.zeros((h, w), dtype=np.float32)
    scale_w = 64
    scale_h = max(8, int(round(h * scale_w / max(w, 1))))
    small = cv2.resize(gray, (scale_w, scale_h), interpolation=cv2.INTER_AREA)
    spectrum = np.fft.fft2(small)
    log_amp = np.log1p(np.abs(spectrum))
    phase = np.angle(spectrum)
    residual = log_amp - cv2.blur(log_amp.astype(np.float32), (3, 3))
    sal = np.abs(np.fft.ifft2(np.expm1(residual) * np.exp(1j * phase))) ** 2
    sal = cv2.GaussianBlur(sal.astype(np.float32), (9, 9), 2.5)
    sal = cv2.resize(sal, (w, h), interpolation=cv2.INTER_LINEAR)
    peak = float(sal.max())
    if peak < 1e-12:
        return np.zeros((h, w), dtype=np.float32)
    return (sal / peak).astype(np.float32)


def estimate_contour_fallback(frame: np.ndarray) -> np.ndarray:
    """Gradient magnitude with non-maximum suppression along the gradient."""
    gray = to_gray(frame)
    h, w = gray.shape
    gx = cv2.Sobel(gray, cv2.CV_32F, 1, 0, ksize=3)
    gy = cv2.Sobel(gray, cv2.CV_32F, 0, 1, ksize=3)
    mag = np.sqrt(gx * gx + gy * gy)
    peak = float(mag.max())
    if peak < 1e-12:
        return np.zeros((h, w), dtype=np.float32)
    angle = np.arctan2(gy, gx)
    # quantize direction to horizontal / vertical / two diagonals
    sector = np.round(angle / (np.pi / 4)).astype(np.int32) % 4
    padded = np.pad(mag, 1, mode="constant")
    neighbors = {
        0: (padded[1:-1, :-2], padded[1:-1, 2:]),
        1: (padded[:-2, :-2], padded[2:, 2:]),
        2: (padded[:-2, 1:-1], padded[2:, 1:-1]),
        3: (padded[:-2, 2:], padded[2:, :-2]),
    }
    keep = np.zeros((h, w), dtype=bool)
    for s, (a, b) in neighbors.items():
        keep |= (sector == s) & (mag >= a) & (mag >= b)
    thin = np.where(keep, mag, 0.0)
    return (thin / peak).astype(np.float32)


def estimate_depth_fallback(frame: np.ndarray) -> np.ndarray:
    """Ground-plane prior: depth strictly decreases with row index."""
    h, w = frame.shape[:2]
    profile = (h - np.arange(h, dtype=np.float32)) / h
    return np.repeat(profile[:, None], w, axis=1)


def scene_descriptor(image: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """56-dim appearance descriptor: 3x16-bin color histogram plus an
    8-orientation gradient histogram, each block L1-normalized."""
    img = image if image.ndim == 3 else np.repeat(image[..., None], 3, axis=2)
    if mask is not None and mask.any():
        pixels = img[mask.astype(bool)]
    else:
        pixels = img.reshape(-1, 3)
    parts: list[np.ndarray] = []
    for c in range(3):
        hist, _ = np.histogram(pixels[:, c], bins=16, range=(0, 256))
        total = hist.sum()
        parts.append(hist / total if total else hist.astype(np.float64))
    gray = to_gray(img)
    gx = cv2.Sobel(gray, cv2.CV_32F, 1, 0, ksize=3)
    gy = cv2.Sobel(gray, cv2.CV_32F, 0, 1, ksize=3)
    mag = np.sqrt(gx * gx + gy * gy)
    ang = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    if mask is not None and mask.any():
        # Sobel reads a 3x3 window; keep only pixels whose window stays
        # inside the mask so the descriptor ignores background entirely.
        interior = ndimage.binary_erosion(
            mask.astype(bool), structure=np.ones((3, 3), dtype=bool)
        )
        mag = np.where(interior, mag, 0.0)
    bins = np.minimum((ang / (2 * np.pi) * 8).astype(np.int32), 7)
    ghist = np.zeros(8, dtype=np.float64)
    np.add.at(ghist, bins.reshape(-1), mag.reshape(-1).astype(np.float64))
    total = ghist.sum()
    if total > 0:
        ghist /= total
    parts.append(ghist)
    return np.concatenate(parts).astype(np.float32)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def connected_component_proposals(
    prob: np.ndarray, min_area: int = 4
) -> list[tuple[np.ndarray, float]]:
    """Components of prob > 0.5 with their mean probability, largest first."""
    fg = (prob > 0.5).astype(np.uint8)
    count, labels = cv2.connectedComponents(fg, connectivity=8)
    out: list[tuple[np.ndarray, float]] = []
    for i in range(1, count):
        mask = labels == i
        area = int(mask.sum())
        if area < min_area:
            continue
        out.append((mask, float(prob[mask].mean())))
    out.sort(key=lambda item: (-int(item[0].sum()), _first_pixel(item[0])))
    return out


def _first_pixel(mask: np.ndarray) -> tuple[int, int]:
    ys, xs = np.nonzero(mask)
    return (int(ys[0]), int(xs[0])) if ys.size else (0, 0)


def medial_axis_joints(
    mask: np.ndarray, max_joints: int = 12
) -> tuple[list[tuple[float, float]], list[tuple[int, int]]]:
    """Skeletal joints and bones of a mask via its medial axis.

    Joints are evenly subsampled axis pixels; bones form the minimum
    spanning tree over them so the figure stays connected.
    """
    from skimage.morphology import medial_axis

    m = mask.astype(bool)
    if int(m.sum()) < 4:
        return [], []
    # fixed rng: the thinning order breaks ties randomly otherwise
    axis = medial_axis(m, rng=0)
    ys, xs = np.nonzero(axis)
    if ys.size < 2:
        return [], []
    order = np.lexsort((xs, ys))
    ys, xs = ys[order], xs[order]
    idx = np.unique(np.linspace(0, ys.size - 1, min(max_joints, ys.size)).round().astype(int))
    pts = np.stack([xs[idx], ys[idx]], axis=1).astype(np.float64)
    if pts.shape[0] < 2:
        return [(float(pts[0, 0]), float(pts[0, 1]))], []
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    mst = minimum_spanning_tree(dist).toarray()
    bones = [(int(a), int(b)) for a, b in zip(*np.nonzero(mst))]
    joints = [(float(x), float(y)) for x, y in pts]
    return joints, bones
