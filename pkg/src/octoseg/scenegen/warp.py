"""Projective warps on grayscale rasters.

Continuous coordinates put pixel ``(row i, col j)`` over ``[j, j+1) x [i, i+1)``
with its centre at ``(j + 0.5, i + 0.5)``. A source raster of size ``h x w``
therefore occupies ``[0, w) x [0, h)``, and the warped footprint of a template
is exactly the set of output pixel centres whose inverse image falls inside it.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


def homography_from_points(src, dst) -> np.ndarray:
    """Solve the 3x3 homography mapping four ``src`` points onto ``dst`` (h33 = 1)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ConfigError("homography needs exactly four point correspondences")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for n, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * n] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * n + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * n], b[2 * n + 1] = u, v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        raise ConfigError("degenerate point configuration for homography") from None
    return np.append(h, 1.0).reshape(3, 3)


def normalize(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ConfigError(f"homography must be 3x3, got {h.shape}")
    if abs(np.linalg.det(h)) <= 1e-9 or h[2, 2] == 0:
        raise ConfigError("homography is not invertible")
    return h / h[2, 2]


def invert(h: np.ndarray) -> np.ndarray:
    return normalize(np.linalg.inv(normalize(h)))


def apply(h: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ np.asarray(h).T
    return hom[:, :2] / hom[:, 2:3]


def translation(dx: float, dy: float) -> np.ndarray:
    return np.array([[1.0, 0, dx], [0, 1.0, dy], [0, 0, 1.0]])


def about_center(m: np.ndarray, width: int, height: int) -> np.ndarray:
    """Conjugate a linear map so it acts around the raster centre."""
    cx, cy = width / 2.0, height / 2.0
    return translation(cx, cy) @ m @ translation(-cx, -cy)


def rotation(angle_deg: float) -> np.ndarray:
    t = np.deg2rad(angle_deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def scaling(f: float) -> np.ndarray:
    return np.diag([f, f, 1.0])


def corners(width: float, height: float) -> np.ndarray:
    return np.array([[0, 0], [width, 0], [width, height], [0, height]], dtype=np.float64)


def is_convex(quad) -> bool:
    q = np.asarray(quad, dtype=np.float64)
    signs = []
    for i in range(4):
        a, b, c = q[i], q[(i + 1) % 4], q[(i + 2) % 4]
        u, v = b - a, c - b
        signs.append(u[0] * v[1] - u[1] * v[0])
    signs = np.array(signs)
    return bool(np.all(signs > 1e-9) or np.all(signs < -1e-9))


def _source_coords(h: np.ndarray, out_shape):
    oh, ow = out_shape
    hinv = invert(h)
    ys, xs = np.mgrid[0:oh, 0:ow]
    px = xs.ravel() + 0.5
    py = ys.ravel() + 0.5
    den = hinv[2, 0] * px + hinv[2, 1] * py + hinv[2, 2]
    den = np.where(np.abs(den) < 1e-12, 1e-12, den)
    u = (hinv[0, 0] * px + hinv[0, 1] * py + hinv[0, 2]) / den
    v = (hinv[1, 0] * px + hinv[1, 1] * py + hinv[1, 2]) / den
    # points behind the projective horizon map to nowhere
    valid = den > 0
    return u.reshape(oh, ow), v.reshape(oh, ow), valid.reshape(oh, ow)


def footprint(src_shape, h: np.ndarray, out_shape) -> np.ndarray:
    """Boolean raster of output pixels whose centre maps inside the source rectangle."""
    sh, sw = src_shape
    u, v, valid = _source_coords(h, out_shape)
    return valid & (u >= 0) & (u < sw) & (v >= 0) & (v < sh)


def warp(image: np.ndarray, h: np.ndarray, out_shape, interpolation: str = "bilinear"):
    """Inverse-map ``image`` through ``h`` onto an ``out_shape`` canvas.

    Returns ``(warped, covered)``; pixels outside the source footprint are
    returned as 0 with ``covered`` False, so callers can composite over a
    background. Bilinear sampling clamps at the source border.
    """
    img = np.asarray(image)
    sh, sw = img.shape
    u, v, valid = _source_coords(h, out_shape)
    covered = valid & (u >= 0) & (u < sw) & (v >= 0) & (v < sh)
    if interpolation == "nearest":
        ix = np.clip(np.floor(u), 0, sw - 1).astype(np.intp)
        iy = np.clip(np.floor(v), 0, sh - 1).astype(np.intp)
        out = img[iy, ix]
    elif interpolation == "bilinear":
        out = sample_bilinear(img.astype(np.float64), u - 0.5, v - 0.5)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    out = np.where(covered, out, 0).astype(out.dtype)
    return out, covered


def sample_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional index coordinates, clamping to the border."""
    sh, sw = img.shape
    x = np.clip(x, 0, sw - 1)
    y = np.clip(y, 0, sh - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy
