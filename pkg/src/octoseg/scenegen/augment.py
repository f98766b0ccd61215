"""Augmentation operators for (image, mask) pairs.

Geometric ops (rotation, distortion, zoom, resize, flip) move image and mask
together; the image is resampled bilinearly and the mask by nearest neighbour,
then re-binarized. Photometric ops (noise, brightness) touch the image only.
Occlusion paints a random rectangle over the image and leaves the mask alone
unless ``erase_occluded`` is set.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from . import warp as W
from .render import Scene, to_uint8

GEOMETRIC = ("rotation", "distortion", "zoom", "resize", "flip")
PHOTOMETRIC = ("noise", "brightness")
OPS = ("noise", "brightness", "rotation", "distortion", "zoom", "occlusion", "resize", "flip")


def sample_params(op: str, rng: np.random.Generator, shape) -> dict:
    h, w = shape
    if op == "noise":
        return {"sigma": float(rng.uniform(2, 12)), "seed": int(rng.integers(2**31))}
    if op == "brightness":
        return {"gain": float(rng.uniform(0.7, 1.3)), "offset": float(rng.uniform(-25, 25))}
    if op == "rotation":
        if h == w and rng.random() < 0.25:
            return {"angle": float(90 * rng.integers(1, 4))}
        return {"angle": float(rng.uniform(-25, 25))}
    if op == "distortion":
        j = rng.uniform(0.02, 0.08) * max(h, w)
        return {"jitter": rng.uniform(-j, j, size=(4, 2)).round(6).tolist()}
    if op == "zoom":
        return {"factor": float(rng.uniform(0.8, 1.25))}
    if op == "resize":
        return {"factor": float(rng.uniform(0.5, 0.9))}
    if op == "flip":
        return {"axis": int(rng.integers(2))}
    if op == "occlusion":
        ow = int(rng.integers(max(1, w // 10), max(2, w // 3)))
        oh = int(rng.integers(max(1, h // 10), max(2, h // 3)))
        return {"x": int(rng.integers(0, w - ow + 1)), "y": int(rng.integers(0, h - oh + 1)),
                "w": ow, "h": oh, "tone": float(rng.uniform(0, 255))}
    raise ConfigError(f"unknown augmentation {op!r}; expected one of {OPS}")


def geometric_homography(op: str, params: dict, shape) -> np.ndarray | None:
    """Homography for warp-based ops; ``None`` for ops done by exact array moves."""
    h, w = shape
    if op == "rotation":
        if params["angle"] % 90 == 0:
            return None
        return W.about_center(W.rotation(params["angle"]), w, h)
    if op == "distortion":
        src = W.corners(w, h)
        return W.homography_from_points(src, src + np.asarray(params["jitter"]))
    if op == "zoom":
        return W.about_center(W.scaling(params["factor"]), w, h)
    return None


def _resample(a: np.ndarray, out_shape, interpolation: str) -> np.ndarray:
    ih, iw = a.shape
    oh, ow = out_shape
    ys = (np.arange(oh) + 0.5) * ih / oh
    xs = (np.arange(ow) + 0.5) * iw / ow
    if interpolation == "nearest":
        return a[np.minimum(ys.astype(np.intp), ih - 1)][:, np.minimum(xs.astype(np.intp), iw - 1)]
    yy, xx = np.meshgrid(ys - 0.5, xs - 0.5, indexing="ij")
    return W.sample_bilinear(a.astype(np.float64), xx, yy)


def apply_geometric(op: str, params: dict, a: np.ndarray, interpolation: str) -> np.ndarray:
    """Apply a geometric op to one raster; float output for bilinear, dtype kept for nearest."""
    if op == "flip":
        return np.flip(a, axis=params["axis"]).copy()
    if op == "rotation" and params["angle"] % 90 == 0:
        return np.rot90(a, k=-int(params["angle"] // 90) % 4).copy()
    if op == "resize":
        h, w = a.shape
        small = (max(1, int(round(h * params["factor"]))), max(1, int(round(w * params["factor"]))))
        return _resample(_resample(a, small, interpolation), (h, w), interpolation)
    hm = geometric_homography(op, params, a.shape)
    if hm is None:
        raise ConfigError(f"{op} is not a geometric op")
    if interpolation == "nearest":
        out, _ = W.warp(a, hm, a.shape, "nearest")
        return out
    # image path replicates the border instead of leaving holes
    src = W.invert(hm)
    ys, xs = np.mgrid[0 : a.shape[0], 0 : a.shape[1]]
    pts = W.apply(src, np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1))
    return W.sample_bilinear(a.astype(np.float64), pts[:, 0].reshape(a.shape) - 0.5, pts[:, 1].reshape(a.shape) - 0.5)


def apply_op(op: str, params: dict, image: np.ndarray, mask: np.ndarray, erase_occluded: bool = False):
    img = np.asarray(image, dtype=np.float64)
    if op == "noise":
        return img + np.random.default_rng(params["seed"]).normal(0, params["sigma"], img.shape), mask
    if op == "brightness":
        return img * params["gain"] + params["offset"], mask
    if op == "occlusion":
        sl = (slice(params["y"], params["y"] + params["h"]), slice(params["x"], params["x"] + params["w"]))
        img = img.copy()
        img[sl] = params["tone"]
        if erase_occluded:
            mask = mask.copy()
            mask[sl] = False
        return img, mask
    if op in GEOMETRIC:
        new_img = apply_geometric(op, params, img, "bilinear")
        new_mask = apply_geometric(op, params, mask.astype(np.uint8), "nearest") > 0
        return new_img, new_mask
    raise ConfigError(f"unknown augmentation {op!r}; expected one of {OPS}")


def augment(sample: Scene, ops, rng: np.random.Generator, erase_occluded: bool = False) -> Scene:
    """Apply ``ops`` in order with parameters drawn from ``rng``; empty ``ops`` is the identity."""
    image, mask = sample.image, sample.mask
    if image.shape != mask.shape:
        raise ConfigError(f"image {image.shape} and mask {mask.shape} differ in size")
    applied = []
    img = image.astype(np.float64)
    for op in ops:
        params = sample_params(op, rng, img.shape)
        img, mask = apply_op(op, params, img, mask, erase_occluded)
        applied.append({"op": op, **params})
    prov = dict(sample.provenance)
    prov["augmentations"] = list(prov.get("augmentations", [])) + applied
    return Scene(to_uint8(img) if ops else image.copy(), mask.copy(), prov)
