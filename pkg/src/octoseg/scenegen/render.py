"""Procedural document scenes.

Two generators mirror the two corpora the model is evaluated on:

* :func:`gen_boundary_scene` pastes one to five synthetic ID-like cards onto a
  textured background under random perspective, then applies lighting and
  sensor noise. The mask is the union of the warped card footprints.
* :func:`gen_text_scene` renders a full-frame document page with blocks of
  glyph-like strokes; the mask fills each block's (possibly rotated) rectangle.

All randomness comes from the ``numpy.random.Generator`` passed in, so a scene
is a pure function of ``(rng state, config)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError
from . import warp as W

BACKGROUND_FAMILIES = ("noise", "gradient", "wood", "fabric", "tiles", "scanner")
TEMPLATES = ("id_card", "driver_license", "form")
_ASPECT = {"id_card": 85.6 / 54.0, "driver_license": 1.40, "form": 1 / 1.414}


@dataclass
class Scene:
    image: np.ndarray  # uint8 [H, W]
    mask: np.ndarray  # bool [H, W]
    provenance: dict = field(default_factory=dict)


@dataclass
class BoundarySceneConfig:
    size: int = 96
    min_docs: int = 1
    max_docs: int = 5
    templates: tuple = TEMPLATES
    families: tuple = BACKGROUND_FAMILIES
    background_variants: int = 273
    doc_scale: tuple = (0.45, 0.85)  # long side over canvas side, single document
    rotation_deg: float = 180.0
    perspective: float = 0.08  # max corner jitter as a fraction of the long side
    gain: tuple = (0.75, 1.2)
    illumination: float = 0.3
    noise_sigma: tuple = (1.0, 8.0)
    max_retries: int = 50
    min_contrast: float = 40.0  # paper tone vs mean background tone, grey levels

    def validate(self):
        if self.size < 16:
            raise ConfigError(f"canvas size {self.size} too small")
        if not 1 <= self.min_docs <= self.max_docs:
            raise ConfigError(f"need 1 <= min_docs <= max_docs, got {self.min_docs}, {self.max_docs}")
        if not self.templates or any(t not in TEMPLATES for t in self.templates):
            raise ConfigError(f"templates must be a non-empty subset of {TEMPLATES}")
        if not self.families or any(f not in BACKGROUND_FAMILIES for f in self.families):
            raise ConfigError(f"families must be a non-empty subset of {BACKGROUND_FAMILIES}")
        if self.background_variants < 1:
            raise ConfigError("background_variants must be >= 1")
        lo, hi = self.doc_scale
        if not 0 < lo <= hi <= 1.0:
            raise ConfigError(f"doc_scale {self.doc_scale} outside (0, 1]")


@dataclass
class TextSceneConfig:
    size: int = 96
    min_blocks: int = 2
    max_blocks: int = 5
    line_height: tuple = (0.06, 0.10)  # fraction of canvas side
    lines: tuple = (1, 4)
    block_width: tuple = (0.25, 0.7)
    max_angle_deg: float = 8.0
    distractors: bool = True
    noise_sigma: tuple = (1.0, 6.0)
    max_retries: int = 50

    def validate(self):
        if self.size < 16:
            raise ConfigError(f"canvas size {self.size} too small")
        if not 0 <= self.min_blocks <= self.max_blocks:
            raise ConfigError("need 0 <= min_blocks <= max_blocks")


# ---------------------------------------------------------------------------
# textures


def _smooth_noise(rng, shape, sigma):
    return gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")


def _norm(a):
    a = a - a.min()
    return a / (a.max() + 1e-12)


def background_texture(bg_id: int, size: int, families=BACKGROUND_FAMILIES, library_seed: int = 273) -> np.ndarray:
    """Deterministic procedural background number ``bg_id`` as float [0, 255]."""
    family = families[bg_id % len(families)]
    rng = np.random.default_rng([library_seed, bg_id])
    ys, xs = np.mgrid[0:size, 0:size] / size
    base = rng.uniform(20, 190)
    contrast = rng.uniform(10, 50)
    if family == "noise":
        t = sum(_norm(_smooth_noise(rng, (size, size), size * s)) * wgt
                for s, wgt in ((0.02, 0.3), (0.06, 0.4), (0.15, 0.3)))
    elif family == "gradient":
        th = rng.uniform(0, 2 * np.pi)
        t = _norm(np.cos(th) * xs + np.sin(th) * ys) + 0.15 * _norm(_smooth_noise(rng, (size, size), 1.0))
    elif family == "wood":
        th = rng.uniform(0, np.pi)
        freq = rng.uniform(6, 20)
        warpf = _smooth_noise(rng, (size, size), size * 0.08) * rng.uniform(1, 4)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(th) * xs + np.sin(th) * ys) + warpf)
    elif family == "fabric":
        f1, f2 = rng.uniform(10, 30, size=2)
        t = 0.5 + 0.25 * np.sin(2 * np.pi * f1 * xs) + 0.25 * np.sin(2 * np.pi * f2 * ys)
        t = t + 0.2 * rng.standard_normal((size, size))
    elif family == "tiles":
        n = rng.integers(3, 9)
        cells = (np.floor(xs * n) + np.floor(ys * n)) % 2
        grout = ((xs * n) % 1 < 0.06) | ((ys * n) % 1 < 0.06)
        t = 0.6 * cells + 0.4 * grout + 0.1 * _smooth_noise(rng, (size, size), 1.0)
    elif family == "scanner":
        base = rng.uniform(90, 200)
        contrast = rng.uniform(3, 12)
        t = _norm(_smooth_noise(rng, (size, size), size * 0.2))
    else:
        raise ConfigError(f"unknown background family {family!r}")
    return np.clip(base + contrast * (_norm(t) - 0.5) * 2, 0, 255)


# ---------------------------------------------------------------------------
# document templates


def _fill_rect(img, x0, y0, x1, y1, value):
    h, w = img.shape
    x0, x1 = max(0, int(round(x0))), min(w, int(round(x1)))
    y0, y1 = max(0, int(round(y0))), min(h, int(round(y1)))
    if x1 > x0 and y1 > y0:
        img[y0:y1, x0:x1] = value


def _glyph_rows(rng, img, x0, y0, x1, y1, line_h, ink):
    """Dash-like pseudo text between ``y0`` and ``y1``."""
    y = y0
    while y + line_h <= y1:
        x = x0 + rng.uniform(0, 2)
        stop = x0 + (x1 - x0) * rng.uniform(0.5, 1.0)
        while x < stop:
            word = rng.uniform(2, 6) * line_h * 0.5
            _fill_rect(img, x, y + line_h * 0.25, min(x + word, stop), y + line_h * 0.7, ink)
            x += word + line_h * 0.4
        y += line_h * 1.3


PAPER_TONES = (170.0, 245.0)


def paper_tone(rng, avoid: float | None = None, margin: float = 0.0) -> float:
    """Paper grey level in ``PAPER_TONES``, at least ``margin`` away from ``avoid`` when possible."""
    lo, hi = PAPER_TONES
    if avoid is None or margin <= 0:
        return float(rng.uniform(lo, hi))
    below = (lo, min(hi, avoid - margin))
    above = (max(lo, avoid + margin), hi)
    spans = [(a, b) for a, b in (below, above) if b > a]
    if not spans:
        return hi if abs(hi - avoid) >= abs(lo - avoid) else lo
    total = sum(b - a for a, b in spans)
    u = rng.uniform(0, total)
    for a, b in spans:
        if u <= b - a:
            return float(a + u)
        u -= b - a
    return float(spans[-1][1])


def document_template(kind: str, height: int, width: int, rng, paper: float | None = None) -> np.ndarray:
    """Render a synthetic card/form as float [0, 255]."""
    if kind not in TEMPLATES:
        raise ConfigError(f"unknown template {kind!r}")
    h, w = height, width
    if paper is None:
        paper = rng.uniform(*PAPER_TONES)
    ys, xs = np.mgrid[0:h, 0:w]
    img = paper + rng.uniform(-12, 12) * (xs / max(w, 1) - 0.5) + rng.normal(0, 2.0, (h, w))
    ink = rng.uniform(15, 80)
    band = rng.uniform(80, 160)
    if kind in ("id_card", "driver_license"):
        _fill_rect(img, 0, 0, w, h * rng.uniform(0.12, 0.2), band)
        px1 = w * rng.uniform(0.25, 0.33)
        _fill_rect(img, w * 0.05, h * 0.3, px1, h * 0.88, rng.uniform(60, 140))
        cx, cy = (w * 0.05 + px1) / 2, h * 0.52
        face = ((xs - cx) / (w * 0.08 + 1e-9)) ** 2 + ((ys - cy) / (h * 0.15 + 1e-9)) ** 2 < 1
        img[face] = rng.uniform(140, 200)
        _glyph_rows(rng, img, px1 + w * 0.05, h * 0.3, w * 0.95, h * 0.9, max(1.5, h * 0.08), ink)
        if kind == "driver_license":
            lw = max(1, int(round(min(h, w) * 0.03)))
            img[:lw, :] = ink
            img[-lw:, :] = ink
            img[:, :lw] = ink
            img[:, -lw:] = ink
    else:
        _fill_rect(img, w * 0.08, h * 0.05, w * 0.92, h * 0.11, band)
        _glyph_rows(rng, img, w * 0.08, h * 0.15, w * 0.92, h * 0.92, max(1.5, h * 0.035), ink)
    return np.clip(img, 0, 255)


# ---------------------------------------------------------------------------
# boundary scenes


def composite_documents(background: np.ndarray, documents) -> tuple[np.ndarray, np.ndarray]:
    """Paste ``(template, homography)`` pairs over ``background`` in order.

    Returns ``(image, mask)``; the mask is the union of every warped footprint.
    """
    out = np.asarray(background, dtype=np.float64).copy()
    mask = np.zeros(out.shape, dtype=bool)
    for template, h in documents:
        warped, covered = W.warp(template, h, out.shape, "bilinear")
        out[covered] = warped[covered]
        mask |= covered
    return out, mask


def _place(rng, cfg: BoundarySceneConfig, th, tw, long_side):
    s = cfg.size
    src = W.corners(tw, th)
    for _ in range(cfg.max_retries):
        ang = np.deg2rad(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
        c, sn = np.cos(ang), np.sin(ang)
        k = long_side / max(tw, th)
        local = (src - [tw / 2, th / 2]) * k
        rot = local @ np.array([[c, sn], [-sn, c]])
        jitter = rng.uniform(-cfg.perspective, cfg.perspective, size=(4, 2)) * long_side
        quad = rot + jitter
        lo, hi = quad.min(axis=0), quad.max(axis=0)
        if np.any(hi - lo > s):
            continue
        center = rng.uniform(-lo, s - hi)
        quad = quad + center
        if not W.is_convex(quad) or quad.min() < 0 or quad.max() > s:
            continue
        return W.homography_from_points(src, quad)
    return None


def gen_boundary_scene(rng: np.random.Generator, config: BoundarySceneConfig | None = None) -> Scene:
    cfg = config or BoundarySceneConfig()
    cfg.validate()
    s = cfg.size
    bg_id = int(rng.integers(cfg.background_variants))
    background = background_texture(bg_id, s, cfg.families)
    n_docs = int(rng.integers(cfg.min_docs, cfg.max_docs + 1))
    docs, records = [], []
    for _ in range(n_docs):
        kind = cfg.templates[int(rng.integers(len(cfg.templates)))]
        aspect = _ASPECT[kind]
        long_side = s * rng.uniform(*cfg.doc_scale) / math.sqrt(n_docs)
        h_mat = None
        for _shrink in range(10):
            tw = max(4, int(round(long_side if aspect >= 1 else long_side * aspect)))
            th = max(4, int(round(long_side / aspect if aspect >= 1 else long_side)))
            h_mat = _place(rng, cfg, th, tw, long_side)
            if h_mat is not None:
                break
            long_side *= 0.8
        if h_mat is None:
            raise ConfigError(f"cannot place a {kind} document on a {s}px canvas")
        paper = paper_tone(rng, float(background.mean()), cfg.min_contrast)
        template = document_template(kind, th, tw, rng, paper)
        docs.append((template, h_mat))
        records.append({"template": kind, "size": [th, tw], "paper": round(paper, 6),
                        "homography": np.round(h_mat, 10).tolist()})
    image, mask = composite_documents(background, docs)
    gain = rng.uniform(*cfg.gain)
    th = rng.uniform(0, 2 * np.pi)
    ys, xs = np.mgrid[0:s, 0:s] / s
    light = gain * (1 + cfg.illumination * rng.uniform(0, 1) * (np.cos(th) * (xs - 0.5) + np.sin(th) * (ys - 0.5)))
    sigma = rng.uniform(*cfg.noise_sigma)
    image = image * light + rng.normal(0, sigma, image.shape)
    prov = {
        "task": "boundary",
        "background": {"id": bg_id, "family": cfg.families[bg_id % len(cfg.families)]},
        "documents": records,
        "gain": round(float(gain), 6),
        "noise_sigma": round(float(sigma), 6),
    }
    return Scene(to_uint8(image), mask, prov)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# text scenes


@dataclass(frozen=True)
class TextBlock:
    x: float
    y: float
    width: float
    height: float
    angle_deg: float = 0.0
    line_height: float = 8.0

    def local_coords(self, shape):
        """Pixel-centre coordinates in the block frame (origin at its top-left corner)."""
        h, w = shape
        ys, xs = np.mgrid[0:h, 0:w]
        px, py = xs + 0.5, ys + 0.5
        cx, cy = self.x + self.width / 2, self.y + self.height / 2
        t = np.deg2rad(self.angle_deg)
        dx, dy = px - cx, py - cy
        u = np.cos(t) * dx + np.sin(t) * dy + self.width / 2
        v = -np.sin(t) * dx + np.cos(t) * dy + self.height / 2
        return u, v

    def region(self, shape) -> np.ndarray:
        u, v = self.local_coords(shape)
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)


def _render_block(img, block: TextBlock, rng, ink):
    u, v = block.local_coords(img.shape)
    inside = (u >= 0) & (u < block.width) & (v >= 0) & (v < block.height)
    lh = block.line_height
    cw = max(1.0, lh * 0.6)
    n_lines = max(1, int(math.ceil(block.height / lh)))
    n_chars = max(1, int(math.ceil(block.width / cw)))
    glyphs = rng.random((n_lines, n_chars, 3, 3)) < 0.45
    spaces = rng.random((n_lines, n_chars)) < 0.15
    glyphs[spaces] = False
    glyphs[:, :, 1, 1] |= ~spaces  # every letter has some ink
    li = np.clip((v // lh).astype(int), 0, n_lines - 1)
    ci = np.clip((u // cw).astype(int), 0, n_chars - 1)
    fv = (v % lh) / lh
    fu = (u % cw) / cw
    # glyph body occupies the central band of each line and cell
    body = (fv >= 0.15) & (fv < 0.85) & (fu >= 0.1) & (fu < 0.9)
    gy = np.clip(((fv - 0.15) / 0.7 * 3).astype(int), 0, 2)
    gx = np.clip(((fu - 0.1) / 0.8 * 3).astype(int), 0, 2)
    on = inside & body & glyphs[li, ci, gy, gx]
    img[on] = ink


def render_text_scene(blocks, size: int, rng, distractors: bool = False, noise_sigma: float = 0.0) -> Scene:
    """Render ``blocks`` onto a blank page; deterministic given ``rng``."""
    page = rng.uniform(190, 250)
    img = page + 6 * _norm(_smooth_noise(rng, (size, size), size * 0.1)) - 3
    mask = np.zeros((size, size), dtype=bool)
    if distractors:
        if rng.random() < 0.6:
            x0, y0 = rng.uniform(0, size * 0.7, size=2)
            _fill_rect(img, x0, y0, x0 + size * rng.uniform(0.15, 0.3), y0 + size * rng.uniform(0.2, 0.35),
                       rng.uniform(60, 160))
        if rng.random() < 0.5:
            lw = max(1, size // 64)
            tone = rng.uniform(40, 150)
            img[:lw, :] = tone
            img[-lw:, :] = tone
            img[:, :lw] = tone
            img[:, -lw:] = tone
    records = []
    for b in blocks:
        _render_block(img, b, rng, rng.uniform(5, 70))
        mask |= b.region((size, size))
        records.append({"x": round(b.x, 4), "y": round(b.y, 4), "w": round(b.width, 4),
                        "h": round(b.height, 4), "angle": round(b.angle_deg, 4), "line_height": round(b.line_height, 4)})
    if noise_sigma > 0:
        img = img + rng.normal(0, noise_sigma, img.shape)
    return Scene(to_uint8(img), mask, {"task": "text", "blocks": records, "noise_sigma": round(float(noise_sigma), 6)})


def gen_text_scene(rng: np.random.Generator, config: TextSceneConfig | None = None) -> Scene:
    cfg = config or TextSceneConfig()
    cfg.validate()
    s = cfg.size
    n = int(rng.integers(cfg.min_blocks, cfg.max_blocks + 1))
    blocks: list[TextBlock] = []
    occupied = np.zeros((s, s), dtype=bool)
    for _ in range(n):
        for _try in range(cfg.max_retries):
            lh = s * rng.uniform(*cfg.line_height)
            lines = int(rng.integers(cfg.lines[0], cfg.lines[1] + 1))
            w = s * rng.uniform(*cfg.block_width)
            h = lh * lines
            ang = rng.uniform(-cfg.max_angle_deg, cfg.max_angle_deg)
            x = rng.uniform(0, max(1.0, s - w))
            y = rng.uniform(0, max(1.0, s - h))
            b = TextBlock(x, y, w, h, ang, lh)
            reg = b.region((s, s))
            # keep a gap between blocks and fully inside the page
            grown = reg | np.roll(reg, 2, 0) | np.roll(reg, -2, 0) | np.roll(reg, 2, 1) | np.roll(reg, -2, 1)
            if reg.sum() < 0.9 * w * h or (grown & occupied).any():
                continue
            blocks.append(b)
            occupied |= reg
            break
    sigma = rng.uniform(*cfg.noise_sigma)
    return render_text_scene(blocks, s, rng, cfg.distractors, sigma)

