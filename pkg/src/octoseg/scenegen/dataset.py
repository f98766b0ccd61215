"""PNG I/O, manifests and whole-dataset generation.

Manifest files are UTF-8, one record per line::

    # octoseg-manifest version=1 name=boundary split=train seed=7 generator=0.1.0
    images/00003.png<TAB>masks/00003.png<TAB>{"task": "boundary", ...}

Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .. import __version__
from ..errors import ConfigError, FormatError, ManifestError
from .render import BoundarySceneConfig, Scene, TextSceneConfig, gen_boundary_scene, gen_text_scene

MANIFEST_VERSION = 1
DEFAULT_RATIOS = (0.75, 0.25)


def write_image(path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise FormatError(f"{path}: expected a 2-D uint8 image, got {arr.dtype} with shape {arr.shape}")
    Image.fromarray(arr).save(path, format="PNG")


def read_image(path) -> np.ndarray:
    """Read an 8-bit image as a 2-D uint8 array; colour images are converted to luma."""
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "1"):
                arr = np.asarray(im.convert("L"))
            elif im.mode in ("RGB", "RGBA", "P", "LA"):
                arr = np.asarray(im.convert("L"))
            else:
                raise FormatError(f"{path}: unsupported pixel mode {im.mode!r}; only 8-bit images are accepted")
    except OSError as exc:
        raise OSError(f"{path}: cannot read image ({exc})") from exc
    return arr.copy()


def write_mask(path, mask: np.ndarray) -> None:
    write_image(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    arr = read_image(path)
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        raise FormatError(f"{path}: mask contains values other than 0 and 255")
    return arr == 255


@dataclass
class Record:
    image: str
    mask: str
    provenance: dict = field(default_factory=dict)


@dataclass
class Manifest:
    name: str
    split: str
    records: list[Record]
    seed: int
    version: str = __version__
    root: Path | None = None

    def write(self, path) -> None:
        path = Path(path)
        lines = [f"# octoseg-manifest version={MANIFEST_VERSION} name={self.name} split={self.split} "
                 f"seed={self.seed} generator={self.version}"]
        for r in self.records:
            prov = json.dumps(r.provenance, sort_keys=True, separators=(",", ":"))
            lines.append(f"{r.image}\t{r.mask}\t{prov}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.root = path.parent

    def paths(self):
        root = self.root or Path(".")
        return [(root / r.image, root / r.mask) for r in self.records]

    def __len__(self):
        return len(self.records)


def read_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: cannot read manifest ({exc})") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# octoseg-manifest"):
        raise ManifestError(f"{path}: missing '# octoseg-manifest' header line")
    meta = dict(tok.split("=", 1) for tok in lines[0][2:].split()[1:] if "=" in tok)
    if meta.get("version") != str(MANIFEST_VERSION):
        raise ManifestError(f"{path}: unsupported manifest version {meta.get('version')!r}")
    records = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{n}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            prov = json.loads(parts[2])
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{n}: bad provenance JSON ({exc})") from None
        records.append(Record(parts[0], parts[1], prov))
    m = Manifest(meta.get("name", ""), meta.get("split", ""), records, int(meta.get("seed", 0)),
                 meta.get("generator", ""), path.parent)
    if check_files:
        for img, msk in m.paths():
            for p in (img, msk):
                if not p.is_file():
                    raise ManifestError(f"{path}: referenced file {p} does not exist")
    return m


def split_indices(n: int, ratios, seed: int) -> list[np.ndarray]:
    """Disjoint seeded partition of ``range(n)``; the last split takes the remainder."""
    ratios = tuple(ratios)
    if not ratios or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    out, start = [], 0
    for r in ratios[:-1]:
        k = int(round(r * n))
        out.append(np.sort(order[start : start + k]))
        start += k
    out.append(np.sort(order[start:]))
    return out


def write_split(scenes, out_dir, ratios=DEFAULT_RATIOS, seed: int = 0, name: str = "dataset",
                split_names=("train", "test")) -> dict[str, Manifest]:
    """Write scene PNGs under ``out_dir`` and one manifest per split."""
    out_dir = Path(out_dir)
    if len(split_names) != len(ratios):
        raise ConfigError("need one split name per ratio")
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i, sc in enumerate(scenes):
        img_rel, msk_rel = f"images/{i:05d}.png", f"masks/{i:05d}.png"
        write_image(out_dir / img_rel, sc.image)
        write_mask(out_dir / msk_rel, sc.mask)
        records.append(Record(img_rel, msk_rel, sc.provenance))
    manifests = {}
    for split, idx in zip(split_names, split_indices(len(records), ratios, seed)):
        m = Manifest(name, split, [records[i] for i in idx], seed)
        m.write(out_dir / f"{split}.manifest")
        manifests[split] = m
    return manifests


def scene_rng(seed: int, index: int) -> np.random.Generator:
    """Child generator for scene ``index``; independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_scenes(task: str, count: int, size: int, seed: int, threads: int = 1, config=None,
                    augment_ops=()) -> list[Scene]:
    from .augment import augment

    if count < 1:
        raise ConfigError(f"scene count must be >= 1, got {count}")
    if task == "boundary":
        cfg = config or BoundarySceneConfig(size=size)
        make = gen_boundary_scene
    elif task == "text":
        cfg = config or TextSceneConfig(size=size)
        make = gen_text_scene
    else:
        raise ConfigError(f"unknown task {task!r}; expected 'boundary' or 'text'")

    def one(i):
        rng = scene_rng(seed, i)
        sc = make(rng, cfg)
        sc.provenance["seed"] = [seed, i]
        return augment(sc, augment_ops, rng) if augment_ops else sc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(count)))
    return [one(i) for i in range(count)]


def generate_dataset(task: str, count: int, size: int, seed: int, out_dir, ratios=DEFAULT_RATIOS,
                     threads: int = 1, augment_ops=()) -> dict[str, Manifest]:
    scenes = generate_scenes(task, count, size, seed, threads, augment_ops=augment_ops)
    return write_split(scenes, out_dir, ratios, seed, name=task)


def load_samples(manifest: Manifest | str | os.PathLike, input_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Load a manifest as ``(images, masks)`` float32 arrays of shape ``[N, 1, S, S]``.

    Images are resized bilinearly and scaled to [0, 1]; masks are resized by
    nearest neighbour and stay binary.
    """
    m = manifest if isinstance(manifest, Manifest) else read_manifest(manifest)
    images, masks = [], []
    for img_path, msk_path in m.paths():
        images.append(prepare_image(read_image(img_path), input_size))
        masks.append(prepare_mask(read_mask(msk_path), input_size))
    if not images:
        return np.zeros((0, 1, input_size, input_size), np.float32), np.zeros((0, 1, input_size, input_size), np.float32)
    return np.stack(images)[:, None], np.stack(masks)[:, None]


def prepare_image(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape != (size, size):
        img = np.asarray(Image.fromarray(img).resize((size, size), Image.BILINEAR))
    return img.astype(np.float32) / 255.0


def prepare_mask(mask: np.ndarray, size: int) -> np.ndarray:
    if mask.shape != (size, size):
        im = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8))
        mask = np.asarray(im.resize((size, size), Image.NEAREST)) >= 128
    return mask.astype(np.float32)
