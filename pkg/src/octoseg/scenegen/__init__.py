from .augment import OPS, augment
from .dataset import (
    Manifest,
    generate_dataset,
    load_samples,
    read_image,
    read_manifest,
    read_mask,
    write_image,
    write_mask,
    write_split,
)
from .render import (
    BoundarySceneConfig,
    Scene,
    TextBlock,
    TextSceneConfig,
    gen_boundary_scene,
    gen_text_scene,
)
from .warp import warp

__all__ = [
    "OPS", "augment", "Manifest", "generate_dataset", "load_samples", "read_image", "read_manifest",
    "read_mask", "write_image", "write_mask", "write_split", "BoundarySceneConfig", "Scene", "TextBlock",
    "TextSceneConfig", "gen_boundary_scene", "gen_text_scene", "warp",
]
