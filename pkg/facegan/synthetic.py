"""
Toy two-domain data: white circles vs white squares on black
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, ImageDraw

from .imaging import frame_name

logger = logging.getLogger(__name__)

SHAPES = ('circle', 'square')


def render_shape(kind: str, size: int, rng: np.random.Generator) -> Image.Image:
    """One white shape of random size and position"""
    if kind not in SHAPES:
        raise ValueError(f"unknown shape '{kind}'")
    image = Image.new('RGB', (size, size), (0, 0, 0))
    draw = ImageDraw.Draw(image)
    radius = int(rng.integers(size // 8, size // 3 + 1))
    cx = int(rng.integers(radius, size - radius))
    cy = int(rng.integers(radius, size - radius))
    box = (cx - radius, cy - radius, cx + radius, cy + radius)
    if kind == 'circle':
        draw.ellipse(box, fill=(255, 255, 255))
    else:
        draw.rectangle(box, fill=(255, 255, 255))
    return image


def write_shape_domain(root: Union[str, Path], kind: str, count: int, size: int = 64, seed: int = 0) -> Path:
    """Write count frames of one shape kind as frame_000001.png onward"""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for index in range(1, count + 1):
        render_shape(kind, size, rng).save(root / frame_name(index))
    logger.info(f"Wrote {count} {kind} frames to {root}")
    return root
