"""
Shared fixtures: small frame directories and tiny configs that train in milliseconds
"""
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pytest
import torch
from PIL import Image

from facegan.config import TrainConfig, config_from_dict

TINY_SIDE = 16
TINY_STACK = 'k4s2p1,k3s1p1'


def write_random_frames(root: Path, count: int, size: int = TINY_SIDE, seed: int = 0,
                        names: List[str] = None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    names = names or [f"img_{i:03d}.png" for i in range(count)]
    for name in names:
        pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        Image.fromarray(pixels).save(root / name)
    return root


def tiny_config_dict(tmp_path: Path, discriminators: int = 1, **overrides) -> Dict[str, Any]:
    stacks = [TINY_STACK] * discriminators
    data = {
        'image_size': TINY_SIDE,
        'batch_size': 1,
        'total_steps': 4,
        'seed': 0,
        'checkpoint_interval': 2,
        'output_dir': str(tmp_path / 'run'),
        'device': 'cpu',
        'generator': {'downsampling': 2, 'residual_blocks': 1, 'base_channels': 4},
        'discriminators': {'Y': stacks, 'X': stacks, 'base_channels': 4, 'max_channels': 8},
        'data': {'train_x': str(tmp_path / 'trainX'), 'train_y': str(tmp_path / 'trainY')},
    }
    data.update(overrides)
    return data


@pytest.fixture
def frame_dirs(tmp_path):
    """trainX / trainY with a handful of random 16×16 frames each"""
    write_random_frames(tmp_path / 'trainX', 3, seed=1)
    write_random_frames(tmp_path / 'trainY', 2, seed=2)
    return tmp_path / 'trainX', tmp_path / 'trainY'


@pytest.fixture
def tiny_config(tmp_path, frame_dirs) -> TrainConfig:
    return config_from_dict(tiny_config_dict(tmp_path))


@pytest.fixture
def tiny_batches():
    generator = torch.Generator().manual_seed(123)
    x = torch.rand(1, 3, TINY_SIDE, TINY_SIDE, generator=generator) * 2 - 1
    y = torch.rand(1, 3, TINY_SIDE, TINY_SIDE, generator=generator) * 2 - 1
    return x, y
