"""
Frame-by-frame translation with a trained generator, plus round-trip diagnostics
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import torch
from torch import nn

from .config import TrainConfig, config_from_dict, default_device
from .errors import CheckpointError, ConfigError, FaceganError
from .imaging import (
    CropSpec,
    FrameDataset,
    FrameStore,
    frame_loader,
    from_normalized,
    save_triplet_grid,
    triplet_grid,
    validate_batch,
    write_frames,
)
from .netspec import build_generator
from .training import read_checkpoint

logger = logging.getLogger(__name__)

# direction → (forward generator, backward generator, source domain)
DIRECTIONS = {
    'XtoY': ('G', 'F', 'X'),
    'YtoX': ('F', 'G', 'Y'),
}
MANIFEST_NAME = 'frames.txt'


@dataclass
class TranslationJob:
    checkpoint: Path
    direction: str
    store: FrameStore
    output_dir: Path
    crop: Optional[CropSpec] = None
    prefetch: int = 8
    device: str = ''
    workers: int = 0

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be XtoY or YtoX, got '{self.direction}'")
        if self.prefetch < 1:
            raise ConfigError("prefetch must be ≥ 1")
        if self.workers < 0:
            raise ConfigError("workers must be ≥ 0")
        self.checkpoint = Path(self.checkpoint)
        self.output_dir = Path(self.output_dir)
        self.device = self.device or default_device()


def load_generators(checkpoint: Union[str, Path], device: str = 'cpu') -> Tuple[TrainConfig, Dict[str, nn.Module]]:
    """Both generators of a checkpoint in eval mode; the file is only read"""
    payload = read_checkpoint(checkpoint)
    try:
        config = config_from_dict(payload['config'])
        generators = {}
        for name in ('G', 'F'):
            net = build_generator(config.generator, 0)
            net.load_state_dict(payload['networks'][name])
            generators[name] = net.to(device).eval()
    except (FaceganError, KeyError, RuntimeError) as e:
        raise CheckpointError(f"checkpoint does not match its stored config: {e}") from e
    return config, generators


def translate_frames(job: TranslationJob) -> int:
    """Translate every frame in filename order into frame_%06d.png plus frames.txt"""
    config, generators = load_generators(job.checkpoint, job.device)
    forward_name, _, source_domain = DIRECTIONS[job.direction]
    generator = generators[forward_name]
    crop = job.crop or config.crop(source_domain)
    job.store.check_crop(crop)

    try:
        job.output_dir.mkdir(parents=True, exist_ok=True)
        probe = job.output_dir / '.write_test'
        probe.touch()
        probe.unlink()
    except OSError as e:
        raise FaceganError(f"output directory not writable: {job.output_dir}") from e

    logger.info(f"Translating {len(job.store)} frames {job.direction} with {job.checkpoint}")
    loader = frame_loader(FrameDataset(job.store, crop, config.image_size), job.prefetch, job.workers)
    names = []
    for batch in loader:
        outputs = []
        with torch.no_grad():
            # One frame per forward pass keeps results independent of the prefetch size
            for frame in batch:
                translated = generator(frame.unsqueeze(0).to(job.device))
                outputs.append(from_normalized(translated.cpu())[0])
        names += write_frames(outputs, job.output_dir, start=len(names) + 1)

    (job.output_dir / MANIFEST_NAME).write_text('\n'.join(names) + '\n', encoding='utf-8')
    logger.info(f"Wrote {len(names)} frames to {job.output_dir}")
    return len(names)


def round_trip_report(
    checkpoint: Union[str, Path],
    sample: torch.Tensor,
    direction: str = 'XtoY',
    grid_path: Optional[Union[str, Path]] = None,
    device: str = 'cpu',
) -> Tuple[float, torch.Tensor]:
    """Mean |back(fwd(s)) − s| and the (s, fwd(s), back(fwd(s))) grid"""
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be XtoY or YtoX, got '{direction}'")
    _, generators = load_generators(checkpoint, device)
    forward_name, backward_name, _ = DIRECTIONS[direction]
    sample = validate_batch(sample).to(device)

    with torch.no_grad():
        translated = generators[forward_name](sample)
        reconstructed = generators[backward_name](translated)
        l1 = (reconstructed - sample).abs().mean().item()

    if grid_path is not None:
        grid = save_triplet_grid(sample, translated, reconstructed, grid_path)
    else:
        grid = triplet_grid(sample, translated, reconstructed)
    logger.info(f"Round trip {direction}: L1 {l1:.6g}")
    return l1, grid
