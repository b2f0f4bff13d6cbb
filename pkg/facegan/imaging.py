"""
Frame directories, cropping/scaling and unpaired batch sampling
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch.utils.data import DataLoader, Dataset, RandomSampler
from torchvision.utils import make_grid, save_image

from .errors import CropError, FrameStoreError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {'.png', '.jpg', '.jpeg'}

# Rank-4 float tensor (N, 3, H, W) with every element in [-1, 1]
ImageBatch = torch.Tensor


@dataclass(frozen=True)
class CropSpec:
    """Crop rectangle in source pixels plus the square output side"""
    left: int
    top: int
    width: int
    height: int
    output_side: int = 128

    def __post_init__(self):
        if self.output_side <= 0:
            raise CropError(f"output side must be > 0, got {self.output_side}")
        if self.width <= 0 or self.height <= 0:
            raise CropError(f"crop size must be positive, got {self.width}x{self.height}")
        if self.left < 0 or self.top < 0:
            raise CropError("crop out of bounds")

    @classmethod
    def parse(cls, text: str, output_side: int = 128) -> 'CropSpec':
        """Parse the `l,t,w,h` command-line form"""
        parts = [p.strip() for p in text.split(',')]
        if len(parts) != 4:
            raise CropError(f"crop must be l,t,w,h, got '{text}'")
        try:
            left, top, width, height = (int(p) for p in parts)
        except ValueError:
            raise CropError(f"crop must be four integers, got '{text}'") from None
        return cls(left, top, width, height, output_side)

    def with_side(self, output_side: int) -> 'CropSpec':
        return CropSpec(self.left, self.top, self.width, self.height, output_side)

    def fits(self, frame_width: int, frame_height: int) -> bool:
        return (self.left + self.width <= frame_width
                and self.top + self.height <= frame_height)


@dataclass
class FrameStore:
    """Ordered frames of one domain; filename order is temporal order"""
    root: Path
    frames: Tuple[Path, ...]
    domain: str

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def names(self) -> List[str]:
        return [frame.name for frame in self.frames]

    def read(self, index: int) -> Image.Image:
        """Decode one frame as 8-bit RGB"""
        path = self.frames[index]
        try:
            with Image.open(path) as image:
                return image.convert('RGB')
        except (UnidentifiedImageError, OSError) as e:
            raise FrameStoreError(f"corrupt frame {path.name}") from e

    def check_crop(self, crop: Optional[CropSpec]):
        """Raise CropError naming the first frame the crop does not fit"""
        if crop is None:
            return
        for path in self.frames:
            # Header only; pixels are not decoded
            with Image.open(path) as image:
                width, height = image.size
            if not crop.fits(width, height):
                raise CropError(f"crop out of bounds for {path.name}")


class FrameDataset(Dataset):
    """A frame store as (3, side, side) tensors in [-1, 1]; frames are decoded on access"""

    def __init__(self, store: FrameStore, crop: Optional[CropSpec] = None, side: int = 128):
        self.store = store
        self.crop = crop
        self.side = side

    def __len__(self) -> int:
        return len(self.store)

    def __getitem__(self, index: int) -> torch.Tensor:
        frame = self.store.read(index)
        spec = self.crop.with_side(self.side) if self.crop else full_frame_crop(frame, self.side)
        return to_normalized(crop_and_scale(frame, spec))


def load_frame_store(path: Union[str, Path], domain_tag: str) -> FrameStore:
    """Collect and verify every image file of a domain directory"""
    root = Path(path)
    if not root.is_dir():
        raise FrameStoreError(f"frame directory not found: {root}")

    frames = tuple(sorted(
        (p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    ))
    if not frames:
        raise FrameStoreError("no frames")

    # Every frame is decoded here; a corrupt file fails the load
    for frame in frames:
        try:
            with Image.open(frame) as image:
                image.load()
        except (UnidentifiedImageError, OSError) as e:
            raise FrameStoreError(f"corrupt frame {frame.name}") from e

    logger.info(f"Loaded {len(frames)} frames for domain {domain_tag} from {root}")
    return FrameStore(root=root, frames=frames, domain=domain_tag)


def full_frame_crop(frame: Image.Image, side: int) -> CropSpec:
    """Crop covering the whole frame"""
    return CropSpec(0, 0, frame.width, frame.height, side)


def crop_and_scale(frame: Image.Image, spec: CropSpec) -> Image.Image:
    """Cut the crop rectangle and resample it bilinearly to a square"""
    if not spec.fits(frame.width, frame.height):
        raise CropError("crop out of bounds")

    frame = frame.convert('RGB')
    box = (spec.left, spec.top, spec.left + spec.width, spec.top + spec.height)
    region = frame.crop(box)
    if region.size == (spec.output_side, spec.output_side):
        return region
    return region.resize((spec.output_side, spec.output_side), Image.Resampling.BILINEAR)


def to_normalized(image: Union[Image.Image, np.ndarray]) -> torch.Tensor:
    """8-bit (H, W, 3) image to a (3, H, W) float slice in [-1, 1]"""
    array = np.asarray(image, dtype=np.uint8)
    tensor = torch.from_numpy(array.copy()).permute(2, 0, 1).to(torch.float32)
    return tensor / 127.5 - 1.0


def from_normalized(batch: torch.Tensor) -> np.ndarray:
    """Inverse of to_normalized for (3, H, W) or (N, 3, H, W); returns uint8 (…, H, W, 3)"""
    scaled = (batch.detach().to(torch.float32).clamp(-1.0, 1.0) + 1.0) * 127.5
    # Values are non-negative here, so floor(v + 0.5) rounds half away from zero
    rounded = torch.floor(scaled + 0.5).clamp(0, 255).to(torch.uint8)
    return rounded.movedim(-3, -1).cpu().numpy()


def validate_batch(batch: torch.Tensor, image_size: Optional[int] = None) -> torch.Tensor:
    """Assert the ImageBatch invariants"""
    if batch.dim() != 4 or batch.shape[1] != 3:
        raise FrameStoreError(f"expected (N, 3, H, W) batch, got {tuple(batch.shape)}")
    if image_size is not None and (batch.shape[2] != image_size or batch.shape[3] != image_size):
        raise FrameStoreError(
            f"batch is {batch.shape[2]}x{batch.shape[3]}, expected {image_size}x{image_size}"
        )
    if batch.numel() and (batch.min() < -1.0 or batch.max() > 1.0):
        raise FrameStoreError("batch values outside [-1, 1]")
    return batch


def frame_loader(dataset: FrameDataset, batch_size: int, num_workers: int = 0) -> DataLoader:
    """Batches in filename order"""
    return DataLoader(dataset, batch_size=batch_size, shuffle=False, num_workers=num_workers)


def draw_batch(dataset: FrameDataset, n: int, rng_state: torch.Generator) -> ImageBatch:
    """n frames drawn uniformly with replacement; every random draw comes from rng_state"""
    sampler = RandomSampler(dataset, replacement=True, num_samples=n, generator=rng_state)
    # The loader's own seed draw also uses rng_state, leaving the global RNG untouched
    loader = DataLoader(dataset, batch_size=n, sampler=sampler, generator=rng_state)
    return validate_batch(next(iter(loader)), dataset.side)


def sample_unpaired_batch(
    store_x: FrameStore,
    store_y: FrameStore,
    n: int,
    rng_state: torch.Generator,
    image_size: int = 128,
    crop_x: Optional[CropSpec] = None,
    crop_y: Optional[CropSpec] = None,
) -> Tuple[ImageBatch, ImageBatch]:
    """Draw n frames uniformly with replacement from each domain

    Indices come from rng_state alone (x batch first, then y), so a saved
    and restored rng_state replays the same sequence.
    """
    if len(store_x) == 0 or len(store_y) == 0:
        raise FrameStoreError("no frames")

    x_batch = draw_batch(FrameDataset(store_x, crop_x, image_size), n, rng_state)
    y_batch = draw_batch(FrameDataset(store_y, crop_y, image_size), n, rng_state)
    return x_batch, y_batch


def frame_name(index: int) -> str:
    """Output name for the 1-based frame index"""
    return f"frame_{index:06d}.png"


def write_frames(images: Sequence[np.ndarray], output_dir: Union[str, Path], start: int = 1) -> List[str]:
    """Write uint8 (H, W, 3) arrays as sequentially numbered PNGs"""
    output_dir = Path(output_dir)
    names = []
    for offset, array in enumerate(images):
        name = frame_name(start + offset)
        Image.fromarray(np.ascontiguousarray(array)).save(output_dir / name, format='PNG')
        names.append(name)
    return names


def triplet_grid(originals: torch.Tensor, translated: torch.Tensor, reconstructed: torch.Tensor) -> torch.Tensor:
    """One row per sample: x | G(x) | F(G(x)), no padding, values mapped to [0, 1]"""
    rows = torch.stack([originals, translated, reconstructed], dim=1).flatten(0, 1)
    grid = make_grid(rows.detach().float().cpu(), nrow=3, padding=0)
    return ((grid + 1.0) / 2.0).clamp(0.0, 1.0)


def save_triplet_grid(originals: torch.Tensor, translated: torch.Tensor, reconstructed: torch.Tensor,
                      path: Union[str, Path]) -> torch.Tensor:
    grid = triplet_grid(originals, translated, reconstructed)
    save_image(grid, str(path))
    return grid
