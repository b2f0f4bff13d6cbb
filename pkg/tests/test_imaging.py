import numpy as np
import pytest
import torch
from PIL import Image

from facegan.errors import CropError, FrameStoreError
from facegan.imaging import (
    CropSpec,
    FrameDataset,
    crop_and_scale,
    frame_loader,
    frame_name,
    from_normalized,
    load_frame_store,
    sample_unpaired_batch,
    to_normalized,
    triplet_grid,
    validate_batch,
)

from .conftest import write_random_frames


def test_frame_store_sorted_by_name(tmp_path):
    write_random_frames(tmp_path, 3, names=['c.png', 'a.png', 'b.png'])
    store = load_frame_store(tmp_path, 'X')
    assert store.names == ['a.png', 'b.png', 'c.png']
    assert len(store) == 3


def test_frame_store_empty_directory(tmp_path):
    with pytest.raises(FrameStoreError, match='no frames'):
        load_frame_store(tmp_path, 'X')


def test_frame_store_names_corrupt_file(tmp_path):
    write_random_frames(tmp_path, 1, names=['good.png'])
    (tmp_path / 'broken.png').write_bytes(b'not an image at all')
    with pytest.raises(FrameStoreError, match='corrupt frame broken.png'):
        load_frame_store(tmp_path, 'X')


def test_frame_store_missing_directory(tmp_path):
    with pytest.raises(FrameStoreError, match='not found'):
        load_frame_store(tmp_path / 'nope', 'Y')


def test_crop_and_scale_to_square():
    frame = Image.new('RGB', (640, 480), (10, 20, 30))
    out = crop_and_scale(frame, CropSpec(100, 50, 256, 256, 128))
    assert out.size == (128, 128)
    assert out.mode == 'RGB'


def test_identity_crop_is_bitwise_identical():
    pixels = np.random.default_rng(0).integers(0, 256, size=(128, 128, 3), dtype=np.uint8)
    frame = Image.fromarray(pixels)
    out = crop_and_scale(frame, CropSpec(0, 0, 128, 128, 128))
    assert np.array_equal(np.asarray(out), pixels)


def test_uniform_gray_survives_resampling():
    frame = Image.new('RGB', (256, 256), (97, 97, 97))
    out = np.asarray(crop_and_scale(frame, CropSpec(13, 40, 200, 150, 128)))
    assert out.shape == (128, 128, 3)
    assert (out == 97).all()


def test_crop_out_of_bounds():
    frame = Image.new('RGB', (100, 100))
    with pytest.raises(CropError, match='crop out of bounds'):
        crop_and_scale(frame, CropSpec(50, 50, 80, 80, 32))
    with pytest.raises(CropError, match='crop out of bounds'):
        CropSpec(-1, 0, 10, 10)


def test_crop_parse():
    assert CropSpec.parse('1, 2,30,40', 64) == CropSpec(1, 2, 30, 40, 64)
    with pytest.raises(CropError):
        CropSpec.parse('1,2,3')


def test_normalization_endpoints():
    pixels = np.array([[[0, 255, 128]]], dtype=np.uint8)
    values = to_normalized(pixels)
    assert values.shape == (3, 1, 1)
    assert values[0, 0, 0].item() == -1.0
    assert values[1, 0, 0].item() == 1.0
    assert values[2, 0, 0].item() == pytest.approx(128 / 127.5 - 1, abs=1e-7)

    back = from_normalized(torch.tensor([-1.0, 1.0, -3.0, 7.0]).view(1, 4, 1).expand(3, 4, 1))
    assert back[:, 0, 0].tolist() == [0, 255, 0, 255]


def test_normalization_round_trip_every_value():
    values = np.arange(256, dtype=np.uint8)
    image = np.stack([values, values[::-1], values], axis=-1).reshape(16, 16, 3)
    assert np.array_equal(from_normalized(to_normalized(image)), image)


def test_validate_batch_rejects_out_of_range():
    with pytest.raises(FrameStoreError):
        validate_batch(torch.full((1, 3, 4, 4), 1.5))
    with pytest.raises(FrameStoreError):
        validate_batch(torch.zeros(1, 3, 4, 4), image_size=8)


def test_single_frame_stores_give_the_only_pair(tmp_path):
    store_x = load_frame_store(write_random_frames(tmp_path / 'x', 1, seed=5), 'X')
    store_y = load_frame_store(write_random_frames(tmp_path / 'y', 1, seed=6), 'Y')
    x, y = sample_unpaired_batch(store_x, store_y, 1, torch.Generator().manual_seed(0), image_size=16)
    assert torch.equal(x[0], FrameDataset(store_x, side=16)[0])
    assert torch.equal(y[0], FrameDataset(store_y, side=16)[0])


def test_sampling_is_determined_by_rng_state(tmp_path):
    store_x = load_frame_store(write_random_frames(tmp_path / 'x', 5, seed=1), 'X')
    store_y = load_frame_store(write_random_frames(tmp_path / 'y', 4, seed=2), 'Y')
    first = sample_unpaired_batch(store_x, store_y, 3, torch.Generator().manual_seed(42), image_size=16)
    second = sample_unpaired_batch(store_x, store_y, 3, torch.Generator().manual_seed(42), image_size=16)
    assert torch.equal(first[0], second[0])
    assert torch.equal(first[1], second[1])


def test_restored_rng_state_replays_the_same_batches(tmp_path):
    store_x = load_frame_store(write_random_frames(tmp_path / 'x', 6, seed=1), 'X')
    store_y = load_frame_store(write_random_frames(tmp_path / 'y', 5, seed=2), 'Y')
    rng = torch.Generator().manual_seed(7)
    sample_unpaired_batch(store_x, store_y, 2, rng, image_size=16)
    saved = rng.get_state()
    expected = sample_unpaired_batch(store_x, store_y, 2, rng, image_size=16)
    rng.set_state(saved)
    replayed = sample_unpaired_batch(store_x, store_y, 2, rng, image_size=16)
    assert torch.equal(expected[0], replayed[0])
    assert torch.equal(expected[1], replayed[1])


def test_sampled_batch_shapes(tmp_path):
    store_x = load_frame_store(write_random_frames(tmp_path / 'x', 100, size=8, seed=1), 'X')
    store_y = load_frame_store(write_random_frames(tmp_path / 'y', 7, size=8, seed=2), 'Y')
    x, y = sample_unpaired_batch(store_x, store_y, 4, torch.Generator().manual_seed(0))
    assert x.shape == (4, 3, 128, 128)
    assert y.shape == (4, 3, 128, 128)
    assert x.min() >= -1 and x.max() <= 1


def test_loader_batches_follow_filename_order(tmp_path):
    store = load_frame_store(write_random_frames(tmp_path, 5, seed=3), 'X')
    dataset = FrameDataset(store, side=16)
    batches = list(frame_loader(dataset, batch_size=2))
    assert [len(batch) for batch in batches] == [2, 2, 1]
    assert torch.equal(torch.cat(batches), torch.stack([dataset[i] for i in range(5)]))


def test_dataset_decodes_frames_on_every_access(tmp_path):
    root = write_random_frames(tmp_path, 2, seed=3)
    dataset = FrameDataset(load_frame_store(root, 'X'), side=16)
    before = dataset[0]
    Image.new('RGB', (16, 16), (255, 255, 255)).save(root / 'img_000.png')
    after = dataset[0]
    assert not torch.equal(before, after)
    assert torch.equal(after, torch.ones(3, 16, 16))


def test_dataset_applies_crop_and_scale(tmp_path):
    store = load_frame_store(write_random_frames(tmp_path, 1, size=32, seed=4), 'X')
    crop = CropSpec(8, 4, 16, 16)
    expected = to_normalized(crop_and_scale(store.read(0), crop.with_side(16)))
    assert torch.equal(FrameDataset(store, crop, side=16)[0], expected)


def test_check_crop_names_the_frame(tmp_path):
    root = write_random_frames(tmp_path, 1, size=32, seed=4)
    write_random_frames(tmp_path, 1, size=8, seed=5, names=['img_001.png'])
    store = load_frame_store(root, 'X')
    store.check_crop(None)
    with pytest.raises(CropError, match='img_001.png'):
        store.check_crop(CropSpec(0, 0, 16, 16))


def test_frame_names_are_zero_padded():
    assert frame_name(1) == 'frame_000001.png'
    assert frame_name(123456) == 'frame_123456.png'


def test_triplet_grid_is_three_frames_wide():
    batch = torch.zeros(2, 3, 16, 16)
    grid = triplet_grid(batch, batch, batch)
    assert grid.shape == (3, 32, 48)
