import hashlib

import numpy as np
import pytest
import torch
from PIL import Image

from facegan.config import config_from_dict
from facegan.errors import CheckpointError, ConfigError, CropError
from facegan.imaging import CropSpec, load_frame_store
from facegan.inference import MANIFEST_NAME, TranslationJob, load_generators, round_trip_report, translate_frames
from facegan.losses import cycle_loss_g
from facegan.training import init_train_state, save_checkpoint, train_step

from .conftest import TINY_SIDE, tiny_config_dict, write_random_frames


@pytest.fixture
def checkpoint(tmp_path, frame_dirs, tiny_batches):
    config = config_from_dict(tiny_config_dict(tmp_path, discriminators=2))
    state, _ = train_step(init_train_state(config), tiny_batches)
    return save_checkpoint(state, tmp_path / 'ckpt_step000001.bin')


@pytest.fixture
def video_frames(tmp_path):
    return load_frame_store(write_random_frames(tmp_path / 'video', 10, size=24, seed=9), 'X')


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_translate_writes_ordered_frames(checkpoint, video_frames, tmp_path):
    out = tmp_path / 'out'
    count = translate_frames(TranslationJob(checkpoint, 'XtoY', video_frames, out, prefetch=3))
    assert count == 10
    expected = [f"frame_{i:06d}.png" for i in range(1, 11)]
    assert sorted(p.name for p in out.glob('frame_*.png')) == expected
    assert (out / MANIFEST_NAME).read_text(encoding='utf-8').split() == expected
    with Image.open(out / 'frame_000001.png') as image:
        assert image.size == (TINY_SIDE, TINY_SIDE)
        assert image.mode == 'RGB'


def test_translate_is_repeatable_and_prefetch_independent(checkpoint, video_frames, tmp_path):
    first, second = tmp_path / 'first', tmp_path / 'second'
    translate_frames(TranslationJob(checkpoint, 'YtoX', video_frames, first, prefetch=1))
    translate_frames(TranslationJob(checkpoint, 'YtoX', video_frames, second, prefetch=4))
    for frame in sorted(first.glob('frame_*.png')):
        assert frame.read_bytes() == (second / frame.name).read_bytes()


def test_translate_with_loader_workers_matches_in_process(checkpoint, video_frames, tmp_path):
    inline, workers = tmp_path / 'inline', tmp_path / 'workers'
    translate_frames(TranslationJob(checkpoint, 'XtoY', video_frames, inline, prefetch=4))
    translate_frames(TranslationJob(checkpoint, 'XtoY', video_frames, workers, prefetch=4, workers=2))
    assert (inline / MANIFEST_NAME).read_text(encoding='utf-8') == (workers / MANIFEST_NAME).read_text(encoding='utf-8')
    for frame in sorted(inline.glob('frame_*.png')):
        assert frame.read_bytes() == (workers / frame.name).read_bytes()


def test_translate_never_touches_checkpoint(checkpoint, video_frames, tmp_path):
    before = _digest(checkpoint)
    translate_frames(TranslationJob(checkpoint, 'XtoY', video_frames, tmp_path / 'out'))
    assert _digest(checkpoint) == before


def test_translate_with_explicit_crop(checkpoint, video_frames, tmp_path):
    job = TranslationJob(checkpoint, 'XtoY', video_frames, tmp_path / 'out', crop=CropSpec(4, 4, 16, 16))
    assert translate_frames(job) == 10


def test_crop_outside_frames_leaves_no_output(checkpoint, video_frames, tmp_path):
    job = TranslationJob(checkpoint, 'XtoY', video_frames, tmp_path / 'out', crop=CropSpec(10, 10, 20, 20))
    with pytest.raises(CropError, match='img_000.png'):
        translate_frames(job)
    assert not (tmp_path / 'out').exists()


def test_translation_job_validation(checkpoint, video_frames, tmp_path):
    with pytest.raises(ConfigError, match='direction'):
        TranslationJob(checkpoint, 'XtoZ', video_frames, tmp_path)
    with pytest.raises(ConfigError, match='prefetch'):
        TranslationJob(checkpoint, 'XtoY', video_frames, tmp_path, prefetch=0)
    with pytest.raises(ConfigError, match='workers'):
        TranslationJob(checkpoint, 'XtoY', video_frames, tmp_path, workers=-1)


def test_missing_checkpoint(video_frames, tmp_path):
    with pytest.raises(CheckpointError, match='not found'):
        translate_frames(TranslationJob(tmp_path / 'missing.bin', 'XtoY', video_frames, tmp_path / 'out'))


def test_round_trip_matches_direct_oracle(checkpoint, tmp_path):
    sample = torch.rand(2, 3, TINY_SIDE, TINY_SIDE, generator=torch.Generator().manual_seed(5)) * 2 - 1
    l1, grid = round_trip_report(checkpoint, sample, 'XtoY', grid_path=tmp_path / 'grid.png')

    _, generators = load_generators(checkpoint)
    with torch.no_grad():
        reconstructed = generators['F'](generators['G'](sample))
    diffs = (reconstructed - sample).flatten().tolist()
    oracle = sum(abs(d) for d in diffs) / len(diffs)
    assert l1 == pytest.approx(oracle, abs=1e-6)

    with torch.no_grad():
        training_value = cycle_loss_g(generators['G'], generators['F'], sample).item()
    assert l1 == pytest.approx(training_value, abs=1e-6)

    assert grid.shape[-1] == 3 * TINY_SIDE
    with Image.open(tmp_path / 'grid.png') as image:
        assert image.size == (3 * TINY_SIDE, 2 * TINY_SIDE)


def test_round_trip_other_direction(checkpoint):
    sample = torch.zeros(1, 3, TINY_SIDE, TINY_SIDE)
    l1, grid = round_trip_report(checkpoint, sample, 'YtoX')
    assert np.isfinite(l1)
    assert grid.shape == (3, TINY_SIDE, 3 * TINY_SIDE)
