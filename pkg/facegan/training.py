"""
Alternating discriminator/generator training, checkpoints and metric logging
"""
import hashlib
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import torch
from torch import nn
from torch.optim import Adam
from torch.optim.lr_scheduler import LambdaLR

from .config import DIRECTIONS, TrainConfig, config_from_dict
from .errors import CheckpointError, ConfigError, FaceganError, NonFiniteLossError
from .imaging import load_frame_store, sample_unpaired_batch, save_triplet_grid
from .losses import (
    LossReport,
    adversarial_loss,
    cycle_terms,
    full_objective,
    lsgan_d_loss,
)
from .netspec import build_discriminator, build_generator
from .utils import count_parameters

logger = logging.getLogger(__name__)
metrics_logger = logging.getLogger('facegan.metrics')

CHECKPOINT_FORMAT = 'facegan-checkpoint'
CHECKPOINT_VERSION = 1
GENERATOR_TERMS = frozenset({'adv_G', 'adv_F', 'cyc_G', 'cyc_F'})


def derive_seed(seed: int, name: str) -> int:
    """Independent, reproducible seed per network/stream"""
    digest = hashlib.sha256(f"{seed}:{name}".encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little') & 0x7FFF_FFFF_FFFF_FFFF


def checkpoint_name(step: int) -> str:
    return f"ckpt_step{step:06d}.bin"


@dataclass
class TrainState:
    """Every network, optimizer and scheduler of a run plus its position"""
    config: TrainConfig
    networks: Dict[str, nn.Module]
    optimizers: Dict[str, Adam]
    schedulers: Dict[str, LambdaLR]
    step: int
    rng: torch.Generator
    config_hash: str

    @property
    def device(self) -> torch.device:
        return torch.device(self.config.device)

    @property
    def gen_g(self) -> nn.Module:
        return self.networks['G']

    @property
    def gen_f(self) -> nn.Module:
        return self.networks['F']

    def discriminator_names(self, direction: str) -> List[str]:
        return [name for name in self.networks if name.startswith(f"D_{direction}")]

    def discriminators(self, direction: str) -> List[nn.Module]:
        return [self.networks[name] for name in self.discriminator_names(direction)]

    def all_finite(self) -> bool:
        return all(torch.isfinite(p).all() for net in self.networks.values() for p in net.parameters())


def _lr_lambda(config: TrainConfig):
    decay_start = config.optimizer.decay_start
    total = config.total_steps

    def factor(step: int) -> float:
        if decay_start is None or step < decay_start or total <= decay_start:
            return 1.0
        return max(0.0, 1.0 - (step - decay_start) / (total - decay_start))

    return factor


def init_train_state(config: TrainConfig) -> TrainState:
    """Fresh networks from the config seed, one Adam per network"""
    device = torch.device(config.device)
    networks: Dict[str, nn.Module] = {
        'G': build_generator(config.generator, derive_seed(config.seed, 'G')),
        'F': build_generator(config.generator, derive_seed(config.seed, 'F')),
    }
    for direction in DIRECTIONS:
        for index, spec in enumerate(config.discriminator_specs(direction), 1):
            name = f"D_{direction}{index}"
            networks[name] = build_discriminator(
                spec, derive_seed(config.seed, name), init=config.discriminator_init
            )

    opt = config.optimizer
    optimizers, schedulers = {}, {}
    for name, net in networks.items():
        net.to(device)
        net.train()
        logger.debug(f"{name}: {count_parameters(net)} parameters")
        optimizers[name] = Adam(net.parameters(), lr=opt.lr, betas=(opt.beta1, opt.beta2))
        schedulers[name] = LambdaLR(optimizers[name], _lr_lambda(config))

    rng = torch.Generator()
    rng.manual_seed(derive_seed(config.seed, 'sampling'))
    return TrainState(config, networks, optimizers, schedulers, 0, rng, config.hash)


def _check_batches(config: TrainConfig, x: torch.Tensor, y: torch.Tensor):
    expected = (config.batch_size, 3, config.image_size, config.image_size)
    for name, batch in (('x', x), ('y', y)):
        if tuple(batch.shape) != expected:
            raise ConfigError(f"{name} batch has shape {tuple(batch.shape)}, config expects {expected}")


def _scalar(value: Union[torch.Tensor, float]) -> float:
    if isinstance(value, torch.Tensor):
        return value.detach().item()
    return float(value)


def _update_discriminators(state: TrainState, real: Dict[str, torch.Tensor],
                           fake: Dict[str, torch.Tensor]) -> Dict[str, List[float]]:
    config = state.config
    w = config.losses
    values: Dict[str, List[float]] = {}
    objective = 0.0
    for direction in DIRECTIONS:
        losses = [lsgan_d_loss(disc, real[direction], fake[direction], w)
                  for disc in state.discriminators(direction)]
        values[direction] = [loss.item() for loss in losses]
        if config.average_d_losses:
            objective = objective + sum(losses) / len(losses)
        else:
            objective = objective + sum(losses)

    if not all(math.isfinite(v) for direction_values in values.values() for v in direction_values):
        raise NonFiniteLossError(state.step + 1)

    names = state.discriminator_names('Y') + state.discriminator_names('X')
    for name in names:
        state.optimizers[name].zero_grad()
    objective.backward()
    for name in names:
        state.optimizers[name].step()
    return values


def train_step(
    state: TrainState,
    batches: Tuple[torch.Tensor, torch.Tensor],
    terms: Optional[Iterable[str]] = None,
) -> Tuple[TrainState, LossReport]:
    """One discriminator phase then one joint generator phase

    terms restricts which generator-objective components are optimized
    (all by default); the report always carries every component.
    """
    config = state.config
    w = config.losses
    terms = GENERATOR_TERMS if terms is None else frozenset(terms)
    unknown = terms - GENERATOR_TERMS
    if unknown:
        raise ConfigError(f"unknown objective terms: {', '.join(sorted(unknown))}")

    x, y = batches
    _check_batches(config, x, y)
    x = x.to(state.device)
    y = y.to(state.device)
    step = state.step + 1
    gen_g, gen_f = state.gen_g, state.gen_f

    # (1) discriminators on severed fakes; D_Y judges G(x), D_X judges F(y)
    with torch.no_grad():
        fake = {'Y': gen_g(x), 'X': gen_f(y)}
    real = {'Y': y, 'X': x}
    for _ in range(config.d_updates_per_step):
        d_values = _update_discriminators(state, real, fake)

    # (2) both generators jointly; discriminators are constants, and so is the opposite
    # generator inside each cycle term unless cycle_mode is joint
    fake_y = gen_g(x)
    fake_x = gen_f(y)
    components = {
        'adv_G': adversarial_loss(state.discriminators('Y'), fake_y, w),
        'adv_F': adversarial_loss(state.discriminators('X'), fake_x, w),
    }
    components['cyc_G'], components['cyc_F'] = cycle_terms(gen_g, gen_f, x, y, w.cycle_norm, w.cycle_mode)
    report_g, report_f = full_objective(components, w, step)
    total_g, total_f = full_objective({k: v for k, v in components.items() if k in terms}, w, step)

    state.optimizers['G'].zero_grad()
    state.optimizers['F'].zero_grad()
    objective = total_g + total_f
    if isinstance(objective, torch.Tensor) and objective.requires_grad:
        objective.backward()
    state.optimizers['G'].step()
    state.optimizers['F'].step()

    for scheduler in state.schedulers.values():
        scheduler.step()

    if not state.all_finite():
        logger.error(f"Parameters became non-finite at step {step}")
        raise NonFiniteLossError(step)

    state.step = step
    report = LossReport(
        step=step,
        adv_G=components['adv_G'].item(),
        adv_F=components['adv_F'].item(),
        d_Y=d_values['Y'],
        d_X=d_values['X'],
        cyc_G=components['cyc_G'].item(),
        cyc_F=components['cyc_F'].item(),
        total_G=_scalar(report_g),
        total_F=_scalar(report_f),
    )
    if not report.is_finite():
        raise NonFiniteLossError(step)
    return state, report


def save_checkpoint(state: TrainState, path: Union[str, Path]) -> Path:
    """Write the whole state atomically (temp file, then rename)"""
    path = Path(path)
    payload = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'step': state.step,
        'config': state.config.to_dict(),
        'config_hash': state.config_hash,
        'networks': {name: net.state_dict() for name, net in state.networks.items()},
        'optimizers': {name: opt.state_dict() for name, opt in state.optimizers.items()},
        'schedulers': {name: sched.state_dict() for name, sched in state.schedulers.items()},
        'rng_state': state.rng.get_state(),
    }
    tmp = path.with_name(path.name + '.tmp')
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except (OSError, RuntimeError) as e:
        # A full disk surfaces as RuntimeError from the torch serializer
        tmp.unlink(missing_ok=True)
        logger.error(f"Failed to write checkpoint {path}: {e}")
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint {path} at step {state.step}")
    return path


def read_checkpoint(path: Union[str, Path]) -> Dict:
    """Raw checkpoint payload after format/version checks"""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location='cpu', weights_only=True)
    except Exception as e:
        logger.error(f"Cannot read checkpoint {path}: {e}")
        raise CheckpointError("checkpoint corrupt") from e
    if not isinstance(payload, dict) or payload.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError("checkpoint corrupt")
    if payload.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError("checkpoint version unsupported")
    return payload


def load_checkpoint(path: Union[str, Path], config: Optional[TrainConfig] = None) -> TrainState:
    """Rebuild a TrainState; with a config, the checkpoint must match its structure"""
    payload = read_checkpoint(path)
    try:
        stored = config_from_dict(payload['config'])
    except (FaceganError, KeyError) as e:
        raise CheckpointError("checkpoint corrupt") from e

    if config is None:
        config = stored
    else:
        if stored.network_names() != config.network_names():
            raise CheckpointError(
                f"checkpoint structure mismatch: checkpoint holds {', '.join(stored.network_names())}, "
                f"config expects {', '.join(config.network_names())}"
            )
        if payload.get('config_hash') != config.hash:
            logger.warning(
                f"Config hash {config.hash[:12]} differs from checkpoint hash "
                f"{str(payload.get('config_hash'))[:12]}; continuing with the given config"
            )

    state = init_train_state(config)
    try:
        for name, net in state.networks.items():
            net.load_state_dict(payload['networks'][name])
            state.optimizers[name].load_state_dict(payload['optimizers'][name])
            state.schedulers[name].load_state_dict(payload['schedulers'][name])
        state.rng.set_state(payload['rng_state'])
        state.step = int(payload['step'])
    except (KeyError, RuntimeError, ValueError) as e:
        raise CheckpointError(f"checkpoint structure mismatch: {e}") from e
    state.config_hash = payload.get('config_hash', config.hash)
    logger.info(f"Loaded checkpoint {path} at step {state.step}")
    return state


def _attach_run_logs(output_dir: Path) -> List[Tuple[logging.Logger, logging.Handler]]:
    """train.log gets bare LossReport lines, run.log mirrors diagnostics"""
    metrics_handler = logging.FileHandler(output_dir / 'train.log', encoding='utf-8')
    metrics_handler.setFormatter(logging.Formatter('%(message)s'))
    metrics_logger.setLevel(logging.INFO)
    metrics_logger.propagate = False
    metrics_logger.addHandler(metrics_handler)

    run_handler = logging.FileHandler(output_dir / 'run.log', encoding='utf-8')
    run_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    package_logger = logging.getLogger('facegan')
    package_logger.addHandler(run_handler)
    return [(metrics_logger, metrics_handler), (package_logger, run_handler)]


def train_loop(config: TrainConfig, resume: Optional[Union[str, Path]] = None) -> TrainState:
    """Run to config.total_steps, logging every step and checkpointing on the interval"""
    store_x = load_frame_store(config.data.train_x, 'X')
    store_y = load_frame_store(config.data.train_y, 'Y')
    crop_x, crop_y = config.crop('X'), config.crop('Y')
    store_x.check_crop(crop_x)
    store_y.check_crop(crop_y)

    if config.deterministic:
        torch.use_deterministic_algorithms(True)

    state = load_checkpoint(resume, config) if resume else init_train_state(config)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    handlers = _attach_run_logs(output_dir)
    logger.info(f"Training {', '.join(state.networks)} from step {state.step} to {config.total_steps}")

    try:
        while state.step < config.total_steps:
            x, y = sample_unpaired_batch(
                store_x, store_y, config.batch_size, state.rng,
                image_size=config.image_size, crop_x=crop_x, crop_y=crop_y,
            )
            state, report = train_step(state, (x, y))
            metrics_logger.info(report.as_line())

            if state.step % config.checkpoint_interval == 0 or state.step == config.total_steps:
                save_checkpoint(state, output_dir / checkpoint_name(state.step))
                with torch.no_grad():
                    gen_x = x[:1].to(state.device)
                    fake = state.gen_g(gen_x)
                    save_triplet_grid(gen_x, fake, state.gen_f(fake),
                                      output_dir / f"sample_step{state.step:06d}.png")
    finally:
        for owner, handler in handlers:
            owner.removeHandler(handler)
            handler.close()

    logger.info(f"Training finished at step {state.step}")
    return state
