"""
Experiment configuration: YAML file → validated TrainConfig
"""
import logging
import os
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml

from .errors import ConfigError, CropError, NetSpecError
from .imaging import CropSpec
from .losses import LossWeights
from .netspec import (
    ConvStackSpec,
    GeneratorSpec,
    output_map_size,
    parse_stack,
    receptive_field,
    synthesize_stack,
)
from .utils import config_hash

logger = logging.getLogger(__name__)

DIRECTIONS = ('Y', 'X')

STACK_70 = 'k4s2p1,k4s2p1,k4s2p1,k4s1p1,k4s1p1'
STACK_97 = 'k5s2p2,k7s2p3,k5s2p2,k5s1p2,k5s1p2'
STACK_42 = 'k4s2p1,k4s2p1,k4s1p1,k4s1p1,k3s1p1'

# Receptive-field configurations compared for face transfer
DISCRIMINATOR_PRESETS: Dict[str, List[str]] = {
    'single70': [STACK_70],
    '97+97': [STACK_97, STACK_97],
    '42+42': [STACK_42, STACK_42],
    '97+42': [STACK_97, STACK_42],
}

_RF_TOKEN = re.compile(r'^rf(\d+)$')

TOP_LEVEL_KEYS = {
    'image_size', 'batch_size', 'total_steps', 'seed', 'checkpoint_interval', 'output_dir',
    'device', 'deterministic', 'discriminator_init', 'average_d_losses', 'd_updates_per_step',
    'optimizer', 'losses', 'generator', 'discriminators', 'data',
}
SECTION_KEYS = {
    'optimizer': {'kind', 'lr', 'beta1', 'beta2', 'decay_start'},
    'losses': {'alpha', 'beta', 'lambda', 'gamma', 'real_label', 'fake_label', 'gen_target', 'cycle_norm',
               'cycle_mode'},
    'generator': {'downsampling', 'residual_blocks', 'base_channels', 'norm'},
    'discriminators': {'preset', 'X', 'Y', 'base_channels', 'max_channels', 'norm'},
    'data': {'train_x', 'train_y', 'crop_x', 'crop_y'},
}


def default_device() -> str:
    return os.getenv('FACEGAN_DEVICE', 'cpu')


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = 'adam'
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    decay_start: Optional[int] = None


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Stack strings (or rf<N> targets) per direction; Y judges G's outputs, X judges F's"""
    Y: Tuple[str, ...] = (STACK_97, STACK_42)
    X: Tuple[str, ...] = (STACK_97, STACK_42)
    base_channels: int = 64
    max_channels: int = 512
    norm: str = 'instance'
    preset: Optional[str] = '97+42'


@dataclass(frozen=True)
class DataConfig:
    train_x: str = 'trainX'
    train_y: str = 'trainY'
    crop_x: Optional[Tuple[int, int, int, int]] = None
    crop_y: Optional[Tuple[int, int, int, int]] = None


@dataclass(frozen=True)
class TrainConfig:
    image_size: int = 128
    batch_size: int = 1
    total_steps: int = 200000
    seed: int = 0
    checkpoint_interval: int = 1000
    output_dir: str = 'runs/default'
    device: str = field(default_factory=default_device)
    deterministic: bool = False
    discriminator_init: str = 'normal'
    average_d_losses: bool = False
    d_updates_per_step: int = 1
    optimizer: OptimizerConfig = OptimizerConfig()
    losses: LossWeights = LossWeights()
    generator: GeneratorSpec = GeneratorSpec()
    discriminators: DiscriminatorConfig = DiscriminatorConfig()
    data: DataConfig = DataConfig()

    def __post_init__(self):
        _require_int('image_size', self.image_size, 1)
        _require_int('batch_size', self.batch_size, 1)
        _require_int('total_steps', self.total_steps, 1)
        _require_int('seed', self.seed, 0)
        _require_int('checkpoint_interval', self.checkpoint_interval, 1)
        _require_int('d_updates_per_step', self.d_updates_per_step, 1)
        if self.discriminator_init not in ('normal', 'constant'):
            raise ConfigError(f"discriminator_init must be 'normal' or 'constant', got '{self.discriminator_init}'")
        if self.optimizer.kind != 'adam':
            raise ConfigError(f"optimizer.kind must be 'adam', got '{self.optimizer.kind}'")
        if not self.optimizer.lr > 0:
            raise ConfigError(f"optimizer.lr must be > 0, got {self.optimizer.lr}")
        for name in ('beta1', 'beta2'):
            value = getattr(self.optimizer, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"optimizer.{name} must be in [0, 1), got {value}")
        if self.optimizer.decay_start is not None:
            _require_int('optimizer.decay_start', self.optimizer.decay_start, 0)
        if self.generator.image_size != self.image_size:
            try:
                object.__setattr__(self, 'generator', replace(self.generator, image_size=self.image_size))
            except NetSpecError as e:
                raise ConfigError(f"generator: {e}") from None
        # Every stack must leave a non-empty score map
        for direction in DIRECTIONS:
            entries = getattr(self.discriminators, direction)
            if len(entries) not in (1, 2):
                raise ConfigError(f"discriminators.{direction} needs 1 or 2 stacks, got {len(entries)}")
            for stack in self.discriminator_specs(direction):
                try:
                    output_map_size(stack, self.image_size)
                except NetSpecError as e:
                    raise ConfigError(f"discriminators.{direction}: {e}") from None
        # Crop geometry; bounds against the frames are checked when data loads
        for name in ('crop_x', 'crop_y'):
            crop = getattr(self.data, name)
            if crop is not None:
                self.crop(name[-1].upper())

    def discriminator_specs(self, direction: str) -> List[ConvStackSpec]:
        """Resolved stacks for direction 'Y' (D_Y1, D_Y2) or 'X' (D_X1, D_X2)"""
        disc = self.discriminators
        specs = []
        for entry in getattr(disc, direction):
            try:
                specs.append(ConvStackSpec.patch_discriminator(
                    resolve_stack(entry), base_channels=disc.base_channels,
                    max_channels=disc.max_channels, norm=disc.norm,
                ))
            except NetSpecError as e:
                raise ConfigError(f"discriminators.{direction}: {e}") from None
        return specs

    def network_names(self) -> List[str]:
        names = ['G', 'F']
        for direction in DIRECTIONS:
            names += [f"D_{direction}{i + 1}" for i in range(len(getattr(self.discriminators, direction)))]
        return names

    def crop(self, domain: str) -> Optional[CropSpec]:
        values = self.data.crop_x if domain == 'X' else self.data.crop_y
        if values is None:
            return None
        try:
            return CropSpec(*values, output_side=self.image_size)
        except (CropError, TypeError) as e:
            raise ConfigError(f"data.crop_{domain.lower()}: {e}") from None

    def to_dict(self) -> Dict[str, Any]:
        """Plain, YAML/JSON-safe form; the inverse of config_from_dict"""
        data = asdict(self)
        data['losses']['lambda'] = data['losses'].pop('lam')
        data['generator'].pop('image_size')
        for direction in DIRECTIONS:
            data['discriminators'][direction] = list(data['discriminators'][direction])
        for name in ('crop_x', 'crop_y'):
            if data['data'][name] is not None:
                data['data'][name] = list(data['data'][name])
        return data

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    @property
    def discriminator_counts(self) -> Tuple[int, int]:
        return len(self.discriminators.Y), len(self.discriminators.X)


def _require_int(name: str, value: Any, minimum: int):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be ≥ {minimum}, got {value}")


def resolve_stack(entry: str):
    """Stack string, or rf<N> synthesized to an exact receptive field"""
    match = _RF_TOKEN.match(str(entry).strip())
    if match:
        return synthesize_stack(int(match.group(1)))
    return parse_stack(str(entry))


def _key_lines(node: Optional[yaml.Node], prefix: Tuple[str, ...] = ()) -> Dict[Tuple[str, ...], int]:
    """Map every mapping key path to its 1-based line"""
    lines: Dict[Tuple[str, ...], int] = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = prefix + (str(key_node.value),)
            lines[path] = key_node.start_mark.line + 1
            lines.update(_key_lines(value_node, path))
    return lines


def _where(lines: Dict[Tuple[str, ...], int], *path: str) -> str:
    line = lines.get(tuple(path))
    return f" (line {line})" if line else ""


def _check_keys(data: Dict[str, Any], lines: Dict[Tuple[str, ...], int]):
    for key in data:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(f"unknown key '{key}'{_where(lines, key)}")
    for section, allowed in SECTION_KEYS.items():
        value = data.get(section)
        if value is None:
            continue
        if section == 'discriminators' and isinstance(value, str):
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"'{section}' must be a mapping{_where(lines, section)}")
        for key in value:
            if key not in allowed:
                raise ConfigError(f"unknown key '{section}.{key}'{_where(lines, section, str(key))}")


def _crop_tuple(value: Any, name: str) -> Optional[Tuple[int, int, int, int]]:
    if value is None:
        return None
    if isinstance(value, str):
        value = [part.strip() for part in value.split(',')]
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ConfigError(f"data.{name} must be [left, top, width, height]")
    try:
        return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"data.{name} must hold integers") from None


def _build_discriminators(value: Union[None, str, Dict[str, Any]]) -> DiscriminatorConfig:
    if value is None:
        return DiscriminatorConfig()
    if isinstance(value, str):
        value = {'preset': value}
    settings = dict(value)
    preset = settings.pop('preset', None)
    # Explicit X/Y lists win over the preset's stacks
    if preset is not None:
        if preset not in DISCRIMINATOR_PRESETS:
            raise ConfigError(
                f"unknown discriminator preset '{preset}' (choose from {', '.join(DISCRIMINATOR_PRESETS)})"
            )
        stacks = DISCRIMINATOR_PRESETS[preset]
        settings.setdefault('Y', stacks)
        settings.setdefault('X', stacks)
    for direction in DIRECTIONS:
        entries = settings.get(direction)
        if entries is None:
            raise ConfigError(f"discriminators.{direction} is required without a preset")
        if isinstance(entries, str):
            entries = [entries]
        settings[direction] = tuple(str(entry) for entry in entries)
    return DiscriminatorConfig(preset=preset, **settings)


def config_from_dict(data: Dict[str, Any], lines: Optional[Dict[Tuple[str, ...], int]] = None) -> TrainConfig:
    """Validate a raw mapping and build the TrainConfig"""
    lines = lines or {}
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values")
    _check_keys(data, lines)

    # Scalars at the top level, dataclasses per section
    top = {key: value for key, value in data.items() if key not in SECTION_KEYS}
    image_size = top.get('image_size', TrainConfig.image_size)
    try:
        optimizer = OptimizerConfig(**(data.get('optimizer') or {}))
        # `lambda` is a keyword
        loss_values = dict(data.get('losses') or {})
        if 'lambda' in loss_values:
            loss_values['lam'] = loss_values.pop('lambda')
        losses = LossWeights(**loss_values)
        generator = GeneratorSpec(image_size=image_size, **(data.get('generator') or {}))
        discriminators = _build_discriminators(data.get('discriminators'))
        data_section = dict(data.get('data') or {})
        for name in ('crop_x', 'crop_y'):
            if name in data_section:
                data_section[name] = _crop_tuple(data_section[name], name)
        data_config = DataConfig(**data_section)
        return TrainConfig(
            optimizer=optimizer, losses=losses, generator=generator,
            discriminators=discriminators, data=data_config, **top,
        )
    except NetSpecError as e:
        raise ConfigError(str(e)) from None
    except TypeError as e:
        raise ConfigError(f"invalid config value: {e}") from None


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply `dotted.key=value` overrides; values are parsed as YAML scalars"""
    for override in overrides:
        if '=' not in override:
            raise ConfigError(f"override must be key=value, got '{override}'")
        key, raw = override.split('=', 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        path = key.strip().split('.')
        target = data
        for part in path[:-1]:
            existing = target.get(part)
            if isinstance(existing, str) and part == 'discriminators':
                existing = {'preset': existing}
            if existing is None:
                existing = {}
            if not isinstance(existing, dict):
                raise ConfigError(f"cannot override '{key}': '{part}' is not a section")
            target[part] = existing
            target = existing
        target[path[-1]] = value
        logger.info(f"Config override {key.strip()}={value!r}")
    return data


def load_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> TrainConfig:
    """Read, override and validate an experiment config file"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding='utf-8')
    try:
        # Node tree keeps key line numbers for error messages
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"cannot parse {path}{where}: {e.problem}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None

    # Overrides before validation so they are checked too
    data = apply_overrides(data or {}, overrides)
    config = config_from_dict(data, _key_lines(node))
    logger.info(f"Loaded config {path} (hash {config.hash[:12]})")
    return config


def describe_discriminators(config: TrainConfig) -> List[str]:
    lines = []
    for direction in DIRECTIONS:
        for index, spec in enumerate(config.discriminator_specs(direction), 1):
            lines.append(f"D_{direction}{index}: {spec.stack_string} (receptive field {receptive_field(spec)})")
    return lines
