"""
Declarative generator/discriminator architectures and receptive-field tooling
"""
import copy
import itertools
import logging
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import torch
from torch import nn

from .errors import NetSpecError, ProbeError

logger = logging.getLogger(__name__)

# Search space for synthesize_stack
SEARCH_KERNELS = (3, 4, 5, 7)
MAX_SEARCH_LAYERS = 7
MAX_TARGET_RF = 256

INIT_STD = 0.02
LEAKY_SLOPE = 0.2
NORM_KINDS = ('instance', 'batch', 'none')

_TOKEN_RE = re.compile(r'^k(\d+)s(\d+)(?:p(\d+))?$')

RngState = Union[int, torch.Generator]


@dataclass(frozen=True)
class ConvLayerSpec:
    kernel: int
    stride: int
    padding: int = 0

    def __post_init__(self):
        if self.kernel < 1:
            raise NetSpecError("kernel must be ≥ 1")
        if self.stride < 1:
            raise NetSpecError("stride must be ≥ 1")
        if self.padding < 0:
            raise NetSpecError("padding must be ≥ 0")

    @property
    def token(self) -> str:
        return f"k{self.kernel}s{self.stride}p{self.padding}"

    @classmethod
    def parse(cls, token: str) -> 'ConvLayerSpec':
        """Parse `k<kernel>s<stride>[p<pad>]`; padding defaults to floor(kernel/2)"""
        match = _TOKEN_RE.match(token.strip())
        if not match:
            raise NetSpecError(f"malformed layer token '{token}' (expected k<kernel>s<stride>[p<pad>])")
        kernel, stride = int(match.group(1)), int(match.group(2))
        padding = int(match.group(3)) if match.group(3) is not None else kernel // 2
        return cls(kernel, stride, padding)


def parse_stack(text: str) -> Tuple[ConvLayerSpec, ...]:
    """Parse a comma-separated stack string"""
    tokens = [t for t in (part.strip() for part in text.split(',')) if t]
    if not tokens:
        raise NetSpecError("empty stack")
    return tuple(ConvLayerSpec.parse(token) for token in tokens)


def format_stack(layers: Sequence[ConvLayerSpec]) -> str:
    return ','.join(layer.token for layer in layers)


def _layers_of(stack) -> Sequence[ConvLayerSpec]:
    layers = stack.layers if isinstance(stack, ConvStackSpec) else stack
    if not layers:
        raise NetSpecError("empty stack")
    return layers


def rf_trace(stack) -> List[Tuple[ConvLayerSpec, int, int]]:
    """Per-layer (layer, r, j) after applying each layer"""
    r, j = 1, 1
    trace = []
    for layer in _layers_of(stack):
        r = r + (layer.kernel - 1) * j
        j = j * layer.stride
        trace.append((layer, r, j))
    return trace


def receptive_field(stack) -> int:
    """Analytic receptive field of a stack (r ← r + (k−1)·j, j ← j·s)"""
    return rf_trace(stack)[-1][1]


def output_map_size(stack, input_side: int) -> int:
    """Spatial side of the output map for a square input"""
    size = input_side
    for index, layer in enumerate(_layers_of(stack)):
        size = (size + 2 * layer.padding - layer.kernel) // layer.stride + 1
        if size < 1:
            raise NetSpecError(f"stack consumes input (layer {index + 1}, input {input_side})")
    return size


def synthesize_stack(target_rf: int, max_layers: int = MAX_SEARCH_LAYERS) -> Tuple[ConvLayerSpec, ...]:
    """Smallest stack whose receptive field is exactly target_rf

    Strides are non-increasing with depth and the last layer has stride 1.
    Candidates are ranked by layer count, then total kernel size, then the
    (kernel, stride) sequence.
    """
    if not 1 <= target_rf <= MAX_TARGET_RF:
        raise NetSpecError(f"target receptive field must be in [1, {MAX_TARGET_RF}], got {target_rf}")
    if not 1 <= max_layers <= MAX_SEARCH_LAYERS:
        raise NetSpecError(f"max_layers must be in [1, {MAX_SEARCH_LAYERS}], got {max_layers}")

    # Identity
    if target_rf == 1:
        return (ConvLayerSpec(1, 1, 0),)

    for depth in range(1, max_layers + 1):
        best = None
        for kernels in itertools.product(SEARCH_KERNELS, repeat=depth):
            # Stride-2 layers first, the rest stride 1
            for n_strided in range(depth):
                strides = (2,) * n_strided + (1,) * (depth - n_strided)
                r, j = 1, 1
                for k, s in zip(kernels, strides):
                    r += (k - 1) * j
                    j *= s
                if r != target_rf:
                    continue
                key = (sum(kernels), tuple(zip(kernels, strides)))
                if best is None or key < best:
                    best = key
        if best is not None:
            layers = tuple(ConvLayerSpec(k, s, k // 2) for k, s in best[1])
            logger.debug(f"Synthesized {format_stack(layers)} for receptive field {target_rf}")
            return layers

    raise NetSpecError("unreachable receptive field")


@dataclass(frozen=True)
class ConvStackSpec:
    """Patch discriminator description: conv layers plus channels/norm/activation per layer"""
    layers: Tuple[ConvLayerSpec, ...]
    channels: Tuple[int, ...]
    norms: Tuple[str, ...]
    activations: Tuple[bool, ...]
    input_channels: int = 3
    target_rf: Optional[int] = None

    def __post_init__(self):
        if not self.layers:
            raise NetSpecError("empty stack")
        n = len(self.layers)
        if not (len(self.channels) == len(self.norms) == len(self.activations) == n):
            raise NetSpecError("per-layer channels, norms and activations must match the layer count")
        if self.channels[-1] != 1:
            raise NetSpecError("final layer must output 1 channel")
        for norm in self.norms:
            if norm not in NORM_KINDS:
                raise NetSpecError(f"unknown normalization '{norm}'")
        if self.target_rf is not None and receptive_field(self) != self.target_rf:
            raise NetSpecError(
                f"stack {format_stack(self.layers)} has receptive field {receptive_field(self)}, "
                f"declared {self.target_rf}"
            )

    @classmethod
    def patch_discriminator(
        cls,
        layers: Sequence[ConvLayerSpec],
        base_channels: int = 64,
        max_channels: int = 512,
        norm: str = 'instance',
        input_channels: int = 3,
        target_rf: Optional[int] = None,
    ) -> 'ConvStackSpec':
        """Standard patch recipe: width doubles after each stride-2 layer, capped;
        no norm on the first and last layer, leaky activations except on the score layer"""
        layers = tuple(layers)
        n = len(layers)
        channels, norms, activations = [], [], []
        strided = 0
        for index, layer in enumerate(layers):
            last = index == n - 1
            channels.append(1 if last else min(base_channels * 2 ** strided, max_channels))
            norms.append('none' if index == 0 or last else norm)
            activations.append(not last)
            if layer.stride == 2:
                strided += 1
        return cls(layers, tuple(channels), tuple(norms), tuple(activations), input_channels, target_rf)

    @classmethod
    def from_string(cls, text: str, **kwargs) -> 'ConvStackSpec':
        return cls.patch_discriminator(parse_stack(text), **kwargs)

    @property
    def stack_string(self) -> str:
        return format_stack(self.layers)


@dataclass(frozen=True)
class GeneratorSpec:
    """Residual encoder/decoder generator"""
    image_size: int = 128
    downsampling: int = 2
    residual_blocks: int = 6
    base_channels: int = 64
    norm: str = 'instance'

    def __post_init__(self):
        if self.image_size < 1 or self.downsampling < 0 or self.residual_blocks < 0 or self.base_channels < 1:
            raise NetSpecError("generator sizes must be positive")
        if self.image_size % (2 ** self.downsampling):
            raise NetSpecError(
                f"image size {self.image_size} is not divisible by 2^{self.downsampling}"
            )
        if self.norm not in ('instance', 'none'):
            raise NetSpecError(f"unknown generator normalization '{self.norm}'")


def _norm_layer(kind: str, channels: int) -> nn.Module:
    if kind == 'instance':
        return nn.InstanceNorm2d(channels)
    if kind == 'batch':
        return nn.BatchNorm2d(channels)
    return nn.Identity()


class PatchDiscriminator(nn.Module):
    """Fully convolutional discriminator emitting one score per patch"""

    def __init__(self, spec: ConvStackSpec):
        super().__init__()
        self.spec = spec
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        in_channels = spec.input_channels
        for layer, out_channels, norm in zip(spec.layers, spec.channels, spec.norms):
            self.convs.append(nn.Conv2d(
                in_channels, out_channels,
                kernel_size=layer.kernel, stride=layer.stride, padding=layer.padding,
                bias=norm == 'none',
            ))
            self.norms.append(_norm_layer(norm, out_channels))
            in_channels = out_channels
        self.activation = nn.LeakyReLU(LEAKY_SLOPE)

    def forward(self, x: torch.Tensor, normalize: bool = True) -> torch.Tensor:
        # Instance statistics span the whole map, so the probe runs without them
        for conv, norm, act in zip(self.convs, self.norms, self.spec.activations):
            x = conv(x)
            if normalize:
                x = norm(x)
            if act:
                x = self.activation(x)
        return x


class ResidualBlock(nn.Module):
    """Residual block with instance normalization"""

    def __init__(self, channels: int, norm: str = 'instance'):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, kernel_size=3, padding=1, padding_mode='reflect'),
            _norm_layer(norm, channels),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(channels, channels, kernel_size=3, padding=1, padding_mode='reflect'),
            _norm_layer(norm, channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """Downsample, residual blocks, upsample, tanh"""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        width = spec.base_channels
        # Stem
        layers: List[nn.Module] = [
            nn.Conv2d(3, width, kernel_size=7, padding=3, padding_mode='reflect'),
            _norm_layer(spec.norm, width),
            nn.LeakyReLU(LEAKY_SLOPE),
        ]
        # Downsampling
        for _ in range(spec.downsampling):
            layers += [
                nn.Conv2d(width, width * 2, kernel_size=3, stride=2, padding=1),
                _norm_layer(spec.norm, width * 2),
                nn.LeakyReLU(LEAKY_SLOPE),
            ]
            width *= 2
        layers += [ResidualBlock(width, spec.norm) for _ in range(spec.residual_blocks)]
        # Upsampling
        for _ in range(spec.downsampling):
            layers += [
                nn.ConvTranspose2d(width, width // 2, kernel_size=3, stride=2, padding=1, output_padding=1),
                _norm_layer(spec.norm, width // 2),
                nn.LeakyReLU(LEAKY_SLOPE),
            ]
            width //= 2
        layers += [nn.Conv2d(width, 3, kernel_size=7, padding=3, padding_mode='reflect'), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


def as_generator(rng_state: RngState) -> torch.Generator:
    if isinstance(rng_state, torch.Generator):
        return rng_state
    generator = torch.Generator()
    generator.manual_seed(int(rng_state))
    return generator


def init_weights(module: nn.Module, rng_state: RngState, kind: str = 'normal', value: float = 0.01) -> nn.Module:
    """Conv weights ~ N(0, 0.02) (or a constant), biases zero, norm scales 1"""
    generator = as_generator(rng_state)
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, (nn.Conv2d, nn.ConvTranspose2d)):
                if kind == 'constant':
                    sub.weight.fill_(value)
                elif kind == 'normal':
                    sub.weight.copy_(torch.randn(sub.weight.shape, generator=generator) * INIT_STD)
                else:
                    raise NetSpecError(f"unknown init kind '{kind}'")
                if sub.bias is not None:
                    sub.bias.zero_()
            elif isinstance(sub, nn.BatchNorm2d):
                sub.weight.fill_(1.0)
                sub.bias.zero_()
    return module


def build_discriminator(spec: ConvStackSpec, rng_state: RngState, init: str = 'normal',
                        init_value: float = 0.01) -> PatchDiscriminator:
    return init_weights(PatchDiscriminator(spec), rng_state, init, init_value)


def build_generator(spec: GeneratorSpec, rng_state: RngState) -> ResnetGenerator:
    return init_weights(ResnetGenerator(spec), rng_state)


def empirical_rf_probe(disc: PatchDiscriminator, input_side: int) -> int:
    """Side of the input region that influences the centre output unit

    Runs in double precision without normalization. Returns 0 when the
    gradient vanishes everywhere (e.g. a zeroed layer).
    """
    try:
        map_side = output_map_size(disc.spec, input_side)
    except NetSpecError:
        raise ProbeError("input too small for probe") from None
    if map_side < 3:
        raise ProbeError("input too small for probe")

    # Backpropagate the centre score to a random input
    probe = copy.deepcopy(disc).to(device='cpu', dtype=torch.float64)
    probe.eval()
    generator = torch.Generator().manual_seed(0)
    x = torch.randn(1, disc.spec.input_channels, input_side, input_side,
                    generator=generator, dtype=torch.float64, requires_grad=True)
    scores = probe(x, normalize=False)
    centre = scores[0, 0, scores.shape[2] // 2, scores.shape[3] // 2]
    (grad,) = torch.autograd.grad(centre, x)

    # Bounding box of the non-zero gradient
    footprint = grad[0].abs().sum(dim=0) != 0
    rows = footprint.any(dim=1).nonzero().flatten()
    cols = footprint.any(dim=0).nonzero().flatten()
    if rows.numel() == 0:
        return 0
    if rows[0] == 0 or cols[0] == 0 or rows[-1] == input_side - 1 or cols[-1] == input_side - 1:
        # Footprint reaches the border and may be clipped
        raise ProbeError("input too small for probe")
    height = int(rows[-1] - rows[0]) + 1
    width = int(cols[-1] - cols[0]) + 1
    return max(height, width)
