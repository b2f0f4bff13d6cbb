"""
Least-squares adversarial losses, cycle-consistency losses and the weighted objective

Gradient flow is the point of this module. Discriminators are trained on
severed fakes; generators see discriminators (and, in the per-generator
cycle losses, the opposite generator) as constants, through frozen_forward.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import torch
from torch import nn
from torch.func import functional_call

from .errors import ConfigError, NonFiniteLossError
from .utils import format_loss_report

logger = logging.getLogger(__name__)

CYCLE_NORMS = ('l1', 'l2')
CYCLE_MODES = ('split', 'joint')
Scalar = Union[torch.Tensor, float]


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 10.0
    gamma: float = 0.5
    real_label: float = 1.0
    fake_label: float = 0.0
    gen_target: float = 1.0
    cycle_norm: str = 'l1'
    cycle_mode: str = 'split'

    def __post_init__(self):
        for name in ('alpha', 'beta', 'lam'):
            value = getattr(self, name)
            if not value >= 0:
                raise ConfigError(f"losses.{name} must be ≥ 0, got {value}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"losses.gamma must be in [0, 1], got {self.gamma}")
        if self.cycle_norm not in CYCLE_NORMS:
            raise ConfigError(f"losses.cycle_norm must be one of {CYCLE_NORMS}, got '{self.cycle_norm}'")
        if self.cycle_mode not in CYCLE_MODES:
            raise ConfigError(f"losses.cycle_mode must be one of {CYCLE_MODES}, got '{self.cycle_mode}'")


@dataclass
class LossReport:
    """Scalars logged for one training step"""
    step: int
    adv_G: float = 0.0
    adv_F: float = 0.0
    d_Y: List[float] = field(default_factory=list)
    d_X: List[float] = field(default_factory=list)
    cyc_G: float = 0.0
    cyc_F: float = 0.0
    total_G: float = 0.0
    total_F: float = 0.0

    def scalars(self) -> Dict[str, float]:
        """Flat name → value map in log-line order"""
        values = {'adv_G': self.adv_G, 'adv_F': self.adv_F}
        values.update({f"dY{i + 1}": v for i, v in enumerate(self.d_Y)})
        values.update({f"dX{i + 1}": v for i, v in enumerate(self.d_X)})
        values.update({'cyc_G': self.cyc_G, 'cyc_F': self.cyc_F,
                       'total_G': self.total_G, 'total_F': self.total_F})
        return values

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.scalars().values())

    def as_line(self) -> str:
        return format_loss_report(self.step, self.scalars())


def frozen_forward(module: nn.Module, *args, **kwargs) -> torch.Tensor:
    """Run module with its parameters detached: gradients reach the inputs, never the module"""
    params = {name: p.detach() for name, p in module.named_parameters()}
    return functional_call(module, params, args, kwargs)


def patch_average(score_map: torch.Tensor) -> torch.Tensor:
    """Mean over batch and every patch"""
    if score_map.numel() == 0:
        raise ValueError("empty score map")
    return score_map.mean()


def lsgan_d_loss(disc: nn.Module, real: torch.Tensor, fake: torch.Tensor, w: LossWeights) -> torch.Tensor:
    """(D(real) − a)² + (D(fake) − fake_label)², each patch-averaged"""
    if real.shape != fake.shape:
        raise ValueError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ in shape")
    real_term = patch_average((disc(real) - w.real_label) ** 2)
    fake_term = patch_average((disc(fake.detach()) - w.fake_label) ** 2)
    return real_term + fake_term


def lsgan_g_loss(disc: nn.Module, fake: torch.Tensor, w: LossWeights) -> torch.Tensor:
    """(D(fake) − gen_target)², patch-averaged; disc is a constant here"""
    return patch_average((frozen_forward(disc, fake) - w.gen_target) ** 2)


def blended_adv_loss(d1: nn.Module, d2: Optional[nn.Module], fake: torch.Tensor, w: LossWeights) -> torch.Tensor:
    """γ·L(D1) + (1−γ)·L(D2); a single discriminator when d2 is None"""
    if d2 is None:
        return lsgan_g_loss(d1, fake, w)
    return w.gamma * lsgan_g_loss(d1, fake, w) + (1.0 - w.gamma) * lsgan_g_loss(d2, fake, w)


def adversarial_loss(discriminators: Sequence[nn.Module], fake: torch.Tensor, w: LossWeights) -> torch.Tensor:
    if len(discriminators) not in (1, 2):
        raise ValueError(f"expected 1 or 2 discriminators, got {len(discriminators)}")
    d2 = discriminators[1] if len(discriminators) == 2 else None
    return blended_adv_loss(discriminators[0], d2, fake, w)


def reconstruction_error(reconstructed: torch.Tensor, original: torch.Tensor, norm: str = 'l1') -> torch.Tensor:
    diff = reconstructed - original
    if norm == 'l2':
        return (diff ** 2).mean()
    return diff.abs().mean()


def cycle_loss_joint(gen_g: nn.Module, gen_f: nn.Module, x_batch: torch.Tensor, y_batch: torch.Tensor,
                     norm: str = 'l1') -> torch.Tensor:
    """Both reconstruction terms with gradients into both generators"""
    forward, backward = cycle_terms(gen_g, gen_f, x_batch, y_batch, norm, mode='joint')
    return forward + backward


def cycle_loss_g(gen_g: nn.Module, gen_f: nn.Module, x_batch: torch.Tensor, norm: str = 'l1') -> torch.Tensor:
    """|F(G(x)) − x| training G only; F is evaluated as a constant map"""
    return reconstruction_error(frozen_forward(gen_f, gen_g(x_batch)), x_batch, norm)


def cycle_loss_f(gen_g: nn.Module, gen_f: nn.Module, y_batch: torch.Tensor, norm: str = 'l1') -> torch.Tensor:
    """|G(F(y)) − y| training F only; G is evaluated as a constant map"""
    return reconstruction_error(frozen_forward(gen_g, gen_f(y_batch)), y_batch, norm)


def cycle_terms(gen_g: nn.Module, gen_f: nn.Module, x_batch: torch.Tensor, y_batch: torch.Tensor,
                norm: str = 'l1', mode: str = 'split') -> Tuple[torch.Tensor, torch.Tensor]:
    """(cyc_G, cyc_F) for a cycle mode

    split: each term trains only the generator that starts the cycle.
    joint: both terms reach both generators, so their sum is cycle_loss_joint.
    """
    if mode == 'joint':
        return (reconstruction_error(gen_f(gen_g(x_batch)), x_batch, norm),
                reconstruction_error(gen_g(gen_f(y_batch)), y_batch, norm))
    if mode != 'split':
        raise ConfigError(f"cycle mode must be one of {CYCLE_MODES}, got '{mode}'")
    return cycle_loss_g(gen_g, gen_f, x_batch, norm), cycle_loss_f(gen_g, gen_f, y_batch, norm)


def _is_finite(value: Scalar) -> bool:
    if isinstance(value, torch.Tensor):
        return bool(torch.isfinite(value).all())
    return math.isfinite(value)


def full_objective(components: Mapping[str, Scalar], w: LossWeights, step: int = 0) -> Tuple[Scalar, Scalar]:
    """(α·adv_G + λ·cyc_G, β·adv_F + λ·cyc_F)

    Missing components count as zero. adv_G/adv_F are expected already
    blended when two discriminators serve a direction.
    """
    for name, value in components.items():
        if not _is_finite(value):
            logger.error(f"Component {name} is not finite at step {step}")
            raise NonFiniteLossError(step)

    adv_g = components.get('adv_G', 0.0)
    adv_f = components.get('adv_F', 0.0)
    cyc_g = components.get('cyc_G', 0.0)
    cyc_f = components.get('cyc_F', 0.0)
    total_g = w.alpha * adv_g + w.lam * cyc_g
    total_f = w.beta * adv_f + w.lam * cyc_f
    return total_g, total_f
