"""CycleGAN objective with band-masked multi-discriminator adversarial terms."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigurationError, ShapeError, UsageError


class DomainLabel(enum.Enum):
    A = "noisy"
    B = "clean"


@dataclass(frozen=True)
class BandMask:
    """Mel-bin range [start, end) judged by discriminator ``index`` (1-based)."""

    index: int
    start: int
    end: int
    feat_dim: int

    def __post_init__(self):
        if not 0 <= self.start < self.end <= self.feat_dim:
            raise ConfigurationError(f"invalid band [{self.start}, {self.end}) for feat_dim={self.feat_dim}")

    @property
    def width(self) -> int:
        return self.end - self.start

    @classmethod
    def full(cls, feat_dim: int) -> "BandMask":
        return cls(1, 0, feat_dim, feat_dim)


@dataclass(frozen=True)
class LossWeights:
    lambda_idt: float = 0.5
    lambda_cycle: float = 10.0

    def __post_init__(self):
        if self.lambda_idt < 0 or self.lambda_cycle < 0:
            raise ConfigurationError("loss weights must be non-negative")


GENERATOR_TERMS = ("L_GA", "L_GB", "L_idt_A", "L_idt_B", "L_cycle_A", "L_cycle_B")


@dataclass
class LossBreakdown:
    L_GA: float
    L_GB: float
    L_idt_A: float
    L_idt_B: float
    L_cycle_A: float
    L_cycle_B: float
    total: float
    per_discriminator: list[tuple[str, float]] = field(default_factory=list)

    def csv_header(self) -> list[str]:
        return list(GENERATOR_TERMS) + [name for name, _ in self.per_discriminator] + ["total"]

    def csv_values(self) -> list[float]:
        return [getattr(self, k) for k in GENERATOR_TERMS] + [v for _, v in self.per_discriminator] + [self.total]

    def swapped(self) -> "LossBreakdown":
        """The same breakdown seen with domains A and B exchanged."""
        return LossBreakdown(self.L_GB, self.L_GA, self.L_idt_B, self.L_idt_A, self.L_cycle_B, self.L_cycle_A,
                             self.total, list(self.per_discriminator))


def make_band_masks(feat_dim: int, n: int) -> list[BandMask]:
    """Split [0, feat_dim) into n contiguous bands of floor(feat_dim/n) bins; the last takes the remainder."""
    if not 1 <= n <= feat_dim:
        raise ConfigurationError(f"need 1 <= n <= feat_dim, got n={n}, feat_dim={feat_dim}")
    step = feat_dim // n
    return [BandMask(i, (i - 1) * step, i * step if i < n else feat_dim, feat_dim) for i in range(1, n + 1)]


def apply_band_mask(mask: BandMask, window) -> Tensor:
    window = ad.as_tensor(window)
    if window.shape[-1] != mask.feat_dim:
        raise ShapeError(f"window has {window.shape[-1]} bins, mask expects {mask.feat_dim}")
    if mask.start == 0 and mask.end == mask.feat_dim:
        return window
    return window[..., mask.start:mask.end]


def _check_pairs(discriminators: Sequence, masks: Sequence[BandMask]):
    if len(discriminators) == 0 or len(discriminators) != len(masks):
        raise ConfigurationError(
            f"need one mask per discriminator, got {len(discriminators)} discriminators and {len(masks)} masks")
    for d, m in zip(discriminators, masks):
        if d.input_bins != m.width:
            raise ConfigurationError(f"discriminator judges {d.input_bins} bins but mask {m.index} is {m.width} wide")


def _score(d, band, params):
    return d(band) if params is None else d(band, params)


def adv_generator_loss(fake, discriminators: Sequence, masks: Sequence[BandMask],
                       params: Sequence[Mapping[str, Tensor]] | None = None) -> Tensor:
    """Mean over discriminators of MSE(D_i(mask_i(fake)), 1)."""
    _check_pairs(discriminators, masks)
    params = params or [None] * len(discriminators)
    total = None
    for d, m, p in zip(discriminators, masks, params):
        score = _score(d, apply_band_mask(m, fake), p)
        term = ad.mse_loss(score, np.ones(score.shape, dtype=score.dtype))
        total = term if total is None else total + term
    return total if len(masks) == 1 else total * (1.0 / len(masks))


def discriminator_loss(d, mask: BandMask, real, fake_detached, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """(MSE(D(mask(real)), 1) + MSE(D(mask(fake)), 0)) / 2; ``fake`` is cut from its graph."""
    fake = ad.as_tensor(fake_detached).detach()
    real_score = _score(d, apply_band_mask(mask, real), params)
    fake_score = _score(d, apply_band_mask(mask, fake), params)
    real_term = ad.mse_loss(real_score, np.ones(real_score.shape, dtype=real_score.dtype))
    fake_term = ad.mse_loss(fake_score, np.zeros(fake_score.shape, dtype=fake_score.dtype))
    return (real_term + fake_term) * 0.5


def identity_loss(gen, target_domain_batch, params: Mapping[str, Tensor] | None = None) -> Tensor:
    out = gen(target_domain_batch) if params is None else gen(target_domain_batch, params)
    return ad.l1_loss(out, ad.as_tensor(target_domain_batch).data)


def cycle_loss(g_fwd, g_bwd, batch, params_fwd=None, params_bwd=None) -> Tensor:
    fwd = g_fwd(batch) if params_fwd is None else g_fwd(batch, params_fwd)
    rec = g_bwd(fwd) if params_bwd is None else g_bwd(fwd, params_bwd)
    return ad.l1_loss(rec, ad.as_tensor(batch).data)


def _value(term) -> float:
    return float(term.item()) if isinstance(term, Tensor) else float(term)


def weighted_total(terms: Mapping, weights: LossWeights):
    """The full objective; works on floats and on tensors alike."""
    missing = [k for k in GENERATOR_TERMS if k not in terms]
    if missing:
        raise UsageError(f"objective is missing terms: {missing}")
    return (terms["L_GA"] + terms["L_GB"]
            + weights.lambda_idt * terms["L_idt_A"] + weights.lambda_idt * terms["L_idt_B"]
            + weights.lambda_cycle * terms["L_cycle_A"] + weights.lambda_cycle * terms["L_cycle_B"])


def total_objective(terms: Mapping, weights: LossWeights = LossWeights(),
                    per_discriminator: Sequence[tuple[str, float]] = ()) -> LossBreakdown:
    values = {k: _value(terms[k]) if k in terms else None for k in GENERATOR_TERMS}
    total = weighted_total({k: v for k, v in values.items() if v is not None}, weights)
    if not math.isfinite(total):
        raise UsageError("objective is not finite")
    return LossBreakdown(**values, total=total, per_discriminator=list(per_discriminator))
