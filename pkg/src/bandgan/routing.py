"""Architecture variants A1/A2/A3: metadata routing and generator banks."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, RoutingError
from .features import FeatureNormalizer
from .losses import BandMask, make_band_masks
from .models import DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet


class Gender(enum.IntEnum):
    FEMALE = 0
    MALE = 1

    @classmethod
    def parse(cls, tag: str) -> "Gender":
        tags = {"F": cls.FEMALE, "FEMALE": cls.FEMALE, "M": cls.MALE, "MALE": cls.MALE}
        try:
            return tags[tag.upper()]
        except KeyError:
            raise ValueError(f"unknown gender tag {tag!r}") from None

    @property
    def tag(self) -> str:
        return "F" if self is Gender.FEMALE else "M"


class Noise(enum.IntEnum):
    BUS = 0
    CAF = 1
    PED = 2
    STR = 3

    @classmethod
    def parse(cls, tag: str) -> "Noise":
        try:
            return cls[tag.upper()]
        except KeyError:
            raise ValueError(f"unknown noise tag {tag!r}") from None


@dataclass(frozen=True, order=True)
class SubsetKey:
    gender: Gender
    noise: Noise

    @classmethod
    def all(cls) -> list["SubsetKey"]:
        return [cls(g, n) for g in Gender for n in Noise]

    def __str__(self):
        return f"{self.gender.name.lower()}-{self.noise.name}"


class Variant(enum.Enum):
    A1 = 1
    A2 = 2
    A3 = 8

    @property
    def n_generators(self) -> int:
        return self.value

    @classmethod
    def from_generators(cls, n: int) -> "Variant":
        for v in cls:
            if v.value == n:
                return v
        raise ConfigurationError(f"no architecture with {n} generators (choose 1, 2 or 8)")


_DESCRIPTOR = re.compile(r"^cyclegan-(\d+)g\+(\d+)da$", re.IGNORECASE)


@dataclass(frozen=True)
class ArchitectureSpec:
    variant: Variant = Variant.A1
    n_da: int = 1
    feat_dim: int = 40

    def __post_init__(self):
        if not 1 <= self.n_da <= self.feat_dim:
            raise ConfigurationError(f"n_da must be in [1, feat_dim={self.feat_dim}], got {self.n_da}")

    @property
    def n_generators(self) -> int:
        return self.variant.n_generators

    @property
    def total_da(self) -> int:
        return self.n_generators * self.n_da

    @property
    def descriptor(self) -> str:
        return f"cyclegan-{self.n_generators}g+{self.total_da}da"

    @classmethod
    def parse(cls, descriptor: str, feat_dim: int = 40) -> "ArchitectureSpec":
        """Parse ``cyclegan-<G>g+<D>da`` (case-insensitive); D must be a multiple of G."""
        m = _DESCRIPTOR.match(descriptor.strip())
        if not m:
            raise ConfigurationError(f"malformed architecture descriptor {descriptor!r}")
        g, d = int(m.group(1)), int(m.group(2))
        variant = Variant.from_generators(g)
        if d == 0 or d % g:
            raise ConfigurationError(f"{descriptor!r}: discriminator count {d} is not a positive multiple of {g}")
        return cls(variant, d // g, feat_dim)


def route(spec: ArchitectureSpec, key: SubsetKey | None) -> int:
    """Index of the generator instance that handles utterances with ``key``."""
    if spec.variant is Variant.A1:
        return 0
    if key is None:
        raise RoutingError(f"{spec.descriptor} needs subset metadata to route an utterance")
    if spec.variant is Variant.A2:
        return int(key.gender)
    return 4 * int(key.gender) + int(key.noise)


def routed_instances(spec: ArchitectureSpec, gender: Gender | None, noise: Noise | None) -> list[int]:
    """All instances an utterance with partial metadata may feed (used for clean-side data)."""
    genders = list(Gender) if gender is None else [gender]
    noises = list(Noise) if noise is None else [noise]
    return sorted({route(spec, SubsetKey(g, n)) for g in genders for n in noises})


@dataclass
class CycleGANInstance:
    """One CycleGAN: G_A (noisy->clean), G_B (clean->noisy), banded D_A list, full-band D_B."""

    G_A: GeneratorNet
    G_B: GeneratorNet
    D_A: list[DiscriminatorNet]
    D_B: DiscriminatorNet
    masks: list[BandMask]
    optim: dict = field(default_factory=dict, repr=False)

    def named_nets(self) -> dict[str, GeneratorNet | DiscriminatorNet]:
        nets = {"G_A": self.G_A, "G_B": self.G_B}
        nets.update({f"D_A{i + 1}": d for i, d in enumerate(self.D_A)})
        nets["D_B"] = self.D_B
        return nets

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"{net}.{k}": v for net, model in self.named_nets().items() for k, v in model.params.items()}


@dataclass
class GeneratorBank:
    """All instances of one architecture, plus the feature standardization they were trained under."""

    spec: ArchitectureSpec
    instances: list[CycleGANInstance]
    normalizer: FeatureNormalizer | None = None

    @property
    def n_generators(self) -> int:
        return len(self.instances)

    @property
    def total_da(self) -> int:
        return sum(len(inst.D_A) for inst in self.instances)

    def route(self, key: SubsetKey | None) -> CycleGANInstance:
        return self.instances[route(self.spec, key)]


def build_architecture(spec: ArchitectureSpec, seed: int, context: int = 5, g_base_width: int = 64,
                       n_blocks: int = 9, d_base_width: int = 64, d_norm: bool = True,
                       g_zero_out: bool = False) -> GeneratorBank:
    """Fresh, independently seeded networks for every routing class of ``spec``."""
    masks = make_band_masks(spec.feat_dim, spec.n_da)
    g_cfg = GeneratorConfig(n_mels=spec.feat_dim, context=context, base_width=g_base_width, n_blocks=n_blocks,
                            zero_out=g_zero_out)
    instances = []
    for k in range(spec.n_generators):
        seeds = np.random.SeedSequence([seed, k]).spawn(3 + spec.n_da)
        d_a = [DiscriminatorNet.create(DiscriminatorConfig(m.width, context, d_base_width, norm=d_norm), seeds[3 + i])
               for i, m in enumerate(masks)]
        d_b = DiscriminatorNet.create(DiscriminatorConfig(spec.feat_dim, context, d_base_width, norm=d_norm), seeds[2])
        instances.append(CycleGANInstance(GeneratorNet.create(g_cfg, seeds[0]), GeneratorNet.create(g_cfg, seeds[1]),
                                          d_a, d_b, list(masks)))
    return GeneratorBank(spec, instances)
