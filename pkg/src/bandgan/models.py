"""Generator (ResNet) and patch discriminator networks as pure functions over parameters."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, conv_output_size
from .exceptions import ConfigurationError, ShapeError

INIT_STD = 0.02


@dataclass(frozen=True)
class GeneratorConfig:
    n_mels: int = 40
    context: int = 5
    base_width: int = 64
    n_blocks: int = 9
    stem_kernel: int = 7
    norm_eps: float = 1e-5
    zero_out: bool = False  # start as an exact identity map

    def __post_init__(self):
        if self.n_mels < 1 or self.context < 0 or self.base_width < 1 or self.n_blocks < 0:
            raise ConfigurationError(f"invalid generator config: {self}")
        if self.stem_kernel % 2 != 1:
            raise ConfigurationError("stem_kernel must be odd")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (1, 2 * self.context + 1, self.n_mels)


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_bins: int
    context: int = 5
    base_width: int = 64
    strides: tuple[int, int, int] = (2, 2, 1)
    kernel: int = 3
    slope: float = 0.2
    norm_eps: float = 1e-5
    norm: bool = True  # instance norm after every conv; False gives plain biased convs

    def __post_init__(self):
        if self.input_bins < 1 or self.context < 0 or self.base_width < 1:
            raise ConfigurationError(f"invalid discriminator config: {self}")
        if len(self.strides) != 3:
            raise ConfigurationError("discriminator needs exactly three strides")


def generator_param_shapes(cfg: GeneratorConfig) -> dict[str, tuple[int, ...]]:
    w, k = cfg.base_width, cfg.stem_kernel
    shapes: dict[str, tuple[int, ...]] = {}

    def conv_norm(name, cout, cin, ksize):
        shapes[f"{name}.w"] = (cout, cin, ksize, ksize)
        shapes[f"{name}.gain"] = (cout,)
        shapes[f"{name}.bias"] = (cout,)

    conv_norm("stem", w, 1, k)
    conv_norm("down1", 2 * w, w, 3)
    conv_norm("down2", 4 * w, 2 * w, 3)
    for b in range(cfg.n_blocks):
        conv_norm(f"block{b}.conv1", 4 * w, 4 * w, 3)
        conv_norm(f"block{b}.conv2", 4 * w, 4 * w, 3)
    # transposed kernels are (in, out, kh, kw)
    for name, cin, cout in (("up1", 4 * w, 2 * w), ("up2", 2 * w, w)):
        shapes[f"{name}.w"] = (cin, cout, 3, 3)
        shapes[f"{name}.gain"] = (cout,)
        shapes[f"{name}.bias"] = (cout,)
    shapes["out.w"] = (1, w, k, k)
    shapes["out.bias"] = (1,)
    return shapes


def discriminator_param_shapes(cfg: DiscriminatorConfig) -> dict[str, tuple[int, ...]]:
    w, k = cfg.base_width, cfg.kernel
    widths = (1, w, 2 * w, 4 * w)
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(3):
        shapes[f"conv{i + 1}.w"] = (widths[i + 1], widths[i], k, k)
        if cfg.norm:
            shapes[f"conv{i + 1}.gain"] = (widths[i + 1],)
        shapes[f"conv{i + 1}.bias"] = (widths[i + 1],)
    shapes["proj.w"] = (1, 4 * w, 1, 1)
    shapes["proj.bias"] = (1,)
    return shapes


def parameter_count(shapes: Mapping[str, tuple[int, ...]]) -> int:
    return int(sum(np.prod(s) for s in shapes.values()))


def init_params(shapes: Mapping[str, tuple[int, ...]], seed, dtype=np.float32) -> dict[str, np.ndarray]:
    """Conv weights ~ N(0, 0.02^2), norm gains 1, biases 0; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".w"):
            params[name] = rng.normal(0.0, INIT_STD, size=shape).astype(dtype)
        elif name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def _padding_to_multiple(size: int, multiple: int = 4) -> tuple[int, int]:
    extra = (-size) % multiple
    return extra // 2, extra - extra // 2


def generator_forward(params: Mapping[str, Tensor | np.ndarray], x, cfg: GeneratorConfig) -> Tensor:
    """Map a (B, 1, 2*context+1, n_mels) batch to a batch of the same shape.

    Spatial dims are zero-padded to multiples of 4 for the two stride-2
    stages and cropped back afterwards. The network output is added to the
    input, so a zeroed output conv makes the generator an exact identity.
    """
    x = ad.as_tensor(x)
    if x.data.ndim != 4 or x.shape[1:] != cfg.input_shape:
        raise ShapeError(f"generator expects (B, {', '.join(map(str, cfg.input_shape))}), got {x.shape}")
    p = {k: ad.as_tensor(v) for k, v in params.items()}
    eps = cfg.norm_eps
    h_pad, w_pad = _padding_to_multiple(x.shape[2]), _padding_to_multiple(x.shape[3])
    h = ad.pad2d(x, h_pad + w_pad)

    def conv_block(t, name, stride=1, pad=1, act=True):
        t = ad.conv2d(t, p[f"{name}.w"], stride, pad)
        t = ad.instance_norm(t, p[f"{name}.gain"], p[f"{name}.bias"], eps)
        return ad.relu(t) if act else t

    k = cfg.stem_kernel
    h = conv_block(h, "stem", 1, k // 2)
    h = conv_block(h, "down1", 2, 1)
    h = conv_block(h, "down2", 2, 1)
    for b in range(cfg.n_blocks):
        r = conv_block(h, f"block{b}.conv1")
        r = conv_block(r, f"block{b}.conv2", act=False)
        h = h + r
    for name in ("up1", "up2"):
        h = ad.conv_transpose2d(h, p[f"{name}.w"], 2, 1, 1)
        h = ad.relu(ad.instance_norm(h, p[f"{name}.gain"], p[f"{name}.bias"], eps))
    h = ad.conv2d(h, p["out.w"], 1, k // 2, bias=p["out.bias"])
    top, left = h_pad[0], w_pad[0]
    h = h[:, :, top:top + x.shape[2], left:left + x.shape[3]]
    return x + h


def discriminator_output_shape(cfg: DiscriminatorConfig) -> tuple[int, int, int]:
    h, w = 2 * cfg.context + 1, cfg.input_bins
    for s in cfg.strides:
        h = conv_output_size(h, cfg.kernel, s, cfg.kernel // 2)
        w = conv_output_size(w, cfg.kernel, s, cfg.kernel // 2)
    return (1, h, w)


def discriminator_forward(params: Mapping[str, Tensor | np.ndarray], band, cfg: DiscriminatorConfig) -> Tensor:
    """Score a (B, 1, 2*context+1, input_bins) band; returns a (B, 1, h', w') patch map."""
    band = ad.as_tensor(band)
    expected = (1, 2 * cfg.context + 1, cfg.input_bins)
    if band.data.ndim != 4 or band.shape[1:] != expected:
        raise ShapeError(f"discriminator expects (B, {', '.join(map(str, expected))}), got {band.shape}")
    p = {k: ad.as_tensor(v) for k, v in params.items()}
    h = band
    for i, stride in enumerate(cfg.strides, start=1):
        if cfg.norm:
            h = ad.conv2d(h, p[f"conv{i}.w"], stride, cfg.kernel // 2)
            h = ad.instance_norm(h, p[f"conv{i}.gain"], p[f"conv{i}.bias"], cfg.norm_eps)
        else:
            h = ad.conv2d(h, p[f"conv{i}.w"], stride, cfg.kernel // 2, bias=p[f"conv{i}.bias"])
        h = ad.leaky_relu(h, cfg.slope)
    return ad.conv2d(h, p["proj.w"], 1, 0, bias=p["proj.bias"])


@dataclass
class GeneratorNet:
    config: GeneratorConfig
    params: dict[str, np.ndarray] = field(repr=False)

    @classmethod
    def create(cls, config: GeneratorConfig, seed, dtype=np.float32) -> "GeneratorNet":
        params = init_params(generator_param_shapes(config), seed, dtype)
        if config.zero_out:
            params["out.w"][:] = 0
            params["out.bias"][:] = 0
        return cls(config, params)

    @property
    def n_params(self) -> int:
        return parameter_count(generator_param_shapes(self.config))

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad) for k, v in self.params.items()}

    def __call__(self, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
        return generator_forward(self.params if params is None else params, x, self.config)


@dataclass
class DiscriminatorNet:
    config: DiscriminatorConfig
    params: dict[str, np.ndarray] = field(repr=False)

    @classmethod
    def create(cls, config: DiscriminatorConfig, seed, dtype=np.float32) -> "DiscriminatorNet":
        return cls(config, init_params(discriminator_param_shapes(config), seed, dtype))

    @property
    def input_bins(self) -> int:
        return self.config.input_bins

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return discriminator_output_shape(self.config)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad) for k, v in self.params.items()}

    def __call__(self, band, params: Mapping[str, Tensor] | None = None) -> Tensor:
        return discriminator_forward(self.params if params is None else params, band, self.config)
