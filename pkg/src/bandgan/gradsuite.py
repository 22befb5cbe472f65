"""Finite-difference verification of every differentiable op and the full training objective.

Each op is reduced to a scalar through ``mse_loss`` against a fixed random
target, so one scalar check exercises the whole output Jacobian. Inputs to
kinked ops (relu, leaky relu, l1) are kept a safe distance from the kink.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .losses import LossWeights
from .routing import ArchitectureSpec, Variant, build_architecture
from .training import instance_objective

OP_TOLERANCE = 1e-5
END_TO_END_TOLERANCE = 1e-3


@dataclass
class OpResult:
    op: str
    max_rel_error: float
    tolerance: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.op:<18} max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:.0e} trials={self.trials} {status}"


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _projected(out: ad.Tensor, target: np.ndarray) -> ad.Tensor:
    return ad.mse_loss(out, target)


def _case_builders() -> dict[str, Callable]:
    """op name -> builder(rng) returning (f, inputs)."""

    def add(rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        t = rng.normal(size=(3, 4))
        return lambda v: _projected(ad.add(v["a"], v["b"]), t), {"a": a, "b": b}

    def scale(rng):
        t = rng.normal(size=(2, 5))
        return lambda v: _projected(ad.scale(v["x"], -1.7), t), {"x": rng.normal(size=(2, 5))}

    def slice_(rng):
        t = rng.normal(size=(2, 3))
        return lambda v: _projected(v["x"][1:3, ::2], t), {"x": rng.normal(size=(4, 6))}

    def concat(rng):
        t = rng.normal(size=(5, 3))
        return (lambda v: _projected(ad.concat([v["a"], v["b"]], axis=0), t),
                {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(3, 3))})

    def pad2d(rng):
        t = rng.normal(size=(2, 1, 6, 7))
        return lambda v: _projected(ad.pad2d(v["x"], (1, 2, 2, 1)), t), {"x": rng.normal(size=(2, 1, 3, 4))}

    def tensor_sum(rng):
        return lambda v: ad.mse_loss(ad.tensor_sum(v["x"]), np.array(0.3)), {"x": rng.normal(size=(3, 4))}

    def conv2d(rng):
        t = rng.normal(size=(2, 3, 3, 4))
        return (lambda v: _projected(ad.conv2d(v["x"], v["w"], 2, 1, bias=v["b"]), t),
                {"x": rng.normal(size=(2, 2, 5, 7)), "w": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=3)})

    def conv_transpose2d(rng):
        t = rng.normal(size=(2, 2, 6, 8))
        return (lambda v: _projected(ad.conv_transpose2d(v["x"], v["w"], 2, 1, 1, bias=v["b"]), t),
                {"x": rng.normal(size=(2, 3, 3, 4)), "w": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=2)})

    def instance_norm(rng):
        t = rng.normal(size=(2, 3, 4, 5))
        return (lambda v: _projected(ad.instance_norm(v["x"], v["g"], v["b"], 1e-5), t),
                {"x": rng.normal(size=(2, 3, 4, 5)), "g": rng.normal(size=3), "b": rng.normal(size=3)})

    def relu(rng):
        t = rng.normal(size=(4, 5))
        return lambda v: _projected(ad.relu(v["x"]), t), {"x": _away_from_zero(rng, (4, 5))}

    def leaky_relu(rng):
        t = rng.normal(size=(4, 5))
        return lambda v: _projected(ad.leaky_relu(v["x"], 0.2), t), {"x": _away_from_zero(rng, (4, 5))}

    def tanh(rng):
        t = rng.normal(size=(4, 5))
        return lambda v: _projected(ad.tanh(v["x"]), t), {"x": rng.normal(size=(4, 5))}

    def mse_loss(rng):
        t = rng.normal(size=(3, 4))
        return lambda v: ad.mse_loss(v["x"], t), {"x": rng.normal(size=(3, 4))}

    def l1_loss(rng):
        t = rng.normal(size=(3, 4))
        return lambda v: ad.l1_loss(v["x"], t), {"x": t + _away_from_zero(rng, (3, 4))}

    return {"add": add, "scale": scale, "slice": slice_, "concat": concat, "pad2d": pad2d,
            "tensor_sum": tensor_sum, "conv2d": conv2d, "conv_transpose2d": conv_transpose2d,
            "instance_norm": instance_norm, "relu": relu, "leaky_relu": leaky_relu, "tanh": tanh,
            "mse_loss": mse_loss, "l1_loss": l1_loss}


OPS = tuple(_case_builders())


def check_op(name: str, trials: int = 20, seed: int = 0) -> OpResult:
    builder = _case_builders()[name]
    worst = 0.0
    for trial in range(trials):
        f, inputs = builder(np.random.default_rng([seed, trial]))
        report = ad.gradient_check(f, inputs, tolerance=OP_TOLERANCE)
        worst = max(worst, report.max_rel_error)
    return OpResult(name, worst, OP_TOLERANCE, trials)


def check_objective(seed: int = 0, batch: int = 4, n_mels: int = 8, context: int = 1, n_da: int = 2,
                    max_elements: int = 4) -> OpResult:
    """Full CycleGAN objective on a 2-block generator pair; float32 analytic vs float64 numeric.

    Instance norm over near-constant channels at init amplifies parameter
    perturbations, so a small step keeps the central difference from
    straddling relu and l1 kinks.
    """
    spec = ArchitectureSpec(Variant.A1, n_da, n_mels)
    inst = build_architecture(spec, seed, context=context, g_base_width=2, n_blocks=2, d_base_width=2).instances[0]
    rng = np.random.default_rng(seed)
    shape = (batch, 1, 2 * context + 1, n_mels)
    real_A, real_B = rng.normal(size=shape), rng.normal(size=shape)
    inputs = {f"G_A.{k}": v for k, v in inst.G_A.params.items()} | {f"G_B.{k}": v for k, v in inst.G_B.params.items()}
    weights = LossWeights()

    def objective(v):
        p_a = {k[4:]: t for k, t in v.items() if k.startswith("G_A.")}
        p_b = {k[4:]: t for k, t in v.items() if k.startswith("G_B.")}
        dtype = next(iter(v.values())).dtype
        total, *_ = instance_objective(inst, real_A.astype(dtype), real_B.astype(dtype), weights, p_a, p_b)
        return total

    report = ad.gradient_check(objective, inputs, step=1e-7, tolerance=END_TO_END_TOLERANCE,
                               analytic_dtype=np.float32, max_elements=max_elements, seed=seed)
    return OpResult("objective", report.max_rel_error, END_TO_END_TOLERANCE, 1)


def run_suite(trials: int = 20, seed: int = 0) -> list[OpResult]:
    return [check_op(name, trials, seed) for name in OPS] + [check_objective(seed)]
