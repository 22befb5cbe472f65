"""Alternating generator/discriminator optimization with Adam and step decay."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_arrays, save_arrays
from .exceptions import ConfigurationError, UsageError
from .losses import (BandMask, LossBreakdown, LossWeights, adv_generator_loss, discriminator_loss,
                     total_objective, weighted_total)
from .features import FeatureNormalizer
from .routing import ArchitectureSpec, CycleGANInstance, GeneratorBank, Variant, build_architecture

log = logging.getLogger(__name__)


D_NORMS = ("none", "instance")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    lr: float = 0.0002
    lr_decay_every: int = 50
    lr_decay_factor: float = 0.5
    epochs: int = 200
    lambda_idt: float = 0.5
    lambda_cycle: float = 10.0
    variant: str = "A1"
    n_da: int = 1
    seed: int = 0
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    n_mels: int = 40
    context: int = 5
    n_blocks: int = 9
    g_base_width: int = 64
    d_base_width: int = 64
    windows_per_epoch: int = 0
    jobs: int = 1
    d_norm: str = "none"
    standardize: int = 1
    g_zero_out: int = 0

    def __post_init__(self):
        for name in ("batch_size", "lr_decay_every", "n_da", "n_mels", "g_base_width", "d_base_width", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("epochs", "context", "n_blocks", "windows_per_epoch"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.lr >= 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigurationError(f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")
        if self.d_norm not in D_NORMS:
            raise ConfigurationError(f"d_norm must be one of {list(D_NORMS)}, got {self.d_norm!r}")
        for name in ("standardize", "g_zero_out"):
            if getattr(self, name) not in (0, 1):
                raise ConfigurationError(f"{name} must be 0 or 1, got {getattr(self, name)}")
        if self.variant not in Variant.__members__:
            raise ConfigurationError(f"variant must be one of {list(Variant.__members__)}, got {self.variant!r}")
        self.arch  # validates n_da against n_mels
        LossWeights(self.lambda_idt, self.lambda_cycle)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_idt, self.lambda_cycle)

    @property
    def arch(self) -> ArchitectureSpec:
        return ArchitectureSpec(Variant[self.variant], self.n_da, self.n_mels)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def model_hash(self) -> str:
        """Digest of everything that determines parameter trajectories (not epochs or jobs)."""
        items = sorted((k, v) for k, v in dataclasses.asdict(self).items() if k not in ("epochs", "jobs"))
        return hashlib.sha256(repr(items).encode()).hexdigest()[:16]


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in types:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = {"int": int, "float": float, "str": str}[types[key]](value)
        except ValueError:
            raise ConfigurationError(f"{source}:{lineno}: bad value {value!r} for {key!r}") from None
    try:
        return TrainConfig(**values)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def format_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(config).items())


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise UsageError("epoch must be >= 0")
    return config.lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if set(grads) != set(params):
        raise UsageError("adam_step: gradient names do not match parameter names")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise UsageError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------
# one optimization step

def generator_terms(g_fwd, g_bwd, d_fwd: Sequence, masks_fwd: Sequence[BandMask], d_bwd: Sequence,
                    masks_bwd: Sequence[BandMask], real_A: Tensor, real_B: Tensor,
                    p_fwd=None, p_bwd=None) -> tuple[dict[str, Tensor], Tensor, Tensor]:
    """Generator-side terms for one direction assignment.

    Swapping (g_fwd, d_fwd, real_A) with (g_bwd, d_bwd, real_B) computes the
    mirrored objective through the same code. Returns the terms plus the
    fakes (fake_B = g_fwd(A), fake_A = g_bwd(B)).
    """
    n = real_A.shape[0]
    out_fwd = g_fwd(ad.concat([real_A, real_B]), p_fwd) if p_fwd is not None else g_fwd(ad.concat([real_A, real_B]))
    out_bwd = g_bwd(ad.concat([real_B, real_A]), p_bwd) if p_bwd is not None else g_bwd(ad.concat([real_B, real_A]))
    fake_B, idt_A = out_fwd[:n], out_fwd[n:]
    fake_A, idt_B = out_bwd[:n], out_bwd[n:]
    rec_A = g_bwd(fake_B, p_bwd) if p_bwd is not None else g_bwd(fake_B)
    rec_B = g_fwd(fake_A, p_fwd) if p_fwd is not None else g_fwd(fake_A)
    terms = {
        "L_GA": adv_generator_loss(fake_B, d_fwd, masks_fwd),
        "L_GB": adv_generator_loss(fake_A, d_bwd, masks_bwd),
        "L_idt_A": ad.l1_loss(idt_A, real_B.data),
        "L_idt_B": ad.l1_loss(idt_B, real_A.data),
        "L_cycle_A": ad.l1_loss(rec_A, real_A.data),
        "L_cycle_B": ad.l1_loss(rec_B, real_B.data),
    }
    return terms, fake_B, fake_A


def instance_objective(inst: CycleGANInstance, batch_A, batch_B, weights: LossWeights,
                       p_GA=None, p_GB=None) -> tuple[Tensor, dict[str, Tensor], Tensor, Tensor]:
    real_A, real_B = ad.as_tensor(batch_A), ad.as_tensor(batch_B)
    terms, fake_B, fake_A = generator_terms(inst.G_A, inst.G_B, inst.D_A, inst.masks,
                                            [inst.D_B], [BandMask.full(inst.D_B.input_bins)],
                                            real_A, real_B, p_GA, p_GB)
    return weighted_total(terms, weights), terms, fake_B, fake_A


def _optim(inst: CycleGANInstance, name: str) -> AdamState:
    return inst.optim.setdefault(name, AdamState())


def train_step(inst: CycleGANInstance, batch_A: np.ndarray, batch_B: np.ndarray, config: TrainConfig,
               lr: float | None = None) -> LossBreakdown:
    """G_A and G_B jointly, then each D_A_i, then D_B; returns pre-update losses."""
    n = min(len(batch_A), len(batch_B))
    if n == 0:
        raise UsageError("train_step: empty batch")
    lr = config.lr if lr is None else lr
    betas = (config.adam_beta1, config.adam_beta2, config.adam_eps)
    real_A = Tensor(np.asarray(batch_A[:n], dtype=np.float32))
    real_B = Tensor(np.asarray(batch_B[:n], dtype=np.float32))

    p_GA, p_GB = inst.G_A.tensors(True), inst.G_B.tensors(True)
    total, terms, fake_B, fake_A = instance_objective(inst, real_A, real_B, config.weights, p_GA, p_GB)
    joint = {f"G_A.{k}": t for k, t in p_GA.items()} | {f"G_B.{k}": t for k, t in p_GB.items()}
    grads = ad.backward(total, joint)
    g_params = {f"G_A.{k}": v for k, v in inst.G_A.params.items()} | {f"G_B.{k}": v for k, v in inst.G_B.params.items()}
    fake_B, fake_A = fake_B.detach(), fake_A.detach()

    per_d = []
    discs = [(f"D_A{i + 1}", d, m, real_B, fake_B) for i, (d, m) in enumerate(zip(inst.D_A, inst.masks))]
    discs.append(("D_B", inst.D_B, BandMask.full(inst.D_B.input_bins), real_A, fake_A))
    d_updates = []
    for name, d, mask, real, fake in discs:
        p = d.tensors(True)
        loss = discriminator_loss(d, mask, real, fake, p)
        d_updates.append((name, d, ad.backward(loss, p)))
        per_d.append((f"L_{name}", float(loss.item())))

    # Fakes above were produced by the pre-update generators, matching the
    # usual CycleGAN ordering; parameters are only touched from here on.
    adam_step(g_params, grads, _optim(inst, "G"), lr, *betas)
    for name, d, d_grads in d_updates:
        adam_step(d.params, d_grads, _optim(inst, name), lr, *betas)
    return total_objective(terms, config.weights, per_d)


# ---------------------------------------------------------------------------
# epochs, checkpoints, resume

@dataclass
class TrainingData:
    """Unpaired context windows per generator instance.

    Domain A (noisy) and domain B (clean) windows are kept as independent
    pools; no pairing information exists at this level.
    """

    windows_A: list[np.ndarray]
    windows_B: list[np.ndarray]
    names: list[str]

    def validate(self, n_instances: int) -> None:
        if len(self.windows_A) != n_instances or len(self.windows_B) != n_instances:
            raise ConfigurationError(f"training data covers {len(self.windows_A)} instances, bank has {n_instances}")
        for k, (a, b) in enumerate(zip(self.windows_A, self.windows_B)):
            for dom, w in (("A (noisy)", a), ("B (clean)", b)):
                if len(w) == 0:
                    raise ConfigurationError(f"instance {k} ({self.names[k]}) has no domain-{dom} data")


    def center_frames(self) -> np.ndarray:
        """Every window's center row from both domains, for corpus-level statistics."""
        rows = [w[:, 0, w.shape[2] // 2, :] for w in self.windows_A + self.windows_B if len(w)]
        return np.concatenate(rows)

    def normalized(self, normalizer: FeatureNormalizer) -> "TrainingData":
        return TrainingData([normalizer.transform(w) for w in self.windows_A],
                            [normalizer.transform(w) for w in self.windows_B], list(self.names))


@dataclass
class EpochReport:
    epoch: int
    lr: float
    losses: LossBreakdown
    wall_time: float
    per_instance: list[LossBreakdown] = field(default_factory=list)

    def summary(self) -> str:
        d_terms = " ".join(f"{k}={v:.4f}" for k, v in self.losses.per_discriminator)
        return (f"epoch {self.epoch:4d} lr={self.lr:.3g} total={self.losses.total:.4f} "
                f"L_GA={self.losses.L_GA:.4f} L_GB={self.losses.L_GB:.4f} "
                f"cyc={self.losses.L_cycle_A:.4f}/{self.losses.L_cycle_B:.4f} {d_terms} ({self.wall_time:.1f}s)")


@dataclass
class TrainResult:
    bank: GeneratorBank
    reports: list[EpochReport]
    loss_rows: list[list]
    checkpoints: list[Path]


def mean_breakdown(items: Sequence[LossBreakdown]) -> LossBreakdown:
    first = items[0]
    vals = np.mean([b.csv_values() for b in items], axis=0)
    names = first.csv_header()
    d = dict(zip(names, vals.tolist()))
    per_d = [(name, d[name]) for name, _ in first.per_discriminator]
    return LossBreakdown(*(d[k] for k in ("L_GA", "L_GB", "L_idt_A", "L_idt_B", "L_cycle_A", "L_cycle_B")),
                         total=d["total"], per_discriminator=per_d)


def epoch_batches(n_a: int, n_b: int, config: TrainConfig, epoch: int, instance: int):
    """Seeded, independent shuffles of both domains, zipped and truncated to the shorter."""
    rng = np.random.default_rng([config.seed, epoch, instance])
    perm_a, perm_b = rng.permutation(n_a), rng.permutation(n_b)
    n = min(n_a, n_b)
    if config.windows_per_epoch:
        n = min(n, config.windows_per_epoch)
    for lo in range(0, n, config.batch_size):
        hi = min(lo + config.batch_size, n)
        yield perm_a[lo:hi], perm_b[lo:hi]


def _train_instance_epoch(inst, windows_a, windows_b, config, epoch, k):
    lr = lr_schedule(config, epoch)
    return [train_step(inst, windows_a[ia], windows_b[ib], config, lr)
            for ia, ib in epoch_batches(len(windows_a), len(windows_b), config, epoch, k)]


def checkpoint_path(out_dir, instance: int, epoch: int) -> Path:
    return Path(out_dir) / f"inst{instance}_epoch{epoch}.ckpt"


def save_instance(path, inst: CycleGANInstance, bank: GeneratorBank, config: TrainConfig, index: int,
                  epoch: int) -> None:
    arrays = inst.state_arrays()
    meta = {"arch": bank.spec.descriptor, "instance": index, "epoch": epoch, "config_hash": config.model_hash(),
            "n_mels": config.n_mels, "context": config.context, "n_blocks": config.n_blocks,
            "g_base_width": config.g_base_width, "d_base_width": config.d_base_width, "d_norm": config.d_norm}
    if bank.normalizer is not None:
        arrays["normalizer.mean"] = bank.normalizer.mean
        arrays["normalizer.scale"] = bank.normalizer.scale
    for name, state in sorted(inst.optim.items()):
        meta[f"optim.{name}.t"] = state.t
        arrays.update({f"optim.{name}.m.{k}": v for k, v in state.m.items()})
        arrays.update({f"optim.{name}.v.{k}": v for k, v in state.v.items()})
    save_arrays(path, arrays, meta)


def _normalizer_from(arrays: Mapping[str, np.ndarray]) -> FeatureNormalizer | None:
    if "normalizer.mean" not in arrays:
        return None
    return FeatureNormalizer(arrays["normalizer.mean"], arrays["normalizer.scale"])


def load_instance_state(path, inst: CycleGANInstance) -> dict[str, str]:
    """Overwrite ``inst`` parameters and optimizer state from a checkpoint; returns its metadata."""
    arrays, meta = load_arrays(path)
    for net_name, net in inst.named_nets().items():
        for k in net.params:
            key = f"{net_name}.{k}"
            if key not in arrays:
                raise ConfigurationError(f"{path}: missing parameter {key}")
            if arrays[key].shape != net.params[k].shape:
                raise ConfigurationError(f"{path}: parameter {key} has shape {arrays[key].shape}, "
                                         f"expected {net.params[k].shape}")
            net.params[k] = arrays[key]
    inst.optim = {}
    for key, value in meta.items():
        if key.startswith("optim.") and key.endswith(".t"):
            name = key[len("optim."):-len(".t")]
            state = AdamState(t=int(value))
            for prefix, target in ((f"optim.{name}.m.", state.m), (f"optim.{name}.v.", state.v)):
                target.update({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
            inst.optim[name] = state
    return meta


def bank_from_checkpoints(ckpt_dir, epoch: int | None = None) -> tuple[GeneratorBank, dict[str, str]]:
    """Rebuild a bank from ``inst<k>_epoch<e>.ckpt`` files (latest epoch by default)."""
    ckpt_dir = Path(ckpt_dir)
    found = sorted(ckpt_dir.glob("inst0_epoch*.ckpt"), key=lambda p: int(p.stem.split("epoch")[1]))
    if not found:
        raise ConfigurationError(f"no checkpoints in {ckpt_dir}")
    if epoch is None:
        epoch = int(found[-1].stem.split("epoch")[1])
    arrays, meta = load_arrays(checkpoint_path(ckpt_dir, 0, epoch))
    spec = ArchitectureSpec.parse(meta["arch"], int(meta["n_mels"]))
    bank = build_architecture(spec, 0, int(meta["context"]), int(meta["g_base_width"]), int(meta["n_blocks"]),
                              int(meta["d_base_width"]), meta.get("d_norm", "instance") == "instance")
    bank.normalizer = _normalizer_from(arrays)
    for k, inst in enumerate(bank.instances):
        m = load_instance_state(checkpoint_path(ckpt_dir, k, epoch), inst)
        if m["arch"] != meta["arch"]:
            raise ConfigurationError(f"instance {k} checkpoint has architecture {m['arch']}, expected {meta['arch']}")
    return bank, meta


def build_bank(config: TrainConfig) -> GeneratorBank:
    return build_architecture(config.arch, config.seed, config.context, config.g_base_width, config.n_blocks,
                              config.d_base_width, config.d_norm == "instance", bool(config.g_zero_out))


LOSS_CSV = "losses.csv"


def train_loop(bank: GeneratorBank, data: TrainingData, config: TrainConfig, out_dir=None,
               resume_epoch: int | None = None) -> TrainResult:
    """Train every instance for ``config.epochs`` epochs.

    Checkpoints ``inst<k>_epoch<e>.ckpt`` are written for the initial state
    (epoch 0) and after every epoch when ``out_dir`` is given. With
    ``resume_epoch`` the bank is restored from that epoch's checkpoints and
    training continues as if never interrupted.

    With ``config.standardize`` the bank gets a normalizer fitted on all
    training frames (unless it already has one) and trains on standardized
    windows; ``data`` itself is not modified.
    """
    data.validate(bank.n_generators)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    start = 0
    if resume_epoch is not None:
        if out is None:
            raise UsageError("resuming needs the checkpoint directory as out_dir")
        for k, inst in enumerate(bank.instances):
            meta = load_instance_state(checkpoint_path(out, k, resume_epoch), inst)
            if meta.get("config_hash") != config.model_hash():
                raise ConfigurationError(f"checkpoint {checkpoint_path(out, k, resume_epoch)} was written "
                                         "with a different training configuration")
        bank.normalizer = _normalizer_from(load_arrays(checkpoint_path(out, 0, resume_epoch))[0])
        start = resume_epoch
    if config.standardize:
        if bank.normalizer is None:
            bank.normalizer = FeatureNormalizer.fit(data.center_frames())
        data = data.normalized(bank.normalizer)
    written: list[Path] = []

    def save_all(epoch):
        if out is None:
            return
        for k, inst in enumerate(bank.instances):
            path = checkpoint_path(out, k, epoch)
            save_instance(path, inst, bank, config, k, epoch)
            written.append(path)

    if resume_epoch is None:
        save_all(0)
    reports, rows = [], []
    executor = ThreadPoolExecutor(config.jobs) if config.jobs > 1 and bank.n_generators > 1 else None
    try:
        for epoch in range(start, config.epochs):
            t0 = time.perf_counter()
            jobs = [(inst, data.windows_A[k], data.windows_B[k], config, epoch, k)
                    for k, inst in enumerate(bank.instances)]
            if executor is None:
                results = [_train_instance_epoch(*job) for job in jobs]
            else:
                results = list(executor.map(lambda job: _train_instance_epoch(*job), jobs))
            for k, steps in enumerate(results):
                rows.extend([epoch + 1, k, s] + b.csv_values() for s, b in enumerate(steps))
            flat = [b for steps in results for b in steps]
            report = EpochReport(epoch + 1, lr_schedule(config, epoch), mean_breakdown(flat),
                                 time.perf_counter() - t0, [mean_breakdown(s) for s in results])
            reports.append(report)
            log.info(report.summary())
            save_all(epoch + 1)
            if out is not None:
                _append_rows(out / LOSS_CSV, rows[-len(flat):], flat[0], fresh=(epoch == 0))
    finally:
        if executor is not None:
            executor.shutdown()
    return TrainResult(bank, reports, rows, written)


def loss_csv_header(example: LossBreakdown) -> list[str]:
    return ["epoch", "instance", "step"] + example.csv_header()


def _append_rows(path: Path, rows, example: LossBreakdown, fresh: bool) -> None:
    with open(path, "w" if fresh else "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(loss_csv_header(example))
        writer.writerows([r[:3] + [repr(float(v)) for v in r[3:]] for r in rows])
