"""Corpus manifests, a synthetic noisy/clean corpus, enhancement and spectral evaluation."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

from .exceptions import InputError, RoutingError, ShapeError
from .features import (AudioClip, FeatureConfig, FeatureSequence, compute_log_mel, read_features, read_wav,
                       stack_context_windows, unstack_center_frames, write_wav)
from .losses import DomainLabel
from .routing import ArchitectureSpec, Gender, GeneratorBank, Noise, SubsetKey, route, routed_instances
from .training import TrainingData

# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    path: Path
    domain: DomainLabel
    gender: Gender | None = None
    noise: Noise | None = None
    duration: float = 0.0

    @property
    def key(self) -> SubsetKey | None:
        if self.gender is None or self.noise is None:
            return None
        return SubsetKey(self.gender, self.noise)

    def to_line(self, base: Path | None = None) -> str:
        path = self.path
        if base is not None:
            try:
                path = self.path.relative_to(base)
            except ValueError:
                pass
        return "\t".join([self.id, str(path), "A" if self.domain is DomainLabel.A else "B",
                          self.gender.tag if self.gender is not None else "-",
                          self.noise.name if self.noise is not None else "-", f"{self.duration:.3f}"])


@dataclass
class CorpusManifest:
    records: list[UtteranceRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise InputError(f"duplicate utterance id {r.id!r}")
            seen.add(r.id)

    def __len__(self):
        return len(self.records)

    @property
    def counts(self) -> Counter:
        """Record counts keyed by (domain, gender-or-None, noise-or-None)."""
        return Counter((r.domain, r.gender, r.noise) for r in self.records)

    def domain(self, label: DomainLabel) -> list[UtteranceRecord]:
        return [r for r in self.records if r.domain is label]

    def write(self, path) -> None:
        path = Path(path)
        base = path.parent.resolve()
        path.write_text("".join(r.to_line(base) + "\n" for r in self.records))


def _parse_line(fields: list[str], lineno: int, base: Path, check_paths: bool) -> UtteranceRecord:
    where = f"line {lineno}"
    if len(fields) != 6:
        raise InputError(f"{where}: expected 6 tab-separated fields, got {len(fields)}")
    uid, raw_path, dom, gender, noise, dur = (f.strip() for f in fields)
    if not uid:
        raise InputError(f"{where}: empty utterance id")
    if dom not in ("A", "B"):
        raise InputError(f"{where}: unknown domain {dom!r} (expected A or B)")
    try:
        g = None if gender == "-" else Gender.parse(gender)
    except ValueError:
        raise InputError(f"{where}: unknown gender tag {gender!r}") from None
    try:
        n = None if noise == "-" else Noise.parse(noise)
    except ValueError:
        raise InputError(f"{where}: unknown noise tag {noise!r}") from None
    try:
        duration = float(dur)
    except ValueError:
        raise InputError(f"{where}: bad duration {dur!r}") from None
    domain = DomainLabel.A if dom == "A" else DomainLabel.B
    if domain is DomainLabel.A and (g is None or n is None):
        raise InputError(f"{where}: noisy (domain A) record {uid!r} needs both gender and noise tags")
    path = Path(raw_path)
    if not path.is_absolute():
        path = base / path
    if check_paths and not path.is_file():
        raise InputError(f"{where}: file not found: {path}")
    return UtteranceRecord(uid, path, domain, g, n, duration)


def load_manifest(path, check_paths: bool = True) -> CorpusManifest:
    """Read a tab-separated manifest: id, path, domain, gender, noise, duration_s.

    Relative paths resolve against the manifest's directory. Blank lines and
    ``#`` comments are skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    records, seen = [], {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rec = _parse_line(line.split("\t"), lineno, path.parent, check_paths)
        if rec.id in seen:
            raise InputError(f"line {lineno}: duplicate utterance id {rec.id!r} (first on line {seen[rec.id]})")
        seen[rec.id] = lineno
        records.append(rec)
    return CorpusManifest(records)


def load_record_features(record: UtteranceRecord, config: FeatureConfig = FeatureConfig()) -> FeatureSequence:
    if record.path.suffix.lower() == ".wav":
        seq = compute_log_mel(read_wav(record.path), config, record.id)
    else:
        seq = read_features(record.path, record.id)
    if seq.n_mels != config.n_mels:
        raise InputError(f"{record.id}: features have {seq.n_mels} bins, configuration expects {config.n_mels}")
    return seq


def build_training_data(manifest: CorpusManifest, spec: ArchitectureSpec,
                        config: FeatureConfig = FeatureConfig()) -> TrainingData:
    """Route records to instances and stack their context windows.

    Noisy records go to exactly one instance. Clean records feed every
    instance compatible with whatever metadata they carry.
    """
    n = spec.n_generators
    pools_a: list[list[np.ndarray]] = [[] for _ in range(n)]
    pools_b: list[list[np.ndarray]] = [[] for _ in range(n)]
    for rec in manifest.records:
        windows = stack_context_windows(load_record_features(rec, config), config.context)
        if rec.domain is DomainLabel.A:
            pools_a[route(spec, rec.key)].append(windows)
        else:
            for k in routed_instances(spec, rec.gender, rec.noise):
                pools_b[k].append(windows)
    empty = np.zeros((0, 1, 2 * config.context + 1, config.n_mels), dtype=np.float32)

    def join(pool):
        return np.concatenate(pool).astype(np.float32) if pool else empty

    return TrainingData([join(p) for p in pools_a], [join(p) for p in pools_b], instance_names(spec))


def instance_names(spec: ArchitectureSpec) -> list[str]:
    names = [[] for _ in range(spec.n_generators)]
    for key in SubsetKey.all():
        names[route(spec, key)].append(str(key))
    return ["all" if len(v) == 8 else (v[0].split("-")[0] if len(v) == 4 else v[0]) for v in names]


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SyntheticNoiseSpec:
    """Stand-in for the real noisy/clean recordings.

    Each noise type maps to one archetype: BUS a stationary low-frequency
    hum, CAF broadband babble, PED impulsive bursts, STR pink-coloured
    wideband noise. Pseudo-gender sets the fundamental-frequency range of
    the harmonic "speech".
    """

    snr_db: tuple[float, float] = (0.0, 10.0)
    f0_female: tuple[float, float] = (180.0, 260.0)
    f0_male: tuple[float, float] = (90.0, 140.0)
    clean_floor_db: float = -60.0
    peak: float = 0.9
    envelope_depth: float = 0.9

    def f0_range(self, gender: Gender) -> tuple[float, float]:
        return self.f0_female if gender is Gender.FEMALE else self.f0_male


@dataclass
class SyntheticPair:
    key: SubsetKey
    clean_id: str
    noisy_id: str
    clean: AudioClip
    noisy: AudioClip
    snr_db: float

    @property
    def measured_snr_db(self) -> float:
        return snr_db(self.clean.samples, self.noisy.samples - self.clean.samples)


@dataclass
class SyntheticCorpus:
    pairs: list[SyntheticPair]

    def subset(self, key: SubsetKey) -> list[SyntheticPair]:
        return [p for p in self.pairs if p.key == key]


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return float(10.0 * np.log10(np.sum(clean ** 2) / np.sum(noise ** 2)))


def _harmonic_speech(rng, n, sr, f0_range, floor_db, depth=0.9):
    t = np.arange(n) / sr
    f0 = rng.uniform(*f0_range)
    glide = 1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * glide) / sr
    tilt = rng.uniform(0.8, 1.4)
    x = np.zeros(n)
    for h in range(1, int(0.45 * sr / (f0 * 1.08)) + 1):
        x += rng.uniform(0.5, 1.0) / h ** tilt * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(2.0, 5.0)
    env = (1.0 - depth) + depth * (0.5 + 0.5 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))) ** 2
    x *= env
    x /= np.sqrt(np.mean(x ** 2))
    return x + rng.normal(0.0, 10 ** (floor_db / 20), n)


def _bandpass(x, lo, hi, sr, order=4):
    sos = signal.butter(order, [lo, hi], btype="bandpass", fs=sr, output="sos")
    return signal.sosfilt(sos, x)


def _noise(rng, noise: Noise, n, sr):
    t = np.arange(n) / sr
    if noise is Noise.BUS:
        hum = sum(rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
                  for f in (rng.uniform(45, 70) * k for k in (1, 2, 3, 4)))
        rumble = _bandpass(rng.normal(size=n), 40.0, 600.0, sr)
        return hum / np.std(hum) + 2.0 * rumble / np.std(rumble)
    if noise is Noise.CAF:
        babble = np.zeros(n)
        for _ in range(6):
            f0 = rng.uniform(90, 260)
            phase = 2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi)
            voice = sum(np.sin(h * phase) / h for h in range(1, int(0.45 * sr / f0)))
            babble += voice * (0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(1, 4) * t + rng.uniform(0, 2 * np.pi)))
        broad = _bandpass(rng.normal(size=n), 100.0, 0.45 * sr, sr)
        return babble / np.std(babble) + broad / np.std(broad)
    if noise is Noise.PED:
        x = 0.05 * rng.normal(size=n)
        for start in rng.integers(0, n, size=max(1, int(rng.poisson(10 * n / sr)))):
            length = int(rng.uniform(0.005, 0.03) * sr)
            stop = min(n, start + length)
            decay = np.exp(-np.arange(stop - start) / (0.3 * length + 1))
            x[start:stop] += rng.uniform(0.5, 2.0) * rng.normal(size=stop - start) * decay
        return x
    # STR: pink noise via 1/sqrt(f) spectral shaping
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, 1 / sr)
    spec[1:] /= np.sqrt(freqs[1:] / freqs[1])
    spec[0] = 0.0
    return np.fft.irfft(spec, n)


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, target_db: float, peak: float = 0.9):
    """Scale ``noise`` to hit ``target_db`` against ``clean``; rescale both jointly to keep |x| <= peak."""
    noise = noise * np.sqrt(np.sum(clean ** 2) / (np.sum(noise ** 2) * 10 ** (target_db / 10)))
    noisy = clean + noise
    gain = peak / max(np.max(np.abs(noisy)), np.max(np.abs(clean)))
    return clean * gain, noisy * gain


def synthesize_corpus(spec: SyntheticNoiseSpec = SyntheticNoiseSpec(), n_per_subset: int = 10, seed: int = 0,
                      duration: float = 1.0, sample_rate: int = 16000) -> SyntheticCorpus:
    """Paired clean/noisy clips for every (gender, noise) subset.

    The pairing is kept for evaluation only; training consumes the two
    domains as independent pools.
    """
    if n_per_subset < 1:
        raise InputError("n_per_subset must be >= 1")
    n = int(round(duration * sample_rate))
    pairs = []
    for key in SubsetKey.all():
        for j in range(n_per_subset):
            rng = np.random.default_rng([seed, int(key.gender), int(key.noise), j])
            clean = _harmonic_speech(rng, n, sample_rate, spec.f0_range(key.gender), spec.clean_floor_db,
                                     spec.envelope_depth)
            target = float(rng.uniform(*spec.snr_db))
            clean, noisy = mix_at_snr(clean, _noise(rng, key.noise, n, sample_rate), target, spec.peak)
            stem = f"{key.gender.tag}{key.noise.name}{j:04d}"
            pairs.append(SyntheticPair(key, f"clean_{stem}", f"noisy_{stem}", AudioClip(clean, sample_rate),
                                       AudioClip(noisy, sample_rate), target))
    return SyntheticCorpus(pairs)


PAIRS_FILE = "pairs.tsv"


def write_corpus(corpus: SyntheticCorpus, out_dir, heldout_per_subset: int = 0) -> dict[str, Path]:
    """Write WAVs plus ``train.tsv`` / ``heldout.tsv`` manifests and the evaluation-only ``pairs.tsv``.

    The last ``heldout_per_subset`` pairs of each subset are held out.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    train, heldout, pair_lines = [], [], []
    for key in SubsetKey.all():
        items = corpus.subset(key)
        cut = len(items) - heldout_per_subset
        for j, p in enumerate(items):
            clean_path = out / "wav" / f"{p.clean_id}.wav"
            noisy_path = out / "wav" / f"{p.noisy_id}.wav"
            write_wav(clean_path, p.clean)
            write_wav(noisy_path, p.noisy)
            dur = p.clean.duration
            noisy_rec = UtteranceRecord(p.noisy_id, noisy_path, DomainLabel.A, key.gender, key.noise, dur)
            if j < cut:
                train.append(noisy_rec)
                train.append(UtteranceRecord(p.clean_id, clean_path, DomainLabel.B, key.gender, key.noise, dur))
            else:
                heldout.append(noisy_rec)
            pair_lines.append(f"{p.noisy_id}\t{p.clean_id}\twav/{p.clean_id}.wav\t{p.snr_db:.4f}\n")
    paths = {"train": out / "train.tsv", "heldout": out / "heldout.tsv", "pairs": out / PAIRS_FILE}
    CorpusManifest(train).write(paths["train"])
    CorpusManifest(heldout).write(paths["heldout"])
    paths["pairs"].write_text("".join(pair_lines))
    return paths


def load_pairs(path) -> dict[str, Path]:
    """noisy id -> clean reference path (evaluation only)."""
    path = Path(path)
    pairs = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 3:
            raise InputError(f"{path}: line {lineno}: expected noisy_id, clean_id, clean_path")
        clean = Path(fields[2])
        pairs[fields[0]] = clean if clean.is_absolute() else path.parent / clean
    return pairs


# ---------------------------------------------------------------------------
# enhancement and evaluation


def enhance_features(bank: GeneratorBank, seq: FeatureSequence, key: SubsetKey | None,
                     batch_size: int = 4096) -> FeatureSequence:
    """Run the routed G_A over every context window and keep the center rows.

    With a bank normalizer the generator works in standardized units and its
    change to the input is scaled back, so a generator that returns its input
    leaves the features bit-identical.
    """
    inst = bank.instances[route(bank.spec, key)]
    cfg = inst.G_A.config
    if seq.n_mels != cfg.n_mels:
        raise ShapeError(f"{seq.utt_id}: {seq.n_mels} bins, generator expects {cfg.n_mels}")
    windows = stack_context_windows(seq.frames.astype(np.float32, copy=False), cfg.context)
    norm = bank.normalizer
    outs = []
    for lo in range(0, len(windows), batch_size):
        x = windows[lo:lo + batch_size]
        if norm is None:
            outs.append(inst.G_A(x).data)
        else:
            z = norm.transform(x)
            outs.append(x + (inst.G_A(z).data - z) * norm.scale)
    return unstack_center_frames(np.concatenate(outs), seq.utt_id)


def enhance_utterance(bank: GeneratorBank, spec: ArchitectureSpec, record: UtteranceRecord,
                      config: FeatureConfig | None = None) -> FeatureSequence:
    if record.domain is not DomainLabel.A:
        raise RoutingError(f"{record.id}: only noisy (domain A) utterances are enhanced")
    if spec.descriptor != bank.spec.descriptor:
        raise RoutingError(f"bank is {bank.spec.descriptor}, asked to enhance as {spec.descriptor}")
    config = config or FeatureConfig(n_mels=spec.feat_dim, context=bank.instances[0].G_A.config.context)
    return enhance_features(bank, load_record_features(record, config), record.key)


def log_spectral_distance(a: FeatureSequence | np.ndarray, b: FeatureSequence | np.ndarray) -> float:
    """RMS difference over all (frame, bin) cells."""
    fa = a.frames if isinstance(a, FeatureSequence) else np.asarray(a)
    fb = b.frames if isinstance(b, FeatureSequence) else np.asarray(b)
    if fa.shape != fb.shape:
        raise InputError(f"LSD needs equal shapes, got {fa.shape} and {fb.shape}")
    d = fa.astype(np.float64) - fb.astype(np.float64)
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class EvalRow:
    utt_id: str
    lsd_noisy: float
    lsd_enhanced: float

    @property
    def improvement(self) -> float:
        """Relative LSD reduction; positive means enhancement helped."""
        return (self.lsd_noisy - self.lsd_enhanced) / self.lsd_noisy if self.lsd_noisy > 0 else 0.0


@dataclass
class EvalReport:
    rows: list[EvalRow]

    @property
    def mean_lsd_noisy(self) -> float:
        return float(np.mean([r.lsd_noisy for r in self.rows]))

    @property
    def mean_lsd_enhanced(self) -> float:
        return float(np.mean([r.lsd_enhanced for r in self.rows]))

    @property
    def improvement(self) -> float:
        return 1.0 - self.mean_lsd_enhanced / self.mean_lsd_noisy

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["utt_id", "lsd_noisy", "lsd_enhanced", "improvement"])
            for r in self.rows:
                w.writerow([r.utt_id, f"{r.lsd_noisy:.6f}", f"{r.lsd_enhanced:.6f}", f"{r.improvement:.6f}"])


def evaluate(items: Iterable[tuple[str, FeatureSequence, FeatureSequence, FeatureSequence]]) -> EvalReport:
    """Score (utt_id, noisy, enhanced, clean) feature triples."""
    return EvalReport([EvalRow(uid, log_spectral_distance(noisy, clean), log_spectral_distance(enh, clean))
                       for uid, noisy, enh, clean in items])


def render_spectrogram(seq: FeatureSequence, time_range: tuple[float, float], path,
                       frame_shift: float = 10.0, frame_length: float = 25.0) -> tuple[int, int]:
    """Write a binary PGM (P5): time on x, mel bin on y with bin 0 at the bottom.

    A frame is included when its center lies in [start, end) ms. Grey levels
    span the sequence's min..max; a constant sequence renders mid-grey.
    Returns (width, height).
    """
    start, end = time_range
    centers = np.arange(seq.n_frames) * frame_shift + frame_length / 2
    sel = np.flatnonzero((centers >= start) & (centers < end))
    if sel.size == 0:
        raise InputError(f"time range {time_range} ms selects no frames")
    frames = seq.frames.astype(np.float64)
    lo, hi = frames.min(), frames.max()
    if hi > lo:
        grey = np.round(255.0 * (frames[sel] - lo) / (hi - lo))
    else:
        grey = np.full((sel.size, seq.n_mels), 128.0)
    image = grey.T[::-1].astype(np.uint8)
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(image.tobytes())
    return width, height


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, width, height, maxval = blob.split(maxsplit=4)[:4]
    if magic != b"P5" or maxval != b"255":
        raise InputError(f"{path}: not an 8-bit binary PGM")
    width, height = int(width), int(height)
    return np.frombuffer(blob[-width * height:], dtype=np.uint8).reshape(height, width)
