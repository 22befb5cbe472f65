"""Command-line entry point: synth, extract, train, enhance, eval, render, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .corpus import (SyntheticNoiseSpec, build_training_data, enhance_utterance, evaluate, load_manifest, load_pairs,
                     load_record_features, read_wav, render_spectrogram, synthesize_corpus, write_corpus)
from .exceptions import BandGANError, ConfigurationError, InputError, RoutingError, UsageError
from .features import FeatureConfig, compute_log_mel, read_features, write_features
from .losses import DomainLabel
from .routing import ArchitectureSpec
from .training import (TrainConfig, bank_from_checkpoints, build_bank, format_config, load_config, train_loop)

log = logging.getLogger("bandgan")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
FEATURE_SUFFIX = ".bgse"


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig field, plus ``--arch`` as a descriptor shortcut."""
    for f in dataclasses.fields(TrainConfig):
        p.add_argument(_flag(f.name), dest=f"cfg_{f.name}", type=type(f.default), default=None,
                       metavar=f.name.upper())
    p.add_argument("--arch", help="architecture descriptor, e.g. cyclegan-8g+24da")


def _config_from_args(args) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    overrides = {f.name: getattr(args, f"cfg_{f.name}") for f in dataclasses.fields(TrainConfig)
                 if getattr(args, f"cfg_{f.name}") is not None}
    try:
        config = config.replace(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    if args.arch:
        spec = ArchitectureSpec.parse(args.arch, config.n_mels)
        config = config.replace(variant=spec.variant.name, n_da=spec.n_da)
    return config


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    if args.heldout >= args.n_per_subset:
        raise UsageError("--heldout must be smaller than --n-per-subset")
    spec = SyntheticNoiseSpec(snr_db=(args.snr_min, args.snr_max))
    corpus = synthesize_corpus(spec, args.n_per_subset, args.seed, args.duration)
    paths = write_corpus(corpus, args.out, args.heldout)
    print(f"wrote {len(corpus.pairs)} clean/noisy pairs to {args.out}")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return EXIT_OK


def cmd_extract(args) -> int:
    manifest = load_manifest(args.manifest)
    config = FeatureConfig(n_mels=args.n_mels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for rec in manifest.records:
        path = out / f"{rec.id}{FEATURE_SUFFIX}"
        write_features(path, load_record_features(rec, config))
        records.append(dataclasses.replace(rec, path=path))
    type(manifest)(records).write(out / "features.tsv")
    print(f"extracted {len(records)} feature files to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.config and not Path(args.config).is_file():
        raise ConfigurationError(f"config file not found: {args.config}")
    config = _config_from_args(args)
    manifest = load_manifest(args.manifest)
    spec = config.arch
    data = build_training_data(manifest, spec, FeatureConfig(n_mels=config.n_mels, context=config.context))
    data.validate(spec.n_generators)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(config))
    bank = build_bank(config)
    print(f"training {spec.descriptor}: {spec.n_generators} instance(s), {bank.total_da} clean-side discriminators")
    result = train_loop(bank, data, config, out, resume_epoch=args.resume)
    lines = [r.summary() for r in result.reports]
    with open(out / "summary.txt", "a" if args.resume is not None else "w") as fh:
        fh.writelines(line + "\n" for line in lines)
    for line in lines:
        print(line)
    print(f"checkpoints in {out}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    bank, meta = bank_from_checkpoints(args.checkpoints, args.epoch)
    if args.arch:
        wanted = ArchitectureSpec.parse(args.arch, bank.spec.feat_dim)
        if wanted.descriptor != bank.spec.descriptor:
            raise ConfigurationError(f"checkpoints hold {bank.spec.descriptor}, --arch asks for {wanted.descriptor}")
    manifest = load_manifest(args.manifest)
    noisy = manifest.domain(DomainLabel.A)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not noisy:
        log.warning("manifest %s has no domain-A records; nothing to enhance", args.manifest)
    for rec in noisy:
        write_features(out / f"{rec.id}{FEATURE_SUFFIX}", enhance_utterance(bank, bank.spec, rec))
    print(f"enhanced {len(noisy)} utterance(s) with {bank.spec.descriptor} (epoch {meta['epoch']}) into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    pairs = load_pairs(args.pairs or Path(args.manifest).parent / "pairs.tsv")
    enhanced_dir = Path(args.enhanced)
    items = []
    for rec in manifest.domain(DomainLabel.A):
        if rec.id not in pairs:
            raise InputError(f"no clean reference for {rec.id} in the pairs file")
        enhanced = read_features(enhanced_dir / f"{rec.id}{FEATURE_SUFFIX}", rec.id)
        config = FeatureConfig(n_mels=enhanced.n_mels)
        clean = compute_log_mel(read_wav(pairs[rec.id]), config, rec.id)
        items.append((rec.id, load_record_features(rec, config), enhanced, clean))
    if not items:
        raise UsageError(f"{args.manifest} has no domain-A records to evaluate")
    report = evaluate(items)
    report.write_csv(args.out)
    print(f"{len(items)} utterances: mean LSD noisy {report.mean_lsd_noisy:.4f}, "
          f"enhanced {report.mean_lsd_enhanced:.4f} (relative improvement {report.improvement:+.2%})")
    return EXIT_OK


def cmd_render(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"input not found: {src}")
    if src.suffix.lower() == ".wav":
        seq = compute_log_mel(read_wav(src), FeatureConfig(n_mels=args.n_mels), src.stem)
    else:
        seq = read_features(src)
    width, height = render_spectrogram(seq, (args.start, args.end), args.out)
    print(f"wrote {width}x{height} spectrogram to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradsuite

    results = gradsuite.run_suite(trials=args.trials, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.op for r in results if not r.passed]
    if failed:
        print(f"gradient check FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bandgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic noisy/clean corpus with manifests")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-subset", type=int, default=50)
    p.add_argument("--heldout", type=int, default=10, help="held-out pairs per subset")
    p.add_argument("--duration", type=float, default=1.0, help="seconds per clip")
    p.add_argument("--snr-min", type=float, default=0.0)
    p.add_argument("--snr-max", type=float, default=10.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="compute log-Mel feature files for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-mels", type=int, default=40)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a generator bank")
    p.add_argument("--config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", type=int, metavar="EPOCH", help="continue from this epoch's checkpoints in --out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="map noisy utterances through trained generators")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epoch", type=int, help="checkpoint epoch (default: latest)")
    p.add_argument("--arch", help="expected architecture descriptor")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="LSD of noisy and enhanced features against clean references")
    p.add_argument("--manifest", required=True)
    p.add_argument("--enhanced", required=True)
    p.add_argument("--pairs", help="noisy-to-clean pairs file (default: pairs.tsv next to the manifest)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write a log-Mel spectrogram as a PGM image")
    p.add_argument("--input", required=True, help=".wav or feature file")
    p.add_argument("--start", type=float, required=True, help="ms")
    p.add_argument("--end", type=float, required=True, help="ms")
    p.add_argument("--out", required=True)
    p.add_argument("--n-mels", type=int, default=40)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the training objective")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, UsageError, RoutingError) as exc:
        print(f"bandgan {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BandGANError, OSError) as exc:
        print(f"bandgan {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
