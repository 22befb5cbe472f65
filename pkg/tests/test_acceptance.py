"""Acceptance suite: one test per headline criterion, each printing a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from bandgan import autodiff as ad
from bandgan import gradsuite, training
from bandgan.corpus import enhance_features
from bandgan.experiment import DeskScaleConfig, run_desk_scale
from bandgan.features import (AudioClip, FeatureSequence, compute_log_mel, read_features, stack_context_windows,
                              unstack_center_frames, write_features)
from bandgan.losses import BandMask, adv_generator_loss, identity_loss, make_band_masks
from bandgan.models import DiscriminatorConfig, DiscriminatorNet
from bandgan.routing import ArchitectureSpec, Variant, build_architecture
from bandgan.training import build_bank, train_loop

from conftest import param_hash, tiny_config, tiny_data


def report(capsys, criterion: int, ok: bool, detail: str):
    with capsys.disabled():
        print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def test_criterion_1_gradient_suite(capsys):
    t0 = time.perf_counter()
    results = gradsuite.run_suite()
    seconds = time.perf_counter() - t0
    failed = [r.op for r in results if not r.passed]
    ops = [r for r in results if r.op != "objective"]
    objective = next(r for r in results if r.op == "objective")
    ok = not failed and seconds < 120 and all(r.tolerance == 1e-5 for r in ops) and objective.tolerance == 1e-3
    worst = max(ops, key=lambda r: r.max_rel_error)
    report(capsys, 1, ok, f"{len(ops)} ops worst {worst.op} {worst.max_rel_error:.2e} (<1e-5, float64), "
                          f"objective {objective.max_rel_error:.2e} (<1e-3, float32), {seconds:.1f}s (<120s)"
                          + (f", failed {failed}" if failed else ""))


def test_criterion_2_mask_partition(capsys):
    t0 = time.perf_counter()
    bad = []
    for feat_dim in range(1, 65):
        for n in range(1, feat_dim + 1):
            covered = np.zeros(feat_dim, dtype=int)
            for m in make_band_masks(feat_dim, n):
                covered[m.start:m.end] += 1
            if not np.all(covered == 1):
                bad.append((feat_dim, n))
    seconds = time.perf_counter() - t0
    report(capsys, 2, not bad and seconds < 1.0, f"2080 (feat_dim, n) pairs, {len(bad)} bad, {seconds:.3f}s (<1s)")


def test_criterion_3_single_band_reduction(capsys):
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d = DiscriminatorNet.create(DiscriminatorConfig(16, 1, base_width=2, norm=bool(seed % 2)), seed)
        fake = rng.normal(size=(4, 1, 3, 16)).astype(np.float32)
        score = d(fake)
        direct = ad.mse_loss(score, np.ones(score.shape, dtype=score.dtype))
        banded = adv_generator_loss(fake, [d], [BandMask.full(16)])
        mismatches += banded.data.tobytes() != direct.data.tobytes()
    report(capsys, 3, mismatches == 0, f"{100 - mismatches}/100 inputs bitwise equal")


def test_criterion_4_descriptor_counts(capsys):
    expected = {"cyclegan-1g+3da": 3, "cyclegan-2g+6da": 6, "cyclegan-8g+24da": 24, "cyclegan-8g+32da": 32}
    got = {}
    for descriptor in expected:
        spec = ArchitectureSpec.parse(descriptor, 40)
        got[descriptor] = build_architecture(spec, 0, context=1, g_base_width=1, n_blocks=0, d_base_width=1).total_da
    report(capsys, 4, got == expected, ", ".join(f"{k} -> {v} D_A" for k, v in got.items()))


@pytest.mark.slow
@pytest.mark.parametrize("variant", ["A1", "A3"])
def test_criterion_5_desk_scale_enhancement(capsys, variant):
    config = DeskScaleConfig()
    results = []
    for seed in range(5):
        results.append(run_desk_scale(variant, seed, config))
        with capsys.disabled():
            print(f"\n    {results[-1].line()}")
    wins = sum(r.improved for r in results)
    slowest = max(r.seconds for r in results)
    ok = wins >= 4 and slowest < 600
    report(capsys, 5, ok, f"{variant}: enhanced beats noisy LSD in {wins}/5 seeds (need 4), "
                          f"slowest run {slowest:.0f}s (<600s), sweep {sum(r.seconds for r in results):.0f}s")


def test_criterion_6_identity_stub(capsys):
    spec = ArchitectureSpec(Variant.A1, 2, 16)
    bank = build_architecture(spec, 0, context=1, g_base_width=2, n_blocks=2, d_base_width=2, g_zero_out=True)
    G = bank.instances[0].G_A
    rng = np.random.default_rng(0)
    batch = rng.normal(size=(8, 1, 3, 16)).astype(np.float32)
    idt = identity_loss(G, batch).item()
    seq = FeatureSequence(rng.normal(size=(50, 16)).astype(np.float32))
    same = enhance_features(bank, seq, None).frames.tobytes() == seq.frames.tobytes()
    report(capsys, 6, idt == 0.0 and same, f"identity loss {idt}, enhance bit-exact {same}")


def test_criterion_7_determinism_and_resume(capsys, tmp_path):
    config = tiny_config(variant="A2", epochs=3)
    data = tiny_data(config)
    for run in ("a", "b"):
        train_loop(build_bank(config), data, config, tmp_path / run)
    repeat = (tmp_path / "a" / "losses.csv").read_bytes() == (tmp_path / "b" / "losses.csv").read_bytes()
    first = config.replace(epochs=1)
    train_loop(build_bank(first), data, first, tmp_path / "part")
    resumed = train_loop(build_bank(config), data, config, tmp_path / "part", resume_epoch=1)
    full = train_loop(build_bank(config), data, config)
    same_csv = (tmp_path / "a" / "losses.csv").read_bytes() == (tmp_path / "part" / "losses.csv").read_bytes()
    same_params = [param_hash(i) for i in resumed.bank.instances] == [param_hash(i) for i in full.bank.instances]
    report(capsys, 7, repeat and same_csv and same_params,
           f"repeat CSV identical {repeat}, resumed CSV identical {same_csv}, resumed parameters identical "
           f"{same_params}")


def test_criterion_8_a3_isolation(capsys):
    config = tiny_config(variant="A3", n_da=2, windows_per_epoch=8, epochs=3)
    bank = build_bank(config)
    data = tiny_data(config, n=8)
    violations, checks = 0, 0
    for epoch in range(config.epochs):
        for k, inst in enumerate(bank.instances):
            before = [param_hash(i) for i in bank.instances]
            training._train_instance_epoch(inst, data.windows_A[k], data.windows_B[k], config, epoch, k)
            after = [param_hash(i) for i in bank.instances]
            checks += 1
            violations += after[k] == before[k]
            violations += any(after[j] != before[j] for j in range(len(after)) if j != k)
    report(capsys, 8, violations == 0, f"{checks} instance-epoch updates, {violations} isolation violations")


def test_criterion_9_feature_round_trip(capsys, tmp_path):
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(37, 16)).astype(np.float32)
    stack_ok = all(np.array_equal(unstack_center_frames(stack_context_windows(frames, c)).frames, frames)
                   for c in range(6))
    clip = AudioClip(0.1 * rng.normal(size=16000), 16000)
    seq = compute_log_mel(clip, utt_id="u")
    write_features(tmp_path / "u.bgse", seq)
    file_ok = read_features(tmp_path / "u.bgse").frames.tobytes() == seq.frames.tobytes()
    report(capsys, 9, stack_ok and file_ok and seq.n_frames == 98,
           f"stack/unstack identity {stack_ok}, file bit-exact {file_ok}, 1 s clip T={seq.n_frames}")
