import math

import numpy as np
import pytest

from bandgan import training
from bandgan.checkpoint import load_arrays
from bandgan.exceptions import ConfigurationError, UsageError
from bandgan.training import (AdamState, TrainConfig, TrainingData, adam_step, build_bank, checkpoint_path,
                              format_config, load_config, lr_schedule, parse_config, train_loop, train_step)

from conftest import param_hash, tiny_config, tiny_data


def scalar_adam(p, grad_fn, steps, lr, b1, b2, eps):
    """Textbook Adam on a Python float, the reference for the vectorized step."""
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


class TestAdam:
    def test_matches_scalar_reference(self):
        params = {"p": np.array([1.0])}
        state = AdamState()
        for _ in range(100):
            adam_step(params, {"p": 2 * params["p"]}, state, 0.01, 0.5, 0.999, 1e-8)
        expected = scalar_adam(1.0, lambda p: 2 * p, 100, 0.01, 0.5, 0.999, 1e-8)
        assert params["p"][0] == pytest.approx(expected, rel=1e-12)
        assert abs(params["p"][0]) < 0.5

    def test_quadratic_decreases(self):
        params, state = {"p": np.array([3.0, -2.0])}, AdamState()
        start = float(np.sum(params["p"] ** 2))
        for _ in range(200):
            adam_step(params, {"p": 2 * params["p"]}, state, 0.01)
        assert np.sum(params["p"] ** 2) < start

    def test_mismatched_grads(self):
        with pytest.raises(UsageError):
            adam_step({"p": np.zeros(2)}, {"q": np.zeros(2)}, AdamState(), 0.1)
        with pytest.raises(UsageError):
            adam_step({"p": np.zeros(2)}, {"p": np.zeros(3)}, AdamState(), 0.1)


class TestSchedule:
    def test_step_decay(self):
        c = TrainConfig()
        assert [lr_schedule(c, e) for e in (0, 49, 50, 99, 100, 150, 199)] == \
            [2e-4, 2e-4, 1e-4, 1e-4, 5e-5, 2.5e-5, 2.5e-5]

    def test_reported_lr_follows_schedule(self):
        config = tiny_config(epochs=3, lr_decay_every=1, windows_per_epoch=8)
        result = train_loop(build_bank(config), tiny_data(config), config)
        assert [r.lr for r in result.reports] == [lr_schedule(config, e) for e in range(3)]


class TestConfig:
    def test_round_trip(self):
        c = TrainConfig(batch_size=16, variant="A3", n_da=3, d_norm="instance")
        assert parse_config(format_config(c)) == c

    def test_comments_and_blanks(self):
        assert parse_config("# hi\n\nepochs = 5  # five\n").epochs == 5

    @pytest.mark.parametrize("text,needle", [
        ("epochs = 5\nbogus = 1\n", "2: unknown config key 'bogus'"),
        ("epochs five\n", "1: expected 'key = value'"),
        ("batch_size = many\n", "bad value 'many' for 'batch_size'"),
        ("variant = A4\n", "variant"),
        ("n_da = 50\n", "n_da"),
        ("d_norm = batch\n", "d_norm"),
        ("lr = -1\n", "lr"),
    ])
    def test_errors_name_the_key(self, text, needle):
        with pytest.raises(ConfigurationError, match=needle.replace("(", r"\(")):
            parse_config(text, "c.txt")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_config(tmp_path / "nope.txt")

    def test_model_hash_ignores_epochs_and_jobs(self):
        assert TrainConfig(epochs=1, jobs=1).model_hash() == TrainConfig(epochs=7, jobs=4).model_hash()
        assert TrainConfig(seed=1).model_hash() != TrainConfig(seed=2).model_hash()


class TestStep:
    def test_lr_zero_leaves_parameters(self):
        config = tiny_config()
        bank = build_bank(config)
        inst = bank.instances[0]
        data = tiny_data(config)
        before = param_hash(inst)
        losses = train_step(inst, data.windows_A[0][:8], data.windows_B[0][:8], config, lr=0.0)
        assert param_hash(inst) == before
        assert losses.total > 0

    def test_truncates_to_shorter_batch_and_rejects_empty(self):
        config = tiny_config()
        inst = build_bank(config).instances[0]
        data = tiny_data(config)
        train_step(inst, data.windows_A[0][:5], data.windows_B[0][:8], config)
        with pytest.raises(UsageError):
            train_step(inst, data.windows_A[0][:0], data.windows_B[0][:8], config)

    def test_each_update_touches_one_network(self, monkeypatch):
        calls = []
        original = training.adam_step

        def spy(params, grads, state, lr, *a):
            calls.append({k.split(".")[0] for k in params})
            return original(params, grads, state, lr, *a)

        monkeypatch.setattr(training, "adam_step", spy)
        config = tiny_config()
        inst = build_bank(config).instances[0]
        data = tiny_data(config)
        train_step(inst, data.windows_A[0][:8], data.windows_B[0][:8], config)
        # joint generator update first, then one update per discriminator over its own parameters
        assert calls[0] == {"G_A", "G_B"}
        assert len(calls) == 1 + len(inst.D_A) + 1
        assert all(not (c & {"G_A", "G_B"}) for c in calls[1:])

    def test_discriminator_update_does_not_move_generators(self):
        config = tiny_config()
        inst = build_bank(config).instances[0]
        data = tiny_data(config)
        g_before = {k: v.copy() for k, v in inst.G_A.params.items()}
        d_before = {k: v.copy() for k, v in inst.D_B.params.items()}
        train_step(inst, data.windows_A[0][:8], data.windows_B[0][:8], config)
        assert any(not np.array_equal(g_before[k], inst.G_A.params[k]) for k in g_before)
        assert any(not np.array_equal(d_before[k], inst.D_B.params[k]) for k in d_before)


class TestLoop:
    def test_epochs_zero_writes_init_checkpoint_only(self, tmp_path):
        config = tiny_config(epochs=0)
        result = train_loop(build_bank(config), tiny_data(config), config, tmp_path)
        assert result.reports == []
        assert [p.name for p in result.checkpoints] == ["inst0_epoch0.ckpt"]

    def test_empty_subset_is_named(self):
        config = tiny_config(variant="A2")
        data = tiny_data(config)
        data.windows_B[1] = data.windows_B[1][:0]
        with pytest.raises(ConfigurationError, match="instance 1 \\(male\\).*clean"):
            train_loop(build_bank(config), data, config)

    def test_determinism_bitwise(self, tmp_path):
        config = tiny_config(variant="A2")
        for run in ("a", "b"):
            train_loop(build_bank(config), tiny_data(config), config, tmp_path / run)
        assert (tmp_path / "a" / "losses.csv").read_bytes() == (tmp_path / "b" / "losses.csv").read_bytes()
        for k in range(2):
            a = load_arrays(checkpoint_path(tmp_path / "a", k, 2))[0]
            b = load_arrays(checkpoint_path(tmp_path / "b", k, 2))[0]
            assert all(a[n].tobytes() == b[n].tobytes() for n in a)

    def test_resume_matches_uninterrupted(self, tmp_path):
        config = tiny_config(epochs=3)
        data = tiny_data(config)
        full = train_loop(build_bank(config), data, config, tmp_path / "full")
        train_loop(build_bank(config.replace(epochs=1)), data, config.replace(epochs=1), tmp_path / "part")
        resumed = train_loop(build_bank(config), data, config, tmp_path / "part", resume_epoch=1)
        assert [r.losses for r in resumed.reports] == [r.losses for r in full.reports[1:]]
        assert (tmp_path / "full" / "losses.csv").read_bytes() == (tmp_path / "part" / "losses.csv").read_bytes()
        a = load_arrays(checkpoint_path(tmp_path / "full", 0, 3))[0]
        b = load_arrays(checkpoint_path(tmp_path / "part", 0, 3))[0]
        assert a.keys() == b.keys() and all(a[n].tobytes() == b[n].tobytes() for n in a)

    def test_resume_rejects_other_config(self, tmp_path):
        config = tiny_config(epochs=1)
        train_loop(build_bank(config), tiny_data(config), config, tmp_path)
        other = config.replace(lr=1e-3, epochs=2)
        with pytest.raises(ConfigurationError, match="different training configuration"):
            train_loop(build_bank(other), tiny_data(other), other, tmp_path, resume_epoch=1)

    def test_threaded_instances_match_serial(self):
        config = tiny_config(variant="A2", epochs=1)
        serial = train_loop(build_bank(config), tiny_data(config), config)
        threaded = train_loop(build_bank(config.replace(jobs=2)), tiny_data(config), config.replace(jobs=2))
        assert [param_hash(i) for i in serial.bank.instances] == [param_hash(i) for i in threaded.bank.instances]

    def test_standardization_fitted_and_stored(self, tmp_path):
        config = tiny_config(epochs=1)
        data = tiny_data(config)
        result = train_loop(build_bank(config), data, config, tmp_path)
        norm = result.bank.normalizer
        center = np.concatenate([w[:, 0, 1, :] for w in data.windows_A + data.windows_B])
        np.testing.assert_allclose(norm.mean, center.mean(axis=0), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(norm.scale, center.std(axis=0), rtol=1e-5)
        arrays = load_arrays(checkpoint_path(tmp_path, 0, 1))[0]
        assert arrays["normalizer.mean"].tobytes() == norm.mean.tobytes()
        assert train_loop(build_bank(config.replace(standardize=0)), data,
                          config.replace(standardize=0)).bank.normalizer is None

    def test_training_data_untouched(self):
        config = tiny_config(epochs=1)
        data = tiny_data(config)
        before = [w.copy() for w in data.windows_A]
        train_loop(build_bank(config), data, config)
        assert all(np.array_equal(a, b) for a, b in zip(before, data.windows_A))


class TestIsolation:
    def test_a3_instance_update_leaves_others(self):
        config = tiny_config(variant="A3", n_da=1, windows_per_epoch=8)
        bank = build_bank(config)
        data = tiny_data(config, n=8)
        for epoch in range(2):
            for k, inst in enumerate(bank.instances):
                before = [param_hash(i) for i in bank.instances]
                training._train_instance_epoch(inst, data.windows_A[k], data.windows_B[k], config, epoch, k)
                after = [param_hash(i) for i in bank.instances]
                assert after[k] != before[k]
                assert [h for j, h in enumerate(after) if j != k] == [h for j, h in enumerate(before) if j != k]


class TestUnpairedContract:
    def test_training_data_carries_no_pairing(self):
        fields = set(TrainingData.__dataclass_fields__)
        assert fields == {"windows_A", "windows_B", "names"}

    def test_domain_shuffles_are_independent(self):
        config = tiny_config(windows_per_epoch=0, batch_size=64)
        (ia, ib), = training.epoch_batches(40, 40, config, 0, 0)
        assert not np.array_equal(ia, ib)
