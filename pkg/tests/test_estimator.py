import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bandgan.estimator import CycleGANEnhancer, check_keys
from bandgan.exceptions import InputError
from bandgan.routing import Gender, Noise, SubsetKey

SMALL = dict(n_mels=8, context=1, n_blocks=1, g_base_width=2, d_base_width=2, batch_size=8, epochs=1,
             windows_per_epoch=8)


def utterances(n, shift, seed, n_mels=8, frames=12):
    rng = np.random.default_rng(seed)
    return [(rng.normal(size=(frames, n_mels)) + shift).astype(np.float32) for _ in range(n)]


class TestFitTransform:
    def test_shapes_and_dtype(self):
        est = CycleGANEnhancer(**SMALL).fit(utterances(3, 1.0, 0), clean=utterances(3, 0.0, 1))
        out = est.transform(utterances(2, 1.0, 2, frames=7))
        assert [o.shape for o in out] == [(7, 8), (7, 8)]
        assert all(o.dtype == np.float32 for o in out)
        single = est.transform(utterances(1, 1.0, 2, frames=7)[0])
        assert isinstance(single, np.ndarray) and np.array_equal(single, out[0])
        assert len(est.history_) == 1

    def test_seeded_fits_agree(self):
        x, c = utterances(3, 1.0, 0), utterances(3, 0.0, 1)
        a = CycleGANEnhancer(**SMALL).fit(x, clean=c).transform(x[0])
        b = CycleGANEnhancer(**SMALL).fit(x, clean=c).transform(x[0])
        assert a.tobytes() == b.tobytes()

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            CycleGANEnhancer(**SMALL).transform(utterances(1, 0.0, 0))

    def test_wrong_bins(self):
        est = CycleGANEnhancer(**SMALL).fit(utterances(2, 1.0, 0), clean=utterances(2, 0.0, 1))
        with pytest.raises(InputError, match="expected 8"):
            est.transform(utterances(1, 0.0, 0, n_mels=6))

    def test_clone_keeps_params(self):
        est = CycleGANEnhancer(**SMALL, arch="cyclegan-2g+4da")
        assert clone(est).get_params() == est.get_params()


class TestKeys:
    def test_required_for_multi_generator(self):
        est = CycleGANEnhancer(**SMALL, arch="cyclegan-8g+16da")
        with pytest.raises(InputError, match="required"):
            est.fit(utterances(2, 1.0, 0), clean=utterances(2, 0.0, 1))

    def test_a3_fit_with_keys(self):
        keys = [(g, n) for g in "FM" for n in ("BUS", "CAF", "PED", "STR")]
        est = CycleGANEnhancer(**{**SMALL, "epochs": 0}, arch="cyclegan-8g+16da")
        est.fit(utterances(8, 1.0, 0), clean=utterances(8, 0.0, 1), keys=keys)
        assert est.bank_.n_generators == 8
        out = est.transform(utterances(1, 1.0, 3), keys=[("M", "STR")])
        assert out[0].shape == (12, 8)

    def test_pair_parsing(self):
        assert check_keys([("m", "ped")], 1, True) == [SubsetKey(Gender.MALE, Noise.PED)]
        with pytest.raises(InputError, match="2 keys for 1"):
            check_keys([None, None], 1, False)

    def test_empty_input(self):
        with pytest.raises(InputError, match="no utterances"):
            CycleGANEnhancer(**SMALL).fit([], clean=utterances(1, 0.0, 0))
