import hashlib

import numpy as np
import pytest

from bandgan.corpus import instance_names
from bandgan.training import TrainConfig, TrainingData


def tiny_config(**changes) -> TrainConfig:
    base = dict(batch_size=8, epochs=2, n_mels=8, context=1, n_blocks=1, g_base_width=2, d_base_width=2, n_da=2,
                windows_per_epoch=16, seed=3)
    base.update(changes)
    return TrainConfig(**base)


def tiny_data(config: TrainConfig, n: int = 24, seed: int = 0) -> TrainingData:
    """Random unpaired windows; domain A sits higher than B, like added noise energy."""
    rng = np.random.default_rng(seed)
    spec = config.arch
    shape = (n, 1, 2 * config.context + 1, config.n_mels)
    a = [(rng.normal(size=shape) + 1.0).astype(np.float32) for _ in range(spec.n_generators)]
    b = [rng.normal(size=shape).astype(np.float32) for _ in range(spec.n_generators)]
    return TrainingData(a, b, instance_names(spec))


def param_hash(inst) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(inst.state_arrays().items()):
        h.update(name.encode())
        h.update(arr.tobytes())
    return h.hexdigest()


@pytest.fixture
def small_corpus(tmp_path):
    """A written synthetic corpus: 2 train + 1 held-out pair per subset, 0.3 s clips."""
    from bandgan.corpus import synthesize_corpus, write_corpus

    corpus = synthesize_corpus(n_per_subset=3, seed=0, duration=0.3)
    paths = write_corpus(corpus, tmp_path / "corpus", heldout_per_subset=1)
    return corpus, paths
