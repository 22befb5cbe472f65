"""scikit-learn style wrapper: fit on unpaired noisy/clean utterances, transform noisy ones."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InputError
from .features import FeatureSequence, stack_context_windows
from .corpus import enhance_features
from .routing import ArchitectureSpec, Gender, Noise, SubsetKey, route, routed_instances
from .training import TrainConfig, TrainingData, build_bank, train_loop


def check_utterances(X, n_mels: int | None = None, name: str = "X") -> tuple[list[np.ndarray], bool]:
    """Normalize one (T, n_mels) matrix or a sequence of them to a list of float32 arrays.

    Returns the list and whether the input was a single matrix.
    """
    single = isinstance(X, np.ndarray) and X.ndim == 2
    items = [X] if single else list(X)
    if not items:
        raise InputError(f"{name} holds no utterances")
    out = []
    for i, x in enumerate(items):
        x = check_array(x, dtype=np.float32, input_name=f"{name}[{i}]")
        if n_mels is not None and x.shape[1] != n_mels:
            raise InputError(f"{name}[{i}] has {x.shape[1]} bins, expected {n_mels}")
        out.append(x)
    return out, single


def check_keys(keys, n: int, required: bool, name: str = "keys") -> list[SubsetKey | None]:
    """Accept SubsetKey objects or (gender, noise) pairs such as ("F", "BUS")."""
    if keys is None:
        if required:
            raise InputError(f"{name} are required to route utterances to more than one generator")
        return [None] * n
    keys = list(keys)
    if len(keys) != n:
        raise InputError(f"got {len(keys)} {name} for {n} utterances")
    out = []
    for k in keys:
        if k is None or isinstance(k, SubsetKey):
            out.append(k)
        else:
            gender, noise = k
            out.append(SubsetKey(Gender.parse(gender) if isinstance(gender, str) else Gender(gender),
                                 Noise.parse(noise) if isinstance(noise, str) else Noise(noise)))
    return out


class CycleGANEnhancer(TransformerMixin, BaseEstimator):
    """Unpaired log-Mel enhancement with a bank of CycleGAN instances.

    ``fit(X, clean=...)`` trains on noisy utterances ``X`` and an unpaired
    pool of clean utterances; ``transform`` maps noisy utterances through
    the routed noisy-to-clean generator. Utterances are (T, n_mels) arrays.
    """

    def __init__(self, arch="cyclegan-1g+1da", n_mels=40, context=5, n_blocks=9, g_base_width=64,
                 d_base_width=64, batch_size=512, lr=2e-4, epochs=200, windows_per_epoch=0, lambda_idt=0.5,
                 lambda_cycle=10.0, seed=0, jobs=1, d_norm="none", standardize=True,
                 g_zero_out=False):
        self.arch = arch
        self.n_mels = n_mels
        self.context = context
        self.n_blocks = n_blocks
        self.g_base_width = g_base_width
        self.d_base_width = d_base_width
        self.batch_size = batch_size
        self.lr = lr
        self.epochs = epochs
        self.windows_per_epoch = windows_per_epoch
        self.lambda_idt = lambda_idt
        self.lambda_cycle = lambda_cycle
        self.seed = seed
        self.jobs = jobs
        self.d_norm = d_norm
        self.standardize = standardize
        self.g_zero_out = g_zero_out

    def _config(self) -> TrainConfig:
        spec = ArchitectureSpec.parse(self.arch, self.n_mels)
        return TrainConfig(batch_size=self.batch_size, lr=self.lr, epochs=self.epochs, lambda_idt=self.lambda_idt,
                           lambda_cycle=self.lambda_cycle, variant=spec.variant.name, n_da=spec.n_da,
                           seed=self.seed, n_mels=self.n_mels, context=self.context, n_blocks=self.n_blocks,
                           g_base_width=self.g_base_width, d_base_width=self.d_base_width,
                           windows_per_epoch=self.windows_per_epoch, jobs=self.jobs, d_norm=self.d_norm,
                           standardize=int(bool(self.standardize)), g_zero_out=int(bool(self.g_zero_out)))

    def fit(self, X, y=None, *, clean, keys=None, clean_keys=None):
        config = self._config()
        spec = config.arch
        noisy, _ = check_utterances(X, self.n_mels)
        clean_items, _ = check_utterances(clean, self.n_mels, name="clean")
        keys = check_keys(keys, len(noisy), spec.n_generators > 1)
        clean_keys = check_keys(clean_keys, len(clean_items), False, name="clean_keys")
        pools_a = [[] for _ in range(spec.n_generators)]
        pools_b = [[] for _ in range(spec.n_generators)]
        for x, key in zip(noisy, keys):
            pools_a[route(spec, key)].append(stack_context_windows(x, self.context))
        for x, key in zip(clean_items, clean_keys):
            targets = routed_instances(spec, *((key.gender, key.noise) if key else (None, None)))
            for k in targets:
                pools_b[k].append(stack_context_windows(x, self.context))
        empty = np.zeros((0, 1, 2 * self.context + 1, self.n_mels), dtype=np.float32)
        join = lambda pool: np.concatenate(pool) if pool else empty  # noqa: E731
        names = [f"instance{k}" for k in range(spec.n_generators)]
        data = TrainingData([join(p) for p in pools_a], [join(p) for p in pools_b], names)
        self.bank_ = build_bank(config)
        self.history_ = train_loop(self.bank_, data, config).reports
        self.n_features_in_ = self.n_mels
        return self

    def transform(self, X, keys=None):
        check_is_fitted(self, "bank_")
        items, single = check_utterances(X, self.n_features_in_)
        keys = check_keys(keys, len(items), self.bank_.n_generators > 1)
        out = [enhance_features(self.bank_, FeatureSequence(x), key).frames for x, key in zip(items, keys)]
        return out[0] if single else out
