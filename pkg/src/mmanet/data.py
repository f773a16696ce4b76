"""Synthetic multimodal datasets and modality-dropout patterns.

Each modality ``j`` draws one unit-norm mean direction per class and scales
it by ``snr[j]``; samples are that mean plus standard Gaussian noise.  The
per-modality (and per-combination) Bayes error of this family has a closed
form for two classes, which the tests and the mining checks lean on.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigError

__all__ = [
    "DatasetSpec",
    "DropoutPattern",
    "ModalityBatch",
    "ModalityDataset",
    "generate_dataset",
    "class_means",
    "bayes_error",
    "enumerate_patterns",
    "sample_dropout_pattern",
    "sample_dropout_patterns",
    "apply_dropout",
    "write_dataset_csv",
    "read_dataset_csv",
]


@dataclass(frozen=True)
class DatasetSpec:
    num_modalities: int = 3
    num_classes: int = 2
    samples_per_class: int = 200
    feature_dim_per_modality: int = 16
    snr_per_modality: tuple[float, ...] = (0.5, 2.0, 0.5)
    seed: int = 0
    test_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "snr_per_modality", tuple(float(s) for s in self.snr_per_modality))
        self.validate()

    def validate(self):
        if self.num_modalities < 2:
            raise ConfigError("num_modalities", f"must be >= 2, got {self.num_modalities}")
        if self.num_classes < 2:
            raise ConfigError("num_classes", f"must be >= 2, got {self.num_classes}")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class", f"must be >= 2, got {self.samples_per_class}")
        if self.feature_dim_per_modality < 1:
            raise ConfigError("feature_dim_per_modality", f"must be >= 1, got {self.feature_dim_per_modality}")
        if len(self.snr_per_modality) != self.num_modalities:
            raise ConfigError(
                "snr_per_modality",
                f"length {len(self.snr_per_modality)} != num_modalities {self.num_modalities}",
            )
        if any(not np.isfinite(s) or s < 0 for s in self.snr_per_modality):
            raise ConfigError("snr_per_modality", "entries must be finite and nonnegative")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction", f"must be in (0, 1), got {self.test_fraction}")


@dataclass(frozen=True)
class DropoutPattern:
    """Which modalities are present: ``present[j]`` is the indicator for modality j."""

    present: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "present", tuple(bool(p) for p in self.present))
        if not any(self.present):
            raise ValueError("a dropout pattern must keep at least one modality")

    @property
    def m(self) -> int:
        return len(self.present)

    def as_array(self) -> np.ndarray:
        return np.array(self.present, dtype=bool)

    def label(self, names: Sequence[str] | None = None) -> str:
        names = names or [f"M{j}" for j in range(self.m)]
        return "+".join(n for n, p in zip(names, self.present) if p)

    def __len__(self):
        return len(self.present)


@dataclass
class ModalityDataset:
    """A collection of complete-modality samples (train or test split)."""

    features: list[np.ndarray]
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if any(f.shape[0] != n for f in self.features):
            raise ValueError("all modality arrays must share the sample dimension")

    def __len__(self):
        return len(self.labels)

    @property
    def num_modalities(self) -> int:
        return len(self.features)

    def subset(self, idx) -> "ModalityDataset":
        return ModalityDataset([f[idx] for f in self.features], self.labels[idx])


@dataclass
class ModalityBatch:
    """One mini-batch: per-modality arrays, labels and a ``b x m`` presence mask."""

    features: list
    labels: object
    patterns: np.ndarray = field(default=None)

    def __post_init__(self):
        b = len(self.labels)
        if any(f.shape[0] != b for f in self.features):
            raise ValueError("all modality arrays must share the batch dimension")
        if self.patterns is None:
            self.patterns = np.ones((b, len(self.features)), dtype=bool)
        self.patterns = np.asarray(self.patterns, dtype=bool)
        if self.patterns.shape != (b, len(self.features)):
            raise ValueError(f"patterns must have shape {(b, len(self.features))}, got {self.patterns.shape}")
        if not self.patterns.any(axis=1).all():
            raise ValueError("every sample must keep at least one modality")

    def __len__(self):
        return len(self.labels)


def class_means(spec: DatasetSpec) -> list[np.ndarray]:
    """Per-modality ``k x d`` class-mean matrices (unit directions times snr)."""
    return _draw_means(spec, np.random.default_rng(spec.seed))


def _draw_means(spec, rng):
    means = []
    for snr in spec.snr_per_modality:
        u = rng.standard_normal((spec.num_classes, spec.feature_dim_per_modality))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        means.append(snr * u)
    return means


def generate_dataset(spec: DatasetSpec) -> tuple[ModalityDataset, ModalityDataset]:
    """Draw a train/test pair, disjoint and stratified by class.

    A pure function of ``spec``: the same spec yields bit-identical arrays.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = _draw_means(spec, rng)
    k, n_c = spec.num_classes, spec.samples_per_class
    labels = np.repeat(np.arange(k), n_c)
    features = [
        mu[labels] + rng.standard_normal((k * n_c, spec.feature_dim_per_modality))
        for mu in means
    ]

    n_test = max(1, min(n_c - 1, int(round(spec.test_fraction * n_c))))
    train_idx, test_idx = [], []
    for c in range(k):
        idx = rng.permutation(np.flatnonzero(labels == c))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    full = ModalityDataset(features, labels)
    return full.subset(train_idx), full.subset(test_idx)


def bayes_error(spec: DatasetSpec, pattern=None, mc_samples=200_000) -> float:
    """Bayes error of the generator restricted to the modalities in ``pattern``.

    Two classes: ``Phi(-||mu_0 - mu_1|| / 2)`` over the concatenated present
    modalities.  More classes have no closed form, so a Monte Carlo estimate
    of the nearest-mean (Bayes) rule is returned with a fixed seed.
    """
    if pattern is None:
        pattern = DropoutPattern((True,) * spec.num_modalities)
    present = np.asarray(getattr(pattern, "present", pattern), dtype=bool)
    means = np.concatenate([mu for mu, p in zip(class_means(spec), present) if p], axis=1)
    if spec.num_classes == 2:
        return float(norm.cdf(-np.linalg.norm(means[0] - means[1]) / 2.0))

    rng = np.random.default_rng(spec.seed + 1)
    y = rng.integers(spec.num_classes, size=mc_samples)
    x = means[y] + rng.standard_normal((mc_samples, means.shape[1]))
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(-1)
    return float(np.mean(d2.argmin(axis=1) != y))


def enumerate_patterns(m: int) -> tuple[list[DropoutPattern], list[DropoutPattern]]:
    """Return ``(mining, full)`` pattern families for ``m`` modalities.

    ``mining[0]`` keeps everything and ``mining[i]`` drops only modality
    ``i - 1``.  ``full`` lists the ``2**m - 1`` nonempty patterns in binary
    counting order with modality 0 as the most significant bit.
    """
    if m < 2:
        raise ValueError(f"need at least two modalities, got {m}")
    mining = [DropoutPattern((True,) * m)]
    for i in range(m):
        mining.append(DropoutPattern(tuple(j != i for j in range(m))))
    full = [DropoutPattern(bits) for bits in itertools.product((False, True), repeat=m) if any(bits)]
    return mining, full


def sample_dropout_pattern(m: int, rng: np.random.Generator, policy="uniform", keep_prob=0.5) -> DropoutPattern:
    return DropoutPattern(tuple(sample_dropout_patterns(1, m, rng, policy, keep_prob)[0]))


def sample_dropout_patterns(b: int, m: int, rng: np.random.Generator, policy="uniform", keep_prob=0.5) -> np.ndarray:
    """Draw ``b`` nonempty presence rows as a ``b x m`` boolean array.

    ``uniform`` picks each of the ``2**m - 1`` nonempty subsets with equal
    probability.  ``bernoulli`` keeps each modality independently with
    ``keep_prob`` and redraws all-dropped rows.
    """
    if m < 2:
        raise ValueError(f"need at least two modalities, got {m}")
    if policy == "uniform":
        codes = rng.integers(1, 2**m, size=b)
        shifts = np.arange(m - 1, -1, -1)
        return ((codes[:, None] >> shifts) & 1).astype(bool)
    if policy == "bernoulli":
        if not 0.0 < keep_prob <= 1.0:
            raise ConfigError("dropout.keep_prob", f"must be in (0, 1], got {keep_prob}")
        out = rng.random((b, m)) < keep_prob
        empty = ~out.any(axis=1)
        while empty.any():
            out[empty] = rng.random((int(empty.sum()), m)) < keep_prob
            empty = ~out.any(axis=1)
        return out
    raise ConfigError("dropout.policy", f"unknown policy {policy!r}")


def _presence_columns(pattern, b, m):
    present = np.asarray(getattr(pattern, "present", pattern), dtype=bool)
    if present.ndim == 1:
        if present.shape[0] != m:
            raise ValueError(f"pattern has {present.shape[0]} entries, expected {m}")
        return np.broadcast_to(present, (b, m))
    if present.shape != (b, m):
        raise ValueError(f"pattern mask has shape {present.shape}, expected {(b, m)}")
    return present


def apply_dropout(features, pattern):
    """Replace each dropped modality by zeros of the same shape.

    ``pattern`` is one :class:`DropoutPattern` (applied to every row) or a
    per-sample ``b x m`` mask.  Works on numpy arrays and torch tensors.
    Surviving modalities are passed through unscaled.
    """
    m = len(features)
    b = features[0].shape[0]
    if any(f.shape[0] != b for f in features):
        raise ValueError("all modality arrays must share the batch dimension")
    present = _presence_columns(pattern, b, m)
    out = []
    for j, f in enumerate(features):
        keep = present[:, j]
        if keep.all():
            out.append(f)
            continue
        if hasattr(f, "masked_fill"):
            import torch

            mask = torch.as_tensor(~keep, device=f.device).reshape((b,) + (1,) * (f.ndim - 1))
            out.append(f.masked_fill(mask, 0.0))
        else:
            f = np.asarray(f)
            out.append(np.where(keep.reshape((b,) + (1,) * (f.ndim - 1)), f, np.zeros_like(f)))
    return out


def write_dataset_csv(path, dataset: ModalityDataset):
    """Dump one sample per row; columns ``m<j>_f<i>`` then ``label``."""
    header = [f"m{j}_f{i}" for j, f in enumerate(dataset.features) for i in range(f.shape[1])]
    header.append("label")
    stacked = np.concatenate(dataset.features, axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row, y in zip(stacked, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def read_dataset_csv(path) -> ModalityDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "label":
        raise ValueError("last column must be 'label'")
    modality = [int(h.split("_")[0][1:]) for h in header[:-1]]
    values = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), -1)
    labels = np.array([int(r[-1]) for r in body], dtype=np.int64)
    modality = np.array(modality)
    features = [values[:, modality == j] for j in range(modality.max() + 1)]
    return ModalityDataset(features, labels)
