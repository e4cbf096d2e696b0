"""Synthetic tabular scenarios with a binary observation channel.

Ground-truth features are drawn first, labels come from a known rule applied
to the truth, and the designated binary features are then passed through a
diagnostic-test channel (sensitivity / specificity) to give the observed
values.  Both copies are kept so models can be trained on the truth and
queried with the observations.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .errors import ConfigError, DataError

LABEL_RULES = ("linear", "xor_interaction", "threshold_mixture")
TRUE_PREFIX = "true__"


@dataclass(frozen=True)
class Dataset:
    """Observed features, ground-truth features and binary labels.

    ``true_features`` defaults to a copy of ``features`` (an error-free
    dataset).  Arrays are made read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    true_features: np.ndarray | None = None
    columns: tuple[str, ...] = ()
    noisy_indices: tuple[int, ...] = ()

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        y = np.asarray(self.labels)
        if y.shape != (x.shape[0],):
            raise DataError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if y.size and not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        y = y.astype(np.int64)
        t = x.copy() if self.true_features is None else np.array(
            self.true_features, dtype=np.float64, copy=True)
        if t.shape != x.shape:
            raise DataError(f"true_features shape {t.shape} != features shape {x.shape}")
        cols = tuple(self.columns) or tuple(f"f{j}" for j in range(x.shape[1]))
        if len(cols) != x.shape[1]:
            raise DataError(f"{len(cols)} column names for {x.shape[1]} features")
        noisy = tuple(int(j) for j in self.noisy_indices)
        if any(j < 0 or j >= x.shape[1] for j in noisy):
            raise DataError(f"noisy index out of range: {noisy}")
        clean = np.setdiff1d(np.arange(x.shape[1]), noisy)
        if not np.array_equal(x[:, clean], t[:, clean]):
            raise DataError("observed and true features differ outside the noisy columns")
        for arr in (x, y, t):
            arr.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "true_features", t)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "noisy_indices", noisy)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def truth(self) -> "Dataset":
        """The same rows with the ground truth used as observed values."""
        return replace(self, features=self.true_features)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return replace(self, features=self.features[rows], labels=self.labels[rows],
                       true_features=self.true_features[rows])


@dataclass(frozen=True)
class ScenarioSpec:
    n_rows: int = 5000
    n_numeric_features: int = 8
    noisy_feature_indices: tuple[int, ...] = (8,)
    sensitivity: float = 0.64
    specificity: float = 0.98
    label_rule: str = "threshold_mixture"
    label_noise: float = 0.15
    seed: int = 0
    # ground-truth P(feature = 1) for the binary features
    noisy_prevalence: float = 0.9
    # threshold_mixture only: share of rows whose label is the first noisy feature
    decisive_fraction: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "noisy_feature_indices",
                           tuple(int(j) for j in self.noisy_feature_indices))
        if self.n_rows < 1:
            raise ConfigError("n_rows must be positive")
        if self.n_numeric_features < 0:
            raise ConfigError("n_numeric_features must be non-negative")
        p = self.n_features
        idx = self.noisy_feature_indices
        if len(set(idx)) != len(idx) or any(j < 0 or j >= p for j in idx):
            raise ConfigError(f"noisy_feature_indices {idx} invalid for {p} features")
        for name in ("sensitivity", "specificity"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if self.label_rule not in LABEL_RULES:
            raise ConfigError(f"label_rule must be one of {LABEL_RULES}, got {self.label_rule!r}")
        if not 0.0 <= self.label_noise < 0.5:
            raise ConfigError("label_noise must lie in [0, 0.5)")
        if not 0.0 < self.noisy_prevalence < 1.0:
            raise ConfigError("noisy_prevalence must lie in (0, 1)")
        if not 0.0 < self.decisive_fraction < 1.0:
            raise ConfigError("decisive_fraction must lie in (0, 1)")
        if self.label_rule in ("xor_interaction", "threshold_mixture"):
            if self.n_numeric_features < 2 and not idx:
                raise ConfigError(f"{self.label_rule} needs two numeric features "
                                  "or one numeric and one noisy feature")
            if self.n_numeric_features < 1:
                raise ConfigError(f"{self.label_rule} needs at least one numeric feature")
        if self.label_rule == "threshold_mixture" and (not idx or self.n_numeric_features < 2):
            raise ConfigError("threshold_mixture needs a noisy feature and two numeric features")

    @property
    def n_features(self) -> int:
        return self.n_numeric_features + len(self.noisy_feature_indices)

    def column_names(self) -> tuple[str, ...]:
        names, k_num, k_bin = [], 0, 0
        for j in range(self.n_features):
            if j in self.noisy_feature_indices:
                names.append(f"bin{k_bin}")
                k_bin += 1
            else:
                names.append(f"num{k_num}")
                k_num += 1
        return tuple(names)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noisy_feature_indices"] = list(self.noisy_feature_indices)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario fields: {sorted(extra)}")
        return cls(**d)


def _labels(spec: ScenarioSpec, truth: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    noisy = list(spec.noisy_feature_indices)
    numeric = [j for j in range(spec.n_features) if j not in noisy]
    coef = rng.normal(size=spec.n_features)
    if spec.label_rule == "linear":
        centred = truth.copy()
        centred[:, noisy] -= spec.noisy_prevalence
        return (centred @ coef > 0).astype(np.int64)
    if spec.label_rule == "xor_interaction":
        a = truth[:, numeric[0]] > 0
        b = truth[:, noisy[0]] > 0.5 if noisy else truth[:, numeric[1]] > 0
        return (a ^ b).astype(np.int64)
    gate_col, rest = numeric[0], numeric[1:]
    cut = NormalDist().inv_cdf(1.0 - spec.decisive_fraction)
    gated = truth[:, gate_col] > cut
    linear = truth[:, rest] @ coef[rest] > 0
    return np.where(gated, truth[:, noisy[0]] > 0.5, linear).astype(np.int64)


def generate(spec: ScenarioSpec) -> Dataset:
    """Draw a dataset for ``spec``; identical specs give identical datasets."""
    rng = np.random.default_rng(spec.seed)
    n, noisy = spec.n_rows, list(spec.noisy_feature_indices)
    numeric = [j for j in range(spec.n_features) if j not in noisy]
    truth = np.empty((n, spec.n_features))
    truth[:, numeric] = rng.normal(size=(n, len(numeric)))
    truth[:, noisy] = (rng.random((n, len(noisy))) < spec.noisy_prevalence).astype(np.float64)

    labels = _labels(spec, truth, rng)
    flip = rng.random(n) < spec.label_noise
    labels = np.where(flip, 1 - labels, labels)

    observed = truth.copy()
    u = rng.random((n, len(noisy)))
    true_pos = truth[:, noisy] > 0.5
    observed[:, noisy] = np.where(true_pos, u < spec.sensitivity,
                                  u >= spec.specificity).astype(np.float64)
    return Dataset(features=observed, labels=labels, true_features=truth,
                   columns=spec.column_names(), noisy_indices=spec.noisy_feature_indices)


def split_indices(n_rows: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = math.floor(n_rows * train_fraction)
    if n_train == 0 or n_train == n_rows:
        raise DataError(f"train_fraction {train_fraction} leaves an empty side for {n_rows} rows")
    perm = np.random.default_rng(seed).permutation(n_rows)
    return perm[:n_train], perm[n_train:]


def split(data: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle into a train part of floor(N*f) rows and the remainder."""
    train_idx, test_idx = split_indices(data.n_rows, train_fraction, seed)
    return data.subset(train_idx), data.subset(test_idx)


def write_csv(data: Dataset, path: str | Path) -> None:
    path = Path(path)
    header = list(data.columns) + [TRUE_PREFIX + c for c in data.columns] + ["label"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for obs, tru, lab in zip(data.features, data.true_features, data.labels):
            w.writerow([repr(float(v)) for v in obs] + [repr(float(v)) for v in tru] + [int(lab)])


def read_csv(path: str | Path, noisy_indices=()) -> Dataset:
    """Read a dataset CSV; ``true__`` columns are optional."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or "label" not in rows[0]:
        raise DataError(f"{path}: header must contain a 'label' column")
    header = rows[0]
    lab_col = header.index("label")
    obs_cols = [i for i, h in enumerate(header) if i != lab_col and not h.startswith(TRUE_PREFIX)]
    names = [header[i] for i in obs_cols]
    true_cols = [header.index(TRUE_PREFIX + c) if TRUE_PREFIX + c in header else None for c in names]
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from None
    if body.size == 0:
        raise DataError(f"{path}: no data rows")
    x = body[:, obs_cols]
    t = x.copy()
    for j, tc in enumerate(true_cols):
        if tc is not None:
            t[:, j] = body[:, tc]
    labels = body[:, lab_col]
    if not np.isin(labels, (0.0, 1.0)).all():
        raise DataError(f"{path}: labels must be 0 or 1")
    if not noisy_indices:
        noisy_indices = tuple(int(j) for j in np.flatnonzero((x != t).any(axis=0)))
    return Dataset(features=x, labels=labels.astype(np.int64), true_features=t,
                   columns=tuple(names), noisy_indices=tuple(noisy_indices))


def write_sidecar(spec: ScenarioSpec, data: Dataset, path: str | Path) -> None:
    doc = {"scenario": spec.to_dict(), "columns": list(data.columns),
           "noisy_indices": list(data.noisy_indices), "n_rows": data.n_rows}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


__all__ = ["Dataset", "ScenarioSpec", "generate", "split", "split_indices",
           "write_csv", "read_csv", "write_sidecar", "LABEL_RULES"]
