"""Known discrete distributions of true feature values given observed ones.

Each uncertain feature carries a table ``observed value -> [(true value,
probability), ...]``.  Features are treated as independent, so the joint
support for a query is the Cartesian product of the per-feature supports.
Features without a table are exact.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, SupportOverflowError

DEFAULT_MAX_SUPPORT = 4096
FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureErrorSpec:
    feature_index: int
    table: Mapping[float, tuple[tuple[float, float], ...]]

    def __post_init__(self):
        if self.feature_index < 0:
            raise ConfigError("feature_index must be non-negative")
        clean = {}
        for obs, outcomes in self.table.items():
            outcomes = tuple((float(v), float(p)) for v, p in outcomes)
            if not outcomes:
                raise ConfigError(f"feature {self.feature_index}: empty support for observed {obs}")
            probs = [p for _, p in outcomes]
            if any(not 0.0 <= p <= 1.0 for p in probs):
                raise ConfigError(f"feature {self.feature_index}: probabilities must lie in [0, 1]")
            if abs(math.fsum(probs) - 1.0) > 1e-12:
                raise ConfigError(f"feature {self.feature_index}: probabilities for observed "
                                  f"{obs} sum to {math.fsum(probs)!r}, not 1")
            clean[float(obs)] = outcomes
        if not clean:
            raise ConfigError(f"feature {self.feature_index}: empty table")
        object.__setattr__(self, "table", clean)

    def outcomes(self, observed: float) -> tuple[tuple[float, float], ...]:
        try:
            return self.table[float(observed)]
        except KeyError:
            raise DataError(f"feature {self.feature_index}: observed value {observed!r} "
                            f"has no entry in its error table") from None

    def to_dict(self) -> dict:
        return {"feature_index": self.feature_index,
                "table": [{"observed": obs, "outcomes": [{"value": v, "p": p} for v, p in outs]}
                          for obs, outs in self.table.items()]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureErrorSpec":
        table = {row["observed"]: [(o["value"], o["p"]) for o in row["outcomes"]]
                 for row in d["table"]}
        return cls(int(d["feature_index"]), table)


@dataclass(frozen=True)
class SupportPoint:
    x: np.ndarray
    probability: float


@dataclass(frozen=True)
class ErrorModel:
    """Collection of per-feature error tables.

    ``joint`` optionally replaces the independence assumption: it maps a
    tuple of observed values (one per feature in ``joint_features``) to a
    list of ``(true value tuple, probability)`` pairs.
    """

    specs: tuple[FeatureErrorSpec, ...] = ()
    max_support: int = DEFAULT_MAX_SUPPORT
    joint_features: tuple[int, ...] = ()
    joint: Mapping[tuple, Sequence] | None = field(default=None, compare=False)

    def __post_init__(self):
        specs = tuple(sorted(self.specs, key=lambda s: s.feature_index))
        idx = [s.feature_index for s in specs]
        if len(set(idx)) != len(idx):
            raise ConfigError(f"duplicate feature indices in error model: {idx}")
        if set(idx) & set(self.joint_features):
            raise ConfigError("a feature cannot appear in both the per-feature and joint tables")
        if self.max_support < 1:
            raise ConfigError("max_support must be positive")
        object.__setattr__(self, "specs", specs)
        object.__setattr__(self, "joint_features", tuple(int(j) for j in self.joint_features))
        if self.joint is not None:
            joint = {}
            for obs, outs in self.joint.items():
                outs = tuple((tuple(float(v) for v in vals), float(p)) for vals, p in outs)
                if abs(math.fsum(p for _, p in outs) - 1.0) > 1e-12:
                    raise ConfigError(f"joint table row {obs} does not sum to 1")
                joint[tuple(float(o) for o in obs)] = outs
            object.__setattr__(self, "joint", joint)

    @property
    def feature_indices(self) -> tuple[int, ...]:
        return tuple(s.feature_index for s in self.specs) + self.joint_features

    @property
    def is_degenerate(self) -> bool:
        return not self.specs and not self.joint_features

    def to_dict(self) -> dict:
        if self.joint is not None:
            raise ConfigError("joint tables are not serialisable in the version-1 format")
        return {"format": "eivuq.error_model", "version": FORMAT_VERSION,
                "max_support": self.max_support, "features": [s.to_dict() for s in self.specs]}

    @classmethod
    def from_dict(cls, doc: dict) -> "ErrorModel":
        if doc.get("format", "eivuq.error_model") != "eivuq.error_model":
            raise ConfigError("not an eivuq error-model document")
        if doc.get("version", FORMAT_VERSION) != FORMAT_VERSION:
            raise ConfigError(f"unsupported error-model version {doc.get('version')}")
        specs = tuple(FeatureErrorSpec.from_dict(f) for f in doc.get("features", []))
        return cls(specs, int(doc.get("max_support", DEFAULT_MAX_SUPPORT)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ErrorModel":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"error-model file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: malformed error model ({exc})") from None


def degenerate(max_support: int = DEFAULT_MAX_SUPPORT) -> ErrorModel:
    """Error-free inputs: every observation is its own truth with probability 1."""
    return ErrorModel((), max_support)


def bayes_posterior(sensitivity: float, specificity: float, prevalence: float) -> tuple[float, float]:
    """``(P(true=1 | obs=0), P(true=1 | obs=1))`` for a binary diagnostic test."""
    if not 0.0 < sensitivity <= 1.0 or not 0.0 < specificity <= 1.0:
        raise ConfigError("sensitivity and specificity must lie in (0, 1]")
    if not 0.0 < prevalence < 1.0:
        raise ConfigError("prevalence must lie in (0, 1)")
    pos = sensitivity * prevalence + (1.0 - specificity) * (1.0 - prevalence)
    neg = (1.0 - sensitivity) * prevalence + specificity * (1.0 - prevalence)
    if pos <= 0.0:
        raise DataError("observation 1 has probability zero under these test characteristics")
    if neg <= 0.0:
        raise DataError("observation 0 has probability zero under these test characteristics")
    return (1.0 - sensitivity) * prevalence / neg, sensitivity * prevalence / pos


def from_sensitivity_specificity(feature_index: int, sensitivity: float, specificity: float,
                                 prevalence: float) -> FeatureErrorSpec:
    """Error table for a binary feature read through an imperfect test.

    Zero-probability outcomes are dropped, so a perfect test yields a
    degenerate table.
    """
    q0, q1 = bayes_posterior(sensitivity, specificity, prevalence)
    table = {}
    for obs, q in ((0.0, q0), (1.0, q1)):
        outs = [(v, p) for v, p in ((0.0, 1.0 - q), (1.0, q)) if p > 0.0]
        table[obs] = outs
    return FeatureErrorSpec(feature_index, table)


def support_size(model: ErrorModel, observed) -> int:
    size = 1
    for s in model.specs:
        size *= sum(1 for _, p in s.outcomes(observed[s.feature_index]) if p > 0)
    if model.joint_features:
        size *= len(_joint_outcomes(model, observed))
    return size


def _joint_outcomes(model: ErrorModel, observed):
    key = tuple(float(observed[j]) for j in model.joint_features)
    try:
        outs = model.joint[key]
    except KeyError:
        raise DataError(f"features {model.joint_features}: observed values {key} "
                        f"have no entry in the joint table") from None
    return [o for o in outs if o[1] > 0]


def enumerate_support(model: ErrorModel, observed) -> list[SupportPoint]:
    """Every candidate true input for ``observed`` with its probability.

    Order is lexicographic over features by index, each following its table
    order (joint-table features come last).  Zero-probability branches are
    pruned.
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 1:
        raise DataError("observed must be a single feature vector")
    for j in model.feature_indices:
        if j >= observed.shape[0]:
            raise DataError(f"error model refers to feature {j}, but the query has "
                            f"{observed.shape[0]} features")
    size = support_size(model, observed)
    if size > model.max_support:
        raise SupportOverflowError(size, model.max_support)

    axes = [[(s.feature_index, v, p) for v, p in s.outcomes(observed[s.feature_index]) if p > 0]
            for s in model.specs]
    if model.joint_features:
        axes.append([(model.joint_features, vals, p) for vals, p in _joint_outcomes(model, observed)])

    points = []
    for combo in itertools.product(*axes):
        x = observed.copy()
        prob = 1.0
        for idx, val, p in combo:
            x[list(idx) if isinstance(idx, tuple) else idx] = val
            prob *= p
        x.setflags(write=False)
        points.append(SupportPoint(x, prob))
    return points


__all__ = ["FeatureErrorSpec", "ErrorModel", "SupportPoint", "degenerate",
           "from_sensitivity_specificity", "bayes_posterior", "enumerate_support",
           "support_size", "DEFAULT_MAX_SUPPORT"]
