"""Prediction uncertainty under discrete input errors and parameter uncertainty.

Pipeline for one observed query ``xi``:

1. enumerate the candidate true inputs ``x`` with probabilities ``p(x)``;
2. evaluate every ensemble member at every candidate, giving logits
   ``z_t(x) = (z0, z1)``;
3. pool the ``T * |support|`` logit pairs with weights ``p(x) / T`` into the
   means of ``z0`` and ``z1`` and the variance of ``delta = z1 - z0``;
4. push the moments through the second-order expansion of the logistic::

       E[p1] ~= s + 0.5 * s * (1 - s) * (1 - 2 s) * Var[delta],
       s = logistic(mean z1 - mean z0)

The "EIV" regime uses the error model's support; the "non-EIV" regime uses
the observation alone.  ``exact_predictive`` averages the logistic directly
over the same weighted cloud and serves as the oracle for step 4.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .ensemble import EnsembleModel, logits_over
from .errormodel import ErrorModel, SupportPoint, degenerate, enumerate_support
from .errors import DataError, NumericalError
from .nncore import logistic

_VAR_TOL = 1e-12


@dataclass(frozen=True)
class MomentEstimate:
    mu0: float
    mu1: float
    var_delta: float
    regime: str = "eiv"

    @property
    def mu_delta(self) -> float:
        return self.mu1 - self.mu0


@dataclass(frozen=True)
class PredictiveEstimate:
    p1: float
    p1_raw: float
    predicted_class: int
    uncertainty: float


@dataclass(frozen=True)
class UncertaintyReport:
    u_eiv: float
    u_noneiv: float
    class_eiv: int
    class_noneiv: int
    flip: bool
    p1_exact_eiv: float
    p1_exact_noneiv: float
    entropy_noneiv: float
    taylor_gap: float
    p1_eiv: float
    p1_noneiv: float
    var_delta_eiv: float
    var_delta_noneiv: float
    query_id: int = 0
    true_label: int | None = None


def _check_prob(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if not np.isfinite(arr).all() or (arr < 0).any() or (arr > 1).any():
        raise ValueError(f"probability outside [0, 1]: {p}")
    return arr


def variation_ratio(p):
    """``1 - max(p, 1 - p)`` for a class-1 probability ``p``."""
    arr = _check_prob(p)
    out = 1.0 - np.maximum(arr, 1.0 - arr)
    return float(out) if out.ndim == 0 else out


def predictive_entropy(p):
    """Binary Shannon entropy in nats, with ``0 * log 0 = 0``."""
    arr = _check_prob(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(arr > 0, arr * np.log(arr), 0.0)
              + np.where(arr < 1, (1 - arr) * np.log1p(-arr), 0.0))
    return float(h) if h.ndim == 0 else h


def taylor_expected_prob(mu0: float, mu1: float, var_delta: float) -> PredictiveEstimate:
    """Second-order expected class-1 probability.

    ``p1_raw`` is the unclamped quadratic value; ``p1`` is clipped to
    [0, 1].  Ties at 0.5 predict class 1.
    """
    vals = (mu0, mu1, var_delta)
    if not all(math.isfinite(v) for v in vals):
        raise NumericalError(f"non-finite moments: {vals}")
    if var_delta < 0:
        raise ValueError(f"var_delta must be non-negative, got {var_delta}")
    s = logistic(mu1 - mu0)
    raw = s + 0.5 * s * (1.0 - s) * (1.0 - 2.0 * s) * var_delta
    p1 = min(max(raw, 0.0), 1.0)
    return PredictiveEstimate(p1, raw, int(p1 >= 0.5), 1.0 - max(p1, 1.0 - p1))


def _support_probs(support) -> np.ndarray:
    if len(support) and isinstance(support[0], SupportPoint):
        probs = np.array([pt.probability for pt in support], dtype=np.float64)
    else:
        probs = np.asarray(support, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise DataError("support must be a non-empty sequence")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise DataError(f"support probabilities sum to {probs.sum()!r}, not 1")
    return probs


def _cloud(logits: np.ndarray, support) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3 or z.shape[2] != 2:
        raise DataError(f"logits must have shape (T, n_support, 2), got {z.shape}")
    probs = _support_probs(support)
    if z.shape[1] != probs.size:
        raise DataError(f"{z.shape[1]} logit columns for {probs.size} support points")
    if not np.isfinite(z).all():
        raise NumericalError("logits contain non-finite values")
    w = np.broadcast_to(probs / z.shape[0], z.shape[:2])
    return z[..., 0], z[..., 1], z[..., 1] - z[..., 0], w


def moments_eiv(logits: np.ndarray, support, regime: str = "eiv") -> MomentEstimate:
    """Weighted moments over members and support points.

    ``support`` is a list of :class:`SupportPoint` (or bare probabilities)
    aligned with the columns of ``logits``.  The variance is the population
    variance of the weighted cloud (no small-sample correction), evaluated
    in centred form.
    """
    z0, z1, delta, w = _cloud(logits, support)
    mean_delta = float(np.sum(w * delta))
    var = float(np.sum(w * (delta - mean_delta) ** 2))
    if var < 0:
        if var < -_VAR_TOL:
            raise NumericalError(f"negative variance {var}")
        var = 0.0
    return MomentEstimate(float(np.sum(w * z0)), float(np.sum(w * z1)), var, regime)


def moments_noneiv(logits: np.ndarray) -> MomentEstimate:
    """Ensemble-only moments from the logits at the observed input."""
    z = np.asarray(logits)
    if z.ndim != 3 or z.shape[1] != 1:
        raise DataError(f"non-EIV moments need exactly one candidate column, got shape {z.shape}")
    return moments_eiv(z, [1.0], regime="non_eiv")


def exact_probability(logits: np.ndarray, support) -> float:
    """Enumeration-exact ``sum_x sum_t p(x) / T * logistic(delta_t(x))``."""
    _, _, delta, w = _cloud(logits, support)
    return float(np.sum(w * logistic(delta)))


def _observed(model: EnsembleModel, observed) -> np.ndarray:
    x = np.asarray(observed, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise DataError(f"query must have {model.input_dim} features, got shape {x.shape}")
    return x


def u_eiv(model: EnsembleModel, error_model: ErrorModel, observed) -> PredictiveEstimate:
    x = _observed(model, observed)
    support = enumerate_support(error_model, x)
    logits = logits_over(model, [pt.x for pt in support])
    m = moments_eiv(logits, support)
    return taylor_expected_prob(m.mu0, m.mu1, m.var_delta)


def u_noneiv(model: EnsembleModel, observed) -> PredictiveEstimate:
    x = _observed(model, observed)
    m = moments_noneiv(logits_over(model, [x]))
    return taylor_expected_prob(m.mu0, m.mu1, m.var_delta)


def exact_predictive(model: EnsembleModel, error_model: ErrorModel, observed) -> tuple[float, int]:
    x = _observed(model, observed)
    support = enumerate_support(error_model, x)
    p1 = exact_probability(logits_over(model, [pt.x for pt in support]), support)
    return p1, int(p1 >= 0.5)


def _assemble(z_obs: np.ndarray, z_sup: np.ndarray, probs: np.ndarray,
              query_id: int, true_label) -> UncertaintyReport:
    m_non = moments_noneiv(z_obs)
    m_eiv = moments_eiv(z_sup, probs)
    est_non = taylor_expected_prob(m_non.mu0, m_non.mu1, m_non.var_delta)
    est_eiv = taylor_expected_prob(m_eiv.mu0, m_eiv.mu1, m_eiv.var_delta)
    exact_eiv = exact_probability(z_sup, probs)
    exact_non = exact_probability(z_obs, [1.0])
    return UncertaintyReport(
        u_eiv=est_eiv.uncertainty, u_noneiv=est_non.uncertainty,
        class_eiv=est_eiv.predicted_class, class_noneiv=est_non.predicted_class,
        flip=est_eiv.predicted_class != est_non.predicted_class,
        p1_exact_eiv=exact_eiv, p1_exact_noneiv=exact_non,
        entropy_noneiv=predictive_entropy(est_non.p1),
        taylor_gap=abs(exact_eiv - est_eiv.p1),
        p1_eiv=est_eiv.p1, p1_noneiv=est_non.p1,
        var_delta_eiv=m_eiv.var_delta, var_delta_noneiv=m_non.var_delta,
        query_id=query_id, true_label=None if true_label is None else int(true_label),
    )


def uq_report(model: EnsembleModel, error_model: ErrorModel, observed,
              query_id: int = 0, true_label: int | None = None) -> UncertaintyReport:
    """Both regimes, their predicted classes, the flip flag and the oracle values."""
    return uq_reports(model, error_model, np.asarray(observed, dtype=np.float64)[None, :],
                      true_labels=None if true_label is None else [true_label],
                      query_ids=[query_id])[0]


def uq_reports(model: EnsembleModel, error_model: ErrorModel, observed: np.ndarray,
               true_labels: Sequence[int] | None = None,
               query_ids: Sequence[int] | None = None) -> list[UncertaintyReport]:
    """Reports for a batch of queries with a single ensemble pass.

    Support points identical to the observation reuse its logit column, so
    under an error-free model the two regimes see the same numbers.
    """
    x = np.asarray(observed, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DataError(f"queries must have shape (n, {model.input_dim}), got {x.shape}")
    n = x.shape[0]
    if true_labels is not None and len(true_labels) != n:
        raise DataError("true_labels length does not match the number of queries")
    ids = list(range(n)) if query_ids is None else list(query_ids)

    rows, layout = [], []
    for i in range(n):
        obs_col = len(rows)
        rows.append(x[i])
        cols, probs = [], []
        for pt in enumerate_support(error_model, x[i]):
            if np.array_equal(pt.x, x[i]):
                cols.append(obs_col)
            else:
                cols.append(len(rows))
                rows.append(pt.x)
            probs.append(pt.probability)
        layout.append((obs_col, cols, np.array(probs)))
    z = logits_over(model, np.array(rows))

    out = []
    for i, (obs_col, cols, probs) in enumerate(layout):
        label = None if true_labels is None else true_labels[i]
        out.append(_assemble(z[:, [obs_col]], z[:, cols], probs, ids[i], label))
    return out


CSV_COLUMNS = ("query_id", "class_eiv", "class_noneiv", "flip", "u_eiv", "u_noneiv",
               "p1_exact_eiv", "p1_exact_noneiv", "entropy_noneiv", "taylor_gap", "true_label",
               "p1_eiv", "p1_noneiv", "var_delta_eiv", "var_delta_noneiv")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_reports_csv(reports: Sequence[UncertaintyReport], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_reports_csv(path: str | Path) -> list[UncertaintyReport]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"report file not found: {path}")
    types = {f.name: f.type for f in fields(UncertaintyReport)}
    out = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for name, text in row.items():
                kind = types[name]
                if name == "true_label":
                    kw[name] = None if text == "" else int(text)
                elif name == "flip":
                    kw[name] = text == "1"
                elif kind in ("int", int):
                    kw[name] = int(text)
                else:
                    kw[name] = float(text)
            out.append(UncertaintyReport(**kw))
    return out


__all__ = ["MomentEstimate", "PredictiveEstimate", "UncertaintyReport", "variation_ratio",
           "predictive_entropy", "taylor_expected_prob", "moments_eiv", "moments_noneiv",
           "exact_probability", "u_eiv", "u_noneiv", "exact_predictive", "uq_report",
           "uq_reports", "write_reports_csv", "read_reports_csv", "degenerate"]
