"""Monte Carlo dropout baseline.

One network is trained with dropout; at prediction time the dropout stays
on and the class-1 probability is averaged over ``n_passes`` stochastic
forward passes.  The random stream for a query is derived from the model
seed and a digest of the query's bytes, so repeated calls agree.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._seeding import derive_seed, hash_vector
from .datagen import Dataset
from .errors import ConfigError, DataError
from .nncore import (Network, NetworkSpec, TrainConfig, _as_batch, _forward, dropout_masks,
                     init_network, probs_from_logits, train)
from .uq import predictive_entropy, variation_ratio


@dataclass(frozen=True)
class McDropoutModel:
    net: Network
    n_passes: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.net.spec.dropout_rate < 1.0:
            raise ConfigError("MC-dropout needs a dropout_rate in (0, 1)")
        if self.n_passes < 1:
            raise ConfigError("n_passes must be at least 1")

    def save(self, path: str | Path) -> None:
        doc = {"format": "eivuq.mc_dropout", "version": 1, "n_passes": self.n_passes,
               "seed": self.seed, "network": self.net.to_dict()}
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "McDropoutModel":
        path = Path(path)
        if not path.exists():
            raise DataError(f"no MC-dropout model at {path}")
        doc = json.loads(path.read_text())
        return cls(Network.from_dict(doc["network"]), doc["n_passes"], doc["seed"])


def fit_mc(data: Dataset, spec: NetworkSpec, cfg: TrainConfig, n_passes: int = 100,
           seed: int | None = None) -> McDropoutModel:
    if spec.dropout_rate <= 0:
        raise ConfigError("MC-dropout baseline requires dropout_rate > 0")
    seed = cfg.seed if seed is None else seed
    net = train(init_network(replace(spec, seed=derive_seed(seed, 1))), data,
                replace(cfg, seed=derive_seed(seed, 2)))
    return McDropoutModel(net, n_passes, seed)


def stochastic_probs(net: Network, x: np.ndarray, masks) -> np.ndarray:
    """Class-1 probabilities of ``len(masks[0])`` passes of one query."""
    n = masks[0].shape[0] if masks else 1
    z, _ = _forward(net.spec, net.params, np.repeat(x[None, :], n, axis=0), masks)
    return probs_from_logits(z)[:, 1]


def predict_mc(model: McDropoutModel, x) -> tuple[float, float]:
    """``(p1, uncertainty)``: averaged probability and its variation ratio."""
    batch, single = _as_batch(model.net, x)
    if not single:
        raise DataError("predict_mc takes a single feature vector")
    q = batch[0]
    rng = np.random.default_rng(derive_seed(model.seed, hash_vector(q)))
    masks = dropout_masks(model.net.spec, model.n_passes, rng)
    p1 = float(stochastic_probs(model.net, q, masks).mean())
    p1 = min(max(p1, 0.0), 1.0)
    return p1, variation_ratio(p1)


def predict_mc_batch(model: McDropoutModel, x: np.ndarray) -> np.ndarray:
    """``(n, 2)`` array of ``(p1, uncertainty)`` rows."""
    x = np.asarray(x, dtype=np.float64)
    return np.array([predict_mc(model, row) for row in x]).reshape(-1, 2)


MC_CSV_COLUMNS = ("query_id", "regime", "predicted_class", "p1", "uncertainty", "entropy",
                  "true_label")


def write_mc_csv(p1: np.ndarray, path: str | Path, true_labels=None) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MC_CSV_COLUMNS)
        for i, p in enumerate(np.asarray(p1, dtype=np.float64)):
            label = "" if true_labels is None else int(true_labels[i])
            w.writerow([i, "mc_dropout", int(p >= 0.5), repr(float(p)),
                        repr(float(variation_ratio(p))), repr(float(predictive_entropy(p))), label])


def read_mc_csv(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"MC-dropout report not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {"p1": np.array([float(r["p1"]) for r in rows]),
            "uncertainty": np.array([float(r["uncertainty"]) for r in rows]),
            "predicted_class": np.array([int(r["predicted_class"]) for r in rows])}
