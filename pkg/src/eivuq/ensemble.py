"""Bootstrap ensembles of feed-forward networks.

Each member is trained on its own N-with-replacement resample of the
training set.  Member ``t`` draws everything (resample, validation split,
initial weights, batch order) from a seed derived from ``(master_seed, t)``,
so the result does not depend on how members are scheduled.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._seeding import derive_seed
from .datagen import Dataset
from .errors import ConfigError, DataError
from .nncore import Network, NetworkSpec, TrainConfig, _forward, init_network, train

MAX_RESAMPLE_RETRIES = 10
MANIFEST_NAME = "ensemble.json"


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple[Network, ...]
    master_seed: int
    spec: NetworkSpec
    train_cfg: TrainConfig
    member_seeds: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.members:
            raise ConfigError("an ensemble needs at least one member")
        dims = {m.spec.input_dim for m in self.members}
        if dims != {self.spec.input_dim}:
            raise ConfigError(f"members disagree on input_dim: {sorted(dims)}")
        object.__setattr__(self, "members", tuple(self.members))

    @property
    def T(self) -> int:
        return len(self.members)

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim


def member_seed(master_seed: int, t: int) -> int:
    return derive_seed(master_seed, t)


def bootstrap_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n, size=n)


def _stratified_indices(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    parts = []
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        parts.append(rows[rng.integers(0, rows.size, size=rows.size)])
    return np.sort(np.concatenate(parts))


def _fit_member(args) -> Network:
    data, spec, cfg, seed, stratified = args
    two_classes = np.unique(data.labels).size > 1
    for attempt in range(MAX_RESAMPLE_RETRIES + 1):
        s = seed if attempt == 0 else derive_seed(seed, 0xB007, attempt)
        rng = np.random.default_rng(s)
        rows = _stratified_indices(data.labels, rng) if stratified else bootstrap_indices(
            data.n_rows, rng)
        sample = data.subset(rows)
        if np.unique(sample.labels).size > 1 or not two_classes:
            break
    else:
        raise DataError(f"bootstrap resample contained a single class after "
                        f"{MAX_RESAMPLE_RETRIES} retries")
    net = init_network(replace(spec, seed=derive_seed(s, 1)))
    return train(net, sample, replace(cfg, seed=derive_seed(s, 2)))


def fit(data: Dataset, spec: NetworkSpec, cfg: TrainConfig, T: int, master_seed: int,
        *, threads: int = 1, stratified: bool = False,
        member_seeds: Sequence[int] | None = None) -> EnsembleModel:
    """Train ``T`` networks on bootstrap resamples of ``data``.

    ``member_seeds`` overrides the derived per-member seeds (equal seeds give
    equal members).  ``threads > 1`` trains members in worker processes; the
    output is identical to the serial result.
    """
    if T < 1:
        raise ConfigError("ensemble size T must be at least 1")
    if data.n_rows == 0:
        raise DataError("cannot fit an ensemble on an empty dataset")
    if np.unique(data.labels).size < 2:
        raise DataError("training data contains a single class; no bootstrap can fix that")
    seeds = (tuple(int(s) for s in member_seeds) if member_seeds is not None
             else tuple(member_seed(master_seed, t) for t in range(T)))
    if len(seeds) != T:
        raise ConfigError(f"{len(seeds)} member seeds supplied for T={T}")
    jobs = [(data, spec, cfg, s, stratified) for s in seeds]
    if threads > 1 and T > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            members = list(pool.map(_fit_member, jobs, chunksize=max(1, T // (4 * threads))))
    else:
        members = [_fit_member(job) for job in jobs]
    return EnsembleModel(tuple(members), int(master_seed), spec, cfg, seeds)


def logits_over(model: EnsembleModel, candidates) -> np.ndarray:
    """Logit tensor of shape ``(T, n_candidates, 2)``; entry ``[t, j]`` is
    ``(z0, z1)`` of member ``t`` at candidate ``j`` (no dropout)."""
    x = np.asarray(candidates, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DataError(f"candidates must have {model.input_dim} features, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("candidates contain non-finite values")
    out = np.empty((model.T, x.shape[0], 2))
    for t, net in enumerate(model.members):
        out[t] = _forward(net.spec, net.params, x)[0]
    return out


def config_digest(spec: NetworkSpec, cfg: TrainConfig) -> str:
    doc = json.dumps({"spec": spec.to_dict(), "train": cfg.to_dict()}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def save(model: EnsembleModel, directory: str | Path) -> list[Path]:
    """Write one JSON file per member plus a manifest; returns written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(model.T - 1)))
    names = [f"member_{t:0{width}d}.json" for t in range(model.T)]
    written = []
    for name, net in zip(names, model.members):
        net.save(directory / name)
        written.append(directory / name)
    manifest = {
        "format": "eivuq.ensemble", "version": 1, "T": model.T,
        "master_seed": model.master_seed, "member_seeds": list(model.member_seeds),
        "spec": model.spec.to_dict(), "train_config": model.train_cfg.to_dict(),
        "train_config_digest": config_digest(model.spec, model.train_cfg),
        "members": names,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(directory / MANIFEST_NAME)
    return written


def load(directory: str | Path) -> EnsembleModel:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no ensemble manifest at {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != "eivuq.ensemble":
        raise DataError(f"{path} is not an eivuq ensemble manifest")
    members = tuple(Network.load(directory / name) for name in doc["members"])
    if len(members) != doc["T"]:
        raise DataError(f"manifest lists T={doc['T']} but {len(members)} members were found")
    return EnsembleModel(members, doc["master_seed"], NetworkSpec(**doc["spec"]),
                         TrainConfig(**doc["train_config"]), tuple(doc["member_seeds"]))
