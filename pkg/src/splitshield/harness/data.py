"""Synthetic datasets and CSV ingestion."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..numerics import child_seed, make_rng
from ..splitnn import Dataset


@dataclass
class DatasetSpec:
    """Two Gaussian classes ``N(mu_y, noise^2 I)`` with ``mu_1 - mu_0 = separation * e``.

    ``e`` is the unit all-ones direction. A ``test_fraction`` of the ``n``
    rows is held out for evaluation.
    """

    n: int = 20_000
    d_in: int = 16
    pos_fraction: float = 0.1
    separation: float = 2.5
    noise: float = 1.0
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.pos_fraction < 1:
            raise ValueError("pos_fraction must lie in (0, 1)")
        if self.pos_fraction * self.n < 2:
            raise ValueError("pos_fraction * n must be at least 2")
        if self.d_in < 1 or self.noise < 0 or not 0 <= self.test_fraction < 1:
            raise ValueError("invalid dataset spec")


def gen_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Return ``(train, test)``; deterministic given ``spec.seed``."""
    rng = make_rng(child_seed(spec.seed, "dataset"))
    y = (rng.random(spec.n) < spec.pos_fraction).astype(int)
    e = np.ones(spec.d_in) / np.sqrt(spec.d_in)
    mu = (y[:, None] - 0.5) * spec.separation * e
    X = mu + spec.noise * rng.standard_normal((spec.n, spec.d_in))
    ids = np.array([f"id-{i:07d}" for i in range(spec.n)])
    n_test = int(round(spec.n * spec.test_fraction))
    cut = spec.n - n_test
    train = Dataset(X[:cut], y[:cut], ids[:cut])
    test = Dataset(X[cut:], y[cut:], ids[cut:])
    return train, test


def write_csv(data: Dataset, path) -> None:
    """Columns ``id,label,x0..x{k-1}``; floats in ``repr`` form so they round-trip exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", *[f"x{j}" for j in range(data.X.shape[1])]])
        for i in range(len(data)):
            w.writerow([data.ids[i], int(data.y[i]), *map(repr, map(float, data.X[i]))])


def read_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:2] != ["id", "label"]:
            raise ValueError(f"{path}: expected header starting with 'id,label'")
        ids, ys, rows = [], [], []
        for line in r:
            if not line:
                continue
            ids.append(line[0])
            ys.append(int(line[1]))
            rows.append([float(v) for v in line[2:]])
    return Dataset(np.array(rows, dtype=float), np.array(ys, dtype=int), np.array(ids))
