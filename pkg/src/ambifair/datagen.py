"""Six-Gaussian synthetic benchmark with a binary sensitive attribute.

Two dense clusters carry most of the mass and 5% in-cluster label noise;
four sparse clusters sit where a linear boundary has little data to go on.
Every percentage is realized as an exact count, so small replicas keep
their proportions deterministically.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data_model import Dataset
from .errors import ConfigError, ContractError

DEFAULT_MEANS = (
    (-35.0, 65.0),
    (15.0, -25.0),
    (30.0, 65.0),
    (35.0, 40.0),
    (-55.0, 5.0),
    (-55.0, -20.0),
)
_DENSE_COV = ((60.0, 1.0), (1.0, 120.0))
_SPARSE_COV = ((70.0, 1.0), (1.0, 100.0))
DEFAULT_COVS = (_DENSE_COV, _DENSE_COV, _SPARSE_COV, _SPARSE_COV, _SPARSE_COV, _SPARSE_COV)

# cluster ids are 1-based to match the generating Gaussians
SPARSE_CLUSTERS = (3, 4, 5, 6)


def count(rate: float, n: int) -> int:
    """Round half up, used for every percentage-to-count conversion."""
    return int(np.floor(rate * n + 0.5))


@dataclass
class SynthConfig:
    seed: int = 1122334455
    n_core: int = 4500
    n_sparse: int = 250
    noise_rate: float = 0.0
    means: tuple = DEFAULT_MEANS
    covariances: tuple = DEFAULT_COVS
    core_majority_label: float = 0.95
    core_group0_share: float = 0.65
    upper_sparse_group1_share: float = 0.80
    lower_sparse_group1_share: float = 0.20
    standardize: bool = True
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not 0.0 <= self.noise_rate <= 0.5:
            raise ConfigError(f"noise_rate must lie in [0, 0.5], got {self.noise_rate}", "noise_rate")
        if self.n_core < 1 or self.n_sparse < 1:
            raise ConfigError("cluster sizes must be positive", "n_core")
        if len(self.means) != 6 or len(self.covariances) != 6:
            raise ConfigError("exactly six means and six covariances are required", "means")
        for k, cov in enumerate(self.covariances, start=1):
            c = np.asarray(cov, dtype=float)
            if c.shape != (2, 2) or not np.allclose(c, c.T):
                raise ConfigError(f"covariance of cluster {k} is not a symmetric 2x2 matrix", "covariances")
            try:
                np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise ConfigError(f"covariance of cluster {k} is not positive definite", "covariances") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["means"] = [list(m) for m in self.means]
        d["covariances"] = [[list(r) for r in c] for c in self.covariances]
        return d


def _assign(rng, n, k, value, other):
    out = np.full(n, other, dtype=np.int64)
    out[rng.permutation(n)[:k]] = value
    return out


def generate_synthetic(config: SynthConfig | None = None) -> Dataset:
    """Sample the benchmark; ``Dataset.cluster`` records the source Gaussian."""
    config = config or SynthConfig()
    config.validate()
    rng = np.random.default_rng(config.seed)
    nc, ns = config.n_core, config.n_sparse

    blocks = []
    for k in range(6):
        n = nc if k < 2 else ns
        blocks.append(rng.multivariate_normal(config.means[k], config.covariances[k], size=n))
    X = np.vstack(blocks)
    cluster = np.repeat(np.arange(1, 7), [nc, nc, ns, ns, ns, ns])

    n_major = count(config.core_majority_label, nc)
    n_z0 = count(config.core_group0_share, nc)
    y1 = _assign(rng, nc, n_major, 1, -1)
    z1 = _assign(rng, nc, n_z0, 0, 1)
    y2 = _assign(rng, nc, n_major, -1, 1)
    z2 = _assign(rng, nc, n_z0, 0, 1)

    y_sparse = np.repeat([-1, 1, -1, 1], ns)
    # the group share is drawn over the union of each sparse pair
    z_upper = _assign(rng, 2 * ns, count(config.upper_sparse_group1_share, 2 * ns), 1, 0)
    z_lower = _assign(rng, 2 * ns, count(config.lower_sparse_group1_share, 2 * ns), 1, 0)

    y = np.concatenate([y1, y2, y_sparse])
    z = np.concatenate([z1, z2, z_upper, z_lower])

    if config.standardize:
        X = (X - X.mean(axis=0)) / X.std(axis=0)

    data = Dataset(X, y, z, ("x1", "x2"), cluster)
    if config.noise_rate > 0:
        data = flip_labels(data, config.noise_rate, config.seed)
    return data


def flip_labels(data: Dataset, rate: float, seed: int) -> Dataset:
    """Flip exactly ``round(rate * N)`` labels chosen without replacement."""
    if not 0.0 <= rate <= 0.5:
        raise ContractError(f"flip rate must lie in [0, 0.5], got {rate}")
    k = count(rate, data.n)
    if k == 0:
        return data
    rng = np.random.default_rng([seed, 0xF11B])
    idx = rng.choice(data.n, size=k, replace=False)
    y = data.labels.copy()
    y[idx] = -y[idx]
    return data.with_labels(y)


def save_synthetic(data: Dataset, config: SynthConfig, path) -> tuple[Path, Path]:
    """Write the dataset as CSV plus a ``.json`` sidecar holding the config."""
    from .ingest import write_csv

    path = Path(path)
    write_csv(data, path)
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"generator": "six_gaussians", "config": config.to_dict()}, indent=2))
    return path, sidecar
