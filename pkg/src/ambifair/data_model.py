"""Core domain types: datasets, models, level sets, masks, meta-classifiers.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be shared freely between workers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Sequence, Union

import numpy as np

from .errors import ContractError


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with +/-1 labels and a binary sensitive attribute.

    ``cluster`` is optional bookkeeping (e.g. which generating Gaussian a
    synthetic point came from); -1 means unknown.
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    feature_names: tuple[str, ...] = ()
    cluster: np.ndarray | None = None

    def __post_init__(self):
        X = _frozen(self.features)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1))
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ContractError(f"features must be a non-empty N x d matrix, got shape {X.shape}")
        n, d = X.shape
        if not np.all(np.isfinite(X)):
            raise ContractError("features contain NaN or infinite values")
        y = _frozen(self.labels, dtype=np.int64)
        z = _frozen(self.sensitive, dtype=np.int64)
        if y.shape != (n,) or z.shape != (n,):
            raise ContractError(
                f"labels/sensitive must have length {n}, got {y.shape} and {z.shape}"
            )
        if not np.all((y == 1) | (y == -1)):
            raise ContractError("labels must be exactly -1 or +1")
        if not np.all((z == 0) | (z == 1)):
            raise ContractError("sensitive values must be exactly 0 or 1")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(d))
        if len(names) != d:
            raise ContractError(f"expected {d} feature names, got {len(names)}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "sensitive", z)
        object.__setattr__(self, "feature_names", names)
        if self.cluster is not None:
            c = _frozen(self.cluster, dtype=np.int64)
            if c.shape != (n,):
                raise ContractError("cluster must have one entry per row")
            object.__setattr__(self, "cluster", c)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.sensitive, self.feature_names, self.cluster)

    def with_features(self, features, feature_names=None) -> "Dataset":
        return Dataset(
            features,
            self.labels,
            self.sensitive,
            feature_names if feature_names is not None else self.feature_names,
            self.cluster,
        )

    def take(self, idx) -> "Dataset":
        """Row subset as a new dataset (used only by small oracle instances)."""
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.sensitive[idx],
            self.feature_names,
            None if self.cluster is None else self.cluster[idx],
        )


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("train_idx", "val_idx", "test_idx"):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype=np.int64))

    @property
    def n(self) -> int:
        return len(self.train_idx) + len(self.val_idx) + len(self.test_idx)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_idx), len(self.val_idx), len(self.test_idx)

    def check(self, n: int) -> None:
        allidx = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if len(allidx) != n or not np.array_equal(np.sort(allidx), np.arange(n)):
            raise ContractError("split indices must be disjoint and cover 0..N-1")


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Halfplane classifier with signed distance ``weights @ x + bias``."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = _frozen(self.weights).reshape(-1)
        b = float(self.bias)
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise ContractError("model parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def params(self) -> np.ndarray:
        """Parameters as one vector ``[weights..., bias]``."""
        return np.append(self.weights, self.bias)

    @classmethod
    def from_params(cls, theta) -> "LinearModel":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1], theta[-1])

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ContractError(f"expected inputs with {self.dim} columns, got shape {X.shape}")
        return X @ self.weights + self.bias


@dataclass(frozen=True)
class Kernel:
    """Kernel descriptor: ``rbf`` (bandwidth) or ``poly`` (degree, coef0)."""

    name: str = "rbf"
    bandwidth: float = 1.0
    degree: int = 2
    coef0: float = 1.0

    def __post_init__(self):
        if self.name not in ("rbf", "poly"):
            raise ContractError(f"unknown kernel {self.name!r}")
        if self.name == "rbf" and not self.bandwidth > 0:
            raise ContractError("RBF bandwidth must be positive")
        if self.name == "poly" and self.degree < 1:
            raise ContractError("polynomial degree must be >= 1")

    def __call__(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Gram matrix with rows indexed by ``A`` and columns by ``B``."""
        A = np.atleast_2d(A)
        B = np.atleast_2d(B)
        if self.name == "rbf":
            sq = (
                np.sum(A * A, axis=1)[:, None]
                + np.sum(B * B, axis=1)[None, :]
                - 2.0 * A @ B.T
            )
            np.maximum(sq, 0.0, out=sq)
            return np.exp(-sq / (2.0 * self.bandwidth**2))
        return (A @ B.T + self.coef0) ** self.degree

    def to_dict(self) -> dict:
        if self.name == "rbf":
            return {"name": "rbf", "bandwidth": self.bandwidth}
        return {"name": "poly", "degree": self.degree, "coef0": self.coef0}


@dataclass(frozen=True, eq=False)
class KernelModel:
    """Kernel expansion ``sum_j alphas[j] * anchor_labels[j] * k(anchors[j], x)``."""

    alphas: np.ndarray
    anchors: np.ndarray
    anchor_labels: np.ndarray
    kernel: Kernel = field(default_factory=Kernel)

    def __post_init__(self):
        a = _frozen(self.alphas).reshape(-1)
        Z = _frozen(self.anchors)
        if Z.ndim == 1:
            Z = _frozen(Z.reshape(1, -1))
        ya = _frozen(self.anchor_labels, dtype=np.int64).reshape(-1)
        m = a.shape[0]
        if m < 1 or Z.shape[0] != m or ya.shape[0] != m:
            raise ContractError("alphas, anchors and anchor_labels must share M >= 1 rows")
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(Z)):
            raise ContractError("kernel model parameters must be finite")
        if not np.all((ya == 1) | (ya == -1)):
            raise ContractError("anchor labels must be -1 or +1")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "anchors", Z)
        object.__setattr__(self, "anchor_labels", ya)

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    @property
    def params(self) -> np.ndarray:
        return self.alphas.copy()

    def with_params(self, alphas) -> "KernelModel":
        return KernelModel(alphas, self.anchors, self.anchor_labels, self.kernel)

    def features(self, X: np.ndarray) -> np.ndarray:
        """Per-anchor signed kernel features; the decision is linear in alphas."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ContractError(f"expected inputs with {self.dim} columns, got shape {X.shape}")
        return self.kernel(X, self.anchors) * self.anchor_labels[None, :]

    def decision(self, X: np.ndarray) -> np.ndarray:
        return self.features(X) @ self.alphas


Model = Union[LinearModel, KernelModel]


def signed_distance(model: Model, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractError("x must be a single feature vector")
    if not np.all(np.isfinite(x)):
        raise ContractError("x must be finite")
    return float(model.decision(x[None, :])[0])


def predict(model: Model, x) -> int:
    """+1 when the signed distance is >= 0 (ties go positive), else -1."""
    return 1 if signed_distance(model, x) >= 0 else -1


def predict_many(model: Model, X) -> np.ndarray:
    return np.where(model.decision(np.asarray(X, dtype=float)) >= 0, 1, -1).astype(np.int64)


def model_to_dict(model: Model) -> dict[str, Any]:
    if isinstance(model, LinearModel):
        return {"kind": "linear", "weights": model.weights.tolist(), "bias": model.bias}
    if isinstance(model, KernelModel):
        return {
            "kind": "kernel",
            "alphas": model.alphas.tolist(),
            "anchors": model.anchors.tolist(),
            "anchor_labels": model.anchor_labels.tolist(),
            "kernel": model.kernel.to_dict(),
        }
    raise ContractError(f"cannot serialize {type(model).__name__}")


def model_from_dict(doc: dict[str, Any]) -> Model:
    kind = doc.get("kind")
    if kind == "linear":
        return LinearModel(doc["weights"], doc.get("bias", 0.0))
    if kind == "kernel":
        return KernelModel(
            doc["alphas"], doc["anchors"], doc["anchor_labels"], Kernel(**doc.get("kernel", {}))
        )
    raise ContractError(f"unknown model kind {kind!r}")


def model_fingerprint(models: Sequence[Model]) -> str:
    """Stable short hash of a model list, used as a provenance identifier."""
    payload = json.dumps([model_to_dict(m) for m in models], sort_keys=True)
    return hashlib.sha1(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class LevelSet:
    """The best model together with all models within ``epsilon`` of it.

    ``val_accuracy`` is aligned with ``members``; ``best_index`` points at
    ``best`` inside ``members``.
    """

    best: Model
    members: tuple
    epsilon: float
    val_accuracy: np.ndarray
    best_index: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        members = tuple(self.members)
        acc = _frozen(self.val_accuracy).reshape(-1)
        if len(members) == 0 or len(acc) != len(members):
            raise ContractError("level set needs one validation accuracy per member")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ContractError("epsilon must lie in [0, 1]")
        if members[self.best_index] is not self.best:
            raise ContractError("best must be a member of the level set")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "val_accuracy", acc)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def ident(self) -> str:
        return model_fingerprint(self.members)

    def check(self) -> None:
        top = self.val_accuracy[self.best_index]
        if np.any(top - self.val_accuracy > self.epsilon + 1e-12):
            raise ContractError("a member falls outside the epsilon band")
        if np.any(self.val_accuracy > top + 1e-12):
            raise ContractError("best does not attain the maximum validation accuracy")

    def predictions(self, X) -> np.ndarray:
        """``(members, rows)`` matrix of +/-1 predictions."""
        return np.vstack([predict_many(m, X) for m in self.members])


@dataclass(frozen=True, eq=False)
class AmbiguityMask:
    """Per-row flags marking rows where level-set members disagree.

    ``indices`` lists the dataset rows that were evaluated; flags outside it
    are False.
    """

    flags: np.ndarray
    source: str
    indices: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "flags", _frozen(self.flags, dtype=bool).reshape(-1))
        if self.indices is not None:
            object.__setattr__(self, "indices", _frozen(self.indices, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.flags)

    def fraction(self, subset=None) -> float:
        idx = self.indices if subset is None else np.asarray(subset, dtype=np.int64)
        if idx is None:
            return float(np.mean(self.flags))
        return float(np.mean(self.flags[idx])) if len(idx) else 0.0


@dataclass(frozen=True, eq=False)
class MetaClassifier:
    """Probability vector over level-set members; predictions sample a member."""

    level_set: LevelSet
    weights: np.ndarray
    rng_seed: int = 0
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        w = _frozen(self.weights).reshape(-1)
        if len(w) != len(self.level_set):
            raise ContractError("one weight per level-set member is required")
        if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-9:
            raise ContractError("weights must lie on the probability simplex")
        object.__setattr__(self, "weights", w)

    @property
    def members(self):
        return self.level_set.members
