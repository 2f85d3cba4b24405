"""Exact 0-1 loss level sets for small 2-D datasets by halfplane enumeration.

Any labeling a halfplane can induce on a finite point set is also induced by
a line through two of the points, nudged so each of the two lands on a
chosen side (or by a constant classifier). Enumerating every ordered pair
with both nudges therefore reaches every achievable sign pattern.
"""

from __future__ import annotations

import numpy as np

from .data_model import Dataset, LevelSet, LinearModel
from .errors import ContractError

MAX_POINTS = 400
ROTATION = 1e-7  # radians; tilt about the pair midpoint that opens both sides


def _subset_points(data: Dataset, subset):
    if data.d != 2:
        raise ContractError(f"exact enumeration needs 2-D features, got d={data.d}")
    idx = np.arange(data.n) if subset is None else np.asarray(subset, dtype=np.int64)
    if idx.size == 0:
        raise ContractError("subset must be non-empty")
    if idx.size > MAX_POINTS:
        raise ContractError(f"exact enumeration is limited to {MAX_POINTS} points, got {idx.size}")
    return idx, data.features[idx], data.labels[idx]


def _pair_params(P: np.ndarray) -> np.ndarray:
    """(K, 3) array of ``[w1, w2, b]`` rows in lexicographic pair order."""
    n = len(P)
    rows = [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
    if n < 2:
        return np.vstack(rows)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = ii != jj
    ii, jj = ii[keep], jj[keep]
    p, q = P[ii], P[jj]
    u = q - p
    mid = 0.5 * (p + q)
    out = [np.vstack(rows)]
    for sgn in (1.0, -1.0):
        a = sgn * ROTATION
        ca, sa = np.cos(a), np.sin(a)
        ur = np.column_stack([ca * u[:, 0] - sa * u[:, 1], sa * u[:, 0] + ca * u[:, 1]])
        # normal pointing to the left of the rotated direction p -> q
        w = np.column_stack([-ur[:, 1], ur[:, 0]])
        b = -np.sum(w * mid, axis=1)
        out.append(np.column_stack([w, b]))
    params = np.vstack(out)
    # interleave so that order is (constants, pair0+, pair0-, pair1+, ...)
    k = len(ii)
    head, plus, minus = params[:2], params[2 : 2 + k], params[2 + k :]
    inter = np.empty((2 * k, 3))
    inter[0::2], inter[1::2] = plus, minus
    return np.vstack([head, inter])


def enumerate_linear_classifiers(data: Dataset, subset=None) -> list[LinearModel]:
    """Halfplane representatives covering every achievable sign pattern on ``subset``.

    Order is fixed: the two constant classifiers, then for each ordered pair
    ``(i, j)`` in lexicographic order the counter-clockwise and clockwise
    tilts of the line through both points.
    """
    _, P, _ = _subset_points(data, subset)
    return [LinearModel(r[:2], r[2]) for r in _pair_params(P)]


def _patterns(params: np.ndarray, P: np.ndarray) -> np.ndarray:
    return np.where(P @ params[:, :2].T + params[:, 2] >= 0, 1, -1).T.astype(np.int8)


def distinct_patterns(data: Dataset, subset=None) -> np.ndarray:
    _, P, _ = _subset_points(data, subset)
    return np.unique(_patterns(_pair_params(P), P), axis=0)


def exact_level_set(data: Dataset, subset=None, epsilon: float = 0.0) -> LevelSet:
    """All distinct halfplane patterns whose 0-1 accuracy is within ``epsilon`` of the best.

    Accuracies are measured on ``subset`` itself. The best is the first
    enumerated classifier attaining the maximum.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError("epsilon must lie in [0, 1]")
    idx, P, y = _subset_points(data, subset)
    params = _pair_params(P)
    S = _patterns(params, P)
    acc = np.mean(S == y[None, :], axis=1)
    top = acc.max()
    best_pos = int(np.argmax(acc))
    keep = np.flatnonzero(acc >= top - epsilon - 1e-12)
    # one representative per sign pattern, first in enumeration order, best first
    _, first = np.unique(S[keep], axis=0, return_index=True)
    chosen = sorted(set(keep[first].tolist()) - {best_pos})
    order = [best_pos, *chosen]
    members = tuple(LinearModel(params[i, :2], params[i, 2]) for i in order)
    return LevelSet(members[0], members, float(epsilon), acc[order], 0,
                    {"method": "exact_oracle", "points": int(idx.size)})


def _disagreements(ls: LevelSet, data: Dataset, subset):
    idx = np.arange(data.n) if subset is None else np.asarray(subset, dtype=np.int64)
    Pm = ls.predictions(data.features[idx])
    return Pm != Pm[ls.best_index]


def exact_discrepancy(data: Dataset, subset=None, epsilon: float = 0.0) -> float:
    """Largest fraction of points any exact level-set member flips relative to the best."""
    ls = exact_level_set(data, subset, epsilon)
    return float(np.max(np.mean(_disagreements(ls, data, subset), axis=1)))


def exact_ambiguity(data: Dataset, subset=None, epsilon: float = 0.0) -> float:
    """Fraction of points some exact level-set member flips relative to the best."""
    ls = exact_level_set(data, subset, epsilon)
    return float(np.mean(np.any(_disagreements(ls, data, subset), axis=0)))


def exact_mask(data: Dataset, subset=None, epsilon: float = 0.0) -> np.ndarray:
    """Boolean flags over ``subset`` rows (in order) marking exact ambiguous points."""
    ls = exact_level_set(data, subset, epsilon)
    return np.any(_disagreements(ls, data, subset), axis=0)
