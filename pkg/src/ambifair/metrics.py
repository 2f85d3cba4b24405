"""Accuracy, multiplicity measures and group error rates.

Every function accepting ``model_or_meta`` treats a :class:`MetaClassifier`
as the weighted expectation over its members. Group error rates on cells
with no support are returned as :data:`UNDEFINED` instead of a number.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from .data_model import AmbiguityMask, Dataset, LevelSet, MetaClassifier
from .errors import ContractError


class _Undefined:
    """Marker for a rate whose denominator is empty."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "UNDEFINED"

    def __bool__(self):
        return False

    def __reduce__(self):
        return (_Undefined, ())


UNDEFINED = _Undefined()
Rate = Union[float, _Undefined]


def is_defined(v) -> bool:
    return v is not UNDEFINED


def _idx(data: Dataset, subset) -> np.ndarray:
    idx = np.arange(data.n) if subset is None else np.asarray(subset, dtype=np.int64)
    return idx


def _member_preds(model_or_meta, X):
    """``(weights, predictions)`` with predictions shaped (members, rows)."""
    if isinstance(model_or_meta, MetaClassifier):
        P = model_or_meta.level_set.predictions(X)
        return model_or_meta.weights, P
    pred = np.where(model_or_meta.decision(X) >= 0, 1, -1)
    return np.ones(1), pred[None, :]


def accuracy(model_or_meta, data: Dataset, subset=None) -> float:
    idx = _idx(data, subset)
    if idx.size == 0:
        raise ContractError("accuracy on an empty subset is undefined")
    w, P = _member_preds(model_or_meta, data.features[idx])
    per_member = np.mean(P == data.labels[idx][None, :], axis=1)
    return float(w @ per_member)


# multiplicity ---------------------------------------------------------------

def _preds(level_set: LevelSet, data: Dataset, subset):
    idx = _idx(data, subset)
    if idx.size == 0:
        raise ContractError("subset must be non-empty")
    return level_set.predictions(data.features[idx])


def pairwise_discrepancy(level_set: LevelSet, data: Dataset, subset=None) -> float:
    """Largest fraction of points on which any two members disagree."""
    P = _preds(level_set, data, subset)
    if len(P) < 2:
        return 0.0
    # for +/-1 rows, disagreement fraction = (1 - <p_a, p_b>/n) / 2
    G = P.astype(float) @ P.T.astype(float) / P.shape[1]
    return float(np.max((1.0 - G) / 2.0))


def pairwise_ambiguity(level_set: LevelSet, data: Dataset, subset=None) -> float:
    """Fraction of points on which some pair of members disagrees."""
    P = _preds(level_set, data, subset)
    return float(np.mean(np.any(P != P[0], axis=0)))


def best_relative_discrepancy(level_set: LevelSet, data: Dataset, subset=None) -> float:
    P = _preds(level_set, data, subset)
    ref = P[level_set.best_index]
    return float(np.max(np.mean(P != ref, axis=1)))


def best_relative_ambiguity(level_set: LevelSet, data: Dataset, subset=None) -> float:
    P = _preds(level_set, data, subset)
    ref = P[level_set.best_index]
    return float(np.mean(np.any(P != ref, axis=0)))


# group error rates -----------------------------------------------------------

@dataclass
class GroupRates:
    fpr: dict
    fnr: dict

    def get(self, kind: str) -> dict:
        return self.fpr if kind.lower() == "fpr" else self.fnr


def _region(data: Dataset, subset, region_mask) -> np.ndarray:
    idx = _idx(data, subset)
    if region_mask is None:
        return idx
    flags = region_mask.flags if isinstance(region_mask, AmbiguityMask) else np.asarray(region_mask, bool)
    if flags.shape != (data.n,):
        raise ContractError("region mask must have one flag per dataset row")
    return idx[flags[idx]]


def group_error_rates(model_or_meta, data: Dataset, subset=None, region_mask=None) -> GroupRates:
    """Per-group FPR and FNR on ``subset`` restricted to ``region_mask``."""
    idx = _region(data, subset, region_mask)
    y, z = data.labels[idx], data.sensitive[idx]
    if idx.size:
        w, P = _member_preds(model_or_meta, data.features[idx])
    fpr, fnr = {}, {}
    for g in (0, 1):
        neg = (y == -1) & (z == g)
        pos = (y == 1) & (z == g)
        fpr[g] = float(w @ np.mean(P[:, neg] == 1, axis=1)) if neg.any() else UNDEFINED
        fnr[g] = float(w @ np.mean(P[:, pos] == -1, axis=1)) if pos.any() else UNDEFINED
    return GroupRates(fpr, fnr)


def unfairness(model_or_meta, data: Dataset, subset=None, region_mask=None, kind: str = "fpr") -> Rate:
    """Signed gap ``rate(z=1) - rate(z=0)``; undefined if either side is."""
    kind = kind.lower()
    if kind not in ("fpr", "fnr"):
        raise ContractError(f"kind must be 'fpr' or 'fnr', got {kind!r}")
    rates = group_error_rates(model_or_meta, data, subset, region_mask).get(kind)
    if not (is_defined(rates[0]) and is_defined(rates[1])):
        return UNDEFINED
    return rates[1] - rates[0]


@dataclass
class RegionReport:
    region: str
    unfairness_fpr: Rate
    unfairness_fnr: Rate
    accuracy: Rate
    size: int
    support: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("unfairness_fpr", "unfairness_fnr", "accuracy"):
            d[k] = None if d[k] is UNDEFINED else d[k]
        return d


def _cell_counts(data: Dataset, idx) -> dict:
    y, z = data.labels[idx], data.sensitive[idx]
    return {f"z{g}_y{lab:+d}": int(np.sum((z == g) & (y == lab))) for g in (0, 1) for lab in (-1, 1)}


def region_report(model_or_meta, data: Dataset, subset, mask: AmbiguityMask) -> dict:
    """Total / unambiguous / ambiguous breakdowns keyed by region name."""
    idx = _idx(data, subset)
    flags = mask.flags
    regions = {"total": idx, "unambiguous": idx[~flags[idx]], "ambiguous": idx[flags[idx]]}
    out = {}
    for name, r in regions.items():
        acc = accuracy(model_or_meta, data, r) if r.size else UNDEFINED
        out[name] = RegionReport(
            name,
            unfairness(model_or_meta, data, r, None, "fpr") if r.size else UNDEFINED,
            unfairness(model_or_meta, data, r, None, "fnr") if r.size else UNDEFINED,
            acc,
            int(r.size),
            _cell_counts(data, r),
        )
    return out


def fmt(v, digits: int = 2) -> str:
    return "undef" if v is UNDEFINED or v is None else f"{v:.{digits}f}"
