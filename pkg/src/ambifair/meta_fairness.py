"""Randomized meta-classifiers over a level set, plus the fair baseline.

The meta-classifier picks a level-set member at random for every decision.
Its weights minimize the absolute expected gap in group error rate on the
ambiguous validation points. Because each member's gap is a fixed number,
the problem is ``min |w . delta|`` over the simplex and has a closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import AmbiguityMask, Dataset, LevelSet, MetaClassifier, Model, SplitAssignment
from .errors import AmbifairError, ContractError, NoEligibleMembersError
from .metrics import UNDEFINED, accuracy, is_defined, unfairness
from .trainer import ConstraintSpec, TrainConfig, train_constrained

log = logging.getLogger(__name__)


def mix_weights(deltas, priority=None) -> tuple[np.ndarray, float]:
    """Closed-form minimizer of ``|sum_k w_k * deltas[k]|`` on the simplex.

    If the values straddle zero, the most negative and most positive entries
    are mixed so their contributions cancel. Otherwise all mass goes to the
    entry closest to zero. ``priority`` breaks ties between equal extremes
    (higher wins, then lower index).
    """
    delta = np.asarray(deltas, dtype=float)
    if delta.size == 0:
        raise ContractError("need at least one value")
    prio = np.zeros_like(delta) if priority is None else np.asarray(priority, dtype=float)

    def pick(candidates):
        c = np.asarray(candidates)
        return int(c[np.lexsort((c, -prio[c]))][0])

    w = np.zeros_like(delta)
    lo, hi = delta.min(), delta.max()
    if lo <= 0.0 <= hi and hi - lo > 0:
        i_neg = pick(np.flatnonzero(delta == lo))
        i_pos = pick(np.flatnonzero(delta == hi))
        w[i_pos] = -lo / (hi - lo)
        w[i_neg] = hi / (hi - lo)
    else:
        a = np.abs(delta)
        w[pick(np.flatnonzero(a == a.min()))] = 1.0
    return w, float(abs(w @ delta))


def member_gaps(level_set: LevelSet, data: Dataset, subset, mask, kind: str) -> list:
    return [unfairness(m, data, subset, mask, kind) for m in level_set.members]


def solve_p5(level_set: LevelSet, data: Dataset, val_idx, mask: AmbiguityMask, kind: str = "fpr",
             rng_seed: int = 0) -> MetaClassifier:
    """Fit meta weights that cancel group error-rate gaps in the ambiguous region.

    Members whose gap is undefined on the masked validation rows get zero
    weight and are listed in the report.
    """
    gaps = member_gaps(level_set, data, val_idx, mask, kind)
    ok = np.array([is_defined(g) for g in gaps])
    if not ok.any():
        raise NoEligibleMembersError(
            f"no level-set member has a defined {kind.upper()} gap on the ambiguous validation rows"
        )
    eligible = np.flatnonzero(ok)
    delta = np.array([gaps[i] for i in eligible], dtype=float)
    w_sub, objective = mix_weights(delta, level_set.val_accuracy[eligible])
    weights = np.zeros(len(level_set))
    weights[eligible] = w_sub
    report = {
        "kind": kind,
        "objective": objective,
        "member_gaps": [None if g is UNDEFINED else float(g) for g in gaps],
        "excluded": np.flatnonzero(~ok).tolist(),
        "mask_source": mask.source,
    }
    return MetaClassifier(level_set, weights, rng_seed, report)


def uniform_meta(level_set: LevelSet, seed: int = 0) -> MetaClassifier:
    n = len(level_set)
    return MetaClassifier(level_set, np.full(n, 1.0 / n), seed, {"kind": "uniform"})


def stochastic_predict(meta: MetaClassifier, x, rng: np.random.Generator) -> int:
    """Draw one member according to the weights and return its decision."""
    k = int(rng.choice(len(meta.weights), p=meta.weights))
    return 1 if meta.members[k].decision(np.asarray(x, dtype=float)[None, :])[0] >= 0 else -1


def stochastic_predict_many(meta: MetaClassifier, X, rng: np.random.Generator | None = None):
    """Per-row draws; returns ``(predictions, member_indices)``.

    Without an explicit generator one is seeded from ``meta.rng_seed``.
    """
    X = np.asarray(X, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(meta.rng_seed)
    picks = rng.choice(len(meta.weights), size=X.shape[0], p=meta.weights)
    P = meta.level_set.predictions(X)
    return P[picks, np.arange(X.shape[0])], picks


# fair baseline ---------------------------------------------------------------

def boundary_covariance(model: Model, data: Dataset, idx, kind: str = "fpr") -> float:
    """``|mean over D* of (z - mean z) * d(x)|`` on the rows ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    want = -1 if kind == "fpr" else 1
    star = idx[data.labels[idx] == want]
    if star.size == 0:
        raise ContractError(f"no rows with label {want}")
    z = data.sensitive[star].astype(float)
    return float(abs(np.mean((z - z.mean()) * model.decision(data.features[star]))))


def c_grid_from_best(best: Model, data: Dataset, train_idx, kind: str = "fpr", lo: float = 0.0,
                     hi: float = 0.2, num: int = 100) -> np.ndarray:
    """Covariance thresholds ``t * cov(best, z)`` for ``t`` spaced in ``[lo, hi]``."""
    return np.linspace(lo, hi, num) * boundary_covariance(best, data, train_idx, kind)


@dataclass
class FairBaseline:
    model: Model
    c: float
    kind: str
    val_unfairness: float
    val_accuracy: float
    sweep: list = field(default_factory=list)


def train_fair_baseline(data: Dataset, splits: SplitAssignment, lam: float, c_grid, kind: str = "fpr",
                        config: TrainConfig | None = None, warm_start: Model | None = None) -> FairBaseline:
    """Covariance-constrained logistic regression swept over ``c_grid``.

    Returns the fit with the smallest absolute total gap on validation; ties
    go to the higher validation accuracy.
    """
    c_grid = [float(c) for c in c_grid]
    if not c_grid or any(c < 0 for c in c_grid):
        raise ContractError("c_grid must be non-empty with values >= 0")
    config = replace(config or TrainConfig(), lam=lam)
    sweep, best = [], None
    for c in c_grid:
        spec = ConstraintSpec.covariance(c, kind)
        try:
            res = train_constrained(data, splits.train_idx, config, [spec], warm_start=warm_start)
        except AmbifairError as exc:
            sweep.append({"c": c, "error": str(exc)})
            continue
        gap = unfairness(res.model, data, splits.val_idx, None, kind)
        acc = accuracy(res.model, data, splits.val_idx)
        entry = {"c": c, "val_unfairness": None if gap is UNDEFINED else gap, "val_accuracy": acc}
        sweep.append(entry)
        if gap is UNDEFINED:
            continue
        key = (abs(gap), -acc)
        if best is None or key < best[0]:
            best = (key, res.model, c, gap, acc)
    if best is None:
        raise AmbifairError("every fair-baseline fit failed")
    _, model, c, gap, acc = best
    return FairBaseline(model, c, kind, gap, acc, sweep)
