"""Epsilon-level sets from the two convex sweeps, and the ambiguous region.

``dsc_approx_sweep`` bounds the agreement with the best model for a grid of
gamma values; ``amb_approx_sweep`` forces a flipped decision on one training
point at a time. Both produce candidate pools that ``prune_level_set`` filters
on validation accuracy.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_model import (
    AmbiguityMask,
    Dataset,
    LevelSet,
    Model,
    SplitAssignment,
    model_from_dict,
    model_to_dict,
)
from .errors import AmbifairError, ContractError
from .trainer import ConstraintSpec, TrainConfig, train_constrained

log = logging.getLogger(__name__)


def gamma_grid(num: int = 64, lo: float = 1e-6, hi: float = 2.0, spacing: str = "log",
               include_inf: bool = True) -> list[float]:
    """Default sweep: ``num`` values in ``[lo, hi]`` plus an inactive sentinel."""
    if spacing == "log":
        vals = np.geomspace(lo, hi, num)
    elif spacing == "linear":
        vals = np.linspace(lo, hi, num)
    else:
        raise ContractError(f"unknown spacing {spacing!r}")
    out = [float(v) for v in vals]
    if include_inf:
        out.append(math.inf)
    return out


@dataclass
class SweepResult:
    """Models from one sweep, ordered by their key (gamma or target row)."""

    method: str
    keys: list
    models: list
    reports: list
    failures: list = field(default_factory=list)

    def __iter__(self):
        return iter(zip(self.keys, self.models))

    def __len__(self):
        return len(self.models)


def _fit_one(args):
    data, train_idx, config, spec = args
    try:
        res = train_constrained(data, train_idx, config, [spec], raise_infeasible=False)
    except AmbifairError as exc:
        return None, {"error": f"{type(exc).__name__}: {exc}"}
    return res.model, {"feasible": res.feasible, "report": res.report, "iterations": res.iterations}


def _run(tasks, workers):
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_fit_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [_fit_one(t) for t in tasks]


def dsc_approx_sweep(data: Dataset, splits: SplitAssignment, best: Model, gammas: Iterable[float],
                     config: TrainConfig, workers: int = 1) -> SweepResult:
    """One agreement-bounded model per gamma, trained on the training split.

    Failed solves are recorded in ``failures`` and skipped.
    """
    gammas = sorted(float(g) for g in gammas)
    if not gammas:
        raise ContractError("gammas must be non-empty")
    if any(g < 0 for g in gammas):
        raise ContractError("every gamma must be >= 0")
    tasks = [(data, splits.train_idx, config, ConstraintSpec.agreement(best, g)) for g in gammas]
    out = SweepResult("dsc_approx", [], [], [])
    for g, (model, rep) in zip(gammas, _run(tasks, workers)):
        if model is None:
            out.failures.append({"gamma": g, **rep})
            continue
        out.keys.append(g)
        out.models.append(model)
        out.reports.append(rep)
    return out


def amb_approx_sweep(data: Dataset, splits: SplitAssignment, best: Model, targets: Iterable[int],
                     config: TrainConfig, margin: float = 1e-3, workers: int = 1) -> SweepResult:
    """One model per target row whose decision is forced opposite to ``best``.

    Infeasible fits are kept together with their feasibility report; pruning
    happens later.
    """
    targets = sorted(int(t) for t in targets)
    train = set(splits.train_idx.tolist())
    if not set(targets) <= train:
        raise ContractError("targets must be training indices")
    tasks = [(data, splits.train_idx, config, ConstraintSpec.flip(best, t, margin)) for t in targets]
    out = SweepResult("amb_approx", [], [], [])
    for t, (model, rep) in zip(targets, _run(tasks, workers)):
        if model is None:
            out.failures.append({"target": t, **rep})
            continue
        out.keys.append(t)
        out.models.append(model)
        out.reports.append(rep)
    return out


def stratified_targets(data: Dataset, idx, fraction: float, seed: int) -> np.ndarray:
    """Sample ``fraction`` of ``idx`` within every (label, group) cell."""
    if not 0 < fraction <= 1:
        raise ContractError("fraction must lie in (0, 1]")
    idx = np.asarray(idx, dtype=np.int64)
    if fraction == 1:
        return np.sort(idx)
    rng = np.random.default_rng([seed, 0x7A6])
    picked = []
    for y in (-1, 1):
        for z in (0, 1):
            cell = idx[(data.labels[idx] == y) & (data.sensitive[idx] == z)]
            k = int(np.floor(fraction * len(cell) + 0.5))
            if k:
                picked.append(rng.choice(cell, size=k, replace=False))
    return np.sort(np.concatenate(picked)) if picked else np.array([], dtype=np.int64)


def _accuracy(pred, y):
    return float(np.mean(pred == y))


def prune_level_set(best: Model, candidates: Sequence[Model], data: Dataset, val_idx, epsilon: float,
                    reference_accuracy: float | None = None, provenance: dict | None = None) -> LevelSet:
    """Keep candidates within ``epsilon`` of the best validation accuracy.

    The band is inclusive. Candidates with the same validation sign vector as
    an earlier model are dropped, ``best`` first. If some candidate beats
    ``best`` on validation it becomes the level set's best so the band is
    measured from the true maximum. ``reference_accuracy`` overrides the
    top of the band (used to compare against an exact optimum).
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError("epsilon must lie in [0, 1]")
    val_idx = np.asarray(val_idx, dtype=np.int64)
    Xv, yv = data.features[val_idx], data.labels[val_idx]
    pool = [best, *candidates]
    preds = [np.where(m.decision(Xv) >= 0, 1, -1) for m in pool]
    accs = np.array([_accuracy(p, yv) for p in preds])

    top = accs.max() if reference_accuracy is None else float(reference_accuracy)
    keep = accs >= top - epsilon - 1e-12
    if not keep.any():
        raise ContractError("no model lies within epsilon of the reference accuracy")
    kept = np.flatnonzero(keep)
    best_pos = 0 if keep[0] and accs[0] >= accs[kept].max() else int(kept[np.argmax(accs[kept])])

    seen = set()
    members, member_acc = [], []
    order = [best_pos] + [i for i in range(len(pool)) if i != best_pos]
    for i in order:
        if not keep[i]:
            continue
        key = preds[i].tobytes()
        if key in seen:
            continue
        seen.add(key)
        members.append(pool[i])
        member_acc.append(accs[i])
    prov = dict(provenance or {})
    prov.setdefault("candidates", len(candidates))
    return LevelSet(members[0], tuple(members), float(epsilon), np.array(member_acc), 0, prov)


def ambiguity_mask(level_set: LevelSet, data: Dataset, subset=None) -> AmbiguityMask:
    """Flag rows where the members of ``level_set`` do not all agree."""
    idx = np.arange(data.n) if subset is None else np.asarray(subset, dtype=np.int64)
    if idx.size == 0:
        raise ContractError("subset must be non-empty")
    P = level_set.predictions(data.features[idx])
    flags = np.zeros(data.n, dtype=bool)
    flags[idx] = np.any(P != P[0], axis=0)
    return AmbiguityMask(flags, level_set.ident, idx)


def merge_level_sets(sets: Sequence[LevelSet], data: Dataset, val_idx, epsilon: float) -> LevelSet:
    """Pool members of several level sets and re-prune them together."""
    if not sets:
        raise ContractError("nothing to merge")
    best = sets[0].best
    rest = [m for ls in sets for m in ls.members]
    return prune_level_set(best, rest, data, val_idx, epsilon, provenance={"pooled": len(sets)})


def level_set_to_dict(ls: LevelSet) -> dict:
    return {
        "epsilon": ls.epsilon,
        "best_index": ls.best_index,
        "val_accuracy": ls.val_accuracy.tolist(),
        "members": [model_to_dict(m) for m in ls.members],
        "provenance": ls.provenance,
    }


def level_set_from_dict(doc: dict) -> LevelSet:
    members = tuple(model_from_dict(m) for m in doc["members"])
    bi = int(doc.get("best_index", 0))
    return LevelSet(members[bi], members, float(doc["epsilon"]), np.asarray(doc["val_accuracy"]), bi,
                    dict(doc.get("provenance", {})))


def save_level_set(ls: LevelSet, path) -> None:
    Path(path).write_text(json.dumps(level_set_to_dict(ls), indent=1, sort_keys=True))


def load_level_set(path) -> LevelSet:
    return level_set_from_dict(json.loads(Path(path).read_text()))
