"""End-to-end experiment: data, splits, level sets, meta-classifiers, reports.

``prepare_seed`` does the expensive work for one split seed (lambda
selection and both sweeps); ``evaluate_seed`` turns that into fairness and
multiplicity numbers; ``run_experiment`` drives all seeds and writes the
artifact directory.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .config import ExperimentConfig
from .data_model import AmbiguityMask, Dataset, LevelSet, MetaClassifier, Model, SplitAssignment, model_to_dict
from .errors import AmbifairError, NoEligibleMembersError
from .datagen import SynthConfig, generate_synthetic
from .exact_oracle import exact_level_set
from .ingest import IngestConfig, load_csv, split, standardize
from .meta_fairness import (
    c_grid_from_best,
    solve_p5,
    train_fair_baseline,
    uniform_meta,
)
from .multiplicity import (
    SweepResult,
    ambiguity_mask,
    amb_approx_sweep,
    dsc_approx_sweep,
    gamma_grid,
    level_set_to_dict,
    prune_level_set,
    stratified_targets,
)
from .trainer import TrainConfig, lambda_grid, select_lambda

log = logging.getLogger(__name__)

METHOD_LABEL = {"dsc_approx": "P3", "amb_approx": "P4"}


class StageError(AmbifairError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` holds the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class StageLog:
    """Collects per-stage events; written to ``log.jsonl`` at the end."""

    def __init__(self):
        self.events = []
        self.runtimes = {}

    def record(self, stage: str, seconds: float, **info):
        self.events.append({"stage": stage, "seconds": round(seconds, 4), **info})
        self.runtimes[stage] = self.runtimes.get(stage, 0.0) + seconds

    def timed(self, stage: str, **info):
        return _Timer(self, stage, info)


class _Timer:
    def __init__(self, sink, stage, info):
        self.sink, self.stage, self.info = sink, stage, info

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        dt = time.perf_counter() - self.t0
        if exc is None:
            self.sink.record(self.stage, dt, **self.info)
            return False
        if isinstance(exc, StageError):
            return False
        self.sink.record(self.stage, dt, status="error", error=f"{exc_type.__name__}: {exc}", **self.info)
        raise StageError(self.stage, exc) from exc


def load_data(cfg: ExperimentConfig) -> Dataset:
    d = cfg.data
    if d.source == "synthetic":
        s = d.synthetic
        data = generate_synthetic(SynthConfig(seed=s.seed, n_core=s.n_core, n_sparse=s.n_sparse,
                                              noise_rate=s.noise_rate))
    else:
        c = d.csv
        data = load_csv(IngestConfig(
            path=c.path, label_column=c.label_column, sensitive_column=c.sensitive_column,
            positive_label_value=c.positive_label_value, protected_value=c.protected_value,
            categorical_columns=tuple(c.categorical_columns), ignore_columns=tuple(c.ignore_columns),
            cluster_column=c.cluster_column,
        ))
    if d.subsample is not None and d.subsample < data.n:
        rng = np.random.default_rng(d.subsample_seed)
        data = data.take(np.sort(rng.choice(data.n, size=d.subsample, replace=False)))
    return data


def train_config(cfg: ExperimentConfig, lam: float = 0.1) -> TrainConfig:
    return TrainConfig(lam=lam, max_iters=cfg.trainer.max_iters, grad_tol=cfg.trainer.grad_tol)


@dataclass
class SeedRun:
    seed: int
    data: Dataset
    splits: SplitAssignment
    best: Model
    lam: float
    sweeps: dict = field(default_factory=dict)


def prepare_seed(raw: Dataset, seed: int, cfg: ExperimentConfig, stages: StageLog | None = None) -> SeedRun:
    stages = stages or StageLog()
    with stages.timed("split", seed=seed):
        sp = split(raw, cfg.split.ratios, seed)
        data = raw
        if cfg.data.source == "csv":
            # real data is standardized with training statistics only
            data, _ = standardize(raw, sp.train_idx)
    g = cfg.trainer.lambda_grid
    with stages.timed("select_lambda", seed=seed):
        best, lam, _ = select_lambda(data, sp.train_idx, sp.val_idx, lambda_grid(g.lo, g.hi, g.num),
                                     train_config(cfg))
    run = SeedRun(seed, data, sp, best, lam)
    mc = cfg.multiplicity
    tc = train_config(cfg, mc.lam)
    if "dsc_approx" in mc.methods:
        gg = mc.gamma_grid
        with stages.timed("dsc_approx", seed=seed):
            run.sweeps["dsc_approx"] = dsc_approx_sweep(
                data, sp, best, gamma_grid(gg.num, gg.lo, gg.hi, gg.spacing), tc, workers=cfg.workers)
    if "amb_approx" in mc.methods:
        targets = stratified_targets(data, sp.train_idx, mc.amb_target_fraction, seed)
        with stages.timed("amb_approx", seed=seed, targets=len(targets)):
            run.sweeps["amb_approx"] = amb_approx_sweep(data, sp, best, targets, tc, mc.margin,
                                                        workers=cfg.workers)
    return run


def candidate_pool(runs: list[SeedRun], run: SeedRun, method: str, pooled: bool) -> list:
    if pooled:
        return [m for r in runs for m in r.sweeps[method].models]
    return list(run.sweeps[method].models)


def level_set_for(run: SeedRun, method: str, epsilon: float, candidates) -> LevelSet:
    return prune_level_set(run.best, candidates, run.data, run.splits.val_idx, epsilon,
                           provenance={"method": method, "seed": run.seed})


def _rates(model, data, idx, mask, kind):
    regions = {
        "total": None,
        "unamb": ~mask.flags,
        "amb": mask.flags,
    }
    return {name: _num(M.unfairness(model, data, idx, reg, kind)) for name, reg in regions.items()}


def _num(v):
    return None if v is M.UNDEFINED else float(v)


def _row(models_by_kind: dict, data, sp, mask) -> dict:
    row = {}
    for kind, model in models_by_kind.items():
        row[kind] = _rates(model, data, sp.test_idx, mask, kind)
        row[kind]["acc_val"] = M.accuracy(model, data, sp.val_idx)
        row[kind]["acc_test"] = M.accuracy(model, data, sp.test_idx)
    return row


def fit_meta(ls: LevelSet, data: Dataset, val_idx, mask: AmbiguityMask, kind: str, seed: int) -> MetaClassifier:
    """P5 weights, or all mass on the best member when no gap is defined.

    Small validation splits can leave the ambiguous region without one of the
    group/label cells; there is then nothing to balance.
    """
    try:
        return solve_p5(ls, data, val_idx, mask, kind, rng_seed=seed)
    except NoEligibleMembersError as exc:
        w = np.zeros(len(ls))
        w[ls.best_index] = 1.0
        return MetaClassifier(ls, w, seed, {"kind": kind, "fallback": "best", "reason": str(exc),
                                            "mask_source": mask.source})


def fair_baselines(run: SeedRun, cfg: ExperimentConfig, stages: StageLog | None = None) -> dict:
    stages = stages or StageLog()
    out = {}
    t = cfg.fairness.t_grid
    for kind in cfg.fairness.kinds:
        grid = c_grid_from_best(run.best, run.data, run.splits.train_idx, kind, t.lo, t.hi, t.num)
        with stages.timed("fair_baseline", seed=run.seed, kind=kind):
            out[kind] = train_fair_baseline(run.data, run.splits, run.lam, grid, kind,
                                            train_config(cfg, run.lam))
    return out


def evaluate_seed(run: SeedRun, runs: list[SeedRun], cfg: ExperimentConfig, fair: dict) -> dict:
    """Fairness table rows per method and multiplicity stats per epsilon."""
    data, sp = run.data, run.splits
    kinds = cfg.fairness.kinds
    mc = cfg.multiplicity
    out = {"seed": run.seed, "lambda": run.lam, "table1": {}, "table2": {}, "level_sets": {}, "metas": {}}
    for method in run.sweeps:
        pooled = mc.pool_dsc and method == "dsc_approx"
        cands = candidate_pool(runs, run, method, pooled)
        ls = level_set_for(run, method, mc.epsilon, cands)
        ls.check()
        mask = ambiguity_mask(ls, data)
        metas = {k: fit_meta(ls, data, sp.val_idx, mask, k, run.seed) for k in kinds}
        uni = uniform_meta(ls, run.seed)
        tag = METHOD_LABEL[method]
        out["table1"][method] = {
            "Acc.": _row({k: run.best for k in kinds}, data, sp, mask),
            "Fair": _row({k: fair[k].model for k in kinds}, data, sp, mask),
            f"Uni-{tag}": _row({k: uni for k in kinds}, data, sp, mask),
            f"Our-{tag}": _row(metas, data, sp, mask),
            "_ambiguous_fraction_test": mask.fraction(sp.test_idx),
            "_level_set_size": len(ls),
        }
        out["level_sets"][method] = ls
        out["metas"][method] = metas
        stats = {}
        for eps in mc.table_epsilons:
            ls_e = level_set_for(run, method, eps, cands)
            stats[f"{eps:g}"] = {
                "delta_hat": M.pairwise_discrepancy(ls_e, data, sp.test_idx),
                "alpha_hat": M.pairwise_ambiguity(ls_e, data, sp.test_idx),
                "members": len(ls_e),
            }
            if pooled:
                ls_s = level_set_for(run, method, eps, run.sweeps[method].models)
                stats[f"{eps:g}"]["per_seed_delta_hat"] = M.pairwise_discrepancy(ls_s, data, sp.test_idx)
                stats[f"{eps:g}"]["per_seed_alpha_hat"] = M.pairwise_ambiguity(ls_s, data, sp.test_idx)
        out["table2"][method] = stats
    return out


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def average_tables(per_seed: list[dict]) -> dict:
    """Seed-averaged copies of table1 / table2 (undefined cells are skipped)."""

    def avg(objs):
        first = objs[0]
        if isinstance(first, dict):
            return {k: avg([o[k] for o in objs]) for k in first}
        if first is None or isinstance(first, (int, float)):
            return _mean(objs)
        return first

    return {
        "table1": avg([s["table1"] for s in per_seed]),
        "table2": avg([s["table2"] for s in per_seed]),
    }


# text rendering ---------------------------------------------------------------

def _pair(row, col):
    parts = []
    for kind in ("fpr", "fnr"):
        parts.append(M.fmt(row.get(kind, {}).get(col)))
    return "/".join(parts)


def render_table1(table1: dict) -> str:
    lines = []
    for method, rows in table1.items():
        lines.append(f"[{method}]  unfairness FPR/FNR on test; accuracy of the FPR/FNR model")
        lines.append(f"{'':10s} | {'total':>13s} | {'unamb':>13s} | {'amb':>13s} | {'acc val':>11s} | {'acc test':>11s}")
        for name, row in rows.items():
            if name.startswith("_"):
                continue
            acc_v = _pair({k: {"v": row[k]["acc_val"]} for k in row}, "v")
            acc_t = _pair({k: {"v": row[k]["acc_test"]} for k in row}, "v")
            lines.append(f"{name:10s} | {_pair(row, 'total'):>13s} | {_pair(row, 'unamb'):>13s} | "
                         f"{_pair(row, 'amb'):>13s} | {acc_v:>11s} | {acc_t:>11s}")
        lines.append("")
    return "\n".join(lines)


def table2_rows(table2: dict, runtimes: dict | None = None) -> list[dict]:
    rows = []
    for method, stats in table2.items():
        for eps, s in stats.items():
            rows.append({"method": method, "epsilon": float(eps), "delta_hat": s["delta_hat"],
                         "alpha_hat": s["alpha_hat"],
                         "runtime_s": None if runtimes is None else runtimes.get(method)})
    return rows


def render_table2(rows: list[dict]) -> str:
    lines = [f"{'method':14s} | {'epsilon':>7s} | {'delta_hat':>9s} | {'alpha_hat':>9s} | {'runtime_s':>9s}"]
    for r in sorted(rows, key=lambda r: (r["method"], r["epsilon"])):
        rt = "-" if r.get("runtime_s") is None else f"{r['runtime_s']:.1f}"
        lines.append(f"{r['method']:14s} | {r['epsilon']:7.3f} | {M.fmt(r['delta_hat'], 3):>9s} | "
                     f"{M.fmt(r['alpha_hat'], 3):>9s} | {rt:>9s}")
    return "\n".join(lines) + "\n"


# oracle -------------------------------------------------------------------------

def oracle_comparison(data: Dataset, epsilons, cfg: ExperimentConfig) -> list[dict]:
    """Proxy level sets vs exact enumeration on a small 2-D dataset.

    Everything (training, pruning, evaluation) uses all rows, and proxies are
    pruned against the exact optimum's accuracy so that both level sets live
    in the same band.
    """
    idx = np.arange(data.n)
    sp = SplitAssignment(idx, idx, idx, 0)
    g = cfg.trainer.lambda_grid
    best, _, _ = select_lambda(data, idx, idx, lambda_grid(g.lo, g.hi, g.num), train_config(cfg))
    tc = train_config(cfg, cfg.multiplicity.lam)
    gg = cfg.multiplicity.gamma_grid
    sweeps = {
        "dsc_approx": dsc_approx_sweep(data, sp, best, gamma_grid(gg.num, gg.lo, gg.hi, gg.spacing), tc),
        "amb_approx": amb_approx_sweep(data, sp, best, idx, tc, cfg.multiplicity.margin),
    }
    sweeps["combined"] = SweepResult("combined", [], sweeps["dsc_approx"].models + sweeps["amb_approx"].models, [])
    rows = []
    for eps in epsilons:
        exact = exact_level_set(data, idx, eps)
        top = float(exact.val_accuracy[exact.best_index])
        ex_flags = np.any(exact.predictions(data.features) != exact.predictions(data.features)[0], axis=0)
        ex_alpha = float(np.mean(ex_flags))
        ex_delta = M.pairwise_discrepancy(exact, data, idx)
        for name, sw in sweeps.items():
            ls = prune_level_set(best, sw.models, data, idx, eps, reference_accuracy=top)
            flags = ambiguity_mask(ls, data).flags
            inter = int(np.sum(flags & ex_flags))
            union = int(np.sum(flags | ex_flags))
            rows.append({
                "epsilon": float(eps),
                "method": name,
                "delta_hat": M.pairwise_discrepancy(ls, data, idx),
                "alpha_hat": float(np.mean(flags)),
                "exact_delta_hat": ex_delta,
                "exact_alpha": ex_alpha,
                "exact_members": len(exact),
                "members": len(ls),
                "recall": inter / max(1, int(ex_flags.sum())),
                "jaccard": inter / union if union else 1.0,
                "outside_exact": int(np.sum(flags & ~ex_flags)),
            })
    return rows


# artifacts ------------------------------------------------------------------------

def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def plot_rows(run: SeedRun, ls: LevelSet, metas: dict, fair: dict) -> list[dict]:
    data, sp = run.data, run.splits
    which = np.empty(data.n, dtype=object)
    which[sp.train_idx], which[sp.val_idx], which[sp.test_idx] = "train", "val", "test"
    P = ls.predictions(data.features)
    amb = np.any(P != P[0], axis=0)
    best_pred = P[ls.best_index]
    cols = {f"p_pos_our_{k}": metas[k].weights @ (P == 1) for k in metas}
    fair_cols = {f"pred_fair_{k}": np.where(fair[k].model.decision(data.features) >= 0, 1, -1) for k in fair}
    rows = []
    for i in range(data.n):
        r = {name: float(data.features[i, j]) for j, name in enumerate(data.feature_names)}
        r.update(label=int(data.labels[i]), sensitive=int(data.sensitive[i]), split=which[i],
                 ambiguous=int(amb[i]), pred_best=int(best_pred[i]))
        if data.cluster is not None:
            r["cluster"] = int(data.cluster[i])
        r.update({k: round(float(v[i]), 12) for k, v in cols.items()})
        r.update({k: int(v[i]) for k, v in fair_cols.items()})
        rows.append(r)
    return rows


def run_experiment(cfg: ExperimentConfig, out_dir, seeds=None, stages: StageLog | None = None) -> dict:
    """Run every configured stage and write the artifact directory.

    Layout: ``models/`` (JSON models, level sets, meta weights),
    ``reports/`` (``results.json``, text tables, CSVs), ``plots/`` (per-point
    CSVs for the first seed) and ``log.jsonl`` (stage events with wall
    times). Everything except ``log.jsonl`` and ``reports/runtime.json`` is
    deterministic for a fixed configuration. A failing stage raises
    :class:`StageError`; ``log.jsonl`` is still written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = stages if stages is not None else StageLog()
    try:
        return _run(cfg, out, list(seeds or cfg.split.seeds), stages)
    finally:
        with (out / "log.jsonl").open("w") as fh:
            for ev in stages.events:
                fh.write(json.dumps(ev) + "\n")


def _run(cfg: ExperimentConfig, out: Path, seeds: list, stages: StageLog) -> dict:
    results: dict = {"config": cfg.to_dict(), "seeds": seeds}
    with stages.timed("load_data"):
        raw = load_data(cfg)
    results["data"] = {"n": raw.n, "d": raw.d, "positives": int(np.sum(raw.labels == 1))}

    methods = [m for m in cfg.multiplicity.methods if m != "exact_oracle"]
    if methods:
        runs = [prepare_seed(raw, s, cfg, stages) for s in seeds]
        per_seed = []
        for run in runs:
            fair = fair_baselines(run, cfg, stages)
            with stages.timed("evaluate", seed=run.seed):
                ev = evaluate_seed(run, runs, cfg, fair)
            per_seed.append(ev)
            with stages.timed("write_models", seed=run.seed):
                _write_seed_artifacts(out, cfg, run, ev, fair, first=run is runs[0])
            for k in ("level_sets", "metas"):
                ev.pop(k)
        results["per_seed"] = per_seed
        with stages.timed("aggregate"):
            results["average"] = average_tables(per_seed)
            (out / "reports").mkdir(parents=True, exist_ok=True)
            (out / "reports" / "table1.txt").write_text(render_table1(results["average"]["table1"]))
            rows = table2_rows(results["average"]["table2"])
            _write_csv(out / "reports" / "table2.csv", rows)
            (out / "reports" / "table2.txt").write_text(render_table2(rows))

    if "exact_oracle" in cfg.multiplicity.methods:
        eps = sorted({cfg.multiplicity.epsilon, *cfg.multiplicity.table_epsilons})
        with stages.timed("exact_oracle"):
            rows = oracle_comparison(raw, eps, cfg)
        results["oracle"] = rows
        _write_csv(out / "reports" / "oracle_comparison.csv", rows)

    _dump(out / "reports" / "results.json", results)
    runtime = {m: stages.runtimes[m] for m in ("dsc_approx", "amb_approx", "exact_oracle") if m in stages.runtimes}
    _dump(out / "reports" / "runtime.json", {"stages": stages.runtimes, "methods": runtime})
    return results


def _write_seed_artifacts(out: Path, cfg: ExperimentConfig, run: SeedRun, ev: dict, fair: dict, first: bool):
    tag = str(run.seed)
    _dump(out / "models" / f"best_{tag}.json", {**model_to_dict(run.best), "lambda": run.lam})
    for k, fb in fair.items():
        _dump(out / "models" / f"fair_{k}_{tag}.json",
              {**model_to_dict(fb.model), "c": fb.c, "val_unfairness": fb.val_unfairness,
               "val_accuracy": fb.val_accuracy})
    for method, ls in ev["level_sets"].items():
        _dump(out / "models" / f"levelset_{method}_{tag}.json", level_set_to_dict(ls))
        for k, meta in ev["metas"][method].items():
            _dump(out / "models" / f"meta_{method}_{k}_{tag}.json",
                  {"level_set": f"levelset_{method}_{tag}.json", "weights": meta.weights.tolist(),
                   "rng_seed": meta.rng_seed, "report": meta.report})
        if cfg.report.plots and first:
            _write_csv(out / "plots" / f"points_{method}_{tag}.csv",
                       plot_rows(run, ls, ev["metas"][method], fair))
