"""Command line entry point: ``ambifair {generate,run,compare,oracle-check}``.

Exit codes: 0 on success, 2 for configuration errors, 1 for a failing
stage. Errors are printed to stderr as one JSON object naming the stage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, resolve_config
from .datagen import SynthConfig, generate_synthetic, save_synthetic
from .errors import AmbifairError, ConfigError
from .pipeline import StageError, run_experiment

COMPARE_FIELDS = ("method", "epsilon", "delta_hat", "alpha_hat", "runtime_s", "source")


def _fail(stage: str, exc: BaseException, code: int, **extra) -> int:
    doc = {"status": "error", "stage": stage, "error": str(exc), "type": type(exc).__name__, **extra}
    print(json.dumps(doc), file=sys.stderr)
    return code


def _config(args) -> ExperimentConfig:
    cfg = resolve_config(args.config)
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "seed", None) is not None:
        cfg.split.seeds = [args.seed]
    return cfg.validate()


def _num(v):
    return None if v in (None, "", "None") else float(v)


def _read_rows(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def compare_methods(dirs) -> list[dict]:
    """Join multiplicity numbers from several artifact directories.

    Rows are keyed by ``(method, epsilon)``; a later directory replaces an
    earlier row with the same key, so passing one directory twice changes
    nothing. Oracle comparisons contribute ``exact_oracle`` rows.
    """
    merged = {}
    for d in map(Path, dirs):
        reports = d / "reports"
        runtime = {}
        rt_path = reports / "runtime.json"
        if rt_path.exists():
            runtime = json.loads(rt_path.read_text()).get("methods", {})
        t2 = reports / "table2.csv"
        if t2.exists():
            for r in _read_rows(t2):
                key = (r["method"], float(r["epsilon"]))
                merged[key] = {"method": key[0], "epsilon": key[1], "delta_hat": _num(r["delta_hat"]),
                               "alpha_hat": _num(r["alpha_hat"]), "runtime_s": runtime.get(key[0]),
                               "source": str(d)}
        oc = reports / "oracle_comparison.csv"
        if oc.exists():
            for r in _read_rows(oc):
                key = ("exact_oracle", float(r["epsilon"]))
                merged[key] = {"method": key[0], "epsilon": key[1], "delta_hat": _num(r["exact_delta_hat"]),
                               "alpha_hat": _num(r["exact_alpha"]), "runtime_s": runtime.get("exact_oracle"),
                               "source": str(d)}
                pkey = (f"{r['method']}@oracle", float(r["epsilon"]))
                merged[pkey] = {"method": pkey[0], "epsilon": pkey[1], "delta_hat": _num(r["delta_hat"]),
                                "alpha_hat": _num(r["alpha_hat"]), "runtime_s": None, "source": str(d)}
    return [merged[k] for k in sorted(merged)]


def write_comparison(rows: list[dict], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "comparison.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_FIELDS)
        w.writeheader()
        w.writerows(rows)
    (out / "comparison.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")


def cmd_generate(args) -> int:
    cfg = _config(args)
    s = cfg.data.synthetic
    seed = s.seed if args.seed is None else args.seed
    sc = SynthConfig(seed=seed, n_core=s.n_core, n_sparse=s.n_sparse, noise_rate=s.noise_rate)
    try:
        data = generate_synthetic(sc)
        csv_path, meta_path = save_synthetic(data, sc, Path(args.out) / "synthetic.csv")
    except AmbifairError as exc:
        return _fail("generate", exc, 1)
    print(json.dumps({"status": "ok", "csv": str(csv_path), "meta": str(meta_path), "n": data.n}))
    return 0


def _run(cfg: ExperimentConfig, out: str) -> int:
    try:
        results = run_experiment(cfg, out)
    except StageError as exc:
        return _fail(exc.stage, exc.cause, 1)
    summary = {"status": "ok", "out": out, "seeds": results["seeds"]}
    if "oracle" in results:
        summary["oracle_rows"] = len(results["oracle"])
    print(json.dumps(summary))
    return 0


def cmd_run(args) -> int:
    return _run(_config(args), args.out)


def cmd_oracle_check(args) -> int:
    if args.config is None:
        args.config = "preset:oracle-60"
    cfg = _config(args)
    cfg.multiplicity.methods = ["exact_oracle"]
    return _run(cfg, args.out)


def cmd_compare(args) -> int:
    missing = [d for d in args.dirs if not Path(d).is_dir()]
    if missing:
        return _fail("compare", FileNotFoundError(f"not a directory: {missing[0]}"), 1)
    rows = compare_methods(args.dirs)
    write_comparison(rows, Path(args.out))
    print(json.dumps({"status": "ok", "rows": len(rows), "out": args.out}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ambifair", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="config file (YAML/JSON) or preset:<name>")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int, help="override the seed(s) from the config")
        sp.add_argument("--workers", type=int, help="parallel trainings in the sweep stage")

    g = sub.add_parser("generate", help="write the synthetic dataset as CSV")
    common(g, "data")
    g.set_defaults(func=cmd_generate)
    r = sub.add_parser("run", help="run the configured experiment")
    common(r, "artifacts")
    r.set_defaults(func=cmd_run)
    o = sub.add_parser("oracle-check", help="compare proxy level sets with exact enumeration")
    common(o, "artifacts-oracle")
    o.set_defaults(func=cmd_oracle_check)
    c = sub.add_parser("compare", help="merge multiplicity tables from artifact directories")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--out", default="comparison")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, 2, key=exc.key)


if __name__ == "__main__":
    sys.exit(main())
