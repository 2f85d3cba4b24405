"""CSV ingestion, standardization and train/validation/test splitting."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_model import Dataset, SplitAssignment
from .errors import (
    ConfigError,
    ContractError,
    EmptyFileError,
    IngestError,
    MissingColumnError,
    MissingValueError,
    NonNumericCellError,
    ZeroVarianceError,
)

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.5, 0.25, 0.25)


@dataclass
class IngestConfig:
    path: str
    label_column: str = "label"
    sensitive_column: str = "sensitive"
    positive_label_value: str = "1"
    protected_value: str = "0"
    split_ratios: tuple = DEFAULT_RATIOS
    seed: int = 0
    categorical_columns: tuple = ()
    ignore_columns: tuple = ()
    cluster_column: str | None = None
    drop_missing: bool = True

    def validate(self) -> None:
        check_ratios(self.split_ratios)


def check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise ConfigError("split ratios need exactly three entries", "split_ratios")
    r = tuple(float(x) for x in ratios)
    if any(x <= 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be positive and sum to 1, got {r}", "split_ratios")
    return r


def _same_value(cell: str, target) -> bool:
    target = str(target).strip()
    if cell == target:
        return True
    try:
        return float(cell) == float(target)
    except ValueError:
        return False


def load_csv(config: IngestConfig) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset`.

    The label column is mapped to +1 where it equals ``positive_label_value``
    and -1 elsewhere; the sensitive column is mapped to 0 where it equals
    ``protected_value`` and 1 elsewhere. Every other column (minus ignored
    ones) becomes a numeric feature, with listed categorical columns one-hot
    expanded. Rows with an empty cell are dropped when ``drop_missing`` is
    set and raise :class:`MissingValueError` otherwise.
    """
    path = Path(config.path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyFileError(f"{path} is empty") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if not rows:
        raise EmptyFileError(f"{path} has a header but no data rows")

    for col in (config.label_column, config.sensitive_column):
        if col not in header:
            raise MissingColumnError(f"column {col!r} not found in {path}", column=col)
    special = {config.label_column, config.sensitive_column, *config.ignore_columns}
    if config.cluster_column:
        special.add(config.cluster_column)
    feature_cols = [h for h in header if h not in special]
    if not feature_cols:
        raise IngestError("no feature columns remain after removing label/sensitive columns")
    for col in config.categorical_columns:
        if col not in header:
            raise MissingColumnError(f"categorical column {col!r} not found", column=col)

    pos = {h: i for i, h in enumerate(header)}
    kept = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise IngestError(f"row {lineno} has {len(row)} cells, expected {len(header)}", row=lineno)
        cells = [c.strip() for c in row]
        empty = [header[i] for i, c in enumerate(cells) if c == "" and header[i] not in config.ignore_columns]
        if empty:
            if config.drop_missing:
                continue
            raise MissingValueError(f"row {lineno} is missing {empty[0]!r}", row=lineno, column=empty[0])
        kept.append((lineno, cells))
    if not kept:
        raise EmptyFileError(f"{path} has no complete rows")
    if len(kept) < len(rows):
        log.info("dropped %d rows with missing values", len(rows) - len(kept))

    cat_levels = {
        col: sorted({cells[pos[col]] for _, cells in kept}) for col in config.categorical_columns
    }
    names: list[str] = []
    for col in feature_cols:
        if col in cat_levels:
            names.extend(f"{col}={lvl}" for lvl in cat_levels[col])
        else:
            names.append(col)

    X = np.empty((len(kept), len(names)))
    y = np.empty(len(kept), dtype=np.int64)
    z = np.empty(len(kept), dtype=np.int64)
    cl = np.empty(len(kept), dtype=np.int64) if config.cluster_column else None
    for r, (lineno, cells) in enumerate(kept):
        j = 0
        for col in feature_cols:
            cell = cells[pos[col]]
            if col in cat_levels:
                levels = cat_levels[col]
                X[r, j : j + len(levels)] = [1.0 if cell == lvl else 0.0 for lvl in levels]
                j += len(levels)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCellError(
                    f"non-numeric value {cell!r} in column {col!r} at row {lineno}", row=lineno, column=col
                ) from None
            if not math.isfinite(v):
                raise NonNumericCellError(
                    f"non-finite value {cell!r} in column {col!r} at row {lineno}", row=lineno, column=col
                )
            X[r, j] = v
            j += 1
        y[r] = 1 if _same_value(cells[pos[config.label_column]], config.positive_label_value) else -1
        z[r] = 0 if _same_value(cells[pos[config.sensitive_column]], config.protected_value) else 1
        if cl is not None:
            cl[r] = int(float(cells[pos[config.cluster_column]]))
    return Dataset(X, y, z, tuple(names), cl)


def write_csv(data: Dataset, path) -> Path:
    """Inverse of :func:`load_csv` for the default column names."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        extra = ["cluster"] if data.cluster is not None else []
        w.writerow([*data.feature_names, "label", "sensitive", *extra])
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]]
            row += [int(data.labels[i]), int(data.sensitive[i])]
            if extra:
                row.append(int(data.cluster[i]))
            w.writerow(row)
    return path


def split(data: Dataset | int, ratios=DEFAULT_RATIOS, seed: int = 0) -> SplitAssignment:
    """Shuffle by ``seed`` and slice contiguously.

    Sizes are ``floor(r_train * N)``, ``floor(r_val * N)`` and the remainder
    for test.
    """
    n = data if isinstance(data, int) else data.n
    r = check_ratios(ratios)
    if n < 4:
        raise ContractError(f"need at least 4 rows to populate all splits, got {n}")
    n_train = int(math.floor(r[0] * n))
    n_val = int(math.floor(r[1] * n))
    perm = np.random.default_rng(seed).permutation(n)
    return SplitAssignment(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
        int(seed),
    )


def standardize(data: Dataset, stats_from=None) -> tuple[Dataset, dict]:
    """Center and scale every column with statistics from ``stats_from`` rows.

    The standard deviation uses the population denominator. Returns the new
    dataset and ``{"mean": [...], "std": [...]}``.
    """
    idx = np.arange(data.n) if stats_from is None else np.asarray(stats_from, dtype=np.int64)
    if idx.size == 0:
        raise ContractError("stats_from must be non-empty")
    ref = data.features[idx]
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    for j, s in enumerate(std):
        if not s > 0:
            name = data.feature_names[j]
            raise ZeroVarianceError(f"column {name!r} has zero variance", column=name)
    stats = {"mean": mean.tolist(), "std": std.tolist()}
    return apply_stats(data, stats), stats


def apply_stats(data: Dataset, stats: dict) -> Dataset:
    mean = np.asarray(stats["mean"], dtype=float)
    std = np.asarray(stats["std"], dtype=float)
    return data.with_features((data.features - mean) / std)


def save_stats(stats: dict, path) -> None:
    Path(path).write_text(json.dumps({"mean": list(stats["mean"]), "std": list(stats["std"])}))
