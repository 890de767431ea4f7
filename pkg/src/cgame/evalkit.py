"""Estimation quality metrics, pooled evaluation, and file exports.

All metrics operate on flattened cell vectors.  ``evaluate`` pools every cell
of every item in the chosen split, so the reported numbers are exactly the
standalone metric functions applied to the concatenated cells.

The accuracy here is the aggregated complement of the relative L1 error,
``1 - sum|y - yhat| / sum|y|``: the per-cell form divides by zero on the many
empty OD cells, while the aggregate reduces to it for a single nonzero cell.
Hotspot cells are those exceeding ``mean + k * std`` of the true values; the
recall counts hotspots estimated within a relative tolerance.  Reports label
both conventions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import UndefinedMetricError
from .model import CGameModel, predict_od
from .simkit import Dataset

REPORT_FORMAT_VERSION = 1

HOTSPOT_K = 2.0
HOTSPOT_TOLERANCE = 0.2

METRIC_NOTES = {
    "accuracy": "1 - sum|y - yhat| / sum|y| over all pooled cells",
    "hotspot_recall": (
        f"hotspots are cells above mean + {HOTSPOT_K:g} * std of the true values; "
        f"recall counts hotspots with relative error <= {HOTSPOT_TOLERANCE:g}"
    ),
    "variance": "population variance (no Bessel correction) in r2 and var_score",
}


def _paired(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y_true, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {p.shape}")
    if y.size == 0:
        raise ValueError("metrics need at least one value")
    return y, p


def rmse(y_true, y_pred) -> float:
    y, p = _paired(y_true, y_pred)
    return float(np.sqrt(np.mean((y - p) ** 2)))


def mae(y_true, y_pred) -> float:
    y, p = _paired(y_true, y_pred)
    return float(np.mean(np.abs(y - p)))


def accuracy(y_true, y_pred) -> float:
    y, p = _paired(y_true, y_pred)
    denom = np.sum(np.abs(y))
    if denom == 0:
        raise UndefinedMetricError("accuracy is undefined for all-zero ground truth")
    return float(1.0 - np.sum(np.abs(y - p)) / denom)


def r2(y_true, y_pred) -> float:
    y, p = _paired(y_true, y_pred)
    if y.size < 2:
        raise ValueError("r2 needs at least two values")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetricError("r2 is undefined for constant ground truth")
    return float(1.0 - np.sum((y - p) ** 2) / ss_tot)


def var_score(y_true, y_pred) -> float:
    y, p = _paired(y_true, y_pred)
    if y.size < 2:
        raise ValueError("var_score needs at least two values")
    denom = np.var(y)
    if denom == 0:
        raise UndefinedMetricError("var_score is undefined for constant ground truth")
    return float(1.0 - np.var(y - p) / denom)


def hotspot_recall(
    y_true, y_pred, k: float = HOTSPOT_K, tolerance: float = HOTSPOT_TOLERANCE
) -> float:
    """Share of strongly outstanding true cells estimated within tolerance."""
    y, p = _paired(y_true, y_pred)
    threshold = y.mean() + k * y.std()
    hot = y > threshold
    if not hot.any():
        raise UndefinedMetricError(f"no cells exceed mean + {k:g} * std")
    relative = np.abs(y[hot] - p[hot]) / y[hot]
    return float(np.mean(relative <= tolerance))


@dataclass
class MetricsReport:
    """Pooled metric means with a per-model breakdown.

    ``std`` is the sample standard deviation across models (0 for a single
    model).  ``hotspot_recall`` is None when no cell qualifies as a hotspot.
    """

    rmse: float
    mae: float
    accuracy: float
    r2: float
    var_score: float
    hotspot_recall: float | None
    n_samples: int
    per_seed: list[dict[str, float | None]]
    std: dict[str, float]


METRIC_FUNCS = {
    "rmse": rmse,
    "mae": mae,
    "accuracy": accuracy,
    "r2": r2,
    "var_score": var_score,
}


def _resolve_predict(model):
    if isinstance(model, CGameModel):
        return lambda counts: predict_od(model, counts)
    if hasattr(model, "predict"):
        return model.predict
    raise TypeError(f"cannot evaluate object of type {type(model).__name__}")


def _split_indices(dataset: Dataset, split) -> list[int]:
    if split == "val":
        return dataset.val_indices
    if split == "train":
        return dataset.train_indices
    return [int(i) for i in split]


def evaluate(model, dataset: Dataset, split="val") -> dict[str, float | None]:
    """Pooled metrics of one model over a dataset split.

    ``model`` may be a low-level model, a fitted regressor, or anything with
    a ``predict(counts) -> ods`` method.  ``split`` is "val", "train", or an
    explicit index list.
    """
    indices = _split_indices(dataset, split)
    if not indices:
        raise ValueError("evaluation split is empty")
    predict = _resolve_predict(model)
    y_true = dataset.ods[indices].ravel()
    y_pred = np.asarray(predict(dataset.counts[indices]), dtype=np.float64).ravel()
    result: dict[str, float | None] = {
        name: func(y_true, y_pred) for name, func in METRIC_FUNCS.items()
    }
    try:
        result["hotspot_recall"] = hotspot_recall(y_true, y_pred)
    except UndefinedMetricError:
        result["hotspot_recall"] = None
    return result


def evaluate_many(models: Sequence, dataset: Dataset, split="val") -> MetricsReport:
    """Evaluate several independently trained models and aggregate."""
    if not models:
        raise ValueError("need at least one model")
    indices = _split_indices(dataset, split)
    per_seed = [evaluate(model, dataset, split) for model in models]

    means: dict[str, float | None] = {}
    stds: dict[str, float] = {}
    for name in list(METRIC_FUNCS) + ["hotspot_recall"]:
        values = [r[name] for r in per_seed if r[name] is not None]
        if not values:
            means[name] = None
            stds[name] = 0.0
            continue
        means[name] = float(np.mean(values))
        stds[name] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    n_samples = len(indices) * dataset.n_spots * dataset.n_spots
    return MetricsReport(
        rmse=means["rmse"],
        mae=means["mae"],
        accuracy=means["accuracy"],
        r2=means["r2"],
        var_score=means["var_score"],
        hotspot_recall=means["hotspot_recall"],
        n_samples=n_samples,
        per_seed=per_seed,
        std=stds,
    )


def write_report(report: MetricsReport, path: str | Path) -> Path:
    """Serialize a report as versioned JSON with per-seed breakdowns."""
    path = Path(path)
    metrics = {}
    for name in list(METRIC_FUNCS) + ["hotspot_recall"]:
        metrics[name] = {
            "mean": getattr(report, name),
            "std": report.std[name],
            "per_seed": [r[name] for r in report.per_seed],
        }
    payload = {
        "format_version": REPORT_FORMAT_VERSION,
        "metrics": metrics,
        "n_samples": report.n_samples,
        "n_models": len(report.per_seed),
        "notes": METRIC_NOTES,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def export_heatmap(matrix, base_path: str | Path) -> tuple[Path, Path]:
    """Write a matrix as ``<base>.csv`` and ``<base>.pgm``.

    The CSV is row-major at full float precision behind a version comment.
    The graymap scales ``v`` to ``round(255 * (v - min) / (max - min))``
    (round half to even); a constant matrix maps to all zeros.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"heatmap input must be 2-D, got shape {matrix.shape}")
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)

    csv_path = base.parent / f"{base.name}.csv"
    lines = ["# cgame heatmap v1"]
    lines.extend(",".join(repr(float(v)) for v in row) for row in matrix)
    csv_path.write_text("\n".join(lines) + "\n")

    low, high = matrix.min(), matrix.max()
    if high > low:
        pixels = np.rint(255.0 * (matrix - low) / (high - low)).astype(np.uint8)
    else:
        pixels = np.zeros(matrix.shape, dtype=np.uint8)
    pgm_path = base.parent / f"{base.name}.pgm"
    header = f"P5\n{matrix.shape[1]} {matrix.shape[0]}\n255\n"
    pgm_path.write_bytes(header.encode("ascii") + pixels.tobytes())
    return csv_path, pgm_path


def export_curve(series: Sequence, path: str | Path) -> Path:
    """Write a series as a two-column (step, value) CSV.

    Entries are either (step, value) pairs or plain values, in which case
    steps count from 1.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# cgame curve v1", "step,value"]
    lines.extend(f"{step},{repr(float(value))}" for step, value in _enumerate_series(series))
    path.write_text("\n".join(lines) + "\n")
    return path


def _enumerate_series(series):
    for step, entry in enumerate(series, start=1):
        if isinstance(entry, (tuple, list)) and len(entry) == 2:
            yield int(entry[0]), float(entry[1])
        else:
            yield step, float(entry)
