"""Screen simulated field samples against a weather-to-SM linear model.

A linear regressor is fit on county-level data (per-timestep pooled rows,
ordinary least squares via the normal equations) and every field sample is
scored by the MSE between the regressor's soil-moisture prediction from
the sample's weather and the sample's simulated soil moisture. Samples
scoring above the threshold are discarded.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

COND_LIMIT = 1e10
RIDGE_EPS = 1e-8


@dataclass
class LinearSMModel:
    weights: np.ndarray  # (5, 2): 4 weather coefficients + intercept -> 2 SM layers
    diagnostics: dict

    def predict(self, weather):
        """(T, 4) weather -> (T, 2) soil moisture."""
        weather = np.asarray(weather, dtype=np.float64)
        if weather.ndim != 2 or weather.shape[1] != 4:
            raise ShapeError(f"predict: expected (T, 4) weather, got {weather.shape}")
        design = np.hstack([weather, np.ones((weather.shape[0], 1))])
        return design @ self.weights


def _pooled_rows(dataset):
    x = np.concatenate([s.weather for s in dataset.samples], axis=0)
    y = np.concatenate([s.sm for s in dataset.samples], axis=0)
    return x, y


def fit_sm_regressor(dataset):
    """OLS with intercept on all (sample, timestep) rows of a county dataset.

    Falls back to a tiny ridge term when the Gram matrix is near-singular;
    the diagnostics record whether that happened.
    """
    if len(dataset) == 0:
        raise ValueError("fit_sm_regressor: empty dataset")
    x, y = _pooled_rows(dataset)
    design = np.hstack([x, np.ones((x.shape[0], 1))])
    gram = design.T @ design
    cond = float(np.linalg.cond(gram))
    ridge_applied = cond > COND_LIMIT
    if ridge_applied:
        gram = gram + RIDGE_EPS * np.eye(gram.shape[0])
    weights = np.linalg.solve(gram, design.T @ y)
    residuals = design @ weights - y
    diagnostics = {
        "rows": int(x.shape[0]),
        "cond": cond,
        "ridge_applied": bool(ridge_applied),
        "residual_mse": float((residuals ** 2).mean()),
    }
    return LinearSMModel(weights=weights, diagnostics=diagnostics)


def score_sample(model, sample):
    """MSE over timesteps and both SM layers between the regressor's
    prediction from the sample's weather and the sample's SM matrix."""
    pred = model.predict(sample.weather)
    return float(((pred - sample.sm) ** 2).mean())


def screen_field_samples(dataset, model, threshold=0.5):
    """Partition into (kept, discarded, report); kept iff mse <= threshold.

    The report lists (sid, year, mse, kept) for every input sample.
    """
    kept, discarded, report = [], [], []
    for s in dataset.samples:
        mse = score_sample(model, s)
        keep = mse <= threshold
        (kept if keep else discarded).append(s)
        report.append({"id": s.sid, "year": s.year, "mse": mse, "kept": keep})
    kept_ds = type(dataset)(level=dataset.level, samples=kept)
    discarded_ds = type(dataset)(level=dataset.level, samples=discarded)
    return kept_ds, discarded_ds, report


def write_filter_report(path, report):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id", "year", "mse", "kept"])
        for row in report:
            w.writerow([row["id"], str(row["year"]), repr(row["mse"]), str(int(row["kept"]))])
