"""Metrics and decision procedures for localization results.

Circular angular error, thresholded peak picking on normalized spectra,
optimal truth-to-estimate assignment, accuracy at an error threshold, and
ROC-AUC for source-count classification by peak counting.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ParameterError, UndefinedMetricError

MISS_COST_DEG = 180.0


def angular_error(truth_deg: float, est_deg: float) -> float:
    """Shortest arc between two azimuths on the circle, in [0, 180]."""
    delta = abs(truth_deg - est_deg) % 360.0
    return min(delta, 360.0 - delta)


def minmax_normalize(values) -> np.ndarray:
    """Map a spectrum to [0, 1]; a constant spectrum maps to all ones."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.ones_like(values)
    return (values - lo) / (hi - lo)


def pick_peaks(spectrum, threshold: float, min_sep_cells: int = 2,
               max_peaks: int = 10) -> list:
    """Greedy circular peak picking on a normalized spectrum.

    Candidates are local maxima (>= both circular neighbors) with value >=
    threshold, taken in descending value with ties broken by lowest index.
    A candidate within ``min_sep_cells`` cells of an already selected peak
    is suppressed, and at most ``max_peaks`` peaks are returned.

    Returns a list of (grid index, value) sorted by descending value.
    """
    spectrum = np.asarray(spectrum, dtype=np.float64)
    n = spectrum.size
    if n < 2:
        return [(0, float(spectrum[0]))] if n == 1 and spectrum[0] >= threshold else []
    left = np.roll(spectrum, 1)
    right = np.roll(spectrum, -1)
    candidates = np.nonzero((spectrum >= left) & (spectrum >= right)
                            & (spectrum >= threshold))[0]
    order = sorted(candidates, key=lambda i: (-spectrum[i], i))

    picked = []
    for i in order:
        if len(picked) >= max_peaks:
            break
        if all(circ_dist(i, j, n) > min_sep_cells for j, _ in picked):
            picked.append((int(i), float(spectrum[i])))
    return picked


def circ_dist(i: int, j: int, n: int) -> int:
    d = abs(i - j) % n
    return min(d, n - d)


def hungarian_assign(cost) -> tuple:
    """Minimum-cost one-to-one assignment of rows to columns.

    Expects N <= K; a wider-than-tall matrix is handled directly, a
    taller-than-wide one is padded with a large constant so every row still
    receives a column. Returns (row_indices, col_indices, total_cost).
    """
    cost = np.atleast_2d(np.asarray(cost, dtype=np.float64))
    if cost.size == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int), 0.0
    n, k = cost.shape
    work = cost
    if n > k:
        pad = np.full((n, n - k), cost.max() + 1.0 + MISS_COST_DEG)
        work = np.hstack([cost, pad])
    rows, cols = linear_sum_assignment(work)
    total = float(cost[rows[cols < k], cols[cols < k]].sum())
    return rows, cols, total


def accuracy_at(errors, threshold_deg: float = 15.0) -> float:
    """Fraction of errors strictly below the threshold."""
    if threshold_deg <= 0:
        raise ParameterError("threshold must be positive")
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise UndefinedMetricError("accuracy of an empty error list is undefined")
    return float(np.mean(errors < threshold_deg))


def match_errors(truth_azimuths_deg, est_azimuths_deg) -> np.ndarray:
    """Per-truth angular errors under the optimal assignment.

    Missing estimates (fewer peaks than truths) count as 180 degrees.
    """
    truth = np.asarray(truth_azimuths_deg, dtype=np.float64)
    est = np.asarray(est_azimuths_deg, dtype=np.float64)
    if truth.size == 0:
        return np.empty(0)
    if est.size == 0:
        return np.full(truth.size, MISS_COST_DEG)
    cost = np.array([[angular_error(t, e) for e in est] for t in truth])
    rows, cols, _ = hungarian_assign(cost)
    errors = np.full(truth.size, MISS_COST_DEG)
    for r, c in zip(rows, cols):
        if c < est.size:
            errors[r] = cost[r, c]
    return errors


def auc_source_count(spectra, true_counts, target_n: int, thresholds,
                     min_sep_cells: int = 2, max_peaks: int = 10) -> float:
    """ROC-AUC of the "exactly target_n peaks" source-count classifier.

    Each threshold yields one (FPR, TPR) operating point from classifying
    every scene by whether its peak count equals ``target_n``. The count is
    not monotone in the threshold, so the operating points are sorted by
    FPR and the TPR is monotonized by a running maximum (the attainable
    ROC); the curve is closed with (0,0) and (1,1) and integrated by the
    trapezoidal rule. For a threshold-monotone classifier this reduces to
    the ordinary empirical ROC.
    """
    labels = np.asarray([int(c) == target_n for c in true_counts], dtype=bool)
    if labels.all() or not labels.any():
        raise UndefinedMetricError("AUC needs both positive and negative scenes")
    spectra = [np.asarray(s, dtype=np.float64) for s in spectra]

    points = {(0.0, 0.0), (1.0, 1.0)}
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    for tau in thresholds:
        pred = np.array([len(pick_peaks(s, tau, min_sep_cells, max_peaks)) == target_n
                         for s in spectra])
        tpr = float((pred & labels).sum()) / n_pos
        fpr = float((pred & ~labels).sum()) / n_neg
        points.add((fpr, tpr))
    ordered = sorted(points)
    xs = np.array([p[0] for p in ordered])
    ys = np.maximum.accumulate(np.array([p[1] for p in ordered]))
    return float(np.trapezoid(ys, xs))


@dataclass
class LocalizationResult:
    """Normalized spectrum plus its picked peaks for one scene."""

    spectrum: np.ndarray
    picked_peaks: list = field(default_factory=list)

    def peak_indices(self) -> list:
        return [i for i, _ in self.picked_peaks]


@dataclass
class SceneMetrics:
    """One evaluated (scene, method, sv_model) combination."""

    scene_id: str
    method: str
    sv_model: str
    n_true: int
    n_est: int
    errors_deg: list
    acc15: float | None
    auc: float | None = None  # batch-level; repeated on member rows
    status: str = "ok"

    def mean_error(self) -> float | None:
        return float(np.mean(self.errors_deg)) if self.errors_deg else None


def metrics_to_csv(rows, path) -> None:
    """Flat per-scene CSV (RFC 4180, UTF-8)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene_id", "method", "sv_model", "n_true", "n_est",
                         "err_mean_deg", "err_max_deg", "err_deg_per_source",
                         "acc15", "auc", "status"])
        for r in rows:
            errs = ";".join(f"{e:.6f}" for e in r.errors_deg)
            mean_e = f"{np.mean(r.errors_deg):.6f}" if r.errors_deg else ""
            max_e = f"{np.max(r.errors_deg):.6f}" if r.errors_deg else ""
            acc = f"{r.acc15:.6f}" if r.acc15 is not None else ""
            auc = f"{r.auc:.6f}" if r.auc is not None else ""
            writer.writerow([r.scene_id, r.method, r.sv_model, r.n_true,
                             r.n_est, mean_e, max_e, errs, acc, auc, r.status])


def metrics_to_json(rows, path, extra: dict | None = None) -> None:
    doc = {"scenes": [{
        "scene_id": r.scene_id, "method": r.method, "sv_model": r.sv_model,
        "n_true": r.n_true, "n_est": r.n_est, "errors_deg": list(r.errors_deg),
        "acc15": r.acc15, "auc": r.auc, "status": r.status} for r in rows]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def summarize(rows) -> list:
    """Group rows by (method, sv_model) into mean/std aggregates."""
    groups: dict = {}
    for r in rows:
        if r.status != "ok":
            continue
        groups.setdefault((r.method, r.sv_model), []).append(r)
    out = []
    for (method, sv_model), grp in sorted(groups.items()):
        errs = np.concatenate([np.asarray(r.errors_deg) for r in grp
                               if r.errors_deg]) if any(r.errors_deg for r in grp) else np.empty(0)
        accs = [r.acc15 for r in grp if r.acc15 is not None]
        out.append({
            "method": method,
            "sv_model": sv_model,
            "scenes": len(grp),
            "err_mean_deg": float(errs.mean()) if errs.size else None,
            "err_std_deg": float(errs.std()) if errs.size else None,
            "acc15_mean": float(np.mean(accs)) if accs else None,
        })
    return out


def save_spectrum_csv(azimuths_deg, values, path, method_tag: str,
                      metadata: dict | None = None) -> None:
    """Angular spectrum / spatial measure CSV plus a JSON metadata sidecar."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["azimuth_deg", "value", "method_tag"])
        for az, v in zip(azimuths_deg, values):
            writer.writerow([f"{az:.6f}", f"{v:.12g}", method_tag])
    if metadata is not None:
        Path(path).with_suffix(".json").write_text(
            json.dumps(metadata, sort_keys=True, indent=1))
