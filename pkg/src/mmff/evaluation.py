"""Angle-error, rate and outage metrics, plus multi-scheme summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import ArrayConfig, LinkBudget, achievable_rate, snr

N_THRESHOLDS = 64

ERRORS_COLUMNS = ("slot", "abs_err", "rel_err")
RATES_COLUMNS = ("slot", "rate")
OUTAGE_COLUMNS = ("threshold", "probability")
SUMMARY_BASE_COLUMNS = ("scheme", "mean_abs_err", "p95_abs_err", "mean_rate")


@dataclass
class RunMetrics:
    scheme_id: str
    abs_err: np.ndarray
    rel_err: np.ndarray
    rates: np.ndarray
    slots: np.ndarray = None
    antennas: tuple = (16, 16)
    seed: int = 0
    scenario: str = ""

    def __post_init__(self):
        self.abs_err = np.asarray(self.abs_err, dtype=float)
        self.rel_err = np.asarray(self.rel_err, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        n = len(self.abs_err)
        if self.slots is None:
            self.slots = np.arange(n)
        self.slots = np.asarray(self.slots, dtype=int)
        if not len(self.rel_err) == len(self.rates) == len(self.slots) == n:
            raise ValueError("metric series must have equal length")
        if np.any(self.rates < 0):
            raise ValueError("rates must be non-negative")

    def __len__(self):
        return len(self.abs_err)


@dataclass
class OutageCurve:
    thresholds: np.ndarray
    probabilities: np.ndarray


def angle_error_series(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if np.any(truth == 0):
        raise ValueError("true angles must be nonzero")
    err = np.abs(pred - truth)
    return err, err / np.abs(truth)


def rate_series(pred, truth, budget: LinkBudget, cfg: ArrayConfig):
    """Per-slot rate when steering at ``pred`` while the LoS is at ``truth[n] = (theta, d)``."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    if len(pred) != len(truth):
        raise ValueError("prediction and truth lengths differ")
    s = np.array([snr(th, ph, budget, cfg, d) for ph, (th, d) in zip(pred, truth)])
    return achievable_rate(s)


def outage_curve(rates, thresholds) -> OutageCurve:
    """P(R_T) = 1 - #(R_n >= R_T) / N for each threshold."""
    rates = np.asarray(rates, dtype=float)
    if rates.size == 0:
        raise ValueError("outage needs at least one rate")
    th = np.asarray(thresholds, dtype=float)
    # count of rates >= t, via sorted search
    srt = np.sort(rates)
    n_ok = rates.size - np.searchsorted(srt, th, side="left")
    return OutageCurve(th, 1.0 - n_ok / rates.size)


def threshold_grid(rate_arrays, n=N_THRESHOLDS):
    top = max(float(np.max(r)) for r in rate_arrays if len(r))
    return np.linspace(0.0, top, n)


def summary_columns(report_thresholds):
    return SUMMARY_BASE_COLUMNS + tuple(f"outage@{t!r}" for t in report_thresholds)


def compare_schemes(runs, report_thresholds=(), thresholds=None):
    """One summary row per run (sorted by scheme) and the outage curves on a shared grid."""
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to compare")
    n = len(runs[0])
    if any(len(r) != n for r in runs) or len({r.scenario for r in runs}) != 1:
        raise ValueError("runs must share slot count and scenario")
    if thresholds is None:
        thresholds = threshold_grid([r.rates for r in runs])
    rows, curves = [], {}
    for r in sorted(runs, key=lambda r: r.scheme_id):
        row = {
            "scheme": r.scheme_id,
            "mean_abs_err": float(np.mean(r.abs_err)),
            "p95_abs_err": float(np.percentile(r.abs_err, 95)),
            "mean_rate": float(np.mean(r.rates)),
        }
        pts = outage_curve(r.rates, report_thresholds).probabilities if len(report_thresholds) else []
        for t, p in zip(report_thresholds, pts):
            row[f"outage@{t!r}"] = float(p)
        rows.append(row)
        curves[r.scheme_id] = outage_curve(r.rates, thresholds)
    return rows, curves


# ---------------------------------------------------------------- CSV output


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_errors_csv(path, run: RunMetrics):
    _write(path, ERRORS_COLUMNS, zip(run.slots, run.abs_err, run.rel_err))


def write_rates_csv(path, run: RunMetrics):
    _write(path, RATES_COLUMNS, zip(run.slots, run.rates))


def write_outage_csv(path, curve: OutageCurve):
    _write(path, OUTAGE_COLUMNS, zip(curve.thresholds, curve.probabilities))


def write_summary_csv(path, rows, report_thresholds=()):
    cols = summary_columns(report_thresholds)
    _write(path, cols, ([row[c] for c in cols] for row in rows))


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]
