"""Error statistics, model tallies and the CSV tables built from them."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import gaussian_kde

from .dynamics import BodyModel, contact_momentum
from .errors import EmptyBatch, TooFew
from .metrics import ErrorMetric, velocity_error
from .models import ModelId
from .sysid import (
    EnsembleFit,
    FitResult,
    _as_params,
    event_frame,
    irb_bound,
    model_error,
    model_post_velocity,
    posthoc_best,
)

__all__ = [
    "ErrorMetric",
    "velocity_error",
    "ErrorDistribution",
    "error_distribution",
    "momentum_heatmap",
    "parameter_scatter",
    "EvaluationSummary",
    "evaluate",
    "write_csv",
    "read_csv",
]

TABLE1_HEADER = ("model", "mu", "mu_std", "eps", "eps_std", "best_pct", "worst_pct")
TABLE2_HEADER = ("model", "coverage_pct")
HEATMAP_HEADER = ("p_t", "p_n", "mean_error", "count")
SCATTER_HEADER = ("mu", "eps", "residual")
HIST_HEADER = ("bin_lo", "bin_hi", "density")
KDE_HEADER = ("x", "density")


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows) -> Path:
    """CSV with floats written in round-trip form; strings pass through."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _parse(cell: str):
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell


def read_csv(path) -> tuple[list[str], list[list]]:
    """Inverse of :func:`write_csv`: header and rows of int, float or str."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [[_parse(c) for c in row] for row in reader]


# ---------------------------------------------------------------------------
# error distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorDistribution:
    """Histogram density plus a Gaussian kernel density on a grid.

    ``kde_x`` is empty when the samples have no spread.
    """

    edges: np.ndarray
    density: np.ndarray
    kde_x: np.ndarray
    kde_density: np.ndarray
    n: int

    def histogram_integral(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))

    def kde_integral(self) -> float:
        if len(self.kde_x) == 0:
            return 1.0
        return float(np.trapezoid(self.kde_density, self.kde_x))

    def histogram_mean(self) -> float:
        mids = 0.5 * (self.edges[:-1] + self.edges[1:])
        return float(np.sum(mids * self.density * np.diff(self.edges)))

    def kde_mean(self) -> float:
        if len(self.kde_x) == 0:
            return self.histogram_mean()
        return float(np.trapezoid(self.kde_x * self.kde_density, self.kde_x))

    def write(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        hist = write_csv(stem.with_name(stem.name + "_hist.csv"), HIST_HEADER,
                         zip(self.edges[:-1], self.edges[1:], self.density))
        kde = write_csv(stem.with_name(stem.name + "_kde.csv"), KDE_HEADER,
                        zip(self.kde_x, self.kde_density))
        return hist, kde


def error_distribution(errors, bins: int = 30, grid: int = 2001, min_samples: int = 10) -> ErrorDistribution:
    """Density estimates of an error sample; both integrate to one."""
    x = np.asarray(errors, dtype=float).ravel()
    if len(x) < min_samples:
        raise TooFew(f"{len(x)} samples; a distribution needs at least {min_samples}")
    if not np.all(np.isfinite(x)):
        raise ValueError("errors must be finite")
    density, edges = np.histogram(x, bins=bins, density=True)
    if np.ptp(x) == 0:
        return ErrorDistribution(edges, density, np.empty(0), np.empty(0), len(x))
    kde = gaussian_kde(x)
    bw = float(np.sqrt(kde.covariance[0, 0]))
    # eight bandwidths either side leaves a tail mass far below 1e-6
    xs = np.linspace(x.min() - 8 * bw, x.max() + 8 * bw, grid)
    return ErrorDistribution(edges, density, xs, kde(xs), len(x))


# ---------------------------------------------------------------------------
# maps and scatters
# ---------------------------------------------------------------------------


def _edges(values, bins):
    if np.ndim(bins) == 0:
        lo, hi = (float(values.min()), float(values.max())) if len(values) else (0.0, 1.0)
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        return np.linspace(lo, hi, int(bins) + 1)
    return np.asarray(bins, dtype=float)


def momentum_heatmap(events, body: BodyModel, model, params, grid=(12, 12)) -> list[tuple]:
    """Mean model error binned by pre-impact contact momentum.

    ``grid`` is a pair of bin counts or bin-edge arrays for ``(p_t, p_n)``.
    Every cell is emitted; empty ones have count 0 and a NaN mean.
    """
    model = ModelId.parse(model)
    params = _as_params(params)
    mom = np.array([contact_momentum(event_frame(e, body)) for e in events]).reshape(-1, 2)
    err = np.array([model_error(model, params, e, body) for e in events])
    et, en = _edges(mom[:, 0], grid[0]), _edges(mom[:, 1], grid[1])
    total, _, _ = np.histogram2d(mom[:, 0], mom[:, 1], bins=[et, en], weights=err)
    count, _, _ = np.histogram2d(mom[:, 0], mom[:, 1], bins=[et, en])
    ct, cn = 0.5 * (et[:-1] + et[1:]), 0.5 * (en[:-1] + en[1:])
    rows = []
    for i, pt in enumerate(ct):
        for j, pn in enumerate(cn):
            c = int(count[i, j])
            rows.append((float(pt), float(pn), total[i, j] / c if c else math.nan, c))
    return rows


def parameter_scatter(fits) -> list[tuple]:
    return [(f.params.mu, f.params.eps, f.residual) for f in fits]


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


@dataclass
class EvaluationSummary:
    """Per-model errors and tallies over one event set.

    Tied best (or worst) models share that event's credit equally, so each
    tally column sums to the event count.
    """

    models: list
    params: dict
    errors: dict
    irb_errors: np.ndarray
    posthoc_errors: np.ndarray
    best: dict
    worst: dict
    coverage: dict = field(default_factory=dict)

    @property
    def n_events(self) -> int:
        return len(self.irb_errors)

    def best_pct(self, m) -> float:
        return 100.0 * self.best[m] / self.n_events

    def worst_pct(self, m) -> float:
        return 100.0 * self.worst[m] / self.n_events

    def table1_rows(self) -> list[tuple]:
        rows = []
        for m in self.models:
            p = self.params[m]
            mean = _as_params(p)
            std = p.params_std if isinstance(p, EnsembleFit) else (0.0, 0.0)
            rows.append((m.value, f"{mean.mu:.3f}", f"{std[0]:.3f}", f"{mean.eps:.3f}", f"{std[1]:.3f}",
                         f"{self.best_pct(m):.1f}", f"{self.worst_pct(m):.1f}"))
        return rows

    def table2_rows(self) -> list[tuple]:
        return [(m.value, f"{100.0 * self.coverage[m]:.1f}") for m in self.models if m in self.coverage]

    def write(self, out_dir, prefix: str = "") -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"table1": write_csv(out / f"{prefix}table1.csv", TABLE1_HEADER, self.table1_rows())}
        if self.coverage:
            paths["table2"] = write_csv(out / f"{prefix}table2.csv", TABLE2_HEADER, self.table2_rows())
        header = ("event",) + tuple(m.value for m in self.models) + ("posthoc_best", "irb_bound")
        rows = [(i,) + tuple(self.errors[m][i] for m in self.models)
                + (self.posthoc_errors[i], self.irb_errors[i]) for i in range(self.n_events)]
        paths["errors"] = write_csv(out / f"{prefix}errors.csv", header, rows)
        return paths


def evaluate(events, body: BodyModel, ensemble: dict, coverage: dict | None = None) -> EvaluationSummary:
    """Errors of each model at its ensemble parameters plus both oracles."""
    events = list(events)
    if not events:
        raise EmptyBatch("no events to evaluate")
    ens = {ModelId.parse(k): v for k, v in ensemble.items()}
    models = [m for m in ModelId if m in ens]
    errors = {m: np.zeros(len(events)) for m in models}
    best = {m: 0.0 for m in models}
    worst = {m: 0.0 for m in models}
    posthoc, irb = np.zeros(len(events)), np.zeros(len(events))
    for i, ev in enumerate(events):
        res = posthoc_best(ev, body, ens)
        for m in models:
            errors[m][i] = res.errors[m]
        posthoc[i] = res.best_error
        irb[i] = irb_bound(ev, body)[1]
        tied_best, tied_worst = res.best_set(), res.worst_set()
        for m in tied_best:
            best[m] += 1.0 / len(tied_best)
        for m in tied_worst:
            worst[m] += 1.0 / len(tied_worst)
    return EvaluationSummary(models, ens, errors, irb, posthoc, best, worst,
                             {ModelId.parse(k): v for k, v in (coverage or {}).items()})


def fit_table(fits: dict) -> list[tuple]:
    """Rows of ``(model, mu, eps, residual, saturated)`` for batch fits."""
    return [(ModelId.parse(m).value, f.params.mu, f.params.eps, f.residual, int(f.saturated_mu))
            for m, f in fits.items() if isinstance(f, FitResult)]


def event_errors(events, body: BodyModel, model, params) -> list[ErrorMetric]:
    params = _as_params(params)
    return [velocity_error(model_post_velocity(model, params, e, body), e.v_post, body) for e in events]

