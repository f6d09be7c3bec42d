"""Elastic-net regression over per-time-point features, spatial-filter
ranking by held-out regression performance, and the coefficient heatmap.

The objective is the literal unscaled sum of squares

    ||y - X beta||^2 + lam2 ||beta||^2 + lam1 ||beta||_1

so penalty values are dataset-size dependent: doubling the sample count
roughly halves the effective regularization.  Columns are standardized and
the intercept is unpenalized (it decouples as mean(y) after centering).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .errors import ConfigError, MissingClassError
from .kernels import enet_coordinate_descent

log = logging.getLogger(__name__)

LAMBDA_GRID = (1e-2, 1e-1, 1.0, 10.0)


@dataclass
class ElasticNetProblem:
    """Standardized design matrix and response with penalty weights.

    Constant raw columns are excluded from the fit (flagged in
    ``kept_columns``) and their coefficients reported as zero.
    """

    x: np.ndarray  # (n, p_kept) standardized
    y: np.ndarray  # (n,)
    lam1: float = 1.0
    lam2: float = 1.0
    kept_columns: np.ndarray = None  # boolean (p_full,)
    column_mean: np.ndarray = None
    column_sd: np.ndarray = None

    @classmethod
    def from_raw(cls, x_raw, y, lam1=1.0, lam2=1.0):
        x_raw = np.asarray(x_raw, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x_raw.shape[0] < 2:
            raise ConfigError("elastic net needs at least 2 samples")
        if lam1 < 0 or lam2 < 0:
            raise ConfigError("penalties must be non-negative")
        mean = x_raw.mean(axis=0)
        sd = x_raw.std(axis=0)
        kept = sd > 0
        if not kept.all():
            log.warning("excluding %d constant feature columns", int((~kept).sum()))
        x = (x_raw[:, kept] - mean[kept]) / sd[kept]
        return cls(
            x=x, y=y, lam1=lam1, lam2=lam2,
            kept_columns=kept, column_mean=mean, column_sd=sd,
        )

    def standardize_new(self, x_raw):
        x_raw = np.asarray(x_raw, dtype=np.float64)
        kept = self.kept_columns
        return (x_raw[:, kept] - self.column_mean[kept]) / self.column_sd[kept]


@dataclass
class ElasticNetFit:
    beta: np.ndarray  # (p_full,) on the standardized scale, zeros where excluded
    intercept: float
    objective: float
    iterations: int
    converged: bool
    r2: float = None  # held-out, filled by the caller when available

    def predict(self, problem: ElasticNetProblem, x_raw):
        x = problem.standardize_new(x_raw)
        return self.intercept + x @ self.beta[problem.kept_columns]


def elastic_net_fit(problem: ElasticNetProblem, tol=1e-8, max_iter=10**5) -> ElasticNetFit:
    """Cyclic coordinate descent with soft-thresholding.

    Each coordinate update is the closed form
    beta_j <- S(x_j . r_j, lam1/2) / (x_j . x_j + lam2) with r_j the partial
    residual; the sweep stops when the largest coordinate change is below
    ``tol``.  ``max_iter`` counts coordinate updates.
    """
    p_kept = problem.x.shape[1]
    y_center = problem.y - problem.y.mean()
    max_sweeps = max(1, int(np.ceil(max_iter / max(p_kept, 1))))
    if p_kept == 0:
        beta_kept = np.zeros(0)
        sweeps, converged = 0, True
    else:
        beta_kept, sweeps, converged = enet_coordinate_descent(
            problem.x.T, y_center, problem.lam1, problem.lam2, tol, max_sweeps
        )
    if not converged:
        log.warning("elastic net hit the sweep limit before tol=%g", tol)
    beta = np.zeros(problem.kept_columns.shape[0])
    beta[problem.kept_columns] = beta_kept
    intercept = float(problem.y.mean())
    resid = y_center - problem.x @ beta_kept
    objective = float(
        resid @ resid
        + problem.lam2 * (beta_kept @ beta_kept)
        + problem.lam1 * np.abs(beta_kept).sum()
    )
    return ElasticNetFit(
        beta=beta,
        intercept=intercept,
        objective=objective,
        iterations=sweeps,
        converged=converged,
    )


def kkt_violation(problem: ElasticNetProblem, fit: ElasticNetFit):
    """Largest stationarity violation of the fitted coefficients.

    For nonzero beta_j: |2 x_j.(y - X beta) - 2 lam2 beta_j - lam1 sign|;
    for zero beta_j the gradient magnitude may exceed lam1 by at most the
    returned amount.
    """
    beta = fit.beta[problem.kept_columns]
    resid = (problem.y - problem.y.mean()) - problem.x @ beta
    grad = 2.0 * (problem.x.T @ resid)
    worst = 0.0
    for j in range(len(beta)):
        if beta[j] != 0.0:
            v = abs(grad[j] - 2.0 * problem.lam2 * beta[j] - problem.lam1 * np.sign(beta[j]))
        else:
            v = max(0.0, abs(grad[j]) - problem.lam1)
        worst = max(worst, v)
    return worst


def r_squared(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64)
    ss_tot = ((y_true - y_true.mean()) ** 2).sum()
    if ss_tot == 0:
        raise MissingClassError("response is constant on this split")
    ss_res = ((y_true - y_pred) ** 2).sum()
    return 1.0 - ss_res / ss_tot


def rank_filters_by_regression(model, dataset, lam_grid=LAMBDA_GRID,
                               tol=1e-6, max_iter=10**5):
    """Per-spatial-filter elastic-net score table, sorted descending.

    For each filter: regress the attended side on its 350 per-time-point
    features (fit on train, penalty pair chosen by validation R squared),
    and report held-out test R squared as a percentage.  Returns
    (rows, fits) with one entry per filter in original filter order in
    ``fits`` and sorted rows for the table.
    """
    tr = dataset.indices("train")
    va = dataset.indices("val")
    te = dataset.indices("test")
    feats_tr = analysis.spatial_conv_features(model, dataset, tr)
    feats_va = analysis.spatial_conv_features(model, dataset, va)
    feats_te = analysis.spatial_conv_features(model, dataset, te)
    for split_name, sel in (("val", va), ("test", te)):
        if len(np.unique(dataset.side[sel])) < 2:
            raise MissingClassError(f"both attended sides required in {split_name}")
    rows = []
    fits = []
    for f in range(feats_tr.shape[2]):
        x_tr = feats_tr[:, :, f]
        if x_tr.std(axis=0).max() == 0:
            log.warning("filter %d has a constant feature map; score set to 0", f + 1)
            rows.append({"filter": f + 1, "r2_pct": 0.0, "lam1": 0.0, "lam2": 0.0})
            fits.append(None)
            continue
        best = None
        for lam1 in lam_grid:
            for lam2 in lam_grid:
                problem = ElasticNetProblem.from_raw(
                    x_tr, dataset.side[tr], lam1=lam1, lam2=lam2
                )
                fit = elastic_net_fit(problem, tol=tol, max_iter=max_iter)
                val_r2 = r_squared(
                    dataset.side[va], fit.predict(problem, feats_va[:, :, f])
                )
                if best is None or val_r2 > best[0]:
                    best = (val_r2, lam1, lam2, problem, fit)
        _, lam1, lam2, problem, fit = best
        fit.r2 = r_squared(dataset.side[te], fit.predict(problem, feats_te[:, :, f]))
        rows.append(
            {"filter": f + 1, "r2_pct": 100.0 * fit.r2, "lam1": lam1, "lam2": lam2}
        )
        fits.append(fit)
    rows.sort(key=lambda r: (-r["r2_pct"], r["filter"]))
    return rows, fits


@dataclass
class BetaHeatmap:
    matrix: np.ndarray  # (n_filters, time) of |beta|
    times_ms: np.ndarray

    def rows(self):
        return [
            [i + 1] + list(self.matrix[i]) for i in range(self.matrix.shape[0])
        ]


def beta_heatmap(fits, times) -> BetaHeatmap:
    """|beta| matrix over (filters x time points), time in ms after onset.

    ``fits`` may contain None for degenerate filters; those rows are zero.
    """
    times = np.asarray(times, dtype=np.float64)
    n_t = len(times)
    rows = []
    for fit in fits:
        if fit is None:
            rows.append(np.zeros(n_t))
            continue
        if fit.beta.shape[0] != n_t:
            raise ConfigError(
                f"fit has {fit.beta.shape[0]} coefficients, expected {n_t}"
            )
        rows.append(np.abs(fit.beta))
    return BetaHeatmap(matrix=np.array(rows), times_ms=times * 1000.0)
