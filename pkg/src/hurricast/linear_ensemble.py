"""ElasticNet meta-learner and simple-average consensus.

The ElasticNet solves

    (1/2N) ||y - X b - b0||^2 + alpha * (l1_ratio ||b||_1
                                         + (1 - l1_ratio)/2 ||b||_2^2)

by cyclic coordinate descent with soft thresholding; the intercept is
handled by centering and never penalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError

# documented hyperparameter search space for the meta-learner; fits may use
# values outside it (the alpha = 0 least-squares check does)
ALPHA_SEARCH = (1e-4, 10.0)


@dataclass
class ElasticNetConfig:
    alpha: float = 1.0
    l1_ratio: float = 0.5
    max_iter: int = 1000
    tol: float = 1e-8

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.l1_ratio <= 1.0:
            raise ConfigError(f"l1_ratio must be in [0, 1], got {self.l1_ratio}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class ElasticNetModel:
    coefficients: np.ndarray
    intercept: float
    n_iter: int = 0
    converged: bool = True
    objective_path: list[float] = field(default_factory=list)


def elasticnet_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray,
                         intercept: float, alpha: float, l1_ratio: float) -> float:
    n = len(y)
    resid = y - X @ beta - intercept
    return (float(resid @ resid) / (2 * n)
            + alpha * (l1_ratio * float(np.abs(beta).sum())
                       + 0.5 * (1 - l1_ratio) * float(beta @ beta)))


def _soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def fit_elasticnet(X: np.ndarray, y: np.ndarray,
                   config: ElasticNetConfig | None = None) -> ElasticNetModel:
    """Coordinate-descent fit; warns on non-convergence and on N < F."""
    config = config or ElasticNetConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ConfigError(f"incompatible shapes X {X.shape}, y {y.shape}")
    n, f = X.shape
    if n < f:
        warnings.warn(f"fewer rows ({n}) than columns ({f}); fit may be unstable")

    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    col_sq = (Xc ** 2).sum(axis=0) / n
    beta = np.zeros(f)
    resid = yc.copy()
    l1 = config.alpha * config.l1_ratio
    l2 = config.alpha * (1 - config.l1_ratio)
    path = []
    converged = False
    sweeps = 0

    for sweeps in range(1, config.max_iter + 1):
        max_delta = 0.0
        for j in range(f):
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            if old != 0.0:
                resid += old * Xc[:, j]
            rho = float(Xc[:, j] @ resid) / n
            new = _soft_threshold(rho, l1) / (col_sq[j] + l2)
            beta[j] = new
            if new != 0.0:
                resid -= new * Xc[:, j]
            max_delta = max(max_delta, abs(new - old))
        path.append(elasticnet_objective(Xc, yc, beta, 0.0, config.alpha, config.l1_ratio))
        if max_delta < config.tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"coordinate descent did not converge in {config.max_iter} sweeps "
            f"(last max coefficient change above {config.tol})")
    intercept = y_mean - float(x_mean @ beta)
    return ElasticNetModel(coefficients=beta, intercept=intercept,
                           n_iter=sweeps, converged=converged, objective_path=path)


def predict_elasticnet(model: ElasticNetModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.coefficients):
        raise ConfigError(
            f"expected {len(model.coefficients)} columns, got shape {X.shape}")
    return X @ model.coefficients + model.intercept


def grid_search_elasticnet(X: np.ndarray, y: np.ndarray,
                           l1_ratios: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                           alphas: Sequence[float] | None = None,
                           folds: int = 5, seed: int = 0,
                           ) -> tuple[ElasticNetModel, ElasticNetConfig]:
    """Cross-validated grid search over l1_ratio in [0, 1] and alpha in
    [1e-4, 10], refit on all rows with the best combination."""
    if alphas is None:
        alphas = np.logspace(np.log10(ALPHA_SEARCH[0]), np.log10(ALPHA_SEARCH[1]), 9)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = len(y)
    folds = max(2, min(folds, n))
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold_of = np.arange(n) % folds

    best: tuple[float, float, float] | None = None  # (mse, alpha, l1_ratio)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for l1_ratio in l1_ratios:
            for alpha in alphas:
                config = ElasticNetConfig(alpha=float(alpha), l1_ratio=float(l1_ratio),
                                          max_iter=200, tol=1e-6)
                total = 0.0
                for k in range(folds):
                    holdout = order[fold_of == k]
                    keep = order[fold_of != k]
                    model = fit_elasticnet(X[keep], y[keep], config)
                    err = predict_elasticnet(model, X[holdout]) - y[holdout]
                    total += float(err @ err)
                mse = total / n
                key = (mse, float(alpha), float(l1_ratio))
                if best is None or key < best:
                    best = key
    config = ElasticNetConfig(alpha=best[1], l1_ratio=best[2])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit_elasticnet(X, y, config)
    return model, config


def simple_average(values: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    """Arithmetic mean over member forecasts, componentwise.

    `values` is (members, components); at least one member required. Track
    members must be converted to predicted positions before averaging.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0 or arr.ndim == 0 or len(arr) == 0:
        raise ConfigError("simple_average requires at least one member forecast")
    return arr.mean(axis=0)
