"""Elastic Net linear regression, written from scratch.

Minimizes

    L(beta, b0) = (1/2n) sum_i (y_i - b0 - x_i . beta)^2
                  + alpha * l1_ratio * ||beta||_1
                  + (alpha/2) * (1 - l1_ratio) * ||beta||_2^2

by cyclic coordinate descent with exact univariate updates. The intercept is
never penalized and the target is never standardized. Regularization paths
are geometric in alpha with warm starts, and model selection is 5-fold
cross-validation over an (l1_ratio, alpha) grid.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data_model import StandardizationParams, apply_standardization, standardize, substream
from .errors import ConfigError, ConvergenceWarning, DataError, NumericalError, SchemaError

DEFAULT_TOL = 1e-5
DEFAULT_MAX_ITER = 10_000
DEFAULT_N_ALPHAS = 100
DEFAULT_PATH_EPS = 1e-4
DEFAULT_L1_GRID = (0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
CV_SEED = 2020

MODEL_FORMAT = "tamperscan-model"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CvSettings:
    """Everything cross_validate needs beyond the data itself."""

    l1_grid: tuple[float, ...] = DEFAULT_L1_GRID
    n_alphas: int = DEFAULT_N_ALPHAS
    eps: float = DEFAULT_PATH_EPS
    folds: int = 5
    seed: int = CV_SEED
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER


@dataclass(frozen=True)
class PenaltyConfig:
    """Overall strength `alpha` and l1/l2 mixing `l1_ratio` (1 = pure lasso)."""

    alpha: float
    l1_ratio: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if not 0.0 <= self.l1_ratio <= 1.0:
            raise ConfigError(f"l1_ratio must be in [0, 1], got {self.l1_ratio}")


@dataclass(frozen=True)
class FitModel:
    """A fitted model: coefficients over the retained features plus intercept.

    `standardization` records the training-set transform, so prediction on
    raw feature vectors reproduces exactly what the solver saw.
    """

    coefficients: np.ndarray
    intercept: float
    penalty: PenaltyConfig
    standardization: StandardizationParams
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.coefficients.shape != (len(self.standardization.names),):
            raise DataError(
                f"{self.coefficients.shape[0]} coefficients for "
                f"{len(self.standardization.names)} retained features"
            )

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.coefficients))


@dataclass(frozen=True)
class CvPoint:
    l1_ratio: float
    alpha: float
    mean_mse: float
    fold_mses: tuple[float, ...]


@dataclass(frozen=True)
class CvResult:
    """Cross-validation grid with the selected penalty.

    `selected` minimizes mean validation MSE; exact ties break toward larger
    alpha, then larger l1_ratio. The shuffle seed and fold count are recorded
    so the split is reproducible.
    """

    grid: tuple[CvPoint, ...]
    selected: PenaltyConfig
    seed: int
    folds: int


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0), the scalar lasso shrinkage kernel."""
    if gamma < 0:
        raise ConfigError(f"threshold must be non-negative, got {gamma}")
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def objective(Xs, y, beta, intercept, penalty: PenaltyConfig) -> float:
    """Penalized loss L at the given point."""
    r = y - intercept - Xs @ beta
    loss = 0.5 * float(r @ r) / y.shape[0]
    loss += penalty.alpha * penalty.l1_ratio * float(np.abs(beta).sum())
    loss += 0.5 * penalty.alpha * (1.0 - penalty.l1_ratio) * float(beta @ beta)
    return loss


def _descend(Xs, y, penalty, tol, max_iter, beta, check_objective):
    """Run coordinate-descent sweeps in place; returns solver state."""
    n, p = Xs.shape
    col_sq = np.einsum("ij,ij->j", Xs, Xs) / n
    denom = col_sq + penalty.alpha * (1.0 - penalty.l1_ratio)
    gamma = penalty.alpha * penalty.l1_ratio
    intercept = 0.0
    prev_obj = np.inf
    sweeps = 0
    converged = p == 0
    for sweep in range(max_iter):
        # residual rebuilt from scratch every sweep so rounding from the
        # in-place updates below cannot accumulate across sweeps
        fitted = Xs @ beta
        intercept = float(np.mean(y - fitted))
        r = y - intercept - fitted
        max_delta = 0.0
        for j in range(p):
            if denom[j] == 0.0:
                continue
            xj = Xs[:, j]
            rho = (xj @ r) / n + col_sq[j] * beta[j]
            bj = soft_threshold(rho, gamma) / denom[j]
            d = bj - beta[j]
            if d != 0.0:
                r -= d * xj
                beta[j] = bj
                if abs(d) > max_delta:
                    max_delta = abs(d)
        sweeps = sweep + 1
        if check_objective:
            obj = objective(Xs, y, beta, float(np.mean(y - Xs @ beta)), penalty)
            if obj > prev_obj + 1e-12 * max(1.0, abs(prev_obj)):
                raise NumericalError(
                    f"objective rose from {prev_obj!r} to {obj!r} on sweep {sweeps}"
                )
            prev_obj = obj
        if max_delta < tol:
            converged = True
            break
    intercept = float(np.mean(y - Xs @ beta))
    return intercept, sweeps, converged


def fit(
    Xs: np.ndarray,
    y: np.ndarray,
    penalty: PenaltyConfig,
    standardization: StandardizationParams,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    warm_start: np.ndarray | None = None,
    check_objective: bool = False,
) -> FitModel:
    """Fit on an already-standardized design matrix.

    `Xs` must be the output of `standardize` (or `apply_standardization`)
    under `standardization`; passing raw features silently changes the
    penalty's meaning. Hitting `max_iter` before the tolerance emits a
    non-fatal ConvergenceWarning and is recorded in training_meta.
    """
    Xs = np.asarray(Xs, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if Xs.ndim != 2 or Xs.shape[0] != y.shape[0]:
        raise DataError(f"design {Xs.shape} does not align with target {y.shape}")
    if Xs.shape[0] < 2:
        raise DataError("need at least 2 rows to fit")
    if Xs.shape[1] != len(standardization.names):
        raise SchemaError(
            f"design has {Xs.shape[1]} columns but standardization retains "
            f"{len(standardization.names)}"
        )
    if not (np.all(np.isfinite(Xs)) and np.all(np.isfinite(y))):
        raise NumericalError("non-finite values in design matrix or target")

    beta = np.zeros(Xs.shape[1]) if warm_start is None else np.array(warm_start, dtype=np.float64)
    intercept, sweeps, converged = _descend(
        Xs, y, penalty, tol, max_iter, beta, check_objective
    )
    if not converged:
        warnings.warn(
            f"coordinate descent hit max_iter={max_iter} before tol={tol}",
            ConvergenceWarning,
        )
    beta.flags.writeable = False
    return FitModel(
        coefficients=beta,
        intercept=intercept,
        penalty=penalty,
        standardization=standardization,
        training_meta={
            "iterations": sweeps,
            "converged": converged,
            "objective": objective(Xs, y, beta, intercept, penalty),
            "tol": tol,
        },
    )


def alpha_path(
    Xs: np.ndarray,
    y: np.ndarray,
    l1_ratio: float,
    n_alphas: int = DEFAULT_N_ALPHAS,
    eps: float = DEFAULT_PATH_EPS,
) -> np.ndarray:
    """Geometric alpha grid from alpha_max down to eps*alpha_max.

    alpha_max is the smallest penalty at which every coefficient is exactly
    zero: max_j |x_j . (y - mean(y))| / (n * l1_ratio).
    """
    if l1_ratio <= 0:
        raise ConfigError(
            "alpha_path requires l1_ratio > 0; for pure ridge supply an "
            "explicit alpha grid instead"
        )
    if n_alphas < 1:
        raise ConfigError("n_alphas must be at least 1")
    Xs = np.asarray(Xs, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    alpha_max = float(np.max(np.abs(Xs.T @ (y - y.mean())))) / (n * l1_ratio)
    if alpha_max <= 0:
        raise NumericalError("target is orthogonal to every feature; no path exists")
    return np.geomspace(alpha_max, eps * alpha_max, num=n_alphas)


def _fold_path_mse(X, y, names, train_idx, val_idx, alphas, l1_ratio, tol, max_iter):
    """Held-out MSE along one alpha path for one fold. Pure function."""
    Xs_tr, params = standardize(X[train_idx], names)
    Xs_val = apply_standardization(params, names, X[val_idx])
    y_tr = y[train_idx]
    y_val = y[val_idx]
    beta = np.zeros(Xs_tr.shape[1])
    out = np.empty(alphas.shape[0])
    for a_i, alpha in enumerate(alphas):
        penalty = PenaltyConfig(alpha=float(alpha), l1_ratio=l1_ratio)
        intercept, _, _ = _descend(Xs_tr, y_tr, penalty, tol, max_iter, beta, False)
        pred = intercept + Xs_val @ beta
        err = y_val - pred
        out[a_i] = float(err @ err) / y_val.shape[0]
    return out


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    l1_grid=DEFAULT_L1_GRID,
    k: int = 5,
    seed: int = CV_SEED,
    alphas: np.ndarray | None = None,
    n_alphas: int = DEFAULT_N_ALPHAS,
    eps: float = DEFAULT_PATH_EPS,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    threads: int = 1,
) -> CvResult:
    """k-fold CV over the (l1_ratio, alpha) grid on RAW features.

    Rows are shuffled by a seeded permutation and split into k near-equal
    folds. Alpha paths are computed once per l1_ratio on the full
    standardized data; each training fold is re-standardized from its own
    rows so no information leaks from held-out counties. Fold/grid tasks may
    run in parallel: every task writes its own slot of a preallocated score
    table, so the selected penalty is independent of thread count.

    Pass `alphas` to use one explicit grid for every l1_ratio (required if
    the grid contains l1_ratio = 0).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    if n < k:
        raise DataError(f"cannot split {n} rows into {k} folds")
    if not l1_grid:
        raise ConfigError("l1_grid is empty")

    names = tuple(f"c{j}" for j in range(X.shape[1]))
    perm = substream(seed, 0).permutation(n)
    folds = np.array_split(perm, k)

    Xs_full, _ = standardize(X, names)
    if alphas is not None:
        grids = {l1: np.asarray(alphas, dtype=np.float64) for l1 in l1_grid}
    else:
        grids = {l1: alpha_path(Xs_full, y, l1, n_alphas, eps) for l1 in l1_grid}

    mse = {l1: np.empty((k, grids[l1].shape[0])) for l1 in l1_grid}
    all_rows = np.arange(n)

    def run(l1, fold_i):
        val_idx = folds[fold_i]
        train_idx = np.setdiff1d(all_rows, val_idx, assume_unique=False)
        mse[l1][fold_i] = _fold_path_mse(
            X, y, names, train_idx, val_idx, grids[l1], l1, tol, max_iter
        )

    tasks = [(l1, fold_i) for l1 in l1_grid for fold_i in range(k)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run, l1, f) for l1, f in tasks]
            for fut in futures:
                fut.result()
    else:
        for l1, f in tasks:
            run(l1, f)

    points = []
    for l1 in l1_grid:
        fold_scores = mse[l1]
        means = fold_scores.mean(axis=0)
        for a_i, alpha in enumerate(grids[l1]):
            points.append(
                CvPoint(
                    l1_ratio=float(l1),
                    alpha=float(alpha),
                    mean_mse=float(means[a_i]),
                    fold_mses=tuple(float(v) for v in fold_scores[:, a_i]),
                )
            )
    best = min(points, key=lambda pt: (pt.mean_mse, -pt.alpha, -pt.l1_ratio))
    return CvResult(
        grid=tuple(points),
        selected=PenaltyConfig(alpha=best.alpha, l1_ratio=best.l1_ratio),
        seed=seed,
        folds=k,
    )


def predict(model: FitModel, X: np.ndarray, feature_names) -> np.ndarray | float:
    """Predict shares for raw feature rows (columns ordered by feature_names).

    Output is the unclamped affine value b0 + standardized(x) . beta; callers
    decide whether out-of-[0,1] predictions matter.
    """
    Xs = apply_standardization(model.standardization, feature_names, X)
    out = model.intercept + Xs @ model.coefficients
    return float(out) if np.ndim(out) == 0 else out


# --- JSON round-trip -------------------------------------------------------

def model_to_dict(model: FitModel) -> dict:
    s = model.standardization
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "intercept": model.intercept,
        "coefficients": {n: float(c) for n, c in zip(s.names, model.coefficients)},
        "penalty": {"alpha": model.penalty.alpha, "l1_ratio": model.penalty.l1_ratio},
        "standardization": {
            "names": list(s.names),
            "mean": [float(v) for v in s.mean],
            "scale": [float(v) for v in s.scale],
            "dropped": list(s.dropped),
        },
        "training_meta": dict(model.training_meta),
    }


def model_from_dict(doc: dict) -> FitModel:
    if doc.get("format") != MODEL_FORMAT:
        raise SchemaError(f"not a model document: format={doc.get('format')!r}")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise SchemaError(f"unsupported model version {doc.get('version')!r}")
    s = doc["standardization"]
    params = StandardizationParams(
        names=tuple(s["names"]),
        mean=np.asarray(s["mean"], dtype=np.float64),
        scale=np.asarray(s["scale"], dtype=np.float64),
        dropped=tuple(s.get("dropped", ())),
    )
    coefs = np.array([doc["coefficients"][n] for n in params.names], dtype=np.float64)
    coefs.flags.writeable = False
    return FitModel(
        coefficients=coefs,
        intercept=float(doc["intercept"]),
        penalty=PenaltyConfig(**doc["penalty"]),
        standardization=params,
        training_meta=dict(doc.get("training_meta", {})),
    )


def cv_result_to_dict(result: CvResult) -> dict:
    return {
        "format": "tamperscan-cv",
        "version": MODEL_FORMAT_VERSION,
        "seed": result.seed,
        "folds": result.folds,
        "selected": {
            "alpha": result.selected.alpha,
            "l1_ratio": result.selected.l1_ratio,
        },
        "grid": [
            {
                "l1_ratio": pt.l1_ratio,
                "alpha": pt.alpha,
                "mean_mse": pt.mean_mse,
                "fold_mses": list(pt.fold_mses),
            }
            for pt in result.grid
        ],
    }


def cv_result_from_dict(doc: dict) -> CvResult:
    if doc.get("format") != "tamperscan-cv":
        raise SchemaError(f"not a cv document: format={doc.get('format')!r}")
    return CvResult(
        grid=tuple(
            CvPoint(
                l1_ratio=float(p["l1_ratio"]),
                alpha=float(p["alpha"]),
                mean_mse=float(p["mean_mse"]),
                fold_mses=tuple(float(v) for v in p["fold_mses"]),
            )
            for p in doc["grid"]
        ),
        selected=PenaltyConfig(**doc["selected"]),
        seed=int(doc["seed"]),
        folds=int(doc["folds"]),
    )


def save_model(model: FitModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path) -> FitModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
