"""Group-ridge multivariate linear source model and dataset ingestion.

The fitted :class:`RidgeSourceModel` is the only object that leaves the
source domain: its artifact holds coefficients and fit metadata, never rows
of the training data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigurationError, DeserializationError, SchemaError,
                     ShapeError, SingularSystemError)

MODEL_FORMAT = "recast-ridge-model"
MODEL_VERSION = 1
INTERCEPT_NAME = "(Intercept)"


def default_penalty_grid() -> list[float]:
    return list(np.logspace(-4, 4, 50))


@dataclass
class Dataset:
    """Design matrix ``X`` (leading intercept column) and outcomes ``Y``."""

    X: np.ndarray
    Y: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    outcome_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        self.Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
        n, p = self.X.shape
        if self.Y.shape[0] != n:
            raise ShapeError(f"X has {n} rows but Y has {self.Y.shape[0]}")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.Y)):
            raise SchemaError("dataset contains missing or non-finite values")
        if n and not np.all(self.X[:, 0] == 1.0):
            raise SchemaError("first column of X must be the all-ones intercept")
        if not self.feature_names:
            self.feature_names = [INTERCEPT_NAME] + [f"x{j}" for j in range(1, p)]
        if not self.outcome_names:
            self.outcome_names = [f"y{j + 1}" for j in range(self.Y.shape[1])]
        if len(self.feature_names) != p or len(self.outcome_names) != self.Y.shape[1]:
            raise SchemaError("column names do not match the array shapes")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], list(self.feature_names),
                       list(self.outcome_names))

    def outcome(self, j: int) -> "Dataset":
        """Single-outcome view used by the univariate baseline."""
        return Dataset(self.X, self.Y[:, [j]], list(self.feature_names),
                       [self.outcome_names[j]])


@dataclass
class RidgeSourceModel:
    """Coefficients ``theta`` (m x p) with ``predict(x) = theta @ x``."""

    theta: np.ndarray
    lam: float
    feature_names: list[str] = field(default_factory=list)
    outcome_names: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if not np.all(np.isfinite(self.theta)):
            raise SchemaError("ridge coefficients must be finite")
        if not (self.lam >= 0):
            raise ConfigurationError(f"ridge penalty must be nonnegative, got {self.lam}")

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @property
    def p(self) -> int:
        return self.theta.shape[1]

    def predict(self, x) -> np.ndarray:
        return predict(self, x)


def _penalty_matrix(p: int) -> np.ndarray:
    D = np.eye(p)
    D[0, 0] = 0.0
    return D


def ridge_solve(X, Y, lam: float) -> np.ndarray:
    """Solve ``(X'X + lam D) B = X'Y`` with an unpenalised intercept; returns ``B.T``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    p = X.shape[1]
    A = X.T @ X + lam * _penalty_matrix(p)
    if np.linalg.matrix_rank(A) < p:
        raise SingularSystemError(
            f"ridge system is singular (rank {np.linalg.matrix_rank(A)} < p={p}, lambda={lam})")
    return np.linalg.solve(A, X.T @ Y).T


def _fold_ids(n: int, k: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % k
    return ids


def cv_errors(X, Y, grid, cv_folds: int, seed: int = 0) -> np.ndarray:
    """Mean held-out joint squared error for each penalty in ``grid``."""
    n, p = X.shape
    ids = _fold_ids(n, cv_folds, seed)
    D = _penalty_matrix(p)
    err = np.zeros(len(grid))
    for k in range(cv_folds):
        tr, te = ids != k, ids == k
        G = X[tr].T @ X[tr]
        b = X[tr].T @ Y[tr]
        for g, lam in enumerate(grid):
            try:
                B = np.linalg.solve(G + lam * D, b)
            except np.linalg.LinAlgError:
                err[g] = np.inf
                continue
            resid = Y[te] - X[te] @ B
            err[g] += np.sum(resid * resid)
    return err / n


def fit_ridge(data: Dataset, penalty_grid=None, cv_folds: int = 10, seed: int = 0) -> RidgeSourceModel:
    """Fit the group ridge with a shared penalty chosen by K-fold CV.

    The squared-l2 penalty separates across outcomes, so the group fit with a
    common ``lambda`` is the per-outcome ridge with that ``lambda``.
    """
    grid = default_penalty_grid() if penalty_grid is None else [float(v) for v in penalty_grid]
    if not grid:
        raise ConfigurationError("penalty grid is empty")
    if any(v < 0 or not math.isfinite(v) for v in grid):
        raise ConfigurationError("penalty grid values must be finite and nonnegative")
    if len(grid) == 1:
        lam = grid[0]
        errs = None
    else:
        if cv_folds < 2:
            raise ConfigurationError("cv_folds must be at least 2")
        if data.n < cv_folds:
            raise ConfigurationError(f"need n >= cv_folds, got n={data.n}, folds={cv_folds}")
        errs = cv_errors(data.X, data.Y, grid, cv_folds, seed)
        lam = grid[int(np.argmin(errs))]
    theta = ridge_solve(data.X, data.Y, lam)
    meta = {"n": data.n, "cv_folds": cv_folds if errs is not None else 0,
            "penalty_grid": grid}
    return RidgeSourceModel(theta, float(lam), list(data.feature_names),
                            list(data.outcome_names), meta)


def predict(model: RidgeSourceModel, x) -> np.ndarray:
    """``theta @ x`` for one feature vector, or row-wise for a matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.p:
        raise ShapeError(f"expected {model.p} features (with intercept), got {x.shape[-1]}")
    return x @ model.theta.T


# --- persistence --------------------------------------------------------------

def model_to_dict(model: RidgeSourceModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "p": model.p,
        "m": model.m,
        "lambda": model.lam,
        "theta": [float(v) for v in model.theta.ravel()],
        "feature_names": list(model.feature_names),
        "outcome_names": list(model.outcome_names),
        "metadata": model.metadata,
    }


def save_model(model: RidgeSourceModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path) -> RidgeSourceModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DeserializationError(f"{path}: not a valid model artifact ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DeserializationError(f"{path}: not a {MODEL_FORMAT} artifact")
    version = doc.get("version")
    if version != MODEL_VERSION:
        raise DeserializationError(
            f"{path}: model artifact version {version} is not supported "
            f"(this build reads version {MODEL_VERSION})")
    try:
        p, m = int(doc["p"]), int(doc["m"])
        theta = np.array(doc["theta"], dtype=float)
        if theta.size != p * m:
            raise ValueError(f"theta has {theta.size} entries, expected {p * m}")
        return RidgeSourceModel(theta.reshape(m, p), float(doc["lambda"]),
                                list(doc["feature_names"]), list(doc["outcome_names"]),
                                dict(doc.get("metadata", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise DeserializationError(f"{path}: malformed model artifact ({exc})") from None


# --- CSV ingestion ------------------------------------------------------------

def _parse_float(text: str, line: int, column: str) -> float:
    s = text.strip()
    try:
        v = float(s)
    except ValueError:
        raise SchemaError(f"line {line}: column {column!r} has non-numeric value {text!r}") from None
    if not math.isfinite(v):
        raise SchemaError(f"line {line}: column {column!r} is not finite")
    return v


def read_csv_dataset(path, outcome_columns, feature_columns=None) -> Dataset:
    """Read a headed CSV; outcome columns by name, all other columns are features.

    An intercept column is prepended. Pass ``feature_columns`` to read features
    in a fixed order (needed to line up with a source model).
    """
    outcome_columns = list(outcome_columns)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise SchemaError(f"{path}: duplicate header column(s) {dupes}")
        missing = [c for c in outcome_columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: outcome column(s) {missing} not found in header")
        if feature_columns is None:
            feature_columns = [h for h in header if h not in outcome_columns]
        else:
            feature_columns = [c for c in feature_columns if c != INTERCEPT_NAME]
            absent = [c for c in feature_columns if c not in header]
            if absent:
                raise SchemaError(f"{path}: feature column(s) {absent} not found in header")
        fidx = [header.index(c) for c in feature_columns]
        oidx = [header.index(c) for c in outcome_columns]
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            xs.append([_parse_float(row[i], lineno, header[i]) for i in fidx])
            ys.append([_parse_float(row[i], lineno, header[i]) for i in oidx])
    n = len(xs)
    X = np.ones((n, len(fidx) + 1))
    if n:
        X[:, 1:] = np.array(xs)
    Y = np.array(ys).reshape(n, len(oidx))
    return Dataset(X, Y, [INTERCEPT_NAME] + feature_columns, outcome_columns)


def read_csv_features(path, feature_columns, outcome_columns=()):
    """Features for prediction plus any truth columns that happen to be present."""
    feature_columns = [c for c in feature_columns if c != INTERCEPT_NAME]
    with open(path, newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    if not header:
        raise SchemaError(f"{path}: empty file, header row required")
    truth = [c for c in outcome_columns if c in header]
    data = read_csv_dataset(path, truth, feature_columns)
    return data.X, (data.Y if truth else None), truth


def write_csv_dataset(data: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(data.feature_names[1:] + data.outcome_names)
        for x, y in zip(data.X, data.Y):
            w.writerow([repr(float(v)) for v in x[1:]] + [repr(float(v)) for v in y])
