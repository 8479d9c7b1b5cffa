"""Bayesian logistic regression target.

Labels are folded into signed inputs ``xt = y * x`` so the likelihood of one
example is ``ell(z @ xt)`` with ``ell(u) = -log(1 + exp(-u))``.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from .errors import BadBatchSize, DatasetNotFound, EmptyDataset, LabelError, ParseError

LOG_2PI = np.log(2.0 * np.pi)


def log_sigmoid(u):
    """``ell(u) = -log(1 + exp(-u))`` evaluated without overflow."""
    return -np.logaddexp(0.0, -np.asarray(u, dtype=float))


def log_sigmoid_derivs(u, order: int = 2):
    """First ``order`` derivatives of ``ell`` at ``u`` (order 1..3)."""
    s = expit(u)
    d1 = 1.0 - s  # sigma(-u)
    out = [d1]
    if order >= 2:
        out.append(-s * d1)
    if order >= 3:
        out.append(-s * d1 * (1.0 - 2.0 * s))
    return tuple(out)


@dataclass(frozen=True)
class Dataset:
    """Design matrix with bias column, ±1 labels and cached signed-input moments."""

    X: NDArray
    y: NDArray
    xt: NDArray = field(init=False, repr=False)
    m: NDArray = field(init=False, repr=False)
    S: NDArray = field(init=False, repr=False)
    name: str = ""

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyDataset("dataset has no examples")
        if y.shape != (X.shape[0],):
            raise ValueError("labels do not match the design matrix")
        if not np.all(np.abs(y) == 1.0):
            raise LabelError("labels must be exactly +1 or -1")
        xt = X * y[:, None]
        S = xt.T @ xt / X.shape[0]
        for k, v in (("X", X), ("y", y), ("xt", xt), ("m", xt.mean(axis=0)), ("S", 0.5 * (S + S.T))):
            v.setflags(write=False)
            object.__setattr__(self, k, v)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_features(cls, features, labels, name: str = "", standardize: bool = True) -> "Dataset":
        """Standardize raw features, append a bias column and map labels to ±1."""
        F = np.asarray(features, dtype=float)
        if F.ndim != 2 or F.shape[0] == 0:
            raise EmptyDataset("dataset has no examples")
        if standardize:
            F = F - F.mean(axis=0)
            sd = F.std(axis=0)
            sd[sd == 0.0] = 1.0
            F = F / sd
        X = np.hstack([F, np.ones((F.shape[0], 1))])
        return cls(X, _map_labels(labels), name=name)


def _map_labels(labels) -> NDArray:
    lab = np.asarray(labels, dtype=float)
    bad = ~np.isin(lab, (0.0, 1.0, -1.0))
    if np.any(bad):
        raise LabelError(f"label {lab[bad][0]!r} not in {{0, 1, -1, +1}}")
    return np.where(lab == 1.0, 1.0, -1.0)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_dataset(path) -> Dataset:
    """Read a CSV of numeric features with the label in the last column.

    A first row containing any non-numeric token is treated as a header.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(tok.strip() for tok in r)]
    except FileNotFoundError:
        raise DatasetNotFound(f"{path}: no such file") from None
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if rows and not all(_is_number(tok) for tok in rows[0]):
        rows = rows[1:]
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise ParseError(f"{path}: need at least one feature column and a label column")
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}:{i + 1}: expected {width} columns, got {len(row)}")
        for j, tok in enumerate(row):
            try:
                values[i, j] = float(tok)
            except ValueError:
                raise ParseError(f"{path}:{i + 1}: non-numeric cell {tok!r}") from None
    if not np.all(np.isfinite(values)):
        raise ParseError(f"{path}: non-finite cell")
    return Dataset.from_features(values[:, :-1], values[:, -1], name=path.stem)


def sample_minibatch(rng: np.random.Generator, N: int, B: int) -> NDArray:
    """``B`` distinct indices drawn uniformly from ``range(N)``."""
    if B < 1 or B > N:
        raise BadBatchSize(f"batch size {B} outside [1, {N}]")
    return rng.choice(N, size=B, replace=False)


def loglik(z: NDArray, batch, ds: Dataset):
    """Mean log-likelihood over ``batch`` with gradient and Hessian in ``z``."""
    xt = ds.xt[np.asarray(batch)]
    u = xt @ z
    d1, d2 = log_sigmoid_derivs(u)
    B = xt.shape[0]
    value = log_sigmoid(u).mean()
    grad = d1 @ xt / B
    hess = (xt.T * d2) @ xt / B
    return value, grad, hess


def mean_loglik(Z: NDArray, ds: Dataset) -> NDArray:
    """Full-data mean log-likelihood for each row of ``Z``."""
    return log_sigmoid(np.atleast_2d(Z) @ ds.xt.T).mean(axis=-1)


def log_prior(z: NDArray):
    """Standard normal log density and its gradient."""
    z = np.asarray(z, dtype=float)
    D = z.shape[-1]
    return -0.5 * np.sum(z * z, axis=-1) - 0.5 * D * LOG_2PI, -z
