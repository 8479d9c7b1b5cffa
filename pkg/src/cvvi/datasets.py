"""Bundled synthetic datasets and dataset resolution.

``synthetic:<name>`` selects a CSV shipped with the package; anything else is
read as a file path. The bundled files are generated by the functions here
(``python -m cvvi.datasets`` rewrites them) so they can be re-derived exactly.
"""

from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DatasetNotFound
from .model import Dataset, load_dataset

PREFIX = "synthetic:"


def make_blobs2d(seed: int = 20190301, n: int = 200):
    """Two overlapping Gaussian blobs in the plane with 0/1 labels."""
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.5).astype(int)
    centers = np.array([[-0.8, -0.4], [0.8, 0.4]])
    cov = np.array([[1.0, 0.45], [0.45, 0.8]])
    X = centers[y] + rng.multivariate_normal(np.zeros(2), cov, size=n)
    return X, y


def make_australian_like(seed: int = 690, n: int = 690):
    """Credit-approval-shaped data: 14 mixed continuous/categorical features.

    Labels follow a logistic model dominated by one binary feature, with a few
    weaker continuous effects, so the classes are well but not perfectly separated.
    """
    rng = np.random.default_rng(seed)
    cols = []
    cols.append(rng.integers(0, 2, n))  # binary
    cols.append(np.round(rng.gamma(4.0, 8.0, n), 2))  # age-like
    cols.append(np.round(np.log1p(rng.exponential(4.5, n)), 3))
    cols.append(rng.integers(1, 4, n))  # 3-level categorical
    cols.append(rng.integers(1, 15, n))  # 14-level categorical
    cols.append(rng.integers(1, 10, n))
    cols.append(np.round(np.log1p(rng.exponential(2.2, n)), 3))
    flag = rng.integers(0, 2, n)
    cols.append(flag)  # dominant binary
    cols.append((rng.random(n) < 0.3 + 0.4 * flag).astype(int))
    cols.append(np.where(rng.random(n) < 0.55, 0, rng.poisson(3.0, n)))
    cols.append(rng.integers(0, 2, n))
    cols.append(rng.integers(1, 4, n))
    cols.append(np.round(rng.gamma(2.0, 90.0, n)))
    cols.append(np.round(np.log1p(np.expm1(rng.exponential(3.0, n))), 3))  # log of a heavy-tailed amount
    X = np.column_stack(cols).astype(float)
    Z = (X - X.mean(0)) / X.std(0)
    logit = 2.6 * Z[:, 7] + 0.7 * Z[:, 9] + 0.5 * Z[:, 2] + 0.4 * Z[:, 8] - 0.3 * Z[:, 4] + 0.35 * Z[:, 13] - 0.2
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(int)
    return X, y


GENERATORS = {
    "blobs2d": make_blobs2d,
    "australian_like": make_australian_like,
}


def _data_dir():
    return resources.files("cvvi") / "data"


def bundled_path(name: str) -> Path:
    if name not in GENERATORS:
        raise DatasetNotFound(f"no bundled dataset {name!r}; available: {', '.join(GENERATORS)}")
    return Path(str(_data_dir() / f"{name}.csv"))


def write_csv(path, X, y):
    header = ",".join([f"x{i}" for i in range(X.shape[1])] + ["label"])
    rows = [",".join([repr(float(v)) for v in x] + [str(int(t))]) for x, t in zip(X, y)]
    Path(path).write_text(header + "\n" + "\n".join(rows) + "\n")


def resolve_dataset(spec: str) -> Dataset:
    """Load ``synthetic:<name>`` from the package data, or any CSV path."""
    if spec.startswith(PREFIX):
        name = spec[len(PREFIX):]
        ds = load_dataset(bundled_path(name))
        object.__setattr__(ds, "name", name)
        return ds
    return load_dataset(spec)


def regenerate(directory=None):
    directory = Path(directory) if directory else Path(str(_data_dir()))
    for name, gen in GENERATORS.items():
        write_csv(directory / f"{name}.csv", *gen())


if __name__ == "__main__":
    regenerate()
