"""Full-covariance Gaussian family ``q = N(mu, L L^T)``.

Gradients are returned as flat vectors of length ``D + D(D+1)/2``: the
``mu`` block first, then the lower triangle of ``L`` in row-major order
(``(0,0), (1,0), (1,1), (2,0), ...``). All functions accept noise with
leading batch axes and return matching batches of flat vectors.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_triangular

from . import linalg
from .errors import Singular
from .model import LOG_2PI, Dataset, mean_loglik

DIAG_FLOOR = 1e-6


@lru_cache(maxsize=None)
def tril_indices(D: int):
    rows, cols = np.tril_indices(D)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def flat_dim(D: int) -> int:
    return D + D * (D + 1) // 2


def flatten(mu_block: NDArray, L_block: NDArray) -> NDArray:
    """Pack ``(..., D)`` and ``(..., D, D)`` gradient blocks into ``(..., d)``."""
    D = mu_block.shape[-1]
    rows, cols = tril_indices(D)
    return np.concatenate([mu_block, L_block[..., rows, cols]], axis=-1)


def unflatten(vec: NDArray, D: int):
    """Inverse of ``flatten``; the strict upper triangle comes back as zeros."""
    vec = np.asarray(vec, dtype=float)
    rows, cols = tril_indices(D)
    L = np.zeros(vec.shape[:-1] + (D, D))
    L[..., rows, cols] = vec[..., D:]
    return vec[..., :D], L


@dataclass(frozen=True)
class VariationalParams:
    mu: NDArray
    L: NDArray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        L = np.tril(np.array(self.L, dtype=float))
        if L.shape != (mu.size, mu.size):
            raise ValueError("L must be D x D")
        if np.any(np.diag(L) <= 0):
            raise Singular("Cholesky factor needs a strictly positive diagonal")
        mu.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "L", L)

    @property
    def D(self) -> int:
        return self.mu.size

    @property
    def d(self) -> int:
        return flat_dim(self.D)

    @property
    def cov(self) -> NDArray:
        return self.L @ self.L.T

    def to_flat(self) -> NDArray:
        return flatten(self.mu, self.L)

    @classmethod
    def from_flat(cls, vec: NDArray, D: int) -> "VariationalParams":
        mu, L = unflatten(vec, D)
        return cls(mu, L)

    @classmethod
    def projected(cls, mu, L) -> "VariationalParams":
        """Build params after flooring the diagonal of ``L`` at ``DIAG_FLOOR``."""
        L = np.tril(np.array(L, dtype=float))
        idx = np.diag_indices_from(L)
        L[idx] = np.maximum(L[idx], DIAG_FLOOR)
        return cls(mu, L)

    @classmethod
    def standard(cls, D: int) -> "VariationalParams":
        return cls(np.zeros(D), np.eye(D))


def sample_noise(rng: np.random.Generator, D: int, size=None) -> NDArray:
    shape = (D,) if size is None else tuple(np.atleast_1d(size)) + (D,)
    return rng.standard_normal(shape)


def transform_rp1(w: VariationalParams, eps: NDArray) -> NDArray:
    return eps @ w.L.T + w.mu


def sqrt_factor(w: VariationalParams):
    """Symmetric square root of the covariance and the eigendecomposition used for it."""
    sigma = w.cov
    eig = linalg.sym_eig(sigma)
    return linalg.matrix_sqrt(sigma, eig), eig


def transform_rp2(w: VariationalParams, eps: NDArray, root: NDArray | None = None) -> NDArray:
    if root is None:
        root, _ = sqrt_factor(w)
    return eps @ root.T + w.mu


def _whiten(w: VariationalParams, z: NDArray) -> NDArray:
    diff = np.atleast_2d(z) - w.mu
    r = solve_triangular(w.L, diff.T, lower=True).T
    return r.reshape(np.shape(z))


def log_q(w: VariationalParams, z: NDArray):
    r = _whiten(w, z)
    return -np.sum(np.log(np.diag(w.L))) - 0.5 * np.sum(r * r, axis=-1) - 0.5 * w.D * LOG_2PI


def score_grad(w: VariationalParams, z: NDArray) -> NDArray:
    """Gradient of ``log_q(w, z)`` with respect to ``(mu, tril(L))``.

    With ``r = L^{-1}(z - mu)``: the mu block is ``L^{-T} r`` and the L block
    is ``tril(L^{-T} r r^T) - diag(1/L_ii)``.
    """
    r = np.atleast_2d(_whiten(w, z))
    s = solve_triangular(w.L, r.T, lower=True, trans="T").T  # L^{-T} r
    L_block = s[:, :, None] * r[:, None, :]
    idx = np.arange(w.D)
    L_block[:, idx, idx] -= 1.0 / np.diag(w.L)
    out = flatten(s, L_block)
    return out.reshape(np.shape(z)[:-1] + (w.d,))


def expected_log_prior(w: VariationalParams) -> float:
    """``E_q log p(Z)`` for the standard normal prior."""
    return -0.5 * (w.mu @ w.mu + np.sum(w.L * w.L)) - 0.5 * w.D * LOG_2PI


def entropy(w: VariationalParams) -> float:
    return np.sum(np.log(np.diag(w.L))) + 0.5 * w.D * (LOG_2PI + 1.0)


def cf_prior_term_grad(w: VariationalParams, N: float = 1.0) -> NDArray:
    """Closed-form gradient of ``E_q log p(Z) / N``."""
    return flatten(-w.mu, -w.L) / N


def cf_variational_term_grad(w: VariationalParams, N: float = 1.0) -> NDArray:
    """Closed-form gradient of ``E_q log q_v(Z) / N`` at ``v = w``.

    Equal to the gradient of the negative entropy: zero mu block, ``-1/L_ii``
    on the diagonal of the L block.
    """
    L_block = np.diag(-1.0 / np.diag(w.L))
    return flatten(np.zeros(w.D), L_block) / N


def elbo_estimate(w: VariationalParams, ds: Dataset, n_mc: int, rng: np.random.Generator, data_term=None) -> float:
    """Monte Carlo ELBO divided by N.

    The data term is averaged over ``n_mc`` fresh draws; prior and entropy
    terms are exact. ``data_term`` maps a ``(n, D)`` batch of latents to the
    per-example mean log-likelihood; it defaults to the logistic model on ``ds``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    Z = transform_rp1(w, sample_noise(rng, w.D, n_mc))
    data = mean_loglik(Z, ds) if data_term is None else data_term(Z)
    return float(np.mean(data) + (expected_log_prior(w) + entropy(w)) / ds.N)
