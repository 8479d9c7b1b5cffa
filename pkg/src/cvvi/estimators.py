"""Term-level gradient estimators and the base gradient.

A term function ``f`` maps latents ``z`` of shape ``(..., D)`` to
``(value, grad_z)`` and stands for one of the data, prior or variational
terms of the ELBO gradient. Estimators take a batch of noise vectors
``eps`` (``(B, D)``) and return one flat gradient per row.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_solve

from . import linalg
from .model import LOG_2PI, Dataset, log_prior, log_sigmoid, log_sigmoid_derivs, sample_minibatch
from .varfam import (
    VariationalParams,
    cf_variational_term_grad,
    flatten,
    sample_noise,
    score_grad,
    sqrt_factor,
    transform_rp1,
)

TermFunction = Callable[[NDArray], tuple]


class DataTerm:
    """Per-example log-likelihood ``ell(z @ xt)``; ``xt`` broadcasts against ``z``."""

    def __init__(self, xt: NDArray, scale: float = 1.0):
        self.xt = np.asarray(xt, dtype=float)
        self.scale = scale

    def __call__(self, z):
        u = np.sum(z * self.xt, axis=-1)
        (d1,) = log_sigmoid_derivs(u, order=1)
        return self.scale * log_sigmoid(u), self.scale * d1[..., None] * self.xt

    def hessian(self, z):
        u = np.sum(z * self.xt, axis=-1)
        _, d2 = log_sigmoid_derivs(u)
        return self.scale * d2[..., None, None] * self.xt[..., :, None] * self.xt[..., None, :]


class PriorTerm:
    """Standard normal log prior scaled by ``scale`` (``1/N`` in the objective)."""

    def __init__(self, scale: float = 1.0):
        self.scale = scale

    def __call__(self, z):
        value, grad = log_prior(z)
        return self.scale * value, self.scale * grad


class VariationalTerm:
    """``log q_v(z)`` with the variational parameters ``v`` held fixed."""

    def __init__(self, v: VariationalParams, scale: float = 1.0):
        self.v = v
        self.scale = scale
        self._logdet = np.sum(np.log(np.diag(v.L)))

    def __call__(self, z):
        diff = z - self.v.mu
        flat = diff.reshape(-1, self.v.D)
        prec_diff = cho_solve((self.v.L, True), flat.T).T.reshape(diff.shape)
        value = -self._logdet - 0.5 * np.sum(diff * prec_diff, axis=-1) - 0.5 * self.v.D * LOG_2PI
        return self.scale * value, -self.scale * prec_diff


class Rp2Factor(NamedTuple):
    """Cached symmetric square root of ``L L^T`` and its eigendecomposition."""

    sigma: NDArray
    root: NDArray
    eig: linalg.EigenDecomposition

    @classmethod
    def of(cls, w: VariationalParams) -> "Rp2Factor":
        root, eig = sqrt_factor(w)
        return cls(w.cov, root, eig)


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def rp1_term_grad(f: TermFunction, w: VariationalParams, eps: NDArray) -> NDArray:
    """Reparameterization estimate through ``z = L eps + mu``."""
    _, gz = f(transform_rp1(w, eps))
    return flatten(gz, _outer(gz, eps))


def rp2_term_grad(f: TermFunction, w: VariationalParams, eps: NDArray, factor: Rp2Factor | None = None) -> NDArray:
    """Reparameterization estimate through ``z = sqrt(L L^T) eps + mu``.

    The L block follows the adjoint chain ``G_S = g eps^T``,
    ``G_Sigma = K[sym(G_S)]`` with ``K`` the square-root Fréchet derivative
    (self-adjoint), and ``dSigma = dL L^T + L dL^T`` giving ``2 G_Sigma L``.
    """
    if factor is None:
        factor = Rp2Factor.of(w)
    _, gz = f(eps @ factor.root.T + w.mu)
    G = _outer(gz, eps)
    G = 0.5 * (G + np.swapaxes(G, -1, -2))
    G_sigma = linalg.matrix_sqrt_frechet(factor.sigma, G, factor.eig)
    return flatten(gz, 2.0 * G_sigma @ w.L)


def sf_term_grad(f: TermFunction, w: VariationalParams, z: NDArray) -> NDArray:
    """Score-function estimate ``f(z) * grad_w log q_w(z)``."""
    value, _ = f(z)
    return np.asarray(value)[..., None] * score_grad(w, z)


@dataclass(frozen=True)
class Pairs:
    """Paired draws for one iteration: example indices and latent noise."""

    idx: NDArray
    eps: NDArray

    def __len__(self):
        return len(self.idx)


def draw_pairs(rng: np.random.Generator, ds: Dataset, B: int) -> Pairs:
    idx = sample_minibatch(rng, ds.N, B)
    eps = sample_noise(rng, ds.D, B)
    return Pairs(idx, eps)


def local_reparam_data_grad(w: VariationalParams, xt: NDArray, eps: NDArray) -> NDArray:
    """Data-term gradient through the activation ``u ~ N(xt @ mu, |L^T xt|^2)``.

    The activation noise is taken from the pair's own latent noise,
    ``eta = (L^T xt) @ eps / |L^T xt|``, which is standard normal, so ``u``
    coincides with the RP1 activation and the control variates stay
    correlated. The L block is then RP1's with ``eps`` replaced by its
    projection on ``L^T xt``, i.e. its conditional expectation given ``u``.
    """
    Ltx = xt @ w.L
    s = np.linalg.norm(Ltx, axis=-1)
    eta = np.sum(Ltx * eps, axis=-1) / s
    u = xt @ w.mu + s * eta
    (d1,) = log_sigmoid_derivs(u, order=1)
    mu_block = d1[:, None] * xt
    L_block = (d1 * eta / s)[:, None, None] * _outer(xt, Ltx)
    return flatten(mu_block, L_block)


def base_gradient(w: VariationalParams, pairs: Pairs, ds: Dataset, local_reparam: bool = False) -> NDArray:
    """Per-pair base gradients ``h_b`` of the N-normalized ELBO, shape ``(B, d)``.

    Data and prior terms by RP1 on the pair's shared noise, the variational
    term in closed form; the score term is identically zero and omitted.
    """
    xt = ds.xt[pairs.idx]
    if local_reparam:
        data = local_reparam_data_grad(w, xt, pairs.eps)
    else:
        data = rp1_term_grad(DataTerm(xt), w, pairs.eps)
    prior = rp1_term_grad(PriorTerm(1.0 / ds.N), w, pairs.eps)
    return data + prior - cf_variational_term_grad(w, ds.N)
