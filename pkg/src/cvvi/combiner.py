"""Choosing control-variate weights and assembling the final gradient.

All weight rules solve ``A a = -b`` for symmetric ``A`` through a Cholesky
(or symmetric-indefinite fallback) factorization guarded by a condition
number check; no explicit inverses are formed.
"""

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray
from scipy import linalg as sla

from .errors import BadGamma, DimensionMismatch, SingularMoments

COND_LIMIT = 1e12


def _solve_sym(A: NDArray, b: NDArray) -> NDArray:
    A = 0.5 * (A + A.T)
    if A.shape[0] == 0:
        return np.zeros(0)
    lam = np.linalg.eigvalsh(A)
    top = np.max(np.abs(lam))
    if top == 0.0 or not np.all(np.isfinite(lam)) or np.min(np.abs(lam)) * COND_LIMIT < top:
        raise SingularMoments("moment matrix is singular or ill-conditioned (cond > 1e12)")
    if lam[0] > 0:
        return sla.cho_solve(sla.cho_factor(A, lower=True), b)
    return sla.solve(A, b, assume_a="sym")


def _solve_spd(A: NDArray, b: NDArray) -> NDArray:
    """Cholesky solve for a matrix that is SPD by construction (no condition guard)."""
    A = 0.5 * (A + A.T)
    try:
        return sla.cho_solve(sla.cho_factor(A, lower=True), b)
    except np.linalg.LinAlgError as exc:
        raise SingularMoments(f"regularized moment matrix is not positive definite: {exc}") from None


def optimal_weights(E_CC: NDArray, E_Ch: NDArray) -> NDArray:
    """Weights minimizing ``E|h + C a|^2``: ``a = -E[C^T C]^{-1} E[C^T h]``."""
    E_CC = np.atleast_2d(np.asarray(E_CC, dtype=float))
    E_Ch = np.atleast_1d(np.asarray(E_Ch, dtype=float))
    return -_solve_sym(E_CC, E_Ch)


@dataclass(frozen=True)
class MomentAverages:
    """Exponentially averaged ``C^T C`` and ``C^T h`` with the effective sample count.

    ``t`` counts absorbed batches; ``t == 0`` means no information yet.
    """

    avg_CC: NDArray
    avg_Ch: NDArray
    t: int = 0
    m_eff: float = 0.0

    @classmethod
    def empty(cls, L: int) -> "MomentAverages":
        return cls(np.zeros((L, L)), np.zeros(L))

    @property
    def L(self) -> int:
        return self.avg_Ch.size


def bayes_weights(mom: MomentAverages, v0: float, d: int) -> NDArray:
    """Regularized rule ``a = -((d v0 / M) I + avg_CC)^{-1} avg_Ch`` with ``M = mom.m_eff``.

    For ``v0 > 0`` the matrix is a positive shift of a Gram average, hence SPD,
    and is solved by Cholesky without the condition guard; ``v0 = 0`` goes
    through the guarded solve and fails loudly on singular moments.
    """
    if v0 < 0:
        raise ValueError("v0 must be non-negative")
    A = np.array(mom.avg_CC, dtype=float)
    if v0 > 0:
        if mom.m_eff <= 0:
            raise SingularMoments("no effective samples: regularizer is unbounded")
        A[np.diag_indices_from(A)] += d * v0 / mom.m_eff
        return -_solve_spd(A, mom.avg_Ch)
    return -_solve_sym(A, mom.avg_Ch)


def bayes_weights_general(mom: MomentAverages, tr_hc: NDArray, tr_cc: NDArray, n0: float, M: float) -> NDArray:
    """Decision rule for a general prior scatter ``V0`` given through its block traces.

    ``tr_hc[l] = tr V_{h c_l}`` and ``tr_cc[l, k] = tr V_{c_l c_k}``. Posterior
    second moments mix prior and empirical averages with ``kappa = n0/(n0+M)``::

        E[C^T h] = kappa/n0 tr_hc + (1 - kappa) avg_Ch
        E[C^T C] = kappa/n0 tr_cc + (1 - kappa) avg_CC
    """
    if n0 < 0 or M < 0 or n0 + M <= 0:
        raise ValueError("need n0 >= 0, M >= 0 and n0 + M > 0")
    prior_w = 1.0 / (n0 + M)  # kappa / n0
    data_w = M / (n0 + M)  # 1 - kappa
    E_Ch = prior_w * np.asarray(tr_hc, dtype=float) + data_w * mom.avg_Ch
    E_CC = prior_w * np.asarray(tr_cc, dtype=float) + data_w * mom.avg_CC
    return -_solve_sym(E_CC, E_Ch)


def effective_sample_count(B: int, gamma: float, T: int) -> float:
    """``B * sum_{t=1..T} (1 - gamma)^t`` in closed form."""
    if not 0.0 < gamma <= 1.0:
        raise BadGamma(f"gamma={gamma} outside (0, 1]")
    if T < 1:
        return 0.0
    r = 1.0 - gamma
    return B * r * (1.0 - r**T) / gamma


def batch_moments(C: NDArray, h: NDArray):
    """Per-iteration averages of ``C_b^T C_b`` and ``C_b^T h_b`` over the pair axis."""
    B = C.shape[0]
    return np.einsum("bdi,bdj->ij", C, C) / B, np.einsum("bdi,bd->i", C, h) / B


def update_moment_averages(mom: MomentAverages, batch_CC: NDArray, batch_Ch: NDArray, gamma: float, B: int) -> MomentAverages:
    """Absorb one batch: seed from it when empty, otherwise ``(1-gamma) old + gamma new``.

    The effective count is floored at ``B``: the averages always contain at
    least the latest batch.
    """
    if not 0.0 <= gamma <= 1.0:
        raise BadGamma(f"gamma={gamma} outside [0, 1]")
    if mom.t == 0:
        avg_CC, avg_Ch = np.array(batch_CC, dtype=float), np.array(batch_Ch, dtype=float)
    else:
        avg_CC = (1.0 - gamma) * mom.avg_CC + gamma * batch_CC
        avg_Ch = (1.0 - gamma) * mom.avg_Ch + gamma * batch_Ch
    t = mom.t + 1
    m_eff = float(B) if gamma == 0.0 else max(float(B), effective_sample_count(B, gamma, t))
    return replace(mom, avg_CC=0.5 * (avg_CC + avg_CC.T), avg_Ch=avg_Ch, t=t, m_eff=m_eff)


def combine(h: NDArray, C: NDArray, a: NDArray) -> NDArray:
    """``h + C a``; ``h`` is ``(..., d)`` and ``C`` is ``(..., d, L)``."""
    h = np.asarray(h, dtype=float)
    C = np.asarray(C, dtype=float)
    a = np.asarray(a, dtype=float)
    if C.shape[-2] != h.shape[-1] or C.shape[-1] != a.shape[-1]:
        raise DimensionMismatch(f"h {h.shape}, C {C.shape}, a {a.shape}")
    return h + C @ a
