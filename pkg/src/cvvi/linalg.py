"""Dense symmetric linear algebra for the Gaussian variational family.

Cholesky factorization, symmetric eigendecomposition, the principal matrix
square root and its Fréchet derivative (Daleckii-Krein form).
"""

from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from .errors import NotPositiveDefinite, NotPSD, Singular

PSD_TOL = 1e-10
SINGULAR_TOL = 1e-12


class EigenDecomposition(NamedTuple):
    """Eigenvalues in descending order and the matching orthonormal eigenvectors (columns)."""

    values: NDArray
    vectors: NDArray


def _symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def cholesky(sigma: NDArray) -> NDArray:
    """Lower Cholesky factor L with positive diagonal and L @ L.T == sigma.

    Raises
    ------
    NotPositiveDefinite
        If a non-positive pivot is met.
    """
    sigma = _symmetrize(sigma)
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.isfinite(L)) or np.any(np.diag(L) <= 0):
        raise NotPositiveDefinite("non-positive pivot")
    return L


def jacobi_eigh(a: NDArray, tol: float = 1e-14, max_sweeps: int = 100) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep annihilates every off-diagonal pair once; iteration stops when
    the off-diagonal Frobenius norm falls below ``tol`` times the total norm.
    """
    A = _symmetrize(a).copy()
    n = A.shape[0]
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return EigenDecomposition(np.zeros(n), V)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0:
                    t = 1.0
                elif abs(theta) > 1e150:  # theta^2 would overflow; t ~ 1/(2 theta)
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) Givens rotation
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    lam = np.diag(A).copy()
    order = np.argsort(lam)[::-1]
    return EigenDecomposition(lam[order], V[:, order])


def sym_eig(sigma: NDArray, method: str = "lapack") -> EigenDecomposition:
    """Symmetric eigendecomposition with eigenvalues sorted descending.

    ``method="lapack"`` uses ``numpy.linalg.eigh``; ``method="jacobi"`` uses the
    in-house cyclic Jacobi solver.
    """
    if method == "jacobi":
        return jacobi_eigh(sigma)
    if method != "lapack":
        raise ValueError(f"unknown eigensolver {method!r}")
    lam, U = np.linalg.eigh(_symmetrize(sigma))
    return EigenDecomposition(lam[::-1].copy(), U[:, ::-1].copy())


def _psd_values(eig: EigenDecomposition) -> NDArray:
    lam = eig.values
    lam_max = max(lam[0], 0.0)
    if lam[-1] < -PSD_TOL * max(lam_max, 1e-300):
        raise NotPSD(f"min eigenvalue {lam[-1]:.3e} below tolerance")
    return np.clip(lam, 0.0, None)


def matrix_sqrt(sigma: NDArray, eig: EigenDecomposition | None = None) -> NDArray:
    """Symmetric PSD square root U diag(sqrt(lam)) U^T."""
    if eig is None:
        eig = sym_eig(sigma)
    root = np.sqrt(_psd_values(eig))
    U = eig.vectors
    return _symmetrize((U * root) @ U.T)


def _frechet_weights(eig: EigenDecomposition) -> NDArray:
    lam = eig.values
    if lam[-1] <= SINGULAR_TOL * lam[0] or lam[0] <= 0:
        raise Singular("matrix square root derivative needs a positive definite argument")
    root = np.sqrt(lam)
    denom = root[:, None] + root[None, :]
    if np.any(denom < SINGULAR_TOL):
        raise Singular("degenerate Daleckii-Krein weight")
    return 1.0 / denom


def matrix_sqrt_frechet(
    sigma: NDArray, dsigma: NDArray, eig: EigenDecomposition | None = None
) -> NDArray:
    """Directional derivative of ``matrix_sqrt`` at ``sigma`` along ``dsigma``.

    Computed as ``U [(U^T dsigma U) * Phi] U^T`` with
    ``Phi_ij = 1 / (sqrt(lam_i) + sqrt(lam_j))``. ``dsigma`` may carry leading
    batch axes. The map is self-adjoint under the trace inner product.
    """
    if eig is None:
        eig = sym_eig(sigma)
    phi = _frechet_weights(eig)
    U = eig.vectors
    inner = U.T @ np.asarray(dsigma, dtype=float) @ U
    return U @ (inner * phi) @ U.T
