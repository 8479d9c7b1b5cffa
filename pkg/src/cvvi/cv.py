"""Control variates for the logistic-regression ELBO gradient.

Every control variate is a zero-mean random flat gradient evaluated on the
same paired draw ``(example n_b, noise eps_b)`` as the base gradient, so the
columns correlate with ``h``. Pair-difference variates are oriented
``first-listed estimator - second-listed estimator``.

Identifiers:

``c1``  RP1 - closed form, variational term
``c2``  RP1 - closed form, prior term
``c3``  RP1 - RP2, prior term
``c4``  RP1 - RP2, data term
``c5``  data-subsampling Taylor correction, RP1
``c6``  data-subsampling Taylor correction, RP2
``c7``  distributional Taylor correction around ``z0 = mu``, RP1
``score``  the score ``grad_w log q_w(z)``; with RP1 draws it is ``-N * c1``
"""

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, EstimatorUnavailable, Singular
from .estimators import (
    DataTerm,
    Pairs,
    PriorTerm,
    Rp2Factor,
    VariationalTerm,
    rp1_term_grad,
    rp2_term_grad,
    sf_term_grad,
)
from .model import Dataset, log_sigmoid_derivs
from .varfam import VariationalParams, cf_prior_term_grad, cf_variational_term_grad, flatten, score_grad, transform_rp1

CV_IDS = ("c1", "c2", "c3", "c4", "c5", "c6", "c7", "score")
ESTIMATORS = ("rp1", "rp2", "sf", "cf")

_S4 = ("c2", "c1", "c3", "c4")
SUBSETS = {
    "none": (),
    "S4": _S4,
    "S5": _S4 + ("c6",),
    "S6": _S4 + ("c6", "c5"),
    "S7": _S4 + ("c6", "c5", "c7"),
    "c5": ("c5",),
    "c7": ("c7",),
}

_RP2_USERS = {"c3", "c4", "c6"}


def closed_form(term, w: VariationalParams) -> NDArray:
    """Exact gradient of ``E_q term(Z)`` where one is available."""
    if isinstance(term, PriorTerm):
        return cf_prior_term_grad(w) * term.scale
    if isinstance(term, VariationalTerm):
        return cf_variational_term_grad(term.v) * term.scale
    raise EstimatorUnavailable(f"no closed form for {type(term).__name__}")


def estimate(term, est: str, w: VariationalParams, eps: NDArray, factor: Rp2Factor | None = None) -> NDArray:
    """One estimator of the gradient of ``E_q term(Z)`` on noise ``eps``, shape ``(B, d)``."""
    if est == "rp1":
        return rp1_term_grad(term, w, eps)
    if est == "rp2":
        return rp2_term_grad(term, w, eps, factor)
    if est == "sf":
        return sf_term_grad(term, w, transform_rp1(w, eps))
    if est == "cf":
        return np.broadcast_to(closed_form(term, w), eps.shape[:-1] + (w.d,))
    raise EstimatorUnavailable(f"unknown estimator {est!r}; expected one of {ESTIMATORS}")


def cv_pair_diff(term, est_a: str, est_b: str, w: VariationalParams, eps: NDArray, factor: Rp2Factor | None = None) -> NDArray:
    """Difference of two unbiased estimators of the same term on shared noise."""
    if est_a == est_b:
        raise EstimatorUnavailable("a pair-difference control variate needs two distinct estimators")
    return estimate(term, est_a, w, eps, factor) - estimate(term, est_b, w, eps, factor)


class SubsamplingTaylorDelta:
    """Second-order Taylor model of the data term in the signed input, minus its data average.

    Expanding ``ell(z @ x)`` around the data mean ``m`` and averaging over a
    batch with first/second moments ``(m_b, S_b)`` gives, after subtracting
    the same model averaged over the full data,

        delta(z) = (ell'(a) - a ell''(a)) z @ (m_b - m) + 0.5 ell''(a) z^T (S_b - S) z,

    with ``a = z @ m``. For a fixed ``z`` its average over uniformly drawn
    batches is exactly zero. Here the batch is the single pair example.
    """

    def __init__(self, xt: NDArray, m: NDArray, S: NDArray):
        self.xt = np.asarray(xt, dtype=float)
        self.m = m
        self.S = S

    def __call__(self, z):
        a = z @ self.m
        d1, d2, d3 = log_sigmoid_derivs(a, order=3)
        u = self.xt - self.m
        zu = np.sum(z * u, axis=-1)
        xz = np.sum(z * self.xt, axis=-1)
        Sz = z @ self.S
        Qz = xz[..., None] * self.xt - Sz
        zQz = np.sum(z * Qz, axis=-1)
        lin = d1 - a * d2
        value = lin * zu + 0.5 * d2 * zQz
        grad = (
            (-a * d3 * zu + 0.5 * d3 * zQz)[..., None] * self.m
            + lin[..., None] * u
            + d2[..., None] * Qz
        )
        return value, grad


def taylor_subsampling_cv(
    w: VariationalParams, pairs: Pairs, ds: Dataset, est: str = "rp1", factor: Rp2Factor | None = None
) -> NDArray:
    if est not in ("rp1", "rp2"):
        raise EstimatorUnavailable("the subsampling correction uses RP1 or RP2")
    delta = SubsamplingTaylorDelta(ds.xt[pairs.idx], ds.m, ds.S)
    return estimate(delta, est, w, pairs.eps, factor)


def taylor_distributional_cv(w: VariationalParams, pairs: Pairs, ds: Dataset, term=None) -> NDArray:
    """Exact minus RP1 gradient of the quadratic Taylor model of the data term at ``mu``.

    With ``g0, H0`` the gradient and Hessian at ``mu``: the exact gradient of
    the expected model is ``(g0, tril(H0 L))`` and the RP1 estimate is
    ``(g0 + H0 L eps, tril((g0 + H0 L eps) eps^T))``. ``term`` (any object
    with ``__call__`` and ``hessian``) defaults to the pairs' data term.
    """
    if term is None:
        term = DataTerm(ds.xt[pairs.idx])
    eps = pairs.eps
    mu = np.broadcast_to(w.mu, eps.shape)
    _, g0 = term(mu)
    H0 = term.hessian(mu)
    H0L = H0 @ w.L
    H0Le = np.einsum("...ij,...j->...i", H0L, eps)
    mu_block = -H0Le
    L_block = H0L - (g0 + H0Le)[..., :, None] * eps[..., None, :]
    return flatten(mu_block, L_block)


def score_term_cv(w: VariationalParams, pairs: Pairs) -> NDArray:
    return score_grad(w, transform_rp1(w, pairs.eps))


def resolve_cv_set(spec) -> tuple:
    """Map a subset name, a comma list or a sequence of identifiers to an ordered tuple of ids."""
    if spec is None:
        return ()
    if isinstance(spec, str):
        if spec in SUBSETS:
            return SUBSETS[spec]
        items = [s.strip() for s in spec.split(",") if s.strip()]
    else:
        items = list(spec)
    unknown = [s for s in items if s not in CV_IDS]
    if unknown:
        raise ConfigError(
            f"unknown control variate {unknown[0]!r}; valid identifiers: {', '.join(CV_IDS)}; "
            f"valid subsets: {', '.join(SUBSETS)}"
        )
    if len(set(items)) != len(items):
        raise ConfigError(f"duplicate control variate in {items}")
    return tuple(items)


def evaluate_cv_set(
    cv_set, w: VariationalParams, pairs: Pairs, ds: Dataset, factor: Rp2Factor | None = None, rp2_fallback: bool = False
):
    """Evaluate every control variate on every pair; returns ``(B, d, L)``.

    With ``rp2_fallback`` the RP2-based columns (c3, c4, c6) are returned as
    zeros instead of raising ``Singular`` when ``L L^T`` is too ill-conditioned
    for the square-root derivative; a zero column is still a zero-mean control
    variate. The second return value then lists the zeroed identifiers.
    """
    cv_set = resolve_cv_set(cv_set)
    B = len(pairs)
    skipped = []
    if not cv_set:
        C = np.zeros((B, w.d, 0))
        return (C, skipped) if rp2_fallback else C
    if factor is None and _RP2_USERS.intersection(cv_set):
        factor = Rp2Factor.of(w)
    eps = pairs.eps
    inv_n = 1.0 / ds.N
    cols = []
    for cid in cv_set:
        try:
            col = _column(cid, w, pairs, ds, factor, eps, inv_n)
        except Singular:
            if not rp2_fallback or cid not in _RP2_USERS:
                raise
            col = np.zeros((B, w.d))
            skipped.append(cid)
        cols.append(col)
    C = np.stack(cols, axis=-1)
    return (C, skipped) if rp2_fallback else C


def _column(cid, w, pairs, ds, factor, eps, inv_n):
    if cid == "c1":
        return cv_pair_diff(VariationalTerm(w, inv_n), "rp1", "cf", w, eps)
    if cid == "c2":
        return cv_pair_diff(PriorTerm(inv_n), "rp1", "cf", w, eps)
    if cid == "c3":
        return cv_pair_diff(PriorTerm(inv_n), "rp1", "rp2", w, eps, factor)
    if cid == "c4":
        return cv_pair_diff(DataTerm(ds.xt[pairs.idx]), "rp1", "rp2", w, eps, factor)
    if cid == "c5":
        return taylor_subsampling_cv(w, pairs, ds, "rp1")
    if cid == "c6":
        return taylor_subsampling_cv(w, pairs, ds, "rp2", factor)
    if cid == "c7":
        return taylor_distributional_cv(w, pairs, ds)
    return score_term_cv(w, pairs)
