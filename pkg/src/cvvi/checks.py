"""Self-checks: finite-difference gradients, zero-mean control variates, combiner oracles.

Every check is a named function returning ``(ok, detail)``. Checks look up the
functions under test through their modules at call time, so a monkeypatched
(mutated) implementation is caught by name.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import combiner, cv, estimators, linalg, model, varfam
from .datasets import resolve_dataset
from .engine import RunConfig, draw_iid_pairs, keyed_rng, run_inference, sgd_momentum_step, OptimizerState

FD_STEP = 1e-5
FD_TOL = 1e-5
ZERO_MEAN_PAIRS = 100_000
ZERO_MEAN_Z = 3.0

_REGISTRY = []


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def check(name):
    def register(fn):
        _REGISTRY.append((name, fn))
        return fn

    return register


def check_names():
    return [name for name, _ in _REGISTRY]


def run_checks(seed: int = 0, names=None, stop_on_fail: bool = False) -> list:
    results = []
    for name, fn in _REGISTRY:
        if names is not None and name not in names:
            continue
        start = time.perf_counter()
        try:
            ok, detail = fn(np.random.default_rng([seed, len(results)]))
        except Exception as exc:  # a crash is a failure of that property
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - start))
        if stop_on_fail and not ok:
            break
    return results


# -- helpers ---------------------------------------------------------------


def fd_grad(f, x, h=FD_STEP):
    """Central differences of a scalar or vector function at ``x``; Jacobian rows along ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(approx, exact):
    approx, exact = np.asarray(approx, dtype=float), np.asarray(exact, dtype=float)
    return float(np.max(np.abs(approx - exact)) / max(np.max(np.abs(exact)), 1e-12))


def mean_z(x):
    """Per-coordinate ``|mean| / SE`` over axis 0; coordinates that vary only by rounding count as exact."""
    se = x.std(0, ddof=1) / np.sqrt(len(x))
    return np.abs(x.mean(0)) / np.maximum(se, 1e-12)


def random_spd(rng, D, ridge=1.0):
    B = rng.standard_normal((D, D))
    return B @ B.T + ridge * np.eye(D)


def random_params(rng, D, scale=0.6):
    L = np.tril(rng.normal(scale=0.3, size=(D, D)), -1) + np.diag(rng.uniform(0.5, 1.5, D))
    return varfam.VariationalParams(rng.normal(scale=scale, size=D), L)


def random_dataset(rng, N=60, D=5):
    F = rng.standard_normal((N, D - 1))
    y = (rng.random(N) < 1 / (1 + np.exp(-F @ rng.standard_normal(D - 1)))).astype(int)
    return model.Dataset.from_features(F, y, name="random")


def _flat_fd(w, fn):
    """FD of ``fn(VariationalParams)`` over the flat parameter vector."""
    return fd_grad(lambda v: fn(varfam.VariationalParams.from_flat(v, w.D)), w.to_flat())


def _fd_points(rng, make, n=5, tol=FD_TOL):
    worst = 0.0
    for _ in range(n):
        analytic, numeric = make(rng)
        worst = max(worst, rel_err(numeric, analytic))
    return worst < tol, f"max rel err {worst:.2e} over {n} points (tol {tol:g})"


# -- linalg ----------------------------------------------------------------


@check("linalg.cholesky_reconstructs")
def _(rng):
    worst = 0.0
    for _ in range(5):
        A = random_spd(rng, 5)
        L = linalg.cholesky(A)
        worst = max(worst, np.linalg.norm(L @ L.T - A) / np.linalg.norm(A))
    return worst < 1e-10, f"max rel Frobenius residual {worst:.2e}"


@check("linalg.sqrt_reconstructs")
def _(rng):
    worst = 0.0
    for _ in range(5):
        A = random_spd(rng, 6)
        S = linalg.matrix_sqrt(A)
        worst = max(worst, np.linalg.norm(S @ S - A) / np.linalg.norm(A))
    return worst < 1e-9, f"max rel Frobenius residual {worst:.2e}"


@check("linalg.jacobi_matches_lapack")
def _(rng):
    A = random_spd(rng, 7)
    ej, el = linalg.sym_eig(A, "jacobi"), linalg.sym_eig(A, "lapack")
    lam = rel_err(ej.values, el.values)
    recon = np.linalg.norm((ej.vectors * ej.values) @ ej.vectors.T - A) / np.linalg.norm(A)
    ortho = np.max(np.abs(ej.vectors.T @ ej.vectors - np.eye(7)))
    return lam < 1e-10 and recon < 1e-8 and ortho < 1e-10, f"eig rel {lam:.1e}, recon {recon:.1e}, ortho {ortho:.1e}"


@check("linalg.frechet_fd")
def _(rng):
    def make(rng):
        A = random_spd(rng, 4)
        E = rng.standard_normal((4, 4))
        E = E + E.T
        t = FD_STEP
        numeric = (linalg.matrix_sqrt(A + t * E) - linalg.matrix_sqrt(A - t * E)) / (2 * t)
        return linalg.matrix_sqrt_frechet(A, E), numeric

    return _fd_points(rng, make)


@check("linalg.frechet_self_adjoint")
def _(rng):
    A = random_spd(rng, 5)
    P, Q = (lambda M: M + M.T)(rng.standard_normal((5, 5))), (lambda M: M + M.T)(rng.standard_normal((5, 5)))
    lhs = np.trace(P @ linalg.matrix_sqrt_frechet(A, Q))
    rhs = np.trace(linalg.matrix_sqrt_frechet(A, P) @ Q)
    return abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs)), f"|<P,K[Q]> - <K[P],Q>| = {abs(lhs - rhs):.1e}"


# -- model -----------------------------------------------------------------


@check("model.loglik_grad_fd")
def _(rng):
    def make(rng):
        ds = random_dataset(rng)
        batch = rng.choice(ds.N, 10, replace=False)
        z = rng.standard_normal(ds.D)
        _, g, _ = model.loglik(z, batch, ds)
        return g, fd_grad(lambda x: model.loglik(x, batch, ds)[0], z)

    return _fd_points(rng, make, tol=1e-6)


@check("model.loglik_hess_fd")
def _(rng):
    def make(rng):
        ds = random_dataset(rng)
        batch = rng.choice(ds.N, 10, replace=False)
        z = rng.standard_normal(ds.D)
        _, _, H = model.loglik(z, batch, ds)
        return H, fd_grad(lambda x: model.loglik(x, batch, ds)[1], z)

    return _fd_points(rng, make)


@check("model.hessian_nsd")
def _(rng):
    ds = random_dataset(rng)
    top = max(np.linalg.eigvalsh(model.loglik(rng.standard_normal(ds.D) * 3, np.arange(ds.N), ds)[2])[-1] for _ in range(5))
    return top <= 1e-10, f"max Hessian eigenvalue {top:.2e}"


@check("model.log_prior_grad_fd")
def _(rng):
    z = rng.standard_normal(4)
    err = np.max(np.abs(model.log_prior(z)[1] - fd_grad(lambda x: model.log_prior(x)[0], z)))
    return err < 1e-8, f"max abs err {err:.1e}"


# -- varfam ----------------------------------------------------------------


@check("varfam.score_grad_fd")
def _(rng):
    def make(rng):
        w = random_params(rng, 4)
        z = varfam.transform_rp1(w, rng.standard_normal(4))
        return varfam.score_grad(w, z), _flat_fd(w, lambda v: varfam.log_q(v, z))

    return _fd_points(rng, make, tol=1e-6)


@check("varfam.score_zero_mean")
def _(rng):
    w = random_params(rng, 3)
    s = varfam.score_grad(w, varfam.transform_rp1(w, rng.standard_normal((ZERO_MEAN_PAIRS, 3))))
    z = mean_z(s)
    return np.all(z < ZERO_MEAN_Z), f"max |mean|/SE {z.max():.2f}"


@check("varfam.cf_prior_fd")
def _(rng):
    def make(rng):
        w = random_params(rng, 4)
        N = 7.0
        return varfam.cf_prior_term_grad(w, N), _flat_fd(w, lambda v: varfam.expected_log_prior(v) / N)

    return _fd_points(rng, make)


@check("varfam.cf_prior_matches_mc")
def _(rng):
    w = random_params(rng, 3)
    eps = rng.standard_normal((ZERO_MEAN_PAIRS, 3))
    mc = _flat_fd(w, lambda v: np.mean(model.log_prior(varfam.transform_rp1(v, eps))[0]))
    err = np.max(np.abs(mc - varfam.cf_prior_term_grad(w)))
    return err < 3e-2, f"max abs err of FD-of-MC vs closed form {err:.1e}"


@check("varfam.cf_variational_fd")
def _(rng):
    def make(rng):
        w = random_params(rng, 4)
        N = 7.0
        return varfam.cf_variational_term_grad(w, N), _flat_fd(w, lambda v: -varfam.entropy(v) / N)

    return _fd_points(rng, make)


@check("varfam.rp_transforms_share_moments")
def _(rng):
    w = random_params(rng, 3)
    eps = rng.standard_normal((ZERO_MEAN_PAIRS, 3))
    z1, z2 = varfam.transform_rp1(w, eps), varfam.transform_rp2(w, eps)
    cov_err = np.max(np.abs(np.cov(z1.T) - np.cov(z2.T))) / np.max(np.abs(w.cov))
    mean_err = np.max(np.abs(z1.mean(0) - z2.mean(0))) / np.sqrt(np.max(np.diag(w.cov)))
    return cov_err < 0.05 and mean_err < 0.05, f"cov rel diff {cov_err:.3f}, mean diff {mean_err:.3f}"


# -- estimators ------------------------------------------------------------


def _term_sample(rng, D):
    ds = random_dataset(rng, D=D)
    idx = rng.integers(ds.N, size=3)
    return estimators.DataTerm(ds.xt[idx]), rng.standard_normal((3, D))


@check("estimators.rp1_chain_fd")
def _(rng):
    def make(rng):
        w = random_params(rng, 4)
        f, eps = _term_sample(rng, 4)
        analytic = estimators.rp1_term_grad(f, w, eps)
        numeric = _flat_fd(w, lambda v: f(varfam.transform_rp1(v, eps))[0])
        return analytic, numeric

    return _fd_points(rng, make)


@check("estimators.rp2_chain_fd")
def _(rng):
    def make(rng):
        w = random_params(rng, 4)
        f, eps = _term_sample(rng, 4)
        analytic = estimators.rp2_term_grad(f, w, eps)
        numeric = _flat_fd(w, lambda v: f(varfam.transform_rp2(v, eps))[0])
        return analytic, numeric

    return _fd_points(rng, make)


@check("estimators.prior_estimators_agree")
def _(rng):
    w = random_params(rng, 3)
    f = estimators.PriorTerm()
    eps = rng.standard_normal((ZERO_MEAN_PAIRS, 3))
    exact = varfam.cf_prior_term_grad(w)
    worst = 0.0
    for est in (
        estimators.rp1_term_grad(f, w, eps),
        estimators.rp2_term_grad(f, w, eps),
        estimators.sf_term_grad(f, w, varfam.transform_rp1(w, eps)),
    ):
        worst = max(worst, np.max(mean_z(est - exact)))
    return worst < ZERO_MEAN_Z, f"max |mean - closed form|/SE {worst:.2f}"


@check("estimators.base_gradient_pathwise")
def _(rng):
    """The mean base gradient is the exact derivative of the pathwise sample objective."""
    ds = random_dataset(rng)
    w = random_params(rng, ds.D)
    pairs = draw_iid_pairs(rng, ds, 20)

    def sample_objective(v):
        z = varfam.transform_rp1(v, pairs.eps)
        data = model.log_sigmoid(np.sum(z * ds.xt[pairs.idx], axis=-1))
        prior = model.log_prior(z)[0] / ds.N
        return np.mean(data + prior) + varfam.entropy(v) / ds.N

    analytic = estimators.base_gradient(w, pairs, ds).mean(0)
    err = rel_err(_flat_fd(w, sample_objective), analytic)
    return err < FD_TOL, f"rel err {err:.2e}"


@check("estimators.local_reparam_unbiased")
def _(rng):
    ds = random_dataset(rng, D=3)
    w = random_params(rng, 3)
    pairs = draw_iid_pairs(rng, ds, ZERO_MEAN_PAIRS)
    diff = estimators.base_gradient(w, pairs, ds, True) - estimators.base_gradient(w, pairs, ds, False)
    z = mean_z(diff)
    return np.all(z < ZERO_MEAN_Z), f"max |mean diff|/SE {z.max():.2f}"


# -- control variates --------------------------------------------------------


def _zero_mean_table(ds, w, seed, chunk=20_000):
    L = len(cv.CV_IDS)
    s1 = np.zeros((w.d, L))
    s2 = np.zeros((w.d, L))
    done = 0
    k = 0
    while done < ZERO_MEAN_PAIRS:
        n = min(chunk, ZERO_MEAN_PAIRS - done)
        pairs = draw_iid_pairs(keyed_rng(seed, 7, k), ds, n)
        C = cv.evaluate_cv_set(cv.CV_IDS, w, pairs, ds)
        s1 += C.sum(0)
        s2 += np.sum(C * C, axis=0)
        done += n
        k += 1
    mean = s1 / done
    var = np.maximum(s2 / done - mean**2, 0.0) * done / (done - 1)
    se = np.sqrt(var / done)
    return np.abs(mean) / np.maximum(se, 1e-12)


_zero_mean_cache = {}


def _zero_mean(which):
    if which not in _zero_mean_cache:
        if which == "bundled":
            ds = resolve_dataset("synthetic:blobs2d")
            w = random_params(np.random.default_rng(11), ds.D)
        else:
            rng = np.random.default_rng(12)
            ds = random_dataset(rng, D=5)
            w = random_params(rng, 5)
        _zero_mean_cache[which] = _zero_mean_table(ds, w, seed=13 if which == "bundled" else 14)
    return _zero_mean_cache[which]


def _register_zero_mean():
    for which in ("bundled", "random_d5"):
        for j, cid in enumerate(cv.CV_IDS):

            def fn(rng, which=which, j=j):
                ratio = _zero_mean(which)[:, j]
                return np.all(ratio < ZERO_MEAN_Z), f"max |mean|/SE {ratio.max():.2f} over {ratio.size} coords"

            check(f"cv.zero_mean.{cid}.{which}")(fn)


_register_zero_mean()


@check("cv.subsampling_delta_grad_fd")
def _(rng):
    def make(rng):
        ds = random_dataset(rng, D=4)
        idx = rng.integers(ds.N, size=3)
        delta = cv.SubsamplingTaylorDelta(ds.xt[idx], ds.m, ds.S)
        z = rng.standard_normal((3, 4))
        numeric = np.stack([fd_grad(lambda x: delta(x)[0], zi)[k] for k, zi in enumerate(z)])
        return delta(z)[1], numeric

    return _fd_points(rng, make)


@check("cv.subsampling_cv_rp_chains_fd")
def _(rng):
    def make(rng):
        ds = random_dataset(rng, D=4)
        w = random_params(rng, 4)
        pairs = draw_iid_pairs(rng, ds, 3)
        delta = cv.SubsamplingTaylorDelta(ds.xt[pairs.idx], ds.m, ds.S)
        analytic = np.concatenate(
            [cv.taylor_subsampling_cv(w, pairs, ds, "rp1"), cv.taylor_subsampling_cv(w, pairs, ds, "rp2")]
        )
        n1 = _flat_fd(w, lambda v: delta(varfam.transform_rp1(v, pairs.eps))[0])
        n2 = _flat_fd(w, lambda v: delta(varfam.transform_rp2(v, pairs.eps))[0])
        return analytic, np.concatenate([n1, n2])

    return _fd_points(rng, make)


@check("cv.distributional_taylor_fd")
def _(rng):
    """c7 equals exact minus RP1 gradient of the quadratic model; check both parts by FD."""

    def make(rng):
        ds = random_dataset(rng, D=4)
        w = random_params(rng, 4)
        pairs = draw_iid_pairs(rng, ds, 3)
        term = estimators.DataTerm(ds.xt[pairs.idx])
        mu0 = np.broadcast_to(w.mu, (3, 4))
        f0, g0 = term(mu0)
        H0 = term.hessian(mu0)

        def quad_rp1(v):
            dz = varfam.transform_rp1(v, pairs.eps) - w.mu
            return f0 + np.sum(g0 * dz, -1) + 0.5 * np.einsum("bi,bij,bj->b", dz, H0, dz)

        def quad_exact(v):
            dm = v.mu - w.mu
            cov = v.L @ v.L.T
            return f0 + g0 @ dm + 0.5 * (np.einsum("i,bij,j->b", dm, H0, dm) + np.einsum("bij,ji->b", H0, cov))

        numeric = _flat_fd(w, quad_exact) - _flat_fd(w, quad_rp1)
        return cv.taylor_distributional_cv(w, pairs, ds), numeric

    return _fd_points(rng, make)


@check("cv.distributional_exact_on_quadratic")
def _(rng):
    """For a quadratic data term, RP1 plus c7 has zero variance in the mu block."""
    D = 3
    A = random_spd(rng, D)
    b = rng.standard_normal(D)

    class Quad:
        def __call__(self, z):
            return -0.5 * np.einsum("...i,ij,...j->...", z, A, z) + z @ b, -z @ A + b

        def hessian(self, z):
            return np.broadcast_to(-A, z.shape[:-1] + (D, D))

    w = random_params(rng, D)
    eps = rng.standard_normal((500, D))
    h = estimators.rp1_term_grad(Quad(), w, eps)
    c7 = cv.taylor_distributional_cv(w, estimators.Pairs(np.zeros(500, dtype=int), eps), None, term=Quad())
    spread = np.max(np.std((h + c7)[:, :D], axis=0))
    return spread < 1e-10, f"mu-block std of h + c7: {spread:.1e}"


@check("cv.score_is_minus_N_c1")
def _(rng):
    ds = random_dataset(rng, D=3)
    w = random_params(rng, 3)
    pairs = draw_iid_pairs(rng, ds, 50)
    C = cv.evaluate_cv_set(("c1", "score"), w, pairs, ds)
    err = np.max(np.abs(C[..., 1] + ds.N * C[..., 0]))
    return err < 1e-9, f"max |score + N c1| {err:.1e}"


# -- combiner --------------------------------------------------------------


def _joint_gaussian(rng, L=3, d=4):
    """Random jointly Gaussian (h, C) with exact second moments."""
    k = d * (L + 1)
    F = rng.standard_normal((k, k)) / np.sqrt(k)
    cov = F @ F.T + 0.1 * np.eye(k)
    idx_h = np.arange(d)
    idx_c = [np.arange(d * (l + 1), d * (l + 2)) for l in range(L)]
    E_CC = np.array([[np.trace(cov[np.ix_(a, b)]) for b in idx_c] for a in idx_c])
    E_Ch = np.array([np.trace(cov[np.ix_(a, idx_h)]) for a in idx_c])
    E_hh = np.trace(cov[np.ix_(idx_h, idx_h)])
    return E_CC, E_Ch, E_hh, cov


def _risk(a, E_CC, E_Ch, E_hh):
    return E_hh + 2 * a @ E_Ch + a @ E_CC @ a


@check("combiner.optimal_beats_random")
def _(rng):
    E_CC, E_Ch, E_hh, _ = _joint_gaussian(rng)
    a = combiner.optimal_weights(E_CC, E_Ch)
    best = _risk(a, E_CC, E_Ch, E_hh)
    R = rng.normal(scale=2.0, size=(10_000, 3)) + a * rng.random((10_000, 1)) * 2
    risks = E_hh + 2 * R @ E_Ch + np.einsum("ni,ij,nj->n", R, E_CC, R)
    return bool(np.all(risks >= best - 1e-12)), f"optimum {best:.4f}, best random {risks.min():.4f}"


@check("combiner.optimal_matches_lstsq")
def _(rng):
    E_CC, E_Ch, _, _ = _joint_gaussian(rng)
    U = np.linalg.cholesky(E_CC).T
    ref = -np.linalg.lstsq(U, np.linalg.solve(U.T, E_Ch), rcond=None)[0]
    err = np.max(np.abs(combiner.optimal_weights(E_CC, E_Ch) - ref))
    return err < 1e-10, f"max abs diff {err:.1e}"


@check("combiner.bayes_scalar_example")
def _(rng):
    mom = combiner.MomentAverages(np.array([[2.0]]), np.array([1.0]), 1, 4.0)
    a = combiner.bayes_weights(mom, 1e-3, 2)[0]
    ref = -1.0 / (2.0 + 2 * 0.001 / 4)
    return abs(a - ref) < 1e-12, f"a = {a!r}, expected {ref!r}"


@check("combiner.general_reduces_to_bayes")
def _(rng):
    E_CC, E_Ch, _, _ = _joint_gaussian(rng)
    d, v0, M = 12, 1e-2, 40.0
    mom = combiner.MomentAverages(E_CC, E_Ch, 3, M)
    n0 = 2.5
    ref = combiner.bayes_weights(mom, v0, d)
    got = combiner.bayes_weights_general(mom, np.zeros(3), d * v0 * np.eye(3), n0, M)
    err = np.max(np.abs(got - ref))
    return err < 1e-12, f"max abs diff {err:.1e}"


@check("combiner.fixed_weights_unbiased")
def _(rng):
    ds = random_dataset(rng, D=3)
    w = random_params(rng, 3)
    pairs = draw_iid_pairs(rng, ds, ZERO_MEAN_PAIRS)
    h = estimators.base_gradient(w, pairs, ds)
    C = cv.evaluate_cv_set("S7", w, pairs, ds)
    a = rng.standard_normal(C.shape[-1])
    diff = combiner.combine(h, C, a) - h
    z = mean_z(diff)
    return np.all(z < ZERO_MEAN_Z), f"max |mean(C a)|/SE {z.max():.2f}"


@check("combiner.lemma_perturbation")
def _(rng):
    E_CC, E_Ch, E_hh, cov = _joint_gaussian(rng)
    samples = rng.multivariate_normal(np.zeros(len(cov)), cov, size=200_000)
    h = samples[:, :4]
    C = samples[:, 4:].reshape(-1, 3, 4).transpose(0, 2, 1)
    a = combiner.optimal_weights(E_CC, E_Ch)
    base = np.mean(np.sum(combiner.combine(h, C, a) ** 2, axis=1))
    worse = True
    for j in range(3):
        for step in (-0.1, 0.1):
            b = a.copy()
            b[j] += step
            worse &= np.mean(np.sum(combiner.combine(h, C, b) ** 2, axis=1)) > base
    return worse, f"E|g|^2 at optimum {base:.4f}"


@check("combiner.shrinks_with_v0")
def _(rng):
    E_CC, E_Ch, _, _ = _joint_gaussian(rng)
    mom = combiner.MomentAverages(E_CC, E_Ch, 1, 50.0)
    norms = [np.linalg.norm(combiner.bayes_weights(mom, v0, 10)) for v0 in np.geomspace(1e-6, 1e6, 25)]
    return bool(np.all(np.diff(norms) <= 1e-12)), f"|a| from {norms[0]:.3g} to {norms[-1]:.3g}"


@check("combiner.ema_fixed_point")
def _(rng):
    CC = random_spd(rng, 3)
    Ch = rng.standard_normal(3)
    mom = combiner.MomentAverages.empty(3)
    for _ in range(20):
        mom = combiner.update_moment_averages(mom, CC, Ch, 0.02, 10)
    ok = np.allclose(mom.avg_CC, CC, atol=1e-12) and np.allclose(mom.avg_Ch, Ch, atol=1e-12)
    return ok, f"M_eff after 20 steps {mom.m_eff:.2f}"


# -- engine ----------------------------------------------------------------


@check("engine.momentum_two_steps")
def _(rng):
    state = OptimizerState.initial(2, 0)
    g = rng.normal(scale=0.01, size=state.params.d)
    s1 = sgd_momentum_step(state, g, 0.1, 0.9)
    s2 = sgd_momentum_step(s1, g, 0.1, 0.9)
    err = np.max(np.abs((s2.params.to_flat() - s1.params.to_flat()) - 0.1 * 1.9 * g))
    return err < 1e-14, f"max abs err {err:.1e}"


@check("engine.deterministic_trace")
def _(rng):
    ds = resolve_dataset("synthetic:blobs2d")
    cfg = RunConfig(lr=0.2, iterations=15, cvs="S7", seed=int(rng.integers(1 << 30)))
    a, b = run_inference(cfg, ds), run_inference(cfg, ds)
    same = [(r.t, r.elbo, r.grad_sq_norm, r.weight_norm) for r in a.records] == [
        (r.t, r.elbo, r.grad_sq_norm, r.weight_norm) for r in b.records
    ]
    return same, f"{len(a.records)} records compared"
