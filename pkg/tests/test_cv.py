import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvvi import checks
from cvvi.cv import (
    CV_IDS,
    SUBSETS,
    SubsamplingTaylorDelta,
    cv_pair_diff,
    evaluate_cv_set,
    resolve_cv_set,
    score_term_cv,
    taylor_distributional_cv,
    taylor_subsampling_cv,
)
from cvvi.errors import ConfigError, EstimatorUnavailable, Singular
from cvvi.estimators import DataTerm, Pairs, PriorTerm, VariationalTerm, base_gradient, rp1_term_grad, rp2_term_grad
from cvvi.model import Dataset
from cvvi.varfam import (
    VariationalParams,
    cf_prior_term_grad,
    cf_variational_term_grad,
    sample_noise,
    transform_rp1,
    transform_rp2,
    unflatten,
)


def iid_pairs(seed, ds, n):
    rng = np.random.default_rng(seed)
    return Pairs(rng.integers(ds.N, size=n), sample_noise(rng, ds.D, n))


def test_subset_definitions():
    assert SUBSETS["S4"] == ("c2", "c1", "c3", "c4")
    assert SUBSETS["S5"] == SUBSETS["S4"] + ("c6",)
    assert set(SUBSETS["S6"]) == set(SUBSETS["S5"]) | {"c5"}
    assert set(SUBSETS["S7"]) == set(SUBSETS["S6"]) | {"c7"}
    assert SUBSETS["none"] == ()


def test_resolve_cv_set():
    assert resolve_cv_set("c1,c7") == ("c1", "c7")
    assert resolve_cv_set(["score"]) == ("score",)
    with pytest.raises(ConfigError, match="valid identifiers"):
        resolve_cv_set("c9")
    with pytest.raises(ConfigError, match="duplicate"):
        resolve_cv_set(["c1", "c1"])


def test_pair_diff_rejects_same_estimator_and_missing_closed_form(params5, small_ds):
    eps = np.zeros((1, 5))
    with pytest.raises(EstimatorUnavailable):
        cv_pair_diff(PriorTerm(), "rp1", "rp1", params5, eps)
    with pytest.raises(EstimatorUnavailable):
        cv_pair_diff(DataTerm(small_ds.xt[:1]), "rp1", "cf", params5, eps)


def test_c3_vanishes_at_standard_init(small_ds):
    w = VariationalParams.standard(5)
    C = evaluate_cv_set(["c3"], w, iid_pairs(0, small_ds, 6), small_ds)
    np.testing.assert_allclose(C, 0.0, atol=1e-14)


def test_c3_at_identity_cov_only_off_diagonal_differs(small_ds):
    # sqrt(L L^T) = L = I, but perturbing L and sqrt(L L^T) move z differently off the diagonal
    w = VariationalParams(np.linspace(-1, 1, 5), np.eye(5))
    C = evaluate_cv_set(["c3"], w, iid_pairs(0, small_ds, 6), small_ds)[..., 0]
    mu_b, L_b = unflatten(C, 5)
    np.testing.assert_allclose(mu_b, 0.0, atol=1e-14)
    np.testing.assert_allclose(np.diagonal(L_b, axis1=1, axis2=2), 0.0, atol=1e-14)


def test_cancellation_identities(params5, small_ds):
    pairs = iid_pairs(1, small_ds, 8)
    n = small_ds.N
    C = evaluate_cv_set(["c1", "c2", "c4"], params5, pairs, small_ds)
    c1, c2, c4 = C[..., 0], C[..., 1], C[..., 2]
    xt = small_ds.xt[pairs.idx]
    rp1_var = rp1_term_grad(VariationalTerm(params5, 1 / n), params5, pairs.eps)
    rp1_prior = rp1_term_grad(PriorTerm(1 / n), params5, pairs.eps)
    rp1_data = rp1_term_grad(DataTerm(xt), params5, pairs.eps)
    np.testing.assert_allclose(rp1_var - c1, np.broadcast_to(cf_variational_term_grad(params5, n), c1.shape), atol=1e-14)
    np.testing.assert_allclose(rp1_prior - c2, np.broadcast_to(cf_prior_term_grad(params5, n), c2.shape), atol=1e-14)
    np.testing.assert_allclose(rp1_data - c4, rp2_term_grad(DataTerm(xt), params5, pairs.eps), atol=1e-12)


def test_score_is_minus_n_c1(params5, small_ds):
    pairs = iid_pairs(2, small_ds, 5)
    C = evaluate_cv_set(["c1", "score"], params5, pairs, small_ds)
    np.testing.assert_allclose(C[..., 1], -small_ds.N * C[..., 0], atol=1e-10)


def test_score_cv_at_mode(params5, small_ds):
    pairs = Pairs(np.array([0]), np.zeros((1, 5)))
    mu_b, L_b = unflatten(score_term_cv(params5, pairs)[0], 5)
    np.testing.assert_allclose(mu_b, 0.0, atol=1e-14)
    np.testing.assert_allclose(np.diag(L_b), -1 / np.diag(params5.L))


def test_subsampling_cv_vanishes_on_single_example():
    ds = Dataset.from_features(np.array([[0.7, -1.2]]), [1], standardize=False)
    w = checks.random_params(np.random.default_rng(0), ds.D)
    pairs = iid_pairs(0, ds, 4)
    for est in ("rp1", "rp2"):
        np.testing.assert_allclose(taylor_subsampling_cv(w, pairs, ds, est), 0.0, atol=1e-14)


def test_subsampling_delta_exact_average(small_ds):
    # for any fixed z the data average of delta is zero
    z = np.random.default_rng(3).normal(size=(7, 5))
    vals = np.array([SubsamplingTaylorDelta(small_ds.xt[n], small_ds.m, small_ds.S)(z)[0] for n in range(small_ds.N)])
    np.testing.assert_allclose(vals.mean(0), 0.0, atol=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_subsampling_delta_fd(small_ds, seed):
    rng = np.random.default_rng(seed)
    delta = SubsamplingTaylorDelta(small_ds.xt[seed], small_ds.m, small_ds.S)
    z = rng.normal(size=5)
    assert checks.rel_err(delta(z)[1], checks.fd_grad(lambda x: delta(x)[0], z)) < 1e-5
    w, eps = checks.random_params(rng, 5), rng.normal(size=5)
    for est, tf in (("rp1", transform_rp1), ("rp2", transform_rp2)):
        got = taylor_subsampling_cv(w, Pairs(np.array([seed]), eps[None]), small_ds, est)[0]
        fd = checks._flat_fd(w, lambda v: delta(tf(v, eps))[0])
        assert checks.rel_err(got, fd) < 1e-5


def test_distributional_cv_at_zero_noise(params5, small_ds):
    pairs = Pairs(np.array([4]), np.zeros((1, 5)))
    mu_b, L_b = unflatten(taylor_distributional_cv(params5, pairs, small_ds)[0], 5)
    H0 = DataTerm(small_ds.xt[4]).hessian(params5.mu)
    np.testing.assert_allclose(mu_b, 0.0, atol=1e-15)
    np.testing.assert_allclose(L_b, np.tril(H0 @ params5.L), atol=1e-15)


class Quadratic:
    def __init__(self, A, b):
        self.A, self.b = A, b

    def __call__(self, z):
        return -0.5 * np.einsum("...i,ij,...j->...", z, self.A, z) + z @ self.b, -z @ self.A + self.b

    def hessian(self, z):
        return np.broadcast_to(-self.A, z.shape[:-1] + self.A.shape)


def test_distributional_cv_exact_for_quadratic(params5, small_ds):
    rng = np.random.default_rng(4)
    term = Quadratic(checks.random_spd(rng, 5), rng.normal(size=5))
    pairs = iid_pairs(5, small_ds, 200)
    g = rp1_term_grad(term, params5, pairs.eps) + taylor_distributional_cv(params5, pairs, small_ds, term=term)
    # both blocks become the exact gradient for every draw
    assert np.max(np.std(g, axis=0)) < 1e-12
    np.testing.assert_allclose(g[0, :5], term(params5.mu)[1], atol=1e-12)


@pytest.mark.parametrize("cid", CV_IDS)
def test_every_cv_is_zero_mean(cid, params5, small_ds):
    C = evaluate_cv_set([cid], params5, iid_pairs(6, small_ds, 100_000), small_ds)[..., 0]
    assert np.all(checks.mean_z(C) < 3.0)


def test_evaluate_cv_set_shapes(params5, small_ds):
    pairs = iid_pairs(7, small_ds, 3)
    assert evaluate_cv_set("S4", params5, pairs, small_ds).shape == (3, params5.d, 4)
    assert evaluate_cv_set("S7", params5, pairs, small_ds).shape == (3, params5.d, 7)
    assert evaluate_cv_set("none", params5, pairs, small_ds).shape == (3, params5.d, 0)


def test_columns_follow_set_order(params5, small_ds):
    pairs = iid_pairs(8, small_ds, 3)
    full = evaluate_cv_set("S7", params5, pairs, small_ds)
    for k, cid in enumerate(SUBSETS["S7"]):
        np.testing.assert_array_equal(full[..., k], evaluate_cv_set([cid], params5, pairs, small_ds)[..., 0])


def test_rp2_fallback_zeroes_columns(small_ds):
    # nearly rank-deficient covariance: the square-root derivative is undefined
    L = np.eye(5)
    L[1:, 0] = 1.0
    L[np.diag_indices(5)] = [1.0, 1e-9, 1e-9, 1e-9, 1e-9]
    w = VariationalParams(np.zeros(5), L)
    pairs = iid_pairs(9, small_ds, 2)
    with pytest.raises(Singular):
        evaluate_cv_set("S7", w, pairs, small_ds)
    C, skipped = evaluate_cv_set("S7", w, pairs, small_ds, rp2_fallback=True)
    assert set(skipped) == {"c3", "c4", "c6"}
    for k, cid in enumerate(SUBSETS["S7"]):
        assert np.all(C[..., k] == 0) == (cid in skipped)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_cv_columns_finite(seed):
    rng = np.random.default_rng(seed)
    ds = checks.random_dataset(rng, N=20, D=3)
    w = checks.random_params(rng, 3)
    C = evaluate_cv_set("S7", w, iid_pairs(seed, ds, 5), ds)
    assert np.all(np.isfinite(C))
    assert np.all(np.isfinite(base_gradient(w, iid_pairs(seed, ds, 5), ds)))
