"""Optimization loop, gradient-variance probe and sensitivity sweep.

Randomness is keyed, not sequential: iteration ``t`` of a run with seed ``s``
draws its pairs from ``default_rng([s, 0, t])`` and its ELBO noise from
``default_rng([s, 1, t])``. Runs that differ only in their control-variate
set therefore see identical pairs, which makes comparisons between sets paired.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .combiner import (
    MomentAverages,
    batch_moments,
    bayes_weights,
    combine,
    update_moment_averages,
)
from .cv import evaluate_cv_set, resolve_cv_set
from .errors import ConfigError, NonFinite, Singular, SingularMoments
from .estimators import Pairs, base_gradient, draw_pairs
from .model import Dataset
from .varfam import DIAG_FLOOR, VariationalParams, elbo_estimate, sample_noise, unflatten

STREAM_PAIRS = 0
STREAM_ELBO = 1
STREAM_INIT = 2
SHRINK_LIMIT = 0.5


def keyed_rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "synthetic:blobs2d"
    lr: float = 0.1
    iterations: int = 500
    batch_size: int = 10
    momentum: float = 0.9
    gamma: float = 0.02
    v0: float = 1e-3
    cvs: str | tuple = "none"
    seed: int = 0
    local_reparam: bool = False
    elbo_samples: int = 16
    init_scale: float = 1.0
    timing: bool = False
    rp2_fallback: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.v0 < 0:
            raise ConfigError("v0 must be >= 0")
        if self.batch_size < 1 or self.iterations < 1 or self.elbo_samples < 1:
            raise ConfigError("batch_size, iterations and elbo_samples must be >= 1")
        resolve_cv_set(self.cvs)

    @property
    def cv_set(self) -> tuple:
        return resolve_cv_set(self.cvs)


@dataclass(frozen=True)
class OptimizerState:
    params: VariationalParams
    velocity: NDArray
    moments: MomentAverages
    t: int = 0

    @classmethod
    def initial(cls, D: int, L: int, init_scale: float = 1.0) -> "OptimizerState":
        w = VariationalParams(np.zeros(D), init_scale * np.eye(D))
        return cls(w, np.zeros(w.d), MomentAverages.empty(L))


@dataclass
class IterationRecord:
    t: int
    elbo: float
    grad_sq_norm: float
    weight_norm: float
    ms: float | None = None


@dataclass
class Trace:
    """Per-iteration records of one run plus divergence bookkeeping."""

    config: RunConfig
    initial_elbo: float
    records: list = field(default_factory=list)
    aborted: str | None = None
    rp2_skipped: list = field(default_factory=list)

    @property
    def final_elbo(self) -> float:
        return self.records[-1].elbo if self.records else math.nan

    @property
    def diverged(self) -> bool:
        """Non-finite, aborted, or an ELBO below ten times its starting value."""
        if self.aborted is not None:
            return True
        elbos = np.array([r.elbo for r in self.records])
        return bool(np.any(~np.isfinite(elbos)) or np.any(elbos < 10.0 * self.initial_elbo))


def sgd_momentum_step(
    state: OptimizerState, ghat: NDArray, lr: float, beta: float, shrink_limit: float = SHRINK_LIMIT
) -> OptimizerState:
    """Heavy-ball ascent: ``v <- beta v + g``, ``w <- w + lr v``.

    Diagonal entries of ``L`` may shrink by at most the factor
    ``shrink_limit`` in one step (and never below ``DIAG_FLOOR``); where that
    bound binds, the entry is held at the bound and its velocity is zeroed.
    ``shrink_limit=0`` reduces this to plain flooring at ``DIAG_FLOOR``.
    """
    ghat = np.asarray(ghat, dtype=float)
    if ghat.shape != state.velocity.shape:
        raise ValueError(f"gradient shape {ghat.shape} != {state.velocity.shape}")
    velocity = beta * state.velocity + ghat
    old = state.params.to_flat()
    flat = old + lr * velocity
    if not (np.all(np.isfinite(velocity)) and np.all(np.isfinite(flat))):
        raise NonFinite(f"non-finite update at iteration {state.t + 1}")
    D = state.params.D
    slots = diag_slots(D)
    bound = np.maximum(shrink_limit * old[slots], DIAG_FLOOR)
    hit = flat[slots] < bound
    if np.any(hit):
        flat[slots[hit]] = bound[hit]
        velocity[slots[hit]] = 0.0
    w = VariationalParams.projected(*unflatten(flat, D))
    return replace(state, params=w, velocity=velocity, t=state.t + 1)


def diag_slots(D: int) -> NDArray:
    """Positions of ``L_ii`` in the flat parameter vector."""
    i = np.arange(D)
    return D + i * (i + 1) // 2 + i


def gradient_batch(w: VariationalParams, pairs: Pairs, ds: Dataset, cv_set, local_reparam: bool = False):
    """Base gradients ``(B, d)`` and control-variate matrices ``(B, d, L)`` on shared pairs."""
    h = base_gradient(w, pairs, ds, local_reparam)
    C = evaluate_cv_set(cv_set, w, pairs, ds)
    return h, C


def run_inference(cfg: RunConfig, ds: Dataset) -> Trace:
    """Run SGD with momentum on the N-normalized ELBO.

    Per iteration: draw pairs, evaluate ``h`` and ``C``, choose weights from
    the averages of the *previous* iteration (zero at the first), step on the
    mean of ``h_b + C_b a``, then fold this iteration's moments into the
    averages. The ELBO is re-estimated on full data after every step and
    reported multiplied by N.
    """
    cv_set = cfg.cv_set
    state = OptimizerState.initial(ds.D, len(cv_set), cfg.init_scale)
    d = state.params.d
    initial = ds.N * elbo_estimate(state.params, ds, cfg.elbo_samples, keyed_rng(cfg.seed, STREAM_ELBO, 0))
    trace = Trace(cfg, initial)
    for t in range(1, cfg.iterations + 1):
        start = time.perf_counter()
        w = state.params
        pairs = draw_pairs(keyed_rng(cfg.seed, STREAM_PAIRS, t), ds, cfg.batch_size)
        ghat = a = None
        try:
            h = base_gradient(w, pairs, ds, cfg.local_reparam)
            if cfg.rp2_fallback:
                C, skipped = evaluate_cv_set(cv_set, w, pairs, ds, rp2_fallback=True)
                if skipped:
                    trace.rp2_skipped.append(t)
            else:
                C = evaluate_cv_set(cv_set, w, pairs, ds)
            if state.moments.t == 0:
                a = np.zeros(len(cv_set))
            else:
                a = bayes_weights(state.moments, cfg.v0, d)
            ghat = combine(h, C, a).mean(axis=0)
            moments = update_moment_averages(state.moments, *batch_moments(C, h), cfg.gamma, cfg.batch_size)
            state = sgd_momentum_step(replace(state, moments=moments), ghat, cfg.lr, cfg.momentum)
        except (NonFinite, Singular, SingularMoments) as exc:
            gsq = math.nan if ghat is None else float(ghat @ ghat)
            anorm = math.nan if a is None else float(np.linalg.norm(a))
            trace.records.append(IterationRecord(t, math.nan, gsq, anorm))
            trace.aborted = f"iteration {t}: {type(exc).__name__}: {exc}"
            break
        elbo = ds.N * elbo_estimate(state.params, ds, cfg.elbo_samples, keyed_rng(cfg.seed, STREAM_ELBO, t))
        ms = (time.perf_counter() - start) * 1e3 if cfg.timing else None
        trace.records.append(IterationRecord(t, elbo, float(ghat @ ghat), float(np.linalg.norm(a)), ms))
        if not math.isfinite(elbo):
            trace.aborted = f"non-finite ELBO at iteration {t}"
            break
    return trace


def draw_iid_pairs(rng: np.random.Generator, ds: Dataset, M: int) -> Pairs:
    """``M`` independent pairs (examples drawn with replacement)."""
    idx = rng.integers(ds.N, size=M)
    eps = sample_noise(rng, ds.D, M)
    return Pairs(idx, eps)


@dataclass
class ProbeResult:
    """Squared norms of the combined gradient on the outer pairs, one row per repetition.

    ``baseline`` holds ``|h|^2`` on the same pairs.
    """

    values: NDArray
    baseline: NDArray

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def stderr(self) -> float:
        per_rep = self.values.mean(axis=1)
        if per_rep.size < 2:
            return math.nan
        return float(per_rep.std(ddof=1) / math.sqrt(per_rep.size))


def variance_probe(
    w: VariationalParams,
    ds: Dataset,
    cv_set,
    M: int,
    v0: float,
    n_outer: int,
    n_rep: int = 1,
    seed: int = 0,
    w_moments: VariationalParams | None = None,
    local_reparam: bool = False,
) -> ProbeResult:
    """Estimate ``E|h + C a|^2`` at fixed ``w`` with ``a`` learned from ``M`` independent pairs.

    Stage one evaluates ``M`` pairs (at ``w_moments``, default ``w``) and
    forms the regularized weights with ``M`` as the sample count; stage two
    evaluates ``n_outer`` fresh pairs at ``w``. Repeating ``n_rep`` times
    integrates out the moment-estimation noise.
    """
    cv_set = resolve_cv_set(cv_set)
    w_moments = w if w_moments is None else w_moments
    values = np.empty((n_rep, n_outer))
    baseline = np.empty((n_rep, n_outer))
    for r in range(n_rep):
        rng = keyed_rng(seed, r)
        inner = draw_iid_pairs(rng, ds, M)
        outer = draw_iid_pairs(rng, ds, n_outer)
        h_in, C_in = gradient_batch(w_moments, inner, ds, cv_set, local_reparam)
        CC, Ch = batch_moments(C_in, h_in)
        a = bayes_weights(MomentAverages(CC, Ch, 1, float(M)), v0, w.d)
        h, C = gradient_batch(w, outer, ds, cv_set, local_reparam)
        g = combine(h, C, a)
        values[r] = np.sum(g * g, axis=1)
        baseline[r] = np.sum(h * h, axis=1)
    return ProbeResult(values, baseline)


def warmup_path(ds: Dataset, iterations: int = 25, lr: float = 0.08, beta: float = 0.9, n_samples: int = 256, seed: int = 0):
    """Parameters visited by SGD with a many-sample base gradient, starting from the standard init.

    Returns the list ``[w_0, w_1, ..., w_iterations]``.
    """
    state = OptimizerState.initial(ds.D, 0)
    path = [state.params]
    for t in range(1, iterations + 1):
        pairs = draw_iid_pairs(keyed_rng(seed, STREAM_INIT, t), ds, n_samples)
        g = base_gradient(state.params, pairs, ds).mean(axis=0)
        state = sgd_momentum_step(state, g, lr, beta)
        path.append(state.params)
    return path


@dataclass
class SensitivityRow:
    v0: float
    M: int
    lag: int
    grad_sq_norm_mean: float
    stderr: float


def sensitivity_sweep(
    ds: Dataset,
    cv_set,
    v0_grid,
    M_grid,
    lags=(0,),
    n_rep: int = 100,
    n_outer: int = 50,
    seed: int = 0,
    warmup_iterations: int = 25,
    warmup_lr: float = 0.08,
    warmup_samples: int = 256,
    beta: float = 0.9,
):
    """Probe ``E|g_hat|^2`` over a ``(lag, M, v0)`` grid at a warm-started point.

    The probe point is the iterate after ``warmup_iterations`` steps of a
    low-variance SGD run; a lagged cell estimates the moments at the iterate
    ``lag`` steps earlier. Repetition ``r`` uses the same pairs in every cell
    (nested prefixes of one pool for the moment stage), so cells are paired.
    Returns ``(rows, samples)`` where ``samples[(v0, M, lag)]`` is the
    per-repetition mean squared norm.
    """
    v0_grid = list(v0_grid)
    M_grid = sorted(int(m) for m in M_grid)
    lags = [int(lag) for lag in np.atleast_1d(lags)]
    if not v0_grid or not M_grid or not lags:
        raise ConfigError("sensitivity grids must be non-empty")
    if any(lag < 0 or lag > warmup_iterations for lag in lags):
        raise ConfigError(f"lag must lie in [0, {warmup_iterations}]")
    cv_set = resolve_cv_set(cv_set)
    path = warmup_path(ds, warmup_iterations, warmup_lr, beta, warmup_samples, seed)
    w = path[-1]
    d = w.d
    samples = {(v0, M, lag): np.empty(n_rep) for lag in lags for M in M_grid for v0 in v0_grid}
    for r in range(n_rep):
        rng = keyed_rng(seed, 1, r)
        pool = draw_iid_pairs(rng, ds, M_grid[-1])
        outer = draw_iid_pairs(rng, ds, n_outer)
        h, C = gradient_batch(w, outer, ds, cv_set)
        for lag in lags:
            h_in, C_in = gradient_batch(path[-1 - lag], pool, ds, cv_set)
            for M in M_grid:
                CC, Ch = batch_moments(C_in[:M], h_in[:M])
                mom = MomentAverages(CC, Ch, 1, float(M))
                for v0 in v0_grid:
                    try:
                        a = bayes_weights(mom, v0, d)
                    except SingularMoments:
                        samples[(v0, M, lag)][r] = math.nan
                        continue
                    g = combine(h, C, a)
                    samples[(v0, M, lag)][r] = np.mean(np.sum(g * g, axis=1))
    rows = []
    for (v0, M, lag), vals in samples.items():
        se = float(vals.std(ddof=1) / math.sqrt(n_rep)) if n_rep > 1 else math.nan
        rows.append(SensitivityRow(v0, M, lag, float(vals.mean()), se))
    return rows, samples
