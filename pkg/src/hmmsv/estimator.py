"""Expectation-maximization fitting, the Schwarz criterion, and order search."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import ModelConfig, ParameterSet, as_array, param_count, reorder_states
from .recursion import (
    StructuralZeroError,
    backward_pass,
    forward_joint_pass,
    log_likelihood,
    state_marginals,
)

_EMPTY_STATE_TOL = 1e-10


class EstimationError(RuntimeError):
    """No EM start produced a usable fit."""


class DegenerateStateWarning(UserWarning):
    """A state lost essentially all posterior weight during an M-step."""


@dataclass(frozen=True)
class EMSettings:
    """Knobs for the EM loop.

    rel_tolerance applies to the relative change of the log-likelihood between
    consecutive iterations. strict_zeros makes the smoothing pass raise on
    structurally impossible configurations instead of assigning them zero
    mass.
    """

    max_iterations: int = 1000
    rel_tolerance: float = 1e-8
    n_starts: int = 10
    seed: int = 0
    strict_zeros: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class ExpectedCounts:
    """Posterior expectations of the state and window indicator variables.

    w_hat[t-1, v-1] is the smoothed probability of state v at occasion t;
    z_hat[t-1] is the flat joint posterior of the trailing window at t.
    """

    w_hat: np.ndarray
    z_hat: tuple[np.ndarray, ...]

    def __post_init__(self):
        w = np.asarray(self.w_hat, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w_hat", w)
        object.__setattr__(self, "z_hat", tuple(self.z_hat))


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters with the log-likelihood path and model criteria."""

    params: ParameterSet
    loglik: float
    npar: int
    bic: float
    trace: np.ndarray
    converged: bool
    start_index: int


def e_step(params: ParameterSet, config: ModelConfig, y, strict: bool = False):
    """Posterior window expectations plus the log-likelihood at the current parameters."""
    y_arr = as_array(y)
    slices = backward_pass(params, config, y_arr, strict=strict)
    joints = forward_joint_pass(slices, config)
    w_hat = state_marginals(joints)
    ll = log_likelihood(params, config, y_arr, slices)
    return ExpectedCounts(w_hat=w_hat, z_hat=tuple(j.values for j in joints)), ll


def _normalize_rows(z: np.ndarray, k: int) -> np.ndarray:
    """Row-normalize counts; rows with no mass become uniform."""
    totals = z.sum(axis=1, keepdims=True)
    return np.divide(z, totals, out=np.full_like(z, 1.0 / k), where=totals > 0)


def m_step(
    counts: ExpectedCounts, y, config: ModelConfig, prev: ParameterSet | None = None
) -> ParameterSet:
    """Closed-form update from the expected counts.

    Volatilities become weighted root mean squares of the observations;
    transition rows are the normalized expected window counts, pooling all
    homogeneous occasions. A state with no posterior weight keeps its previous
    volatility (prev required) under a DegenerateStateWarning; conditioning
    rows that were never visited become uniform.
    """
    y_arr = as_array(y)
    k, h = config.k, config.h
    T = y_arr.size
    w = counts.w_hat
    totals = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma = np.sqrt((w.T @ (y_arr * y_arr)) / totals)
    dead = ~((totals > _EMPTY_STATE_TOL) & np.isfinite(sigma) & (sigma > 1e-12))
    if dead.any():
        labels = ", ".join(str(v + 1) for v in np.nonzero(dead)[0])
        warnings.warn(f"state(s) {labels} received no posterior weight", DegenerateStateWarning, stacklevel=2)
        if prev is None:
            raise EstimationError(f"degenerate state(s) {labels} with no previous volatilities to keep")
        sigma = np.where(dead, prev.sigma, sigma)

    early = []
    for t in range(1, h + 1):
        if t <= T:
            z = np.asarray(counts.z_hat[t - 1]).reshape(k ** (t - 1), k)
        else:
            z = np.zeros((k ** (t - 1), k))
        early.append(_normalize_rows(z, k))
    if T > h:
        pooled = np.sum(np.stack([np.asarray(z) for z in counts.z_hat[h:]]), axis=0)
    else:
        pooled = np.zeros(k ** (h + 1))
    pi = _normalize_rows(pooled.reshape(k**h, k), k)
    return ParameterSet(early=tuple(early), pi=pi, sigma=sigma)


def _initial_parameters(config: ModelConfig, y_arr, rng, quantile_start: bool) -> ParameterSet:
    """Quantile-banded volatilities with persistence-biased rows, or a fully
    random draw for the extra starts."""
    k, h = config.k, config.h
    scale = float(np.std(y_arr))
    if not scale > 0:
        scale = max(float(np.abs(y_arr).max()), 1.0)
    floor = 1e-3 * scale
    if quantile_start:
        # the median of |N(0, s)| is 0.6745 s, so each band lands near the
        # volatility that would generate it
        probs = (2.0 * np.arange(1, k + 1) - 1.0) / (2.0 * k)
        sigma = np.quantile(np.abs(y_arr), probs) / 0.6745
    else:
        sigma = np.sort(scale * np.exp(rng.uniform(np.log(0.25), np.log(4.0), size=k)))
    sigma = np.maximum(sigma, floor)

    def draw_table(n_rows: int, biased: bool) -> np.ndarray:
        table = np.empty((n_rows, k))
        for r in range(n_rows):
            row = rng.dirichlet(np.ones(k))
            if biased and k > 1:
                row = 0.2 * row
                row[r % k] += 0.8
            table[r] = row
        return table

    early = tuple(draw_table(k**i, biased=quantile_start and i > 0) for i in range(h))
    pi = draw_table(k**h, biased=quantile_start)
    return ParameterSet(early=early, pi=pi, sigma=sigma)


def _run_em(params: ParameterSet, config: ModelConfig, y_arr, settings: EMSettings):
    trace: list[float] = []
    ll_prev = None
    converged = False
    counts = None
    for _ in range(settings.max_iterations):
        counts, ll = e_step(params, config, y_arr, strict=settings.strict_zeros)
        trace.append(ll)
        if ll_prev is not None and abs(ll - ll_prev) <= settings.rel_tolerance * max(1.0, abs(ll_prev)):
            converged = True
            break
        ll_prev = ll
        params = m_step(counts, y_arr, config, prev=params)
    else:
        counts, ll = e_step(params, config, y_arr, strict=settings.strict_zeros)
        trace.append(ll)
    if np.any(counts.w_hat.sum(axis=0) < _EMPTY_STATE_TOL):
        converged = False
    return params, np.asarray(trace), converged


def fit(config: ModelConfig, y, settings: EMSettings | None = None) -> FitResult:
    """Best-of-several-starts EM estimate with its trace and criteria.

    The first start pins volatilities to quantile bands of |y| and biases
    transition rows toward persistence; remaining starts are random. States in
    the returned parameters are relabeled so volatilities ascend.
    """
    settings = settings if settings is not None else EMSettings()
    y_arr = as_array(y)
    T = y_arr.size
    npar = param_count(config)
    n_starts = 1 if config.k == 1 else settings.n_starts

    best = None
    failures: list[str] = []
    for s in range(n_starts):
        rng = np.random.default_rng([settings.seed, s])
        start = _initial_parameters(config, y_arr, rng, quantile_start=(s == 0))
        try:
            params, trace, converged = _run_em(start, config, y_arr, settings)
        except (EstimationError, StructuralZeroError) as exc:
            failures.append(f"start {s}: {exc}")
            continue
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], s, params, trace, converged)
    if best is None:
        raise EstimationError("all starts failed: " + "; ".join(failures))
    ll, start_index, params, trace, converged = best
    order = np.argsort(params.sigma, kind="stable") + 1
    return FitResult(
        params=reorder_states(params, order),
        loglik=float(ll),
        npar=npar,
        bic=bic(float(ll), npar, T),
        trace=trace,
        converged=converged,
        start_index=start_index,
    )


def bic(loglik: float, npar: int, T: int) -> float:
    """Schwarz criterion -2 loglik + npar ln T; smaller is better."""
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    return -2.0 * loglik + npar * math.log(T)


@dataclass(frozen=True)
class GridSearchResult:
    """Per-cell fits over the (h, k) grid and the selected order."""

    results: dict[tuple[int, int], FitResult]
    errors: dict[tuple[int, int], str]
    selected: tuple[int, int]

    @property
    def best(self) -> FitResult:
        return self.results[self.selected]


def grid_search(y, h_values, k_values, settings: EMSettings | None = None) -> GridSearchResult:
    """Fit every (h, k) cell and pick the smallest BIC; ties favor the smaller cell.

    A failing cell is recorded under errors and skipped rather than aborting
    the whole search.
    """
    hs = sorted({int(v) for v in h_values})
    ks = sorted({int(v) for v in k_values})
    if not hs or not ks:
        raise ValueError("h and k grids must be non-empty")
    y_arr = as_array(y)
    results: dict[tuple[int, int], FitResult] = {}
    errors: dict[tuple[int, int], str] = {}
    selected = None
    best_bic = math.inf
    for h in hs:
        for k in ks:
            try:
                res = fit(ModelConfig(k=k, h=h), y_arr, settings)
            except Exception as exc:  # cells are independent; keep going
                errors[(h, k)] = str(exc)
                continue
            results[(h, k)] = res
            if res.bic < best_bic:
                best_bic = res.bic
                selected = (h, k)
    if selected is None:
        raise EstimationError("every grid cell failed: " + "; ".join(f"{c}: {m}" for c, m in errors.items()))
    return GridSearchResult(results=results, errors=errors, selected=selected)
