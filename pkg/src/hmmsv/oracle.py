"""Reference implementations used to cross-check the peeling engine.

Two independent routes: scaled forward-backward smoothing for first-order
chains, and exact enumeration over all state paths for any order on short
series. The scaled recursions deliberately carry the per-occasion
renormalization that the peeling engine does without.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import ModelConfig, ParameterSet, as_array, emission_matrix
from .recursion import _check_compat

MAX_PATHS = 1_000_000


@dataclass(frozen=True)
class ForwardBackwardTables:
    """Scaled forward/backward tables for a first-order chain.

    forward rows are the normalized filtering distributions and log_scale
    accumulates the per-occasion normalizers, so loglik = log_scale.sum().
    backward is scaled by the same normalizers, which makes
    forward * backward the smoothed marginals without further normalization.
    """

    forward: np.ndarray
    log_scale: np.ndarray
    transition: np.ndarray
    emission: np.ndarray
    backward: np.ndarray | None = None

    @property
    def loglik(self) -> float:
        return float(self.log_scale.sum())


def bw_forward(params: ParameterSet, config: ModelConfig, y) -> ForwardBackwardTables:
    """Scaled filtering recursion; requires h = 1."""
    _check_compat(params, config)
    if config.h != 1:
        raise ValueError("the forward-backward oracle handles first-order chains only")
    y_arr = as_array(y)
    T, k = y_arr.size, config.k
    F = emission_matrix(y_arr, params.sigma)
    fwd = np.empty((T, k))
    log_c = np.empty(T)
    a = params.early[0][0] * F[0]
    for t in range(T):
        if t > 0:
            a = (fwd[t - 1] @ params.pi) * F[t]
        c = a.sum()
        if not c > 0:
            raise ValueError(f"zero forward mass at occasion {t + 1}")
        fwd[t] = a / c
        log_c[t] = np.log(c)
    return ForwardBackwardTables(
        forward=fwd, log_scale=log_c, transition=np.array(params.pi), emission=F
    )


def bw_backward(params: ParameterSet, config: ModelConfig, y) -> ForwardBackwardTables:
    """Complete scaled tables: forward pass plus the matching backward pass."""
    tables = bw_forward(params, config, y)
    T, k = tables.emission.shape
    c = np.exp(tables.log_scale)
    back = np.empty((T, k))
    back[T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        back[t] = (tables.transition @ (tables.emission[t + 1] * back[t + 1])) / c[t + 1]
    return replace(tables, backward=back)


def bw_posteriors(tables: ForwardBackwardTables):
    """Smoothed marginals (T, k) and consecutive-pair posteriors (T-1, k, k)."""
    if tables.backward is None:
        raise ValueError("complete tables required; run bw_backward first")
    marginals = tables.forward * tables.backward
    T, k = marginals.shape
    pairwise = np.empty((T - 1, k, k))
    c = np.exp(tables.log_scale)
    for t in range(T - 1):
        pairwise[t] = (
            tables.forward[t][:, None]
            * tables.transition
            * (tables.emission[t + 1] * tables.backward[t + 1])[None, :]
            / c[t + 1]
        )
    return marginals, pairwise


def _logsumexp(values: np.ndarray) -> float:
    flat = values.reshape(-1)
    m = float(flat.max())
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.exp(flat - m).sum()))


@dataclass(frozen=True)
class BruteForceResult:
    """Exact log-likelihood and path posterior from exhaustive enumeration."""

    loglik: float
    posterior: np.ndarray | None
    T: int
    k: int

    def window_posterior(self, times) -> np.ndarray:
        """Joint posterior over the given 1-based occasions (ascending), flattened
        in lexicographic order with the latest occasion fastest."""
        ts = [int(t) for t in times]
        if not ts or ts != sorted(set(ts)) or ts[0] < 1 or ts[-1] > self.T:
            raise ValueError(f"occasions {times!r} must be distinct, ascending, within 1..{self.T}")
        if self.posterior is None:
            return np.ones((1,) * len(ts)).reshape(-1)
        keep = set(ts)
        drop = tuple(ax for ax in range(self.T) if ax + 1 not in keep)
        out = self.posterior.sum(axis=drop) if drop else self.posterior
        return np.asarray(out).reshape(-1).copy()


def brute_force_joint(params: ParameterSet, config: ModelConfig, y) -> BruteForceResult:
    """Exact likelihood and posteriors by enumerating all k**T state paths.

    Works for any chain order; guarded to at most one million paths. The joint
    builds on the log scale, so structurally impossible paths and long
    products are handled exactly.
    """
    _check_compat(params, config)
    y_arr = as_array(y)
    T, k, h = y_arr.size, config.k, config.h
    if k**T > MAX_PATHS:
        raise ValueError(f"instance too large: {k}**{T} paths exceed {MAX_PATHS}")
    logF = np.log(emission_matrix(y_arr, params.sigma))
    if k == 1:
        return BruteForceResult(
            loglik=float(logF.sum()),
            posterior=np.ones((1,) * T) if T <= 32 else None,
            T=T,
            k=1,
        )
    logJ = np.zeros((k,) * T)
    with np.errstate(divide="ignore"):
        for t in range(1, T + 1):
            n_lag = min(t - 1, h)
            table = np.log(params.transition(t))
            shape = (1,) * (t - 1 - n_lag) + (k,) * (n_lag + 1) + (1,) * (T - t)
            logJ = logJ + table.reshape(shape)
            logJ = logJ + logF[t - 1].reshape((1,) * (t - 1) + (k,) + (1,) * (T - t))
    total = _logsumexp(logJ)
    if not np.isfinite(total):
        raise ValueError("all state paths carry zero probability")
    posterior = np.exp(logJ - total)
    return BruteForceResult(loglik=total, posterior=posterior, T=T, k=k)
