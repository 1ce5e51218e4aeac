"""Critical values: exact Poisson and binomial quantiles, Monte Carlo quantiles,
Bonferroni and min-p level corrections, closed-form quantile bounds, and a
persistent store for calibrated values.

Monte Carlo conventions
-----------------------
* The empirical ``u``-quantile of a pool of ``B`` values is the order statistic of
  rank ``ceil(u B)`` (right-continuous inverse).
* A per-window upper threshold at individual level ``u`` is the order statistic
  of rank ``ceil((1 - u) B)``; a window rejects when its statistic is strictly
  larger.
* Pools are drawn in fixed-size chunks, each from its own substream, so a value
  depends only on ``(query, B, seed)``.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import warnings
import zlib
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np

from . import _kernels, _rng
from .errors import (
    BudgetExceededError,
    CalibrationFailureError,
    InvalidParameterError,
    UnsupportedParameterError,
)
from .families import WindowGrid
from .statistics import (
    lin_cond_counts,
    lin_known_counts,
    quad_cond_counts,
    quad_known_counts,
    shifted_cond_counts,
    shifted_known_counts,
)

STORE_VERSION = 1
CHUNK = 10_000
DEFAULT_BUDGET = 5e9  # uniform draws per conditional pool
MINP_TOL = 1e-6
MINP_MAX_ITER = 40


class LowReplicationWarning(UserWarning):
    """A Monte Carlo quantile was requested with fewer replicates than advised."""


# -- exact discrete quantiles -----------------------------------------------------


def _check_level(u: float, name: str = "u") -> float:
    if not (0 < u < 1):
        raise InvalidParameterError(f"{name} must lie in (0, 1), got {u!r}")
    return float(u)


def poisson_pmf_window(xi: float) -> tuple[int, np.ndarray]:
    """``(k0, pmf)`` with ``pmf[i] = P(Poisson(xi) = k0 + i)`` over a window holding
    all but ~1e-15 of the mass.

    The pmf is built by multiplying ratios outward from the mode, which stays
    accurate where the direct formula would under- or overflow.
    """
    if not (math.isfinite(xi) and xi > 0):
        raise InvalidParameterError(f"Poisson parameter must be positive, got {xi!r}")
    if xi > 1e9:
        raise UnsupportedParameterError(f"Poisson parameter {xi:g} exceeds the supported 1e9")
    mode = int(math.floor(xi))
    width = int(math.ceil(10 * math.sqrt(xi) + 40))
    k0 = max(0, mode - width)
    k1 = mode + width
    log_mode = mode * math.log(xi) - xi - math.lgamma(mode + 1)
    up = np.arange(mode + 1, k1 + 1)
    down = np.arange(mode, k0, -1)  # k such that p_{k-1} = p_k * k / xi
    log_up = log_mode + np.cumsum(np.log(xi / up))
    log_down = log_mode + np.cumsum(np.log(down / xi))
    pmf = np.exp(np.concatenate([log_down[::-1], [log_mode], log_up]))
    # lgamma at the mode loses ~1e-8 relative accuracy near 1e8; the window mass is 1 - 1e-15.
    return k0, pmf / pmf.sum()


def _quantile_index(cdf: np.ndarray, u: float) -> int:
    i = int(np.searchsorted(cdf, u, side="left"))
    return min(i, cdf.size - 1)


def poisson_quantile(xi: float, u: float) -> int:
    """Smallest ``k`` with ``P(Poisson(xi) <= k) >= u``."""
    _check_level(u)
    k0, pmf = poisson_pmf_window(xi)
    return k0 + _quantile_index(np.cumsum(pmf), u)


@dataclass(frozen=True)
class DiscreteQuantile:
    """Quantile atom ``k`` of a discrete law and its randomization weights.

    ``gamma_minus = (u - P(Y < k)) / P(Y = k)`` and ``gamma_plus = 1 - gamma_minus``.
    """

    k: int
    gamma_minus: float
    gamma_plus: float


def _atom(k0: int, pmf: np.ndarray, u: float) -> DiscreteQuantile:
    cdf = np.cumsum(pmf)
    i = _quantile_index(cdf, u)
    below = cdf[i - 1] if i > 0 else 0.0
    gm = (u - below) / pmf[i] if pmf[i] > 0 else 1.0
    gm = min(1.0, max(0.0, float(gm)))
    return DiscreteQuantile(int(k0 + i), gm, 1.0 - gm)


def poisson_randomization(xi: float, u: float) -> DiscreteQuantile:
    _check_level(u)
    return _atom(*poisson_pmf_window(xi), u)


def binomial_pmf(n: int, p: float) -> np.ndarray:
    """Exact ``P(Bin(n, p) = k)`` for ``k = 0..n`` via log-ratio recursion."""
    if n < 0 or int(n) != n:
        raise InvalidParameterError(f"n must be a nonnegative integer, got {n!r}")
    if not (0 < p < 1):
        raise InvalidParameterError(f"p must lie in (0, 1), got {p!r}")
    n = int(n)
    if n == 0:
        return np.ones(1)
    ks = np.arange(n + 1)
    logc = np.concatenate([[0.0], np.cumsum(np.log((n - ks[:-1]) / ks[1:]))])
    logp = logc + ks * math.log(p) + (n - ks) * math.log1p(-p)
    return np.exp(logp)


def binomial_quantile(n: int, p: float, u: float) -> DiscreteQuantile:
    """``b`` = smallest ``k`` with ``P(Bin(n, p) <= k) >= u``, with its weights."""
    _check_level(u)
    return _atom(0, binomial_pmf(n, p), u)


# -- Monte Carlo quantiles --------------------------------------------------------

_WINDOW_STATS = ("lin", "abs_lin", "quad", "shifted")
_SAMPLE_STATS = ("max_count", "min_count", "sup_length", "sup_location")
_STATS = _WINDOW_STATS + _SAMPLE_STATS + ("sum_uniform",)


@dataclass(frozen=True)
class QuantileQuery:
    """One Monte Carlo quantile request.

    ``regime`` is ``"known"`` (homogeneous process at ``lambda0`` on scale ``L``)
    or ``"cond"`` (``n`` i.i.d. uniform points, scale ``L``).
    """

    statistic: str
    regime: str
    u: float
    L: float
    lambda0: float | None = None
    n: int | None = None
    window: tuple[float, float] | None = None
    ell: float | None = None
    tau_star: float | None = None
    delta_star: float | None = None
    B: int = 200_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.statistic not in _STATS:
            raise InvalidParameterError(f"unknown statistic {self.statistic!r}")
        _check_level(self.u)
        if self.B < 1:
            raise InvalidParameterError("B must be at least 1")
        if not (math.isfinite(self.L) and self.L > 0):
            raise InvalidParameterError("L must be positive")
        if self.regime == "known":
            if not (self.lambda0 is not None and self.lambda0 > 0):
                raise InvalidParameterError("known regime needs lambda0 > 0")
            if self.statistic == "sum_uniform":
                raise InvalidParameterError("sum_uniform is a conditional statistic")
        elif self.regime == "cond":
            if self.n is None or self.n < 0 or int(self.n) != self.n:
                raise InvalidParameterError("conditional regime needs an integer n >= 0")
        else:
            raise InvalidParameterError(f"regime must be 'known' or 'cond', got {self.regime!r}")
        if self.statistic in _WINDOW_STATS:
            if self.window is None:
                raise InvalidParameterError(f"{self.statistic} needs a window")
            a, b = self.window
            if not (0 <= a < b <= 1):
                raise InvalidParameterError(f"bad window {self.window!r}")
            if self.statistic == "quad" and self.regime == "cond" and b - a >= 1:
                raise InvalidParameterError("T' needs a window shorter than [0, 1]")
        if self.statistic in ("max_count", "min_count") and not (self.ell and 0 < self.ell <= 1):
            raise InvalidParameterError("count scans need ell in (0, 1]")
        if self.statistic in ("shifted", "sup_length", "sup_location") and not self.delta_star:
            raise InvalidParameterError("shifted statistics need a nonzero delta_star")
        if self.statistic == "sup_length" and not (self.tau_star is not None and 0 < self.tau_star < 1):
            raise InvalidParameterError("sup_length needs tau_star in (0, 1)")

    def pool_key(self) -> dict:
        """Everything that determines the replicate pool (the level is excluded)."""
        d = {
            "statistic": self.statistic,
            "regime": self.regime,
            "L": self.L,
            "lambda0": self.lambda0 if self.regime == "known" else None,
            "n": self.n if self.regime == "cond" else None,
            "window": list(self.window) if self.window else None,
            "ell": self.ell,
            "tau_star": self.tau_star,
            "delta_star": self.delta_star,
            "B": self.B,
            "seed": self.seed,
        }
        return d

    def canonical(self) -> dict:
        return {**self.pool_key(), "u": self.u}


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(obj) -> str:
    return hashlib.sha256(_canon(obj).encode()).hexdigest()


def _stream_key(obj) -> int:
    return zlib.crc32(_canon(obj).encode())


def _chunks(B: int) -> Iterable[tuple[int, int]]:
    for c, start in enumerate(range(0, B, CHUNK)):
        yield c, min(CHUNK, B - start)


def _rank_upper(u: float, B: int) -> int:
    """``ceil((1 - u) B)`` computed as ``B - floor(u B)`` to dodge rounding."""
    return B - math.floor(u * B + 1e-9)


def _rank_lower(u: float, B: int) -> int:
    """``ceil(u B)``, at least 1."""
    return max(1, math.ceil(u * B - 1e-9))


def _warn_small(B: int) -> None:
    if B < 100:
        warnings.warn(f"B={B} replicates is far too few for a quantile", LowReplicationWarning, stacklevel=3)
    elif B < 10_000:
        warnings.warn(f"B={B} replicates is below the advised 10,000", LowReplicationWarning, stacklevel=3)


def _check_budget(B: int, n: int, budget: float) -> None:
    if B * max(n, 1) > budget:
        raise BudgetExceededError(f"pool of {B} samples with n={n} points exceeds the budget of {budget:g} draws")


def padded_rows(rng: np.random.Generator, sizes: np.ndarray) -> np.ndarray:
    """Rows of sorted uniforms; entries past ``sizes[b]`` are padded with 2.0."""
    width = int(sizes.max()) if sizes.size else 0
    pts = rng.random((sizes.size, max(width, 1)))
    pts[np.arange(max(width, 1))[None, :] >= sizes[:, None]] = 2.0
    pts.sort(axis=1)
    return pts


def statistic_pool(query: QuantileQuery, budget: float = DEFAULT_BUDGET) -> np.ndarray:
    """The ``B`` null replicates of the query's statistic (unsorted)."""
    q = query
    if q.regime == "cond":
        _check_budget(q.B, q.n, budget)
    return _cached_pool(replace(q, u=0.5)).copy()


@lru_cache(maxsize=8)
def _cached_pool(q: QuantileQuery) -> np.ndarray:
    key = _stream_key(q.pool_key())
    out = np.empty(q.B)
    pos = 0
    for c, size in _chunks(q.B):
        rng = _rng.generator(q.seed, _rng.CALIBRATE, key, c)
        out[pos : pos + size] = _chunk_values(q, rng, size)
        pos += size
    return out


def _chunk_values(q: QuantileQuery, rng: np.random.Generator, size: int) -> np.ndarray:
    cond = q.regime == "cond"
    if q.statistic == "sum_uniform":
        if q.n == 0:
            return np.zeros(size)
        return rng.random((size, q.n)).sum(axis=1)
    if q.statistic in _WINDOW_STATS:
        a, b = q.window
        rho = b - a
        if cond:
            x = rng.binomial(q.n, rho, size) if q.n > 0 else np.zeros(size, np.int64)
            return _window_stat(q, x, rho)
        x = rng.poisson(q.lambda0 * q.L * rho, size)
        return _window_stat(q, x, rho)
    sizes = np.full(size, q.n, np.int64) if cond else rng.poisson(q.lambda0 * q.L, size)
    pts = padded_rows(rng, sizes)
    lam = 0.0 if cond else float(q.lambda0)
    if q.statistic == "max_count":
        return _kernels.rows_window_max(pts, sizes, q.ell).astype(float)
    if q.statistic == "min_count":
        return _kernels.rows_window_min(pts, sizes, q.ell).astype(float)
    if q.statistic == "sup_length":
        return _kernels.rows_sup_length(pts, sizes, q.tau_star, q.delta_star, lam, q.L, cond)
    return _kernels.rows_sup_location(pts, sizes, q.delta_star, lam, q.L, cond)


def _window_stat(q: QuantileQuery, x: np.ndarray, rho: float) -> np.ndarray:
    if q.regime == "cond":
        if q.statistic == "lin":
            return lin_cond_counts(x, rho, q.n).astype(float)
        if q.statistic == "abs_lin":
            return np.abs(lin_cond_counts(x, rho, q.n)).astype(float)
        if q.statistic == "quad":
            return quad_cond_counts(x, q.n - x, rho, q.L)
        return shifted_cond_counts(x, rho, q.n, q.L, q.delta_star).astype(float)
    if q.statistic == "lin":
        return lin_known_counts(x, rho, q.lambda0, q.L).astype(float)
    if q.statistic == "abs_lin":
        return np.abs(lin_known_counts(x, rho, q.lambda0, q.L)).astype(float)
    if q.statistic == "quad":
        return quad_known_counts(x, rho, q.lambda0, q.L)
    return shifted_known_counts(x, rho, q.lambda0, q.L, q.delta_star).astype(float)


def order_statistic(values: np.ndarray, rank: int) -> float:
    """The ``rank``-th smallest entry (1-based)."""
    return float(np.partition(values, rank - 1)[rank - 1])


def mc_quantile(query: QuantileQuery, store: "CriticalValueStore | None" = None, budget: float = DEFAULT_BUDGET) -> float:
    """Empirical ``u``-quantile (rank ``ceil(u B)``) of the statistic under the null."""
    fp = quantile_fingerprint(query)
    if store is not None:
        hit = store.lookup(fp)
        if hit is not None:
            return float(hit.values[0])
    _warn_small(query.B)
    pool = statistic_pool(query, budget)
    value = order_statistic(pool, _rank_lower(query.u, query.B))
    if store is not None:
        meta = {"family": query.statistic, "regime": query.regime, "n": query.n, "u": query.u, "B": query.B, "seed": query.seed}
        store.publish(fp, meta, [list(query.window) if query.window else None], [value])
    return value


def quantile_fingerprint(query: QuantileQuery) -> str:
    return fingerprint({"kind": "quantile", **query.canonical()})


# -- level corrections ------------------------------------------------------------


@dataclass(frozen=True)
class LevelCorrection:
    """Individual level ``u`` used for each window of an aggregated test."""

    kind: str  # "bonferroni" or "minp"
    family: str
    size: int
    formula: str
    u: float


def bonferroni_level(family: str, alpha: float, L: float, **params) -> LevelCorrection:
    """Closed-form individual level of a grid family (``alpha`` over the family size)."""
    from .families import window_grid

    _check_level(alpha, "alpha")
    g = window_grid(family, alpha, L, **params)
    return LevelCorrection("bonferroni", family, g.size, g.formula, g.bonferroni)


def grid_values(stat: str, rho, x, *, L: float, lambda0: float | None = None, n: int | None = None) -> np.ndarray:
    """Statistic of a grid window from its count: ``|S|``/``T`` (known) or ``|S'|``/``T'`` (given ``n``).

    Calibration tables and observed samples both go through this function, so a
    threshold and an observed value computed from the same count are identical.
    """
    x = np.asarray(x)
    if n is not None:
        if stat == "lin":
            return np.abs(lin_cond_counts(x, rho, n)).astype(float)
        return quad_cond_counts(x, n - x, rho, L)
    if stat == "lin":
        return np.abs(lin_known_counts(x, rho, lambda0, L)).astype(float)
    return quad_known_counts(x, rho, lambda0, L)


class WindowPool:
    """Null replicates of a finite window family, reduced to per-window ranks.

    Windows are cut into elementary cells at every endpoint.  Under the known
    baseline the cell counts are independent Poisson variables; under
    conditioning on ``n`` they come from ``n`` uniform points.  A first pass
    builds per-window histograms of the window counts; from those every count
    ``x`` of window ``j`` gets its rank ``c_j(x)``, the number of pool values of
    the window statistic strictly below ``f_j(x)``.  A window rejects at level
    ``u`` exactly when ``c_j(x) >= ceil((1-u)B)``, so the family rejects
    replicate ``b`` when ``C_b = max_j c_j(X_bj)`` reaches that rank.
    """

    def __init__(
        self,
        grid: WindowGrid,
        stat: str,
        *,
        L: float,
        B: int,
        seed: int,
        key: int,
        lambda0: float | None = None,
        n: int | None = None,
        validate: bool = False,
        budget: float = DEFAULT_BUDGET,
    ) -> None:
        self.grid, self.stat, self.L, self.B, self.seed, self.key = grid, stat, L, B, seed, key
        self.lambda0, self.n = lambda0, n
        self.cond = n is not None
        if self.cond:
            _check_budget(B, n, budget)
        bp = np.unique(np.concatenate([[0.0, 1.0], grid.lo, grid.hi]))
        self.breaks = bp
        self.lo_idx = np.searchsorted(bp, grid.lo).astype(np.int64)
        self.hi_idx = np.searchsorted(bp, grid.hi).astype(np.int64)
        if self.cond:
            self.cap = int(n)
        else:
            mean = lambda0 * L
            self.cap = int(mean + 12 * math.sqrt(mean) + 40)
        self.table = self.values(np.arange(self.cap + 1)[None, :])  # (m, cap+1)
        self.hist = np.zeros((grid.size, self.cap + 1), np.int64)
        for cells in self._cell_chunks(_rng.CALIBRATE):
            _kernels.cell_hist(cells, self.lo_idx, self.hi_idx, self.hist)
        self.ctab = self._rank_table()
        purpose = _rng.VALIDATE if validate else _rng.CALIBRATE
        self.C = np.empty(B, np.int64)
        pos = 0
        for cells in self._cell_chunks(purpose):
            out = np.empty(cells.shape[0], np.int64)
            _kernels.cell_rank(cells, self.lo_idx, self.hi_idx, self.ctab, out)
            self.C[pos : pos + out.size] = out
            pos += out.size
        self.C.sort()

    def values(self, x: np.ndarray) -> np.ndarray:
        """Window statistics ``f_j(x)``; ``x`` broadcasts against the window axis."""
        rho = (self.grid.hi - self.grid.lo)[:, None]
        return grid_values(self.stat, rho, x, L=self.L, lambda0=self.lambda0, n=self.n)

    def _cell_chunks(self, purpose: int):
        widths = np.diff(self.breaks)
        K = widths.size
        for c, size in _chunks(self.B):
            rng = _rng.generator(self.seed, purpose, self.key, self.n if self.cond else 0, c)
            if not self.cond:
                yield rng.poisson(self.lambda0 * self.L * widths, (size, K))
                continue
            if self.n == 0:
                yield np.zeros((size, K), np.int64)
                continue
            pts = rng.random((size, self.n))
            cell = np.clip(np.searchsorted(self.breaks, pts, side="left") - 1, 0, K - 1)
            flat = (np.arange(size)[:, None] * K + cell).ravel()
            yield np.bincount(flat, minlength=size * K).reshape(size, K)

    def _rank_table(self) -> np.ndarray:
        m, width = self.table.shape
        ctab = np.empty((m, width), np.int64)
        for j in range(m):
            f = self.table[j]
            order = np.argsort(f, kind="stable")
            fs = f[order]
            cum = np.concatenate([[0], np.cumsum(self.hist[j][order])])
            ctab[j] = cum[np.searchsorted(fs, f, side="left")]
        return ctab

    def rejection_rate(self, u: float) -> float:
        """Pool estimate of the family-wise rejection probability at level ``u``."""
        k = _rank_upper(u, self.B)
        return float(self.B - np.searchsorted(self.C, k, side="left")) / self.B

    def thresholds(self, u: float) -> np.ndarray:
        """Per-window order statistic of rank ``ceil((1-u)B)``."""
        k = _rank_upper(u, self.B)
        out = np.empty(self.grid.size)
        for j in range(self.grid.size):
            f = self.table[j]
            order = np.argsort(f, kind="stable")
            cum = np.cumsum(self.hist[j][order])
            i = min(int(np.searchsorted(cum, k, side="left")), f.size - 1)
            out[j] = f[order][i]
        return out

    def minp_level(self, alpha: float, start: float) -> float:
        """Largest ``u`` (to ``MINP_TOL``) with pool rejection rate ``<= alpha``."""
        lo = start if self.rejection_rate(start) <= alpha else 0.0
        if lo == 0.0 and self.rejection_rate(1.0 / (2 * self.B)) > alpha:
            raise CalibrationFailureError("family rejects more than alpha even at the smallest level")
        hi = alpha
        if self.rejection_rate(hi) <= alpha:
            return hi
        for _ in range(MINP_MAX_ITER):
            if hi - lo <= MINP_TOL:
                break
            mid = 0.5 * (lo + hi)
            if self.rejection_rate(mid) <= alpha:
                lo = mid
            else:
                hi = mid
        return lo


@dataclass(frozen=True)
class GridCalibration:
    """Calibrated thresholds of a grid family in one regime."""

    family: str
    lo: np.ndarray
    hi: np.ndarray
    thresholds: np.ndarray
    level: LevelCorrection
    B: int
    seed: int
    n: int | None = None
    pool_rate: float | None = None


def grid_query(
    family: str,
    stat: str,
    grid: WindowGrid,
    *,
    alpha: float,
    L: float,
    correction: str,
    B: int,
    seed: int,
    lambda0: float | None,
    n: int | None,
    validate: bool = False,
) -> dict:
    return {
        "kind": "grid",
        "family": family,
        "stat": stat,
        "windows": [[float(a), float(b)] for a, b in zip(grid.lo, grid.hi)],
        "alpha": alpha,
        "L": L,
        "correction": correction,
        "B": B,
        "seed": seed,
        "lambda0": lambda0,
        "n": n,
        "validate": validate,
    }


def calibrate_grid(
    family: str,
    stat: str,
    grid: WindowGrid,
    *,
    alpha: float,
    L: float,
    correction: str,
    B: int,
    seed: int,
    lambda0: float | None = None,
    n: int | None = None,
    validate: bool = False,
    store: "CriticalValueStore | None" = None,
    allow_compute: bool = True,
    budget: float = DEFAULT_BUDGET,
) -> GridCalibration:
    """Per-window thresholds at the Bonferroni or min-p individual level."""
    from .errors import CalibrationRequiredError

    q = grid_query(
        family, stat, grid, alpha=alpha, L=L, correction=correction, B=B, seed=seed,
        lambda0=lambda0, n=n, validate=validate,
    )
    group = fingerprint(q)
    if store is not None:
        hit = store.lookup(group)
        if hit is not None and hit.values.size == grid.size:
            m = hit.meta
            lvl = LevelCorrection(correction, family, grid.size, m["formula"], m["u"])
            return GridCalibration(family, grid.lo, grid.hi, hit.values, lvl, B, seed, n)
    if not allow_compute:
        regime = f"n={n}" if n is not None else f"lambda0={lambda0}"
        raise CalibrationRequiredError(f"no stored calibration for {family} ({regime}, alpha={alpha}, B={B}, seed={seed})")
    _warn_small(B)
    pool = WindowPool(
        grid, stat, L=L, B=B, seed=seed, key=_stream_key({k: v for k, v in q.items() if k not in ("alpha", "correction", "validate")}),
        lambda0=lambda0, n=n, validate=validate, budget=budget,
    )
    if correction == "bonferroni":
        u = grid.bonferroni
        formula = grid.formula
    elif correction == "minp":
        u = pool.minp_level(alpha, grid.bonferroni)
        formula = "min-p dichotomy"
    else:
        raise InvalidParameterError(f"correction must be 'bonferroni' or 'minp', got {correction!r}")
    th = pool.thresholds(u)
    lvl = LevelCorrection(correction, family, grid.size, formula, u)
    cal = GridCalibration(family, grid.lo, grid.hi, th, lvl, B, seed, n, pool.rejection_rate(u))
    if store is not None:
        meta = {"family": family, "regime": "cond" if n is not None else "known", "n": n, "u": u,
                "formula": formula, "B": B, "seed": seed}
        store.publish(group, meta, grid.windows(), th)
    return cal


def minp_level(
    family: str,
    alpha: float,
    L: float,
    *,
    B: int,
    seed: int,
    lambda0: float | None = None,
    n: int | None = None,
    validate: bool = False,
    **params,
) -> LevelCorrection:
    """Min-p individual level of a grid family, known (``lambda0``) or conditional (``n``)."""
    from .families import family_info, window_grid

    _check_level(alpha, "alpha")
    info = family_info(family)
    grid = window_grid(family, alpha, L, **params)
    cal = calibrate_grid(
        family, info.stat, grid, alpha=alpha, L=L, correction="minp", B=B, seed=seed,
        lambda0=lambda0 if not info.conditional else None, n=n if info.conditional else None, validate=validate,
    )
    return cal.level


# -- closed-form bounds -------------------------------------------------------------


def g_inverse_majorant(x: float) -> float:
    """Upper bound ``2x/3 + sqrt(2x)`` on the inverse of ``(1+x)log(1+x) - x``."""
    return 2 * x / 3 + math.sqrt(2 * x)


def poisson_sandwich(xi: float, u: float) -> tuple[float, float]:
    """Chebyshev bounds ``xi - sqrt(xi/u) <= p_xi(u) <= xi + sqrt(xi/(1-u))``."""
    return xi - math.sqrt(xi / u), xi + math.sqrt(xi / (1 - u))


@dataclass(frozen=True)
class BoundCheck:
    covered: bool
    passed: bool | None = None
    bound: float | None = None
    slack: float | None = None


NOT_COVERED = BoundCheck(False)


def quantile_bound(query: QuantileQuery) -> float | None:
    """Closed-form upper bound on the query's quantile, or None when no bound applies."""
    q = query
    small = 1 - q.u
    if q.window is None:
        return None
    rho = q.window[1] - q.window[0]
    if q.regime == "known" and q.statistic == "quad":
        x = math.log(3 / small) / (q.lambda0 * q.L * rho)
        return 2 * q.lambda0**2 * rho * g_inverse_majorant(x) ** 2
    if q.regime == "known" and q.statistic == "abs_lin":
        mu = q.lambda0 * q.L * rho
        return mu * g_inverse_majorant(math.log(2 / small) / mu)
    if q.regime == "cond" and q.statistic == "abs_lin" and q.window[0] > 0:
        t = math.log(2 / small)
        return 2 * t / 3 + math.sqrt(q.n * rho * (1 - rho)) * math.sqrt(2 * t)
    return None


def bound_check(query: QuantileQuery, mc_value: float) -> BoundCheck:
    """Compare a Monte Carlo quantile with its closed-form upper bound."""
    bound = quantile_bound(query)
    if bound is None:
        return NOT_COVERED
    slack = bound - mc_value
    return BoundCheck(True, slack >= 0, bound, slack)


# -- persistence --------------------------------------------------------------------


@dataclass(frozen=True)
class StoredGroup:
    """Values of one calibrated query (one per window) and the fields they share."""

    meta: dict
    values: np.ndarray


@dataclass
class CriticalValueStore:
    """Calibrated values keyed by query fingerprint, optionally mirrored to JSON lines.

    On disk there is one record per window, each carrying ``version``,
    ``fingerprint``, ``group``, ``family``, ``window``, ``regime``, ``n``, ``u``,
    ``B``, ``seed`` and ``value``.  Records of one calibrated query share a
    ``group`` fingerprint; in memory a group is held as a single array.
    """

    path: Path | None = None
    _groups: dict[str, StoredGroup] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    _SHARED = ("family", "regime", "n", "u", "B", "seed", "formula")

    def __post_init__(self) -> None:
        if self.path is None:
            return
        self.path = Path(self.path)
        if not self.path.exists():
            return
        pending: dict[str, tuple[dict, list[float]]] = {}
        for lineno, line in enumerate(self.path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidParameterError(f"{self.path}:{lineno}: corrupt store record: {exc}") from exc
            if rec.get("version") != STORE_VERSION:
                raise InvalidParameterError(f"{self.path}:{lineno}: unsupported store version {rec.get('version')!r}")
            meta, vals = pending.setdefault(rec["group"], ({k: rec.get(k) for k in self._SHARED}, []))
            vals.append(rec["value"])
        for group, (meta, vals) in pending.items():
            self._groups[group] = StoredGroup(meta, np.array(vals, dtype=float))

    def __len__(self) -> int:
        return sum(g.values.size for g in self._groups.values())

    def __contains__(self, group: str) -> bool:
        return group in self._groups

    def lookup(self, group: str) -> StoredGroup | None:
        return self._groups.get(group)

    def publish(self, group: str, meta: dict, windows: list | None, values) -> StoredGroup:
        """Record a calibrated query; a group that is already present is left as is."""
        values = np.asarray(values, dtype=float).ravel()
        with self._lock:
            if group in self._groups:
                return self._groups[group]
            entry = StoredGroup(dict(meta), values)
            self._groups[group] = entry
            if self.path is not None:
                wins = windows if windows is not None else [None] * values.size
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a") as fh:
                    for i, (w, v) in enumerate(zip(wins, values)):
                        rec = {
                            "version": STORE_VERSION,
                            "fingerprint": fingerprint({"group": group, "index": i}),
                            "group": group,
                            "window": w,
                            **{k: meta.get(k) for k in self._SHARED},
                            "value": float(v),
                        }
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
            return entry
