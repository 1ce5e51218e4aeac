"""Catalogue of detector families: which parameters they need and which windows they scan.

A family is identified by a string such as ``"phi9_10_quad_known"``.  The
``_known`` suffix means a known baseline ``lambda0``; ``_cond`` means an unknown
constant baseline handled by conditioning on the total count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SpecError, UnsupportedScaleError


@dataclass(frozen=True)
class FamilyInfo:
    """Static description of one family.

    ``shape`` is one of ``"np"`` (randomized one-sided test), ``"umpu"``
    (randomized two-sided test), ``"scan"`` (continuum extremum of window counts),
    ``"sup_length"``/``"sup_location"`` (supremum of the shifted statistic) or
    ``"grid"`` (per-window thresholds over a finite window set).
    """

    id: str
    baseline: str
    shape: str
    stat: str | None
    needs: frozenset[str]
    two_sided_scan: bool = False
    accepts_grid: bool = False

    @property
    def conditional(self) -> bool:
        return self.baseline == "cond"

    @property
    def randomized(self) -> bool:
        return self.shape in ("np", "umpu")


def _pair(base: str, shape: str, stat: str | None, needs: set[str], **kw) -> list[FamilyInfo]:
    return [
        FamilyInfo(f"{base}_known", "known", shape, stat, frozenset(needs | {"lambda0"}), **kw),
        FamilyInfo(f"{base}_cond", "cond", shape, stat, frozenset(needs), **kw),
    ]


_ALL = [
    *_pair("phi1", "np", "lin", {"delta_star", "tau_star", "ell_star"}),
    *_pair("phi2_lin", "umpu", "lin", {"tau_star", "ell_star"}),
    *_pair("phi2_quad", "grid", "quad", {"tau_star", "ell_star"}),
    *_pair("phi3_lin", "scan", "lin", {"delta_star", "ell_star"}),
    *_pair("phi4_lin", "scan", "lin", {"ell_star"}, two_sided_scan=True),
    *_pair("phi3_4_quad", "grid", "quad", {"ell_star"}),
    *_pair("phi5", "sup_length", "shifted", {"delta_star", "tau_star"}),
    *_pair("phi6_lin", "grid", "lin", {"tau_star"}),
    *_pair("phi6_quad", "grid", "quad", {"tau_star"}),
    *_pair("phi7", "sup_location", "shifted", {"delta_star"}),
    *_pair("phi8_lin", "grid", "lin", set(), accepts_grid=True),
    *_pair("phi8_quad", "grid", "quad", set(), accepts_grid=True),
    *_pair("phi9_10_lin", "grid", "lin", set()),
    *_pair("phi9_10_quad", "grid", "quad", set()),
]

FAMILIES: dict[str, FamilyInfo] = {f.id: f for f in _ALL}
REFERENCE_TESTS = ("laplace", "z")


def family_info(family: str) -> FamilyInfo:
    try:
        return FAMILIES[family]
    except KeyError:
        raise SpecError(f"unknown family {family!r}; known: {', '.join(FAMILIES)}") from None


@dataclass(frozen=True)
class WindowGrid:
    """Finite window set ``(lo[j], hi[j]]`` with its Bonferroni level."""

    lo: np.ndarray
    hi: np.ndarray
    bonferroni: float
    formula: str

    @property
    def size(self) -> int:
        return int(self.lo.size)

    def windows(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.lo, self.hi)]


def log2_floor(L: float) -> int:
    if L < 3:
        raise UnsupportedScaleError(f"dyadic grids need L >= 3, got L={L:g}")
    k = math.floor(math.log2(L))
    while 2 ** (k + 1) <= L:
        k += 1
    while 2**k > L:
        k -= 1
    return k


def _triangle(M: int, drop_full: bool = False) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = [], []
    for k in range(M):
        for kp in range(1, M - k + 1):
            if drop_full and k == 0 and kp == M:
                continue
            lo.append(k / M)
            hi.append((k + kp) / M)
    return np.array(lo), np.array(hi)


def scan_length(info: FamilyInfo, ell_star: float) -> float:
    """Window length scanned by the continuum count scans."""
    return min(ell_star, 0.5) if info.conditional else ell_star


def window_grid(
    family: str,
    alpha: float,
    L: float,
    *,
    tau_star: float | None = None,
    ell_star: float | None = None,
    grid: tuple[float, ...] | None = None,
) -> WindowGrid:
    """Windows and Bonferroni level of a ``"grid"`` family at scale ``L``."""
    info = family_info(family)
    if info.shape != "grid":
        raise SpecError(f"{family} does not scan a finite window grid")
    cond = info.conditional
    base = family.rsplit("_", 1)[0]
    if base == "phi2_quad":
        lo, hi = np.array([tau_star]), np.array([tau_star + ell_star])
        return WindowGrid(lo, hi, alpha, "alpha")
    if base == "phi3_4_quad":
        if cond:
            M = math.ceil(2 / (ell_star * (1 - ell_star)))
            formula = "alpha/ceil((1-ell*)M), M=ceil(2/(ell*(1-ell*)))"
        else:
            M = math.ceil(2 / ell_star)
            formula = "alpha/ceil((1-ell*)M), M=ceil(2/ell*)"
        m = math.ceil((1 - ell_star) * M - 1e-12)
        ks = np.arange(m)
        lo = ks / M
        return WindowGrid(lo, lo + ell_star, alpha / m, formula)
    if base in ("phi6_lin", "phi6_quad"):
        K = log2_floor(L)
        lengths = (1 - tau_star) * 2.0 ** -np.arange(1, K + 1)
        lo = np.full(K, float(tau_star))
        return WindowGrid(lo, tau_star + lengths, alpha / K, "alpha/floor(log2 L)")
    if base in ("phi8_lin", "phi8_quad"):
        if grid is not None:
            taus = np.array(sorted(grid), dtype=float)
            formula = "alpha/|grid|"
        elif cond:
            K = log2_floor(L)
            taus = np.concatenate([2.0 ** -np.arange(2, K + 1), 1 - 2.0 ** -np.arange(1, K + 1)])
            taus = np.sort(taus)
            formula = "alpha/(2 floor(log2 L) - 1)"
        else:
            K = log2_floor(L)
            taus = 1 - 2.0 ** -np.arange(1, K + 1)
            formula = "alpha/floor(log2 L)"
        return WindowGrid(taus, np.ones_like(taus), alpha / taus.size, formula)
    if base == "phi9_10_lin" or (base == "phi9_10_quad" and not cond):
        M = math.ceil(L)
        lo, hi = _triangle(M)
        return WindowGrid(lo, hi, 2 * alpha / (M * (M + 1)), "2 alpha/(ceil(L)(ceil(L)+1))")
    if base == "phi9_10_quad":
        if L <= 1:
            raise UnsupportedScaleError(f"M_L = ceil(L/log L) needs L > 1, got L={L:g}")
        M = math.ceil(L / math.log(L))
        lo, hi = _triangle(M, drop_full=True)
        return WindowGrid(lo, hi, 2 * alpha / (M * (M + 1) - 2), "2 alpha/(M_L(M_L+1)-2), M_L=ceil(L/log L)")
    raise SpecError(f"no grid for {family}")  # pragma: no cover
