"""Compiled inner loops for Monte Carlo pools.

Two families of kernels live here.  Cell kernels work on counts per elementary
cell (the cells cut out by every window endpoint), so every window count is a
difference of prefix sums.  Sample kernels work on padded rows of sorted event
times and evaluate the exact extremum and supremum statistics row by row.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# -- cell kernels ---------------------------------------------------------------


@njit(cache=True)
def cell_hist(cells, lo, hi, hist):
    """Accumulate per-window count histograms; ``cells`` is (B, K)."""
    B, K = cells.shape
    m = lo.size
    cap = hist.shape[1] - 1
    prefix = np.zeros(K + 1, np.int64)
    for b in range(B):
        for k in range(K):
            prefix[k + 1] = prefix[k] + cells[b, k]
        for j in range(m):
            x = prefix[hi[j]] - prefix[lo[j]]
            if x > cap:
                x = cap
            hist[j, x] += 1


@njit(cache=True)
def cell_rank(cells, lo, hi, ctab, out):
    """``out[b] = max_j ctab[j, count_j(b)]``, the most extreme window per replicate."""
    B, K = cells.shape
    m = lo.size
    cap = ctab.shape[1] - 1
    prefix = np.zeros(K + 1, np.int64)
    for b in range(B):
        for k in range(K):
            prefix[k + 1] = prefix[k] + cells[b, k]
        best = 0
        for j in range(m):
            x = prefix[hi[j]] - prefix[lo[j]]
            if x > cap:
                x = cap
            c = ctab[j, x]
            if c > best:
                best = c
        out[b] = best


# -- sample kernels --------------------------------------------------------------


@njit(cache=True)
def _upper(row, n, v):
    """Number of entries of row[:n] that are <= v (binary search)."""
    a, b = 0, n
    while a < b:
        mid = (a + b) // 2
        if row[mid] <= v:
            a = mid + 1
        else:
            b = mid
    return a


@njit(cache=True)
def rows_window_max(pts, lens, ell):
    B = lens.size
    out = np.empty(B, np.int64)
    hi = 1.0 - ell
    for b in range(B):
        row = pts[b]
        n = lens[b]
        best = _upper(row, n, ell) - _upper(row, n, 0.0)
        c = n - _upper(row, n, hi)
        if c > best:
            best = c
        for j in range(n):
            x = row[j]
            if x >= ell:
                c = _upper(row, n, x) - _upper(row, n, x - ell)
                if c > best:
                    best = c
        out[b] = best
    return out


@njit(cache=True)
def rows_window_min(pts, lens, ell):
    B = lens.size
    out = np.empty(B, np.int64)
    hi = 1.0 - ell
    for b in range(B):
        row = pts[b]
        n = lens[b]
        best = _upper(row, n, ell) - _upper(row, n, 0.0)
        c = n - _upper(row, n, hi)
        if c < best:
            best = c
        for j in range(n):
            x = row[j]
            if x <= hi:
                c = _upper(row, n, x + ell) - _upper(row, n, x)
                if c < best:
                    best = c
        out[b] = best
    return out


@njit(cache=True)
def _shifted(s, mag, cnt, ell, n, L, lambda0, cond):
    if cond:
        return s * (cnt - ell * n) - mag * L * ell * (1.0 - ell) / 2.0
    return s * (cnt - lambda0 * L * ell) - mag * L * ell / 2.0


@njit(cache=True)
def rows_sup_length(pts, lens, tau, delta, lambda0, L, cond):
    """Row-wise supremum over ell in (0, 1-tau) of the shifted statistic."""
    B = lens.size
    out = np.empty(B)
    s = 1.0 if delta > 0 else -1.0
    mag = abs(delta)
    end = 1.0 - tau
    for b in range(B):
        row = pts[b]
        n = lens[b]
        best = 0.0  # limit as ell -> 0+
        start = _upper(row, n, tau)
        stop = start
        while stop < n and row[stop] < 1.0:
            stop += 1
        j = start
        while j < stop:
            v = row[j]
            k = j
            while k < stop and row[k] == v:
                k += 1
            ell = v - tau
            left = _shifted(s, mag, j - start, ell, n, L, lambda0, cond)
            at = _shifted(s, mag, k - start, ell, n, L, lambda0, cond)
            if left > best:
                best = left
            if at > best:
                best = at
            j = k
        last = _shifted(s, mag, stop - start, end, n, L, lambda0, cond)
        if last > best:
            best = last
        out[b] = best
    return out


@njit(cache=True)
def rows_sup_location(pts, lens, delta, lambda0, L, cond):
    """Row-wise supremum over tau in (0, 1) of the shifted statistic on (tau, 1]."""
    B = lens.size
    out = np.empty(B)
    s = 1.0 if delta > 0 else -1.0
    mag = abs(delta)
    for b in range(B):
        row = pts[b]
        n = lens[b]
        first = _upper(row, n, 0.0)
        above_all = n - first  # N(0+, 1]
        best = _shifted(s, mag, above_all, 1.0, n, L, lambda0, cond)
        at_one = n - _upper(row, n, np.nextafter(1.0, 0.0))
        v_end = _shifted(s, mag, at_one, 0.0, n, L, lambda0, cond)
        if v_end > best:
            best = v_end
        j = first
        while j < n and row[j] < 1.0:
            v = row[j]
            k = j
            while k < n and row[k] == v:
                k += 1
            ell = 1.0 - v
            left = _shifted(s, mag, n - j, ell, n, L, lambda0, cond)
            at = _shifted(s, mag, n - k, ell, n, L, lambda0, cond)
            if left > best:
                best = left
            if at > best:
                best = at
            j = k
        out[b] = best
    return out
