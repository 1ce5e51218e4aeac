"""Window statistics, their exact suprema, and closed-form moments.

Each statistic has two faces: a sample-level function taking an
:class:`~poisson_change.process.EventSample`, and a count-level function taking
window counts as integers or arrays.  Calibration and detection both go through
the count-level forms so that thresholds and observed values are computed by the
same floating-point expression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateWindowError, InvalidIntervalError, InvalidParameterError
from .process import EventSample


class StatKind(str, Enum):
    LIN_KNOWN = "lin_known"
    SHIFTED_KNOWN = "shifted_known"
    QUAD_KNOWN = "quad_known"
    LIN_COND = "lin_cond"
    SHIFTED_COND = "shifted_cond"
    QUAD_COND = "quad_cond"

    @property
    def conditional(self) -> bool:
        return self.value.endswith("_cond")


def sgn(x: float) -> int:
    return int(x > 0) - int(x < 0)


def _window(tau1: float, tau2: float) -> float:
    if not (0 <= tau1 < tau2 <= 1):
        if tau1 == tau2 and 0 <= tau1 <= 1:
            raise DegenerateWindowError(f"window ({tau1}, {tau2}] has zero length")
        raise InvalidIntervalError(f"need 0 <= tau1 < tau2 <= 1, got ({tau1}, {tau2}]")
    return tau2 - tau1


def _nonzero(delta_star: float) -> float:
    if delta_star == 0 or not math.isfinite(delta_star):
        raise InvalidParameterError("delta_star must be finite and nonzero")
    return float(delta_star)


def _count(sample: EventSample, tau1: float, tau2: float) -> int:
    t = sample.times
    return int(np.searchsorted(t, tau2, side="right") - np.searchsorted(t, tau1, side="right"))


# -- count-level forms ---------------------------------------------------------


def lin_known_counts(x, rho, lambda0: float, L: float):
    return x - lambda0 * rho * L


def shifted_known_counts(x, rho, lambda0: float, L: float, delta_star: float):
    return sgn(delta_star) * (x - lambda0 * L * rho) - abs(delta_star) * L * rho / 2


def quad_known_counts(x, rho, lambda0: float, L: float):
    x = np.asarray(x, dtype=float)
    return (x * x - x) / (L * L * rho) - 2 * lambda0 * x / L + lambda0 * lambda0 * rho


def lin_cond_counts(x, rho, n):
    return x - rho * n


def shifted_cond_counts(x, rho, n, L: float, delta_star: float):
    return sgn(delta_star) * (x - rho * n) - abs(delta_star) * L * rho * (1 - rho) / 2


def quad_cond_counts(b, a, rho, L: float):
    """T' from the inside count ``b`` and the outside count ``a``."""
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    w = rho / (1 - rho)
    return (w * (a * a - a) + (b * b - b) / w - 2 * a * b) / (L * L)


# -- sample-level forms --------------------------------------------------------


def lin_stat_known(sample: EventSample, tau1: float, tau2: float, lambda0: float) -> float:
    """S = N(tau1, tau2] - lambda0 (tau2 - tau1) L."""
    rho = _window(tau1, tau2)
    return float(lin_known_counts(_count(sample, tau1, tau2), rho, lambda0, sample.L))


def shifted_stat_known(sample: EventSample, tau1: float, tau2: float, lambda0: float, delta_star: float) -> float:
    """sgn(d)(N - lambda0 L rho) - |d| L rho / 2."""
    delta_star = _nonzero(delta_star)
    rho = _window(tau1, tau2)
    return float(shifted_known_counts(_count(sample, tau1, tau2), rho, lambda0, sample.L, delta_star))


def quad_stat_known(sample: EventSample, tau1: float, tau2: float, lambda0: float) -> float:
    """Unbiased estimate of the squared projected distance to ``lambda0`` on the window."""
    rho = _window(tau1, tau2)
    return float(quad_known_counts(_count(sample, tau1, tau2), rho, lambda0, sample.L))


def lin_stat_cond(sample: EventSample, tau1: float, tau2: float) -> float:
    """S' = N(tau1, tau2] - (tau2 - tau1) N_1."""
    rho = _window(tau1, tau2)
    return float(lin_cond_counts(_count(sample, tau1, tau2), rho, sample.n))


def shifted_stat_cond(sample: EventSample, tau1: float, tau2: float, delta_star: float) -> float:
    delta_star = _nonzero(delta_star)
    rho = _window(tau1, tau2)
    return float(shifted_cond_counts(_count(sample, tau1, tau2), rho, sample.n, sample.L, delta_star))


def quad_stat_cond(sample: EventSample, tau1: float, tau2: float) -> float:
    """T' on (tau1, tau2]; needs both the window and its complement to be nonempty."""
    rho = _window(tau1, tau2)
    if rho >= 1:
        raise DegenerateWindowError("T' needs a window shorter than the whole interval")
    b = _count(sample, tau1, tau2)
    return float(quad_cond_counts(b, sample.n - b, rho, sample.L))


# -- exact suprema ---------------------------------------------------------------


@dataclass(frozen=True)
class SupResult:
    """Supremum value, the parameter reaching it, and whether it is attained.

    When ``attained`` is False the value is a one-sided limit at ``arg``.
    """

    value: float
    arg: float
    attained: bool


def _shifted_values(kind: str, s: int, mag: float, cnt, ell, n: int, L: float, lambda0: float | None):
    # Same operation order as the compiled pool kernels, so ties compare exactly.
    ell = np.asarray(ell, dtype=float)
    if kind == "known":
        return s * (cnt - lambda0 * L * ell) - mag * L * ell / 2.0
    return s * (cnt - ell * n) - mag * L * ell * (1.0 - ell) / 2.0


def _check_kind(kind: str, lambda0: float | None) -> None:
    if kind not in ("known", "cond"):
        raise InvalidParameterError(f"kind must be 'known' or 'cond', got {kind!r}")
    if kind == "known" and not (lambda0 is not None and lambda0 > 0):
        raise InvalidParameterError("known kind needs lambda0 > 0")


def _best(values: np.ndarray, args: np.ndarray, attained: np.ndarray) -> SupResult:
    i = int(np.argmax(values))
    return SupResult(float(values[i]), float(args[i]), bool(attained[i]))


def sup_shifted_over_length(
    sample: EventSample,
    tau_star: float,
    delta_star: float,
    kind: str = "known",
    lambda0: float | None = None,
) -> SupResult:
    """``sup_{ell in (0, 1-tau*)}`` of the shifted statistic on ``(tau*, tau*+ell]``.

    Between consecutive events the count is constant and the drift is linear
    (known baseline) or convex in ``ell`` (conditional), so the supremum sits at an
    event, just before one, or at one of the two open ends.
    """
    _check_kind(kind, lambda0)
    if not 0 < tau_star < 1:
        raise InvalidParameterError("tau_star must lie in (0, 1)")
    delta_star = _nonzero(delta_star)
    s, mag = sgn(delta_star), abs(delta_star)
    t, n, L = sample.times, sample.n, sample.L
    inner = t[(t > tau_star) & (t < 1.0)]
    vals, idx_last = np.unique(inner, return_counts=True)
    upto = np.cumsum(idx_last)  # count in (tau*, v_j]
    before = upto - idx_last  # count in (tau*, v_j)
    ell_ev = vals - tau_star
    end = 1.0 - tau_star
    ells = np.concatenate([[0.0], ell_ev, ell_ev, [end]])
    cnt = np.concatenate([[0], upto, before, [inner.size]])
    attained = np.concatenate([[False], np.ones(vals.size, bool), np.zeros(vals.size, bool), [False]])
    values = _shifted_values(kind, s, mag, cnt, ells, n, L, lambda0)
    return _best(values, ells, attained)


def sup_shifted_over_location(
    sample: EventSample,
    delta_star: float,
    kind: str = "known",
    lambda0: float | None = None,
) -> SupResult:
    """``sup_{tau in (0, 1)}`` of the shifted statistic on ``(tau, 1]``."""
    _check_kind(kind, lambda0)
    delta_star = _nonzero(delta_star)
    s, mag = sgn(delta_star), abs(delta_star)
    t, n, L = sample.times, sample.n, sample.L
    inner = t[(t > 0.0) & (t < 1.0)]
    vals, mult = np.unique(inner, return_counts=True)
    at_one = int(np.count_nonzero(t == 1.0))
    above = at_one + inner.size - np.cumsum(mult)  # N(v, 1]
    from_v = above + mult  # N(v-, 1]
    taus = np.concatenate([[0.0], vals, vals, [1.0]])
    cnt = np.concatenate([[inner.size + at_one], above, from_v, [at_one]])
    attained = np.concatenate([[False], np.ones(vals.size, bool), np.zeros(vals.size, bool), [False]])
    values = _shifted_values(kind, s, mag, cnt, 1.0 - taus, n, L, lambda0)
    return _best(values, taus, attained)


# -- moment oracles ---------------------------------------------------------------


def moments_T(x: float, tau1: float, tau2: float, lambda0: float, L: float) -> tuple[float, float]:
    """Mean and variance of T on (tau1, tau2] when the window count is Poisson(L x)."""
    rho = _window(tau1, tau2)
    mean = (x / math.sqrt(rho) - lambda0 * math.sqrt(rho)) ** 2
    var = 4 * x * (x / rho - lambda0) ** 2 / L + 2 * x * x / (L * L * rho * rho)
    return mean, var


def moments_Tprime(x: float, y: float, z: float, tau1: float, tau2: float, L: float) -> tuple[float, float]:
    """Mean and variance of T' when N(0,tau1], N(tau1,tau2], N(tau2,1] are Poisson(Lx), (Ly), (Lz).

    Zero segment parameters are allowed; the formulas extend continuously.
    """
    rho = _window(tau1, tau2)
    if rho >= 1:
        raise DegenerateWindowError("T' needs a window shorter than the whole interval")
    w = rho / (1 - rho)
    out = x + z
    mean = (math.sqrt(w) * out - y / math.sqrt(w)) ** 2
    var = 2 / L**2 * (w * out + y / w) ** 2 + 4 / L * (y - w * out) ** 2 / (w * w) * (w * w * out + y)
    return mean, var
