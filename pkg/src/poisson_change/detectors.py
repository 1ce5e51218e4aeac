"""Detectors: statistics paired with calibrated critical values.

:func:`run_detector` evaluates any family of the catalogue (see
:mod:`poisson_change.families`) on an :class:`~poisson_change.process.EventSample`
and returns a :class:`TestReport`.  All comparisons are strict; only the
single-window count tests randomize on the quantile atom.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import gammainc

from . import _rng
from .calibration import (
    DEFAULT_BUDGET,
    CriticalValueStore,
    DiscreteQuantile,
    LevelCorrection,
    QuantileQuery,
    binomial_pmf,
    binomial_quantile,
    calibrate_grid,
    grid_values,
    mc_quantile,
    poisson_pmf_window,
    poisson_randomization,
    quantile_fingerprint,
)
from .errors import (
    CalibrationRequiredError,
    InvalidParameterError,
    NumericFailureError,
    SpecError,
)
from .families import FAMILIES, REFERENCE_TESTS, family_info, scan_length, window_grid
from .process import EventSample, PiecewiseIntensity, count, counts, d2_distance, window_max_count, window_min_count
from .statistics import sup_shifted_over_length, sup_shifted_over_location

ALL_DETECTORS = tuple(FAMILIES) + REFERENCE_TESTS
_PARAMS = ("lambda0", "delta_star", "tau_star", "ell_star")


# -- specification -------------------------------------------------------------------


@dataclass(frozen=True)
class DetectorSpec:
    """A family id with the change parameters it needs, the level and calibration handle.

    ``R`` is the bound on the unknown baseline; it only documents the null set
    of conditional families and never enters a computation.  ``grid`` replaces the
    default location grid of the ``phi8`` families.
    """

    family: str
    alpha: float = 0.05
    lambda0: float | None = None
    R: float | None = None
    delta_star: float | None = None
    tau_star: float | None = None
    ell_star: float | None = None
    correction: str | None = None
    grid: tuple[float, ...] | None = None
    B: int = 200_000
    seed: int = 0
    validate: bool = False

    def __post_init__(self) -> None:
        if not (0 < self.alpha < 1):
            raise SpecError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.B < 1:
            raise SpecError("B must be at least 1")
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(float(t) for t in self.grid))
        if self.family in REFERENCE_TESTS:
            extra = [p for p in (*_PARAMS, "R", "correction", "grid") if getattr(self, p) is not None]
            if extra:
                raise SpecError(f"{self.family} takes no change parameters, got {extra}")
            return
        info = family_info(self.family)
        for p in _PARAMS:
            given = getattr(self, p) is not None
            if p in info.needs and not given:
                raise SpecError(f"{self.family} needs {p}")
            if p not in info.needs and given:
                raise SpecError(f"{self.family} does not take {p}")
        if self.R is not None and (not info.conditional or not self.R > 0):
            raise SpecError("R is a positive bound for conditional families only")
        if self.lambda0 is not None and not self.lambda0 > 0:
            raise SpecError("lambda0 must be positive")
        if self.delta_star is not None:
            if self.delta_star == 0 or not math.isfinite(self.delta_star):
                raise SpecError("delta_star must be finite and nonzero")
            if self.lambda0 is not None and self.lambda0 + self.delta_star <= 0:
                raise SpecError("need lambda0 + delta_star > 0")
        if self.tau_star is not None and not 0 < self.tau_star < 1:
            raise SpecError("tau_star must lie in (0, 1)")
        if self.ell_star is not None:
            top = 1 - self.tau_star if self.tau_star is not None else 1.0
            if not 0 < self.ell_star <= top + 1e-12:
                raise SpecError(f"ell_star must lie in (0, {top:g}]")
            if self.family == "phi3_4_quad_cond" and self.ell_star >= 1:
                raise SpecError("phi3_4_quad_cond needs ell_star < 1")
        if info.shape == "grid":
            if self.correction not in (None, "bonferroni", "minp"):
                raise SpecError(f"correction must be 'bonferroni' or 'minp', got {self.correction!r}")
        elif self.correction is not None:
            raise SpecError(f"{self.family} has no level correction")
        if self.grid is not None:
            if not info.accepts_grid:
                raise SpecError(f"{self.family} does not take a custom grid")
            if not self.grid or any(not 0 < t < 1 for t in self.grid):
                raise SpecError("grid locations must lie in (0, 1)")

    @property
    def resolved_correction(self) -> str:
        return self.correction or "bonferroni"

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if d["grid"] is not None:
            d["grid"] = list(d["grid"])
        return {k: v for k, v in d.items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "DetectorSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise SpecError(f"unknown spec fields: {sorted(unknown)}")
        if "family" not in doc:
            raise SpecError("spec needs a 'family' tag")
        doc = dict(doc)
        if doc.get("grid") is not None:
            doc["grid"] = tuple(doc["grid"])
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "DetectorSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"bad spec document: {exc}") from exc
        return cls.from_dict(doc)


# -- reports --------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowResult:
    """One row of the report ledger.

    ``side`` is ``"upper"`` (reject when the statistic exceeds the threshold) or
    ``"lower"`` (reject when it falls below); ``margin`` is positive exactly when
    that comparison holds strictly.
    """

    window: tuple[float, float] | str
    statistic: float
    threshold: float
    side: str = "upper"

    @property
    def margin(self) -> float:
        d = self.statistic - self.threshold
        return d if self.side == "upper" else -d


@dataclass
class TestReport:
    """Outcome of one detector on one sample.

    ``probability`` is the rejection probability: 0 or 1 for deterministic
    tests, possibly fractional for the randomized single-window tests.
    """

    __test__ = False  # not a pytest class

    family: str
    probability: float
    ledger: list[WindowResult]
    level: float | LevelCorrection
    n: int
    seeds: dict = field(default_factory=dict)
    d2: float | None = None

    @property
    def decision(self) -> str:
        if self.probability >= 1:
            return "reject"
        if self.probability <= 0:
            return "accept"
        return "randomized"

    @property
    def rejected(self) -> bool:
        return self.probability >= 1

    def realize(self, seed: int, replicate: int = 0) -> bool:
        """0/1 decision; fractional probabilities use an auxiliary uniform."""
        if self.probability >= 1:
            return True
        if self.probability <= 0:
            return False
        return bool(_rng.generator(seed, _rng.RANDOMIZE, replicate).random() < self.probability)

    def to_dict(self) -> dict:
        level = asdict(self.level) if isinstance(self.level, LevelCorrection) else self.level
        return {
            "family": self.family,
            "decision": self.decision,
            "probability": self.probability,
            "n": self.n,
            "level": level,
            "d2": self.d2,
            "seeds": self.seeds,
            "ledger": [
                {
                    "window": list(w.window) if isinstance(w.window, tuple) else w.window,
                    "statistic": w.statistic,
                    "threshold": w.threshold,
                    "side": w.side,
                    "margin": w.margin,
                }
                for w in self.ledger
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- randomized single-window rules ---------------------------------------------------


@dataclass(frozen=True)
class RandomizedRule:
    """``1{x > upper.k} + upper.gamma_plus 1{x = upper.k}`` plus the mirror lower part."""

    upper: DiscreteQuantile | None = None
    lower: DiscreteQuantile | None = None

    def __call__(self, x):
        x = np.asarray(x)
        out = np.zeros(x.shape)
        if self.upper is not None:
            out += (x > self.upper.k) + self.upper.gamma_plus * (x == self.upper.k)
        if self.lower is not None:
            out += (x < self.lower.k) + self.lower.gamma_minus * (x == self.lower.k)
        return np.minimum(out, 1.0)


def _law(regime: str, *, lambda0=None, ell_star=None, L=None, n=None) -> tuple[np.ndarray, np.ndarray]:
    """Support and pmf of the window count under the null."""
    if regime == "known":
        k0, pmf = poisson_pmf_window(lambda0 * ell_star * L)
        return np.arange(k0, k0 + pmf.size), pmf
    if regime == "cond":
        pmf = binomial_pmf(n, ell_star)
        return np.arange(pmf.size), pmf
    raise InvalidParameterError(f"regime must be 'known' or 'cond', got {regime!r}")


def _quantile(regime: str, u: float, *, lambda0=None, ell_star=None, L=None, n=None) -> DiscreteQuantile:
    if regime == "known":
        return poisson_randomization(lambda0 * ell_star * L, u)
    return binomial_quantile(n, ell_star, u)


def one_sided_rule(regime: str, alpha: float, sign: int, **law) -> RandomizedRule:
    """Exact-size one-sided count test: upper tail for ``sign > 0``, lower otherwise."""
    if sign > 0:
        return RandomizedRule(upper=_quantile(regime, 1 - alpha, **law))
    return RandomizedRule(lower=_quantile(regime, alpha, **law))


@dataclass(frozen=True)
class UmpuSplit:
    alpha1: float
    alpha2: float
    rule: RandomizedRule
    residual: float


def _two_sided_rule(regime: str, a1: float, a2: float, **law) -> RandomizedRule:
    return RandomizedRule(upper=_quantile(regime, 1 - a1, **law), lower=_quantile(regime, a2, **law))


def umpu_split(regime: str, alpha: float, *, lambda0=None, ell_star=None, L=None, n=None) -> UmpuSplit:
    """Split ``alpha = alpha1 + alpha2`` so that ``E[X phi(X)] = alpha E[X]`` under the null.

    ``alpha1`` goes to the upper tail.  The residual ``E[X phi] - alpha E[X]`` grows
    with ``alpha1`` (mass moves from small to large counts), so bisection finds it.
    """
    if not 0 < alpha < 1:
        raise InvalidParameterError("alpha must lie in (0, 1)")
    law = dict(lambda0=lambda0, ell_star=ell_star, L=L, n=n)
    if regime == "cond" and n == 0:
        a = alpha / 2
        return UmpuSplit(a, alpha - a, _two_sided_rule(regime, a, alpha - a, **law), 0.0)
    xs, pmf = _law(regime, **law)
    target = alpha * float(np.sum(xs * pmf))

    def residual(a1: float) -> float:
        rule = _two_sided_rule(regime, a1, alpha - a1, **law)
        return float(np.sum(xs * pmf * rule(xs))) - target

    lo, hi = alpha * 1e-9, alpha * (1 - 1e-9)
    r_lo, r_hi = residual(lo), residual(hi)
    if not (r_lo <= 0 <= r_hi):
        raise NumericFailureError(f"UMPU residual does not change sign on (0, alpha): {r_lo:g}, {r_hi:g}")
    mid, r_mid = lo, r_lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r_mid = residual(mid)
        if abs(r_mid) <= 1e-10 or hi - lo < 1e-16:
            break
        if r_mid < 0:
            lo = mid
        else:
            hi = mid
    return UmpuSplit(mid, alpha - mid, _two_sided_rule(regime, mid, alpha - mid, **law), r_mid)


def exact_size(rule: RandomizedRule, regime: str, **law) -> float:
    """``E[phi(X)]`` under the null by pmf summation."""
    xs, pmf = _law(regime, **law)
    return float(np.sum(pmf * rule(xs)))


# -- reference tests --------------------------------------------------------------------


def chi2_quantile(df: float, u: float, rtol: float = 1e-10) -> float:
    """Chi-square quantile by bisection on the regularized lower incomplete gamma."""
    if not (0 < u < 1) or df <= 0:
        raise InvalidParameterError("need 0 < u < 1 and df > 0")
    k = df / 2
    lo, hi = 0.0, max(1.0, df)
    while gammainc(k, hi / 2) < u:
        hi *= 2
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if gammainc(k, mid / 2) < u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sum_quantile(n: int, u: float, B: int, seed: int, store) -> float:
    if n == 1:
        return u
    q = QuantileQuery("sum_uniform", "cond", u, 1.0, n=n, B=B, seed=seed)
    return mc_quantile(q, store)


def laplace_test(sample: EventSample, alpha: float = 0.05, *, B: int = 200_000, seed: int = 0, store=None) -> TestReport:
    """Two-sided Laplace test: the sum of the event times against quantiles of a sum of uniforms."""
    n = sample.n
    seeds = {"calibration": seed, "B": B}
    if n == 0:
        return TestReport("laplace", 0.0, [], alpha, 0, seeds)
    stat = float(np.sum(sample.times))
    lo = _sum_quantile(n, alpha / 2, B, seed, store)
    hi = _sum_quantile(n, 1 - alpha / 2, B, seed, store)
    ledger = [WindowResult("sum", stat, hi, "upper"), WindowResult("sum", stat, lo, "lower")]
    p = 1.0 if any(w.margin > 0 for w in ledger) else 0.0
    return TestReport("laplace", p, ledger, alpha, n, seeds)


def z_test(sample: EventSample, alpha: float = 0.05) -> TestReport:
    """Two-sided Z test: ``-2 sum log X_i`` against chi-square quantiles with ``2n`` degrees of freedom."""
    n = sample.n
    if n == 0:
        return TestReport("z", 0.0, [], alpha, 0)
    if sample.times[0] <= 0:
        raise InvalidParameterError("the Z test cannot take an event at time 0")
    stat = float(-2 * np.sum(np.log(sample.times)))
    lo = chi2_quantile(2 * n, alpha / 2)
    hi = chi2_quantile(2 * n, 1 - alpha / 2)
    ledger = [WindowResult("log_sum", stat, hi, "upper"), WindowResult("log_sum", stat, lo, "lower")]
    p = 1.0 if any(w.margin > 0 for w in ledger) else 0.0
    return TestReport("z", p, ledger, alpha, n)


# -- dispatcher --------------------------------------------------------------------------


def _regime_args(spec: DetectorSpec, sample: EventSample, info) -> dict:
    if info.conditional:
        return {"regime": "cond", "n": sample.n}
    return {"regime": "known", "lambda0": spec.lambda0}


def _mc(spec: DetectorSpec, sample: EventSample, info, store, calibrate: bool, budget: float, **kw) -> float:
    reg = _regime_args(spec, sample, info)
    q = QuantileQuery(L=sample.L, B=spec.B, seed=spec.seed, **reg, **kw)
    if not calibrate:
        if store is None or quantile_fingerprint(q) not in store:
            raise CalibrationRequiredError(f"no stored quantile for {spec.family}: {q.canonical()}")
    return mc_quantile(q, store, budget)


def run_detector(
    spec: DetectorSpec,
    sample: EventSample,
    store: CriticalValueStore | None = None,
    *,
    calibrate: bool = True,
    alternative: PiecewiseIntensity | None = None,
    budget: float = DEFAULT_BUDGET,
) -> TestReport:
    """Evaluate ``spec`` on ``sample``.

    Missing critical values are computed and stored unless ``calibrate`` is
    False, in which case :class:`CalibrationRequiredError` names the query.
    ``alternative`` only feeds the reported signal strength ``d2``.
    """
    if spec.family == "laplace":
        if not calibrate:
            raise CalibrationRequiredError("the Laplace test always calibrates its sum quantiles")
        rep = laplace_test(sample, spec.alpha, B=spec.B, seed=spec.seed, store=store)
    elif spec.family == "z":
        rep = z_test(sample, spec.alpha)
    else:
        rep = _run_family(spec, sample, store, calibrate, budget)
    if alternative is not None:
        cond = spec.family in FAMILIES and FAMILIES[spec.family].conditional
        rep.d2 = d2_distance(alternative, "unknown" if cond else "known")
    return rep


def _run_family(spec: DetectorSpec, sample: EventSample, store, calibrate: bool, budget: float) -> TestReport:
    info = family_info(spec.family)
    L, n, alpha = sample.L, sample.n, spec.alpha
    seeds = {"calibration": spec.seed, "B": spec.B}
    law = {"ell_star": spec.ell_star}
    if info.conditional:
        law["n"] = n
    else:
        law.update(lambda0=spec.lambda0, L=L)
    regime = "cond" if info.conditional else "known"

    if info.shape in ("np", "umpu"):
        a, b = spec.tau_star, spec.tau_star + spec.ell_star
        x = count(sample, a, min(b, 1.0))
        if info.shape == "np":
            sign = 1 if spec.delta_star > 0 else -1
            rule = one_sided_rule(regime, alpha, sign, **law)
            level: float | LevelCorrection = alpha
        else:
            split = umpu_split(regime, alpha, **law)
            rule, level = split.rule, split.alpha1
        ledger = []
        if rule.upper is not None:
            ledger.append(WindowResult((a, b), float(x), float(rule.upper.k), "upper"))
        if rule.lower is not None:
            ledger.append(WindowResult((a, b), float(x), float(rule.lower.k), "lower"))
        return TestReport(spec.family, float(rule(x)), ledger, level, n, seeds)

    if info.shape == "scan":
        ell = scan_length(info, spec.ell_star)
        ledger = []
        if info.two_sided_scan:
            parts, level = ((1, alpha / 2), (-1, alpha / 2)), alpha / 2
        else:
            parts, level = ((1 if spec.delta_star > 0 else -1, alpha),), alpha
        for sign, a in parts:
            if sign > 0:
                obs, _ = window_max_count(sample, ell)
                thr = _mc(spec, sample, info, store, calibrate, budget, statistic="max_count", u=1 - a, ell=ell)
                ledger.append(WindowResult(f"max_count[{ell:g}]", float(obs), thr, "upper"))
            else:
                obs, _ = window_min_count(sample, ell)
                thr = _mc(spec, sample, info, store, calibrate, budget, statistic="min_count", u=a, ell=ell)
                ledger.append(WindowResult(f"min_count[{ell:g}]", float(obs), thr, "lower"))
        p = 1.0 if any(w.margin > 0 for w in ledger) else 0.0
        return TestReport(spec.family, p, ledger, level, n, seeds)

    if info.shape in ("sup_length", "sup_location"):
        kind = "cond" if info.conditional else "known"
        if info.shape == "sup_length":
            sup = sup_shifted_over_length(sample, spec.tau_star, spec.delta_star, kind, spec.lambda0)
            extra = {"tau_star": spec.tau_star}
        else:
            sup = sup_shifted_over_location(sample, spec.delta_star, kind, spec.lambda0)
            extra = {}
        thr = _mc(spec, sample, info, store, calibrate, budget, statistic=info.shape, u=1 - alpha,
                  delta_star=spec.delta_star, **extra)
        ledger = [WindowResult(info.shape, sup.value, thr, "upper")]
        return TestReport(spec.family, 1.0 if sup.value > thr else 0.0, ledger, alpha, n, seeds)

    grid = window_grid(spec.family, alpha, L, tau_star=spec.tau_star, ell_star=spec.ell_star, grid=spec.grid)
    cal = calibrate_grid(
        spec.family, info.stat, grid, alpha=alpha, L=L, correction=spec.resolved_correction, B=spec.B,
        seed=spec.seed, lambda0=None if info.conditional else spec.lambda0, n=n if info.conditional else None,
        validate=spec.validate, store=store, allow_compute=calibrate, budget=budget,
    )
    x = counts(sample, grid.lo, grid.hi)
    rho = grid.hi - grid.lo
    f = grid_values(info.stat, rho, x, L=L, lambda0=spec.lambda0, n=n if info.conditional else None)
    ledger = [WindowResult((float(a), float(b)), float(v), float(t)) for a, b, v, t in zip(grid.lo, grid.hi, f, cal.thresholds)]
    p = 1.0 if bool(np.any(f > cal.thresholds)) else 0.0
    return TestReport(spec.family, p, ledger, cal.level, n, seeds)
