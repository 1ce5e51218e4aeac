"""Poisson event samples on [0, 1]: representation, simulation, exact counting.

A process with intensity ``lambda(t)`` is taken with respect to the measure
``L dt``, so the expected number of events in ``(a, b]`` is ``L * int_a^b lambda``.
All windows are half-open on the left: an event sitting exactly at ``a`` is not
counted in ``(a, b]``, one sitting at ``b`` is.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from . import _rng
from .errors import EventFileError, InvalidIntervalError, InvalidParameterError


@dataclass(frozen=True, eq=False)
class EventSample:
    """Sorted event times in [0, 1] together with the scale ``L``."""

    times: np.ndarray
    L: float

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float).ravel()
        if not (math.isfinite(self.L) and self.L > 0):
            raise InvalidParameterError(f"L must be positive and finite, got {self.L!r}")
        if t.size and (not np.all(np.isfinite(t)) or t[0] < 0 or t[-1] > 1):
            raise InvalidParameterError("event times must lie in [0, 1]")
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise InvalidParameterError("event times must be sorted nondecreasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "L", float(self.L))

    @classmethod
    def from_unsorted(cls, times, L: float) -> "EventSample":
        return cls(np.sort(np.asarray(times, dtype=float)), L)

    @property
    def n(self) -> int:
        """Total count N_1, the length of the sequence."""
        return int(self.times.size)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"EventSample(n={self.n}, L={self.L:g})"


@dataclass(frozen=True)
class PiecewiseIntensity:
    """``lambda(t) = lambda0 + delta * 1{tau < t <= tau + ell}``.

    With ``delta == 0`` the location and length are irrelevant and may be left
    as ``None``.
    """

    lambda0: float
    delta: float = 0.0
    tau: float | None = None
    ell: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lambda0) and self.lambda0 > 0):
            raise InvalidParameterError("lambda0 must be positive")
        if not math.isfinite(self.delta) or self.lambda0 + self.delta <= 0:
            raise InvalidParameterError("need lambda0 + delta > 0")
        if self.delta != 0:
            if self.tau is None or self.ell is None:
                raise InvalidParameterError("a change needs both tau and ell")
            if not 0 < self.tau < 1:
                raise InvalidParameterError("tau must lie in (0, 1)")
            if not 0 < self.ell <= 1 - self.tau + 1e-12:
                raise InvalidParameterError("ell must lie in (0, 1 - tau]")

    @classmethod
    def jump(cls, lambda0: float, delta: float, tau: float) -> "PiecewiseIntensity":
        return cls(lambda0, delta, tau, 1.0 - tau)

    @classmethod
    def bump(cls, lambda0: float, delta: float, tau: float, ell: float) -> "PiecewiseIntensity":
        return cls(lambda0, delta, tau, ell)

    @property
    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints and per-segment rates of the step function."""
        if self.delta == 0:
            return np.array([0.0, 1.0]), np.array([self.lambda0])
        end = min(1.0, self.tau + self.ell)
        edges = np.array([0.0, self.tau, end, 1.0])
        rates = np.array([self.lambda0, self.lambda0 + self.delta, self.lambda0])
        keep = np.diff(edges) > 0
        return np.concatenate([[0.0], edges[1:][keep]]), rates[keep]

    def mass(self, a: float = 0.0, b: float = 1.0) -> float:
        """``int_a^b lambda(t) dt``."""
        if not 0.0 <= a <= b <= 1.0:
            raise InvalidIntervalError(f"need 0 <= a <= b <= 1, got ({a}, {b})")
        edges, rates = self.segments
        lo = np.clip(edges[:-1], a, b)
        hi = np.clip(edges[1:], a, b)
        return float(np.sum((hi - lo) * rates))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.delta == 0:
            return np.full_like(t, self.lambda0)
        inside = (t > self.tau) & (t <= self.tau + self.ell)
        return np.where(inside, self.lambda0 + self.delta, self.lambda0)


def _check_L(L: float) -> float:
    if not (isinstance(L, (int, float, np.floating, np.integer)) and math.isfinite(L) and L > 0):
        raise InvalidParameterError(f"L must be positive and finite, got {L!r}")
    return float(L)


def place_points(intensity: PiecewiseIntensity, u: np.ndarray) -> np.ndarray:
    """Map uniforms to event times by inverting the normalised cumulative intensity."""
    edges, rates = intensity.segments
    cum = np.concatenate([[0.0], np.cumsum(np.diff(edges) * rates)])
    total = cum[-1]
    target = np.asarray(u, dtype=float) * total
    seg = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, rates.size - 1)
    t = edges[seg] + (target - cum[seg]) / rates[seg]
    return np.clip(t, 0.0, 1.0)


def simulate(intensity: PiecewiseIntensity, L: float, seed: int, replicate: int = 0) -> EventSample:
    """Draw one sample: a Poisson total, then inverse-CDF placement of the points."""
    L = _check_L(L)
    rng = _rng.generator(seed, _rng.SIMULATE, replicate)
    n = rng.poisson(L * intensity.mass())
    times = np.sort(place_points(intensity, rng.random(n)))
    return EventSample(times, L)


def _check_interval(tau1: float, tau2: float) -> None:
    if not (0 <= tau1 <= 1 and 0 <= tau2 <= 1):
        raise InvalidIntervalError(f"interval ({tau1}, {tau2}] leaves [0, 1]")
    if tau1 > tau2:
        raise InvalidIntervalError(f"interval ({tau1}, {tau2}] is reversed")


def count(sample: EventSample, tau1: float, tau2: float) -> int:
    """N(tau1, tau2]: events t with tau1 < t <= tau2."""
    _check_interval(tau1, tau2)
    t = sample.times
    return int(np.searchsorted(t, tau2, side="right") - np.searchsorted(t, tau1, side="right"))


def counts(sample: EventSample, tau1, tau2) -> np.ndarray:
    """Vectorised :func:`count` over arrays of endpoints (no validation)."""
    t = sample.times
    return np.searchsorted(t, tau2, side="right") - np.searchsorted(t, tau1, side="right")


def _check_ell(ell: float) -> None:
    if not (math.isfinite(ell) and 0 < ell <= 1):
        raise InvalidParameterError(f"window length must lie in (0, 1], got {ell!r}")


def window_max_count(sample: EventSample, ell: float) -> tuple[int, float]:
    """Exact ``max_{tau in [0, 1-ell]} N(tau, tau+ell]`` and the smallest maximiser.

    The count only jumps up when the right end reaches an event, so windows whose
    right end sits on an event (plus the two boundary windows) are enough.
    """
    _check_ell(ell)
    t = sample.times
    hi = 1.0 - ell
    right = t[(t >= ell) & (t <= 1.0)]
    taus = np.concatenate([[0.0, hi], right - ell])
    rights = np.concatenate([[ell, 1.0], right])
    c = np.searchsorted(t, rights, side="right") - np.searchsorted(t, taus, side="right")
    best = c.max()
    return int(best), float(taus[c == best].min())


def window_min_count(sample: EventSample, ell: float) -> tuple[int, float]:
    """Exact ``min_{tau in [0, 1-ell]} N(tau, tau+ell]`` and the smallest minimiser.

    The count only drops when the left end passes an event, and at ``tau = x_i``
    the event ``x_i`` is already excluded, so left ends on events are enough.
    """
    _check_ell(ell)
    t = sample.times
    hi = 1.0 - ell
    taus = np.concatenate([[0.0, hi], t[t <= hi]])
    c = np.searchsorted(t, taus + ell, side="right") - np.searchsorted(t, taus, side="right")
    best = c.min()
    return int(best), float(taus[c == best].min())


def d2_distance(intensity: PiecewiseIntensity, baseline: Literal["known", "unknown"] = "known") -> float:
    """L2 distance from the intensity to the null set.

    ``|delta| sqrt(ell)`` to the single known baseline, ``|delta| sqrt(ell (1-ell))``
    to the set of constant intensities.
    """
    if intensity.delta == 0:
        return 0.0
    ell = intensity.ell
    if baseline == "known":
        return abs(intensity.delta) * math.sqrt(ell)
    if baseline == "unknown":
        return abs(intensity.delta) * math.sqrt(ell * (1.0 - ell))
    raise InvalidParameterError(f"unknown baseline kind {baseline!r}")


# -- event files -------------------------------------------------------------


def format_events(sample: EventSample, fmt: Literal["text", "json"] = "text") -> str:
    """Event-file text: an ``L=<value>`` header then one time per line, or a JSON document."""
    if fmt == "json":
        doc = {"L": sample.L, "times": [float(f"{x:.17g}") for x in sample.times]}
        return json.dumps(doc) + "\n"
    lines = [f"L={sample.L:.17g}"] + [f"{x:.17g}" for x in sample.times]
    return "\n".join(lines) + "\n"


def write_events(sample: EventSample, path: str | Path, fmt: Literal["text", "json"] = "text") -> None:
    Path(path).write_text(format_events(sample, fmt))


def parse_events(text: str) -> EventSample:
    """Parse either event-file form; errors name the offending line."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
            return EventSample.from_unsorted(doc["times"], float(doc["L"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise EventFileError(f"bad JSON event document: {exc}") from exc
    lines = text.splitlines()
    L = None
    times = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if L is None:
            key, sep, value = line.partition("=")
            if not sep or key.strip() != "L":
                raise EventFileError(f"line {lineno}: expected header 'L=<value>', got {raw!r}")
            try:
                L = float(value)
            except ValueError:
                raise EventFileError(f"line {lineno}: bad L value {value!r}") from None
            continue
        try:
            times.append(float(line))
        except ValueError:
            raise EventFileError(f"line {lineno}: not a number: {raw!r}") from None
    if L is None:
        raise EventFileError("missing header 'L=<value>'")
    try:
        return EventSample.from_unsorted(times, L)
    except InvalidParameterError as exc:
        raise EventFileError(str(exc)) from exc


def read_events(path: str | Path) -> EventSample:
    return parse_events(Path(path).read_text())
