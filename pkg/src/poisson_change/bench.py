"""Size and power experiments over the reference alternative grids.

Every experiment uses ``lambda0 = 1``, ``L = 100`` and the min-p calibrated scan
detectors next to the Laplace and Z reference tests.  Null and alternative
replicates are drawn from simulation streams keyed by the table cell, so all
detectors of one cell see the same samples, and calibration pools (drawn from
their own stream) never overlap the evaluation replicates.
"""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import _rng
from .calibration import CriticalValueStore, calibrate_grid, grid_values
from .detectors import DetectorSpec, run_detector
from .errors import InvalidParameterError, SpecError
from .families import FAMILIES, window_grid
from .process import EventSample, PiecewiseIntensity, counts, simulate

DELTAS = (-0.8, -0.6, -0.4, -0.2, 0.2, 0.4, 0.6, 0.8)
THETA_D = tuple(1 - 2.0**-k for k in range(1, 7))
THETA_R = tuple(k / 10 for k in range(1, 10))
ROUNDING = 0.005  # reference values carry two decimals
DESK = {"null_reps": 2000, "alt_reps": 500, "B": 50_000}
FULL_SCALE = {"null_reps": 5000, "alt_reps": 1000, "B": 200_000}

Detector = DetectorSpec | Callable[[EventSample], float]


# -- presets --------------------------------------------------------------------------


def preset_specs(baseline: str, *, alpha: float = 0.05, B: int = 200_000, seed: int = 0, lambda0: float = 1.0) -> dict[str, DetectorSpec]:
    """Named detectors of the experiments, keyed by their table label.

    Known baseline: ``CP1d``/``CP2d`` scan the dyadic jump locations ``1 - 2^-k``
    (the default ``phi8`` grid at ``L = 100``), ``CP1r``/``CP2r`` the regular grid
    ``k/10``, ``TC1``/``TC2`` the full ``100 x 100`` window triangle.  Unknown
    baseline: the ``u`` variants, with the two-sided dyadic grid and the
    ``22 x 22`` triangle for ``TC2u``.  All grid detectors use min-p levels.
    """
    common = {"alpha": alpha, "B": B, "seed": seed}
    out = {"La": DetectorSpec("laplace", **common), "Z": DetectorSpec("z", alpha=alpha)}
    if baseline == "known":
        k = {**common, "lambda0": lambda0, "correction": "minp"}
        out.update(
            CP1d=DetectorSpec("phi8_lin_known", **k),
            CP2d=DetectorSpec("phi8_quad_known", **k),
            CP1r=DetectorSpec("phi8_lin_known", grid=THETA_R, **k),
            CP2r=DetectorSpec("phi8_quad_known", grid=THETA_R, **k),
            TC1=DetectorSpec("phi9_10_lin_known", **k),
            TC2=DetectorSpec("phi9_10_quad_known", **k),
        )
    elif baseline == "unknown":
        k = {**common, "correction": "minp"}
        out.update(
            CP1ud=DetectorSpec("phi8_lin_cond", **k),
            CP2ud=DetectorSpec("phi8_quad_cond", **k),
            CP1ur=DetectorSpec("phi8_lin_cond", grid=THETA_R, **k),
            CP2ur=DetectorSpec("phi8_quad_cond", grid=THETA_R, **k),
            TC1u=DetectorSpec("phi9_10_lin_cond", **k),
            TC2u=DetectorSpec("phi9_10_quad_cond", **k),
        )
    else:
        raise InvalidParameterError(f"baseline must be 'known' or 'unknown', got {baseline!r}")
    return out


# -- evaluation -------------------------------------------------------------------------


class Evaluator:
    """Rejection probability of one detector, with grid calibrations cached per ``n``.

    Grid families skip the per-window report and compare the window statistics
    with the stored thresholds directly; every other detector goes through
    :func:`~poisson_change.detectors.run_detector`.
    """

    def __init__(self, detector: Detector, L: float, store: CriticalValueStore | None = None) -> None:
        self.detector, self.L = detector, L
        self.store = store if store is not None else CriticalValueStore()
        self._cal: dict[int | None, np.ndarray] = {}
        self._grid = None
        spec = detector if isinstance(detector, DetectorSpec) else None
        self.info = FAMILIES.get(spec.family) if spec is not None else None
        if self.info is not None and self.info.shape == "grid":
            self._grid = window_grid(
                spec.family, spec.alpha, L, tau_star=spec.tau_star, ell_star=spec.ell_star, grid=spec.grid
            )

    def thresholds(self, n: int | None) -> np.ndarray:
        if n not in self._cal:
            spec, info = self.detector, self.info
            cal = calibrate_grid(
                spec.family, info.stat, self._grid, alpha=spec.alpha, L=self.L, correction=spec.resolved_correction,
                B=spec.B, seed=spec.seed, lambda0=None if info.conditional else spec.lambda0, n=n,
                validate=spec.validate, store=self.store,
            )
            self._cal[n] = cal.thresholds
        return self._cal[n]

    def __call__(self, sample: EventSample) -> float:
        if not isinstance(self.detector, DetectorSpec):
            return float(self.detector(sample))
        if self._grid is None:
            return run_detector(self.detector, sample, self.store).probability
        g, spec = self._grid, self.detector
        n = sample.n if self.info.conditional else None
        th = self.thresholds(n)
        f = grid_values(self.info.stat, g.hi - g.lo, counts(sample, g.lo, g.hi), L=sample.L, lambda0=spec.lambda0, n=n)
        return 1.0 if bool(np.any(f > th)) else 0.0


@dataclass(frozen=True)
class Estimate:
    """Rejection frequency with its binomial standard error ``sqrt(p(1-p)/reps)``."""

    estimate: float
    stderr: float
    reps: int

    @classmethod
    def from_count(cls, rejections: int, reps: int) -> "Estimate":
        p = rejections / reps
        return cls(p, math.sqrt(p * (1 - p) / reps), reps)


def cell_seed(seed: int, label: str) -> int:
    """Simulation seed of one table cell, shared by every detector of the cell."""
    return int(_rng.generator(seed, _rng.BENCH, zlib.crc32(label.encode())).integers(2**62))


def _intensity_label(intensity: PiecewiseIntensity, L: float) -> str:
    edges, rates = intensity.segments
    return json.dumps({"edges": edges.tolist(), "rates": rates.tolist(), "L": L})


def rejection_frequency(evaluate: Callable[[EventSample], float], intensity: PiecewiseIntensity, L: float, reps: int, seed: int) -> Estimate:
    """Fraction of ``reps`` replicates rejected; fractional probabilities are realized with auxiliary uniforms."""
    if reps < 1:
        raise InvalidParameterError("reps must be at least 1")
    s = cell_seed(seed, _intensity_label(intensity, L))
    hits = 0
    for r in range(reps):
        p = evaluate(simulate(intensity, L, s, r))
        if p >= 1:
            hits += 1
        elif p > 0:
            hits += bool(_rng.generator(s, _rng.RANDOMIZE, r).random() < p)
    return Estimate.from_count(hits, reps)


def _evaluator(detector: Detector | Evaluator, L: float, store) -> Evaluator:
    return detector if isinstance(detector, Evaluator) else Evaluator(detector, L, store)


def estimate_size(
    detector: Detector | Evaluator, lambda0: float, L: float, reps: int, seed: int, store: CriticalValueStore | None = None
) -> Estimate:
    """Rejection frequency under the constant intensity ``lambda0``."""
    if reps < 100:
        raise InvalidParameterError(f"size estimates need at least 100 replicates, got {reps}")
    return rejection_frequency(_evaluator(detector, L, store), PiecewiseIntensity(lambda0), L, reps, seed)


def estimate_power(
    detector: Detector | Evaluator,
    alternative: PiecewiseIntensity,
    L: float,
    reps: int,
    seed: int,
    store: CriticalValueStore | None = None,
) -> Estimate:
    """Rejection frequency under ``alternative``."""
    return rejection_frequency(_evaluator(detector, L, store), alternative, L, reps, seed)


# -- reference tables -------------------------------------------------------------------


@lru_cache(maxsize=1)
def reference_tables() -> dict:
    """The embedded reference values: one entry per table id, each with its caption."""
    text = resources.files("poisson_change").joinpath("data/reference_tables.json").read_text()
    return json.loads(text)


def table_ids() -> tuple[str, ...]:
    return tuple(reference_tables()["tables"])


def alternative_for(entry: dict, delta: float, lambda0: float = 1.0) -> PiecewiseIntensity:
    alt = entry["alternative"]
    if alt["shape"] == "jump":
        return PiecewiseIntensity.jump(lambda0, delta, alt["tau"])
    return PiecewiseIntensity.bump(lambda0, delta, alt["tau"], alt["ell"])


@dataclass(frozen=True)
class BenchConfig:
    """Which tables to reproduce and at what replication scale."""

    tables: tuple[str, ...]
    null_reps: int = DESK["null_reps"]
    alt_reps: int = DESK["alt_reps"]
    B: int = DESK["B"]
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self) -> None:
        object.__setattr__(self, "tables", tuple(self.tables))
        known = reference_tables()["tables"]
        bad = [t for t in self.tables if t not in known]
        if bad:
            raise SpecError(f"unknown table id(s) {bad}; known: {', '.join(known)}")
        if self.null_reps < 1 or self.alt_reps < 1 or self.B < 1:
            raise InvalidParameterError("replication counts and B must be at least 1")

    @classmethod
    def full_scale(cls, tables: Iterable[str], **kw) -> "BenchConfig":
        return cls(tuple(tables), **{**FULL_SCALE, **kw})


@dataclass(frozen=True)
class ResultRow:
    detector: str
    delta: float | None
    estimate: float
    stderr: float
    reps: int
    reference: float
    diff: float
    flagged: bool


@dataclass
class ResultTable:
    """Estimates of one reference table with their deviations from the embedded values."""

    table: str
    caption: str
    deltas: tuple[float, ...] | None
    rows: list[ResultRow] = field(default_factory=list)

    @property
    def flagged(self) -> list[ResultRow]:
        return [r for r in self.rows if r.flagged]

    def detectors(self) -> list[str]:
        return list(dict.fromkeys(r.detector for r in self.rows))

    def cell(self, detector: str, delta: float | None = None) -> ResultRow:
        for r in self.rows:
            if r.detector == detector and (delta is None or r.delta == delta):
                return r
        raise KeyError((detector, delta))

    def to_dict(self) -> dict:
        return {"table": self.table, "caption": self.caption, "deltas": self.deltas, "rows": [asdict(r) for r in self.rows]}

    def to_csv(self) -> str:
        """One row per (detector, quantity); the columns after the first two follow the delta grid."""
        cols = [f"{d:g}" for d in self.deltas] if self.deltas is not None else ["size"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detector", "quantity", *cols])
        for det in self.detectors():
            cells = [r for r in self.rows if r.detector == det]
            for q in ("estimate", "stderr", "reps", "reference", "diff", "flagged"):
                vals = [getattr(r, q) for r in cells]
                w.writerow([det, q, *(_fmt(v) for v in vals)])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return f"{v:.6f}"


def pooled_stderr(estimate: float, reps: int, reference: float, reference_reps: int) -> float:
    return math.sqrt(estimate * (1 - estimate) / reps + reference * (1 - reference) / reference_reps)


def is_flagged(diff: float, pooled: float) -> bool:
    return abs(diff) > 3 * pooled + ROUNDING


def _row(det: str, delta, est: Estimate, reference: float, reference_reps: int) -> ResultRow:
    diff = est.estimate - reference
    flag = is_flagged(diff, pooled_stderr(est.estimate, est.reps, reference, reference_reps))
    return ResultRow(det, delta, est.estimate, est.stderr, est.reps, reference, diff, flag)


def reproduce_tables(
    config: BenchConfig,
    store: CriticalValueStore | None = None,
    progress: Callable[[str], None] | None = None,
) -> list[ResultTable]:
    """Estimate every cell of the selected tables and compare with the embedded values.

    A cell is flagged when its deviation exceeds three pooled standard errors
    (this run's and the reference run's) plus the two-decimal rounding allowance.
    """
    ref = reference_tables()
    lambda0, L = ref["lambda0"], ref["L"]
    reference_reps = ref["reps"]
    store = store if store is not None else CriticalValueStore()
    evaluators: dict[tuple[str, str], Evaluator] = {}
    out = []
    for tid in config.tables:
        entry = ref["tables"][tid]
        specs = preset_specs(entry["baseline"], alpha=config.alpha, B=config.B, seed=config.seed, lambda0=lambda0)
        table = ResultTable(tid, entry["caption"], tuple(entry["deltas"]) if entry["kind"] == "power" else None)
        for label, values in entry["cells"].items():
            ev = evaluators.setdefault((entry["baseline"], label), Evaluator(specs[label], L, store))
            if progress is not None:
                progress(f"{tid}: {label}")
            if entry["kind"] == "size":
                est = estimate_size(ev, lambda0, L, config.null_reps, config.seed)
                table.rows.append(_row(label, None, est, values, reference_reps["size"]))
                continue
            for delta, reference in zip(entry["deltas"], values):
                est = estimate_power(ev, alternative_for(entry, delta, lambda0), L, config.alt_reps, config.seed)
                table.rows.append(_row(label, delta, est, reference, reference_reps["power"]))
        out.append(table)
    return out


def write_tables(tables: list[ResultTable], outdir: str | Path) -> list[Path]:
    """One CSV per table plus ``tables.json`` holding all of them."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in tables:
        p = outdir / f"{t.table}.csv"
        p.write_text(t.to_csv())
        paths.append(p)
    p = outdir / "tables.json"
    p.write_text(json.dumps([t.to_dict() for t in tables], indent=1, sort_keys=True) + "\n")
    paths.append(p)
    return paths

