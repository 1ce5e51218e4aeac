"""Command-line interface: ``simulate``, ``calibrate``, ``test`` and ``bench``.

Exit codes: 0 accept (or success), 1 reject (or flagged deviations under
``bench --check``), 2 error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .bench import DESK, FULL_SCALE, BenchConfig, reproduce_tables, table_ids, write_tables
from .calibration import CriticalValueStore
from .detectors import ALL_DETECTORS, DetectorSpec, run_detector
from .errors import (
    BudgetExceededError,
    CalibrationFailureError,
    CalibrationRequiredError,
    NumericFailureError,
)
from .families import FAMILIES
from .process import EventSample, PiecewiseIntensity, format_events, read_events, simulate, write_events

STORE_ENV = "POISSON_CHANGE_STORE"
_ERRORS = (ValueError, LookupError, OSError, CalibrationFailureError, BudgetExceededError, NumericFailureError)

_FAMILY_HELP = "Detector ids: " + ", ".join(ALL_DETECTORS) + "."


def _guard(fn):
    """Report package and I/O errors on stderr with exit code 2."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CalibrationRequiredError as exc:
            click.echo(f"error: calibration required: {exc}", err=True)
        except _ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
        sys.exit(2)

    return wrapper


def _store(path: str | None) -> CriticalValueStore:
    return CriticalValueStore(Path(path) if path else None)


store_option = click.option(
    "--store", "store_path", envvar=STORE_ENV, type=click.Path(dir_okay=False),
    help=f"Critical-value store (JSON lines). Defaults to ${STORE_ENV}; in-memory when unset.",
)


def spec_options(fn):
    """Inline detector flags; ``--spec`` loads a JSON document instead."""
    opts = [
        click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), help="JSON detector spec."),
        click.option("--family", type=click.Choice(ALL_DETECTORS), help="Detector id."),
        click.option("--alpha", type=float, default=0.05, show_default=True),
        click.option("--lambda0", "spec_lambda0", type=float, help="Known baseline."),
        click.option("--R", "R", type=float, help="Bound on an unknown baseline (documentation only)."),
        click.option("--delta-star", type=float),
        click.option("--tau-star", type=float),
        click.option("--ell-star", type=float),
        click.option("--correction", type=click.Choice(["bonferroni", "minp"])),
        click.option("--grid", "grid_text", help="Comma-separated jump locations for phi8 families."),
        click.option("--B", "B", type=int, default=200_000, show_default=True, help="Monte Carlo replicates."),
        click.option("--seed", type=int, default=0, show_default=True, help="Calibration and randomization seed."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def build_spec(spec_path, family, alpha, spec_lambda0, R, delta_star, tau_star, ell_star, correction, grid_text, B, seed) -> DetectorSpec:
    if spec_path:
        return DetectorSpec.from_json(Path(spec_path).read_text())
    if family is None:
        raise click.UsageError("give --family or --spec")
    grid = tuple(float(x) for x in grid_text.split(",")) if grid_text else None
    return DetectorSpec(
        family, alpha=alpha, lambda0=spec_lambda0, R=R, delta_star=delta_star, tau_star=tau_star,
        ell_star=ell_star, correction=correction, grid=grid, B=B, seed=seed,
    )


@click.group(epilog=_FAMILY_HELP)
def main() -> None:
    """Detect a bump or a jump in the intensity of a Poisson process on [0, 1]."""


@main.command("simulate", epilog=_FAMILY_HELP)
@click.option("--lambda0", type=float, default=1.0, show_default=True)
@click.option("--delta", type=float, default=0.0, show_default=True, help="Change height; 0 for the null.")
@click.option("--tau", type=float, help="Change location.")
@click.option("--ell", type=float, help="Change length; a jump to 1 when omitted.")
@click.option("--L", "L", type=float, required=True, help="Scale: expected count per unit intensity.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--replicate", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Output file; stdout when omitted.")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text", show_default=True)
@_guard
def cmd_simulate(lambda0, delta, tau, ell, L, seed, replicate, out, fmt) -> None:
    """Draw an event sample and write it in the event-file format."""
    if delta != 0 and tau is None:
        raise click.UsageError("--delta needs --tau")
    if delta == 0:
        intensity = PiecewiseIntensity(lambda0)
    else:
        intensity = PiecewiseIntensity(lambda0, delta, tau, ell if ell is not None else 1.0 - tau)
    sample = simulate(intensity, L, seed, replicate)
    if out:
        write_events(sample, out, fmt)
        return
    click.echo(format_events(sample, fmt), nl=False)


def _probe_sample(n: int, L: float) -> EventSample:
    # Calibration queries depend on the sample only through n and L.
    return EventSample((np.arange(n) + 0.5) / max(n, 1), L)


@main.command("calibrate", epilog=_FAMILY_HELP)
@spec_options
@click.option("--L", "L", type=float, required=True)
@click.option("--n", "ns", type=int, multiple=True, help="Total counts to calibrate conditional detectors for.")
@store_option
@_guard
def cmd_calibrate(spec_path, family, alpha, spec_lambda0, R, delta_star, tau_star, ell_star, correction, grid_text, B, seed, L, ns, store_path) -> None:
    """Compute and store the critical values a detector needs."""
    spec = build_spec(spec_path, family, alpha, spec_lambda0, R, delta_star, tau_star, ell_star, correction, grid_text, B, seed)
    if not store_path:
        raise click.UsageError(f"calibrate needs --store or ${STORE_ENV}")
    store = _store(store_path)
    before = len(store)
    info = FAMILIES.get(spec.family)
    conditional = spec.family == "laplace" or (info is not None and info.conditional)
    if conditional and not ns:
        raise click.UsageError(f"{spec.family} is calibrated per total count; give --n")
    for n in ns if conditional else (0,):
        run_detector(spec, _probe_sample(n, L), store)
    added = len(store) - before
    click.echo(f"{added} new record(s) in {store_path}" if added else f"store hit: nothing to do ({store_path})")


@main.command("test", epilog=_FAMILY_HELP)
@click.argument("events", type=click.Path(dir_okay=False))
@spec_options
@store_option
@click.option("--no-calibrate", is_flag=True, help="Fail instead of computing missing critical values.")
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON only.")
@click.pass_context
@_guard
def cmd_test(ctx, events, spec_path, family, alpha, spec_lambda0, R, delta_star, tau_star, ell_star, correction, grid_text, B, seed, store_path, no_calibrate, as_json) -> None:
    """Run a detector on an event file; exit 0 on accept, 1 on reject."""
    spec = build_spec(spec_path, family, alpha, spec_lambda0, R, delta_star, tau_star, ell_star, correction, grid_text, B, seed)
    sample = read_events(events)
    report = run_detector(spec, sample, _store(store_path), calibrate=not no_calibrate)
    rejected = report.realize(spec.seed)
    doc = report.to_dict()
    doc["realized"] = "reject" if rejected else "accept"
    if as_json:
        click.echo(json.dumps(doc, sort_keys=True))
    else:
        click.echo(_human(report, rejected))
    ctx.exit(1 if rejected else 0)


def _human(report, rejected: bool, top: int = 10) -> str:
    lines = [
        f"detector    {report.family}",
        f"events      {report.n}",
        f"probability {report.probability:.6g}",
        f"decision    {'reject' if rejected else 'accept'}",
    ]
    if report.ledger:
        rows = sorted(report.ledger, key=lambda w: w.margin, reverse=True)[:top]
        lines.append(f"{'window':>24} {'statistic':>12} {'threshold':>12} {'side':>6}")
        for w in rows:
            win = f"({w.window[0]:.4g}, {w.window[1]:.4g}]" if isinstance(w.window, tuple) else str(w.window)
            lines.append(f"{win:>24} {w.statistic:12.6g} {w.threshold:12.6g} {w.side:>6}")
        if len(report.ledger) > top:
            lines.append(f"... {len(report.ledger) - top} more window(s)")
    return "\n".join(lines)


@main.command("bench", epilog="Table ids: " + ", ".join(table_ids()) + ".")
@click.option("--table", "tables", multiple=True, help="Table id (repeatable); all tables when omitted.")
@click.option("--paper-scale", "full_scale", is_flag=True, help=f"Use {FULL_SCALE['null_reps']}/{FULL_SCALE['alt_reps']} reps and B={FULL_SCALE['B']}.")
@click.option("--reps", type=int, help="Replicates for both null and alternative cells.")
@click.option("--null-reps", type=int, help=f"Null replicates [desk: {DESK['null_reps']}].")
@click.option("--alt-reps", type=int, help=f"Alternative replicates [desk: {DESK['alt_reps']}].")
@click.option("--B", "B", type=int, help=f"Calibration replicates [desk: {DESK['B']}].")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), help="Directory for one CSV per table plus tables.json.")
@click.option("--check", is_flag=True, help="Exit 1 when flagged cells exceed --max-flag-rate.")
@click.option("--max-flag-rate", type=float, default=0.0, show_default=True)
@store_option
@click.option("--quiet", is_flag=True)
@click.pass_context
@_guard
def cmd_bench(ctx, tables, full_scale, reps, null_reps, alt_reps, B, seed, alpha, out, check, max_flag_rate, store_path, quiet) -> None:
    """Estimate sizes and powers and compare them with the embedded reference tables."""
    scale = dict(FULL_SCALE if full_scale else DESK)
    if reps is not None:
        scale.update(null_reps=reps, alt_reps=reps)
    for key, val in (("null_reps", null_reps), ("alt_reps", alt_reps), ("B", B)):
        if val is not None:
            scale[key] = val
    config = BenchConfig(tables or table_ids(), seed=seed, alpha=alpha, **scale)
    progress = None if quiet else (lambda msg: click.echo(msg, err=True))
    results = reproduce_tables(config, _store(store_path), progress)
    if out:
        for p in write_tables(results, out):
            click.echo(str(p))
    else:
        for t in results:
            click.echo(f"# {t.table}: {t.caption}")
            click.echo(t.to_csv(), nl=False)
    cells = sum(len(t.rows) for t in results)
    flagged = [(t.table, r) for t in results for r in t.flagged]
    for tid, r in flagged:
        where = "size" if r.delta is None else f"delta={r.delta:g}"
        click.echo(f"flagged {tid} {r.detector} {where}: {r.estimate:.3f} vs {r.reference:.3f}", err=True)
    click.echo(f"{len(flagged)}/{cells} cell(s) flagged", err=True)
    if check and len(flagged) > max_flag_rate * cells:
        ctx.exit(1)


if __name__ == "__main__":  # pragma: no cover
    main()
