"""Detect a jump when the baseline rate is unknown.

Conditioning on the total count makes the event times i.i.d. uniform under the
null, whatever the rate, so the critical values depend on ``n`` only.  The
store keeps them, and a second pass over samples with the same counts needs no
new simulation.

Run with ``python3 demos/unknown_baseline.py``.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from poisson_change import CriticalValueStore, DetectorSpec, PiecewiseIntensity, run_detector, simulate

spec = DetectorSpec("phi8_quad_cond", correction="minp", B=50_000)
path = Path(tempfile.mkdtemp()) / "store.jsonl"

for rate in (0.5, 2.0, 8.0):
    jump = PiecewiseIntensity.jump(rate, rate, 0.7)  # the rate doubles after 0.7
    sample = simulate(jump, 50.0, seed=1)
    report = run_detector(spec, sample, CriticalValueStore(path), alternative=jump)
    print(f"baseline {rate:4.1f}: n={sample.n:4d} decision={report.decision} d2={report.d2:.3f}")

print(f"{len(CriticalValueStore(path))} stored thresholds in {path}")

# Rerun without calibration: every threshold is read back from the store.
for rate in (0.5, 2.0, 8.0):
    sample = simulate(PiecewiseIntensity.jump(rate, rate, 0.7), 50.0, seed=1)
    report = run_detector(spec, sample, CriticalValueStore(path), calibrate=False)
    print(f"baseline {rate:4.1f}: replayed decision={report.decision}")
