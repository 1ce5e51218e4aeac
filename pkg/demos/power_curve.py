"""Power against the size of a bump, for a scan detector and the Laplace test.

The Laplace test sums the event times, so a bump in the middle of the interval
barely moves it; the window scan picks it up.  Run with
``python3 demos/power_curve.py`` (a few seconds).
"""

from __future__ import annotations

from poisson_change import CriticalValueStore, DetectorSpec, PiecewiseIntensity
from poisson_change.bench import Evaluator, estimate_power

L, reps = 100.0, 200
store = CriticalValueStore()
detectors = {
    "TC2": Evaluator(DetectorSpec("phi9_10_quad_known", lambda0=1.0, correction="minp", B=50_000), L, store),
    "La": Evaluator(DetectorSpec("laplace", B=50_000), L, store),
}

print("delta  " + "  ".join(f"{k:>6s}" for k in detectors))
for delta in (-0.8, -0.4, 0.0, 0.4, 0.8):
    alt = PiecewiseIntensity(1.0) if delta == 0 else PiecewiseIntensity.bump(1.0, delta, 0.3, 0.4)
    row = [estimate_power(ev, alt, L, reps, seed=0).estimate for ev in detectors.values()]
    print(f"{delta:+.1f}   " + "  ".join(f"{p:6.3f}" for p in row))
