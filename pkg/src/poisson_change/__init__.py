"""Minimax detection of a bump or a jump in the intensity of a Poisson process."""

from __future__ import annotations

from .calibration import CriticalValueStore, QuantileQuery, mc_quantile, poisson_quantile
from .detectors import ALL_DETECTORS, DetectorSpec, TestReport, run_detector
from .process import EventSample, PiecewiseIntensity, read_events, simulate, write_events

__all__ = [
    "ALL_DETECTORS",
    "CriticalValueStore",
    "DetectorSpec",
    "EventSample",
    "PiecewiseIntensity",
    "QuantileQuery",
    "TestReport",
    "mc_quantile",
    "poisson_quantile",
    "read_events",
    "run_detector",
    "simulate",
    "write_events",
]
__version__ = "0.1.0"
