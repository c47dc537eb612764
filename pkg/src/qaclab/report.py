"""Two-sided comparability checks on log-log samples.

A claim ``LHS(r) ~ RHS(r)`` up to constants is tested by sampling both
sides over a range of scales, fitting the slope of
``log LHS - log RHS`` against ``log r`` and bounding the spread of the
difference.  A flat difference with a small band means the two sides agree
up to a multiplicative constant; a drifting slope means the claimed
exponent is wrong.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ComparabilityReport", "compare_samples", "fit_loglog_slope"]

DEFAULT_SLOPE_TOL = 0.25
DEFAULT_BAND_TOL = float(np.log(10.0))

MIN_SAMPLES = 8
MIN_DECADES = 1.5


def fit_loglog_slope(scales, values) -> tuple[float, float]:
    """Least-squares slope and intercept of log(values) vs log(scales)."""
    x = np.log(np.asarray(scales, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


@dataclass
class ComparabilityReport:
    """Outcome of a two-sided comparison across scales."""

    name: str
    scales: np.ndarray
    log_lhs: np.ndarray
    log_rhs: np.ndarray
    slope_tol: float = DEFAULT_SLOPE_TOL
    band_tol: float = DEFAULT_BAND_TOL
    notes: list[str] = field(default_factory=list)

    slope: float = field(init=False)
    band: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=float)
        self.log_lhs = np.asarray(self.log_lhs, dtype=float)
        self.log_rhs = np.asarray(self.log_rhs, dtype=float)
        if not (len(self.scales) == len(self.log_lhs) == len(self.log_rhs)):
            raise ValueError("scales and sample arrays must have equal length")
        if len(self.scales) < MIN_SAMPLES:
            self.notes.append(f"only {len(self.scales)} samples (need {MIN_SAMPLES})")
        span = np.log10(self.scales.max() / self.scales.min()) if len(self.scales) else 0.0
        if span < MIN_DECADES:
            self.notes.append(f"scales span only {span:.2f} decades (need {MIN_DECADES})")
        diff = self.log_lhs - self.log_rhs
        if len(self.scales) >= 2 and span > 0:
            self.slope = float(np.polyfit(np.log(self.scales), diff, 1)[0])
        else:
            self.slope = float("nan")
        self.band = float(diff.max() - diff.min()) if len(diff) else float("nan")
        self.passed = (
            len(self.scales) >= MIN_SAMPLES
            and span >= MIN_DECADES
            and abs(self.slope) <= self.slope_tol
            and self.band <= self.band_tol
        )

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = (
            f"[{status}] {self.name}: slope={self.slope:+.3f} "
            f"(tol {self.slope_tol}), band={self.band:.3f} (tol {self.band_tol:.3f}), "
            f"{len(self.scales)} samples"
        )
        if self.notes:
            msg += " | " + "; ".join(self.notes)
        return msg

    def __bool__(self) -> bool:
        return self.passed


def compare_samples(
    name: str,
    scales,
    lhs,
    rhs,
    slope_tol: float = DEFAULT_SLOPE_TOL,
    band_tol: float = DEFAULT_BAND_TOL,
) -> ComparabilityReport:
    """Build a report from raw (not yet logged) positive samples."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if np.any(lhs <= 0) or np.any(rhs <= 0):
        raise ValueError("comparability samples must be positive")
    return ComparabilityReport(
        name=name,
        scales=np.asarray(scales, dtype=float),
        log_lhs=np.log(lhs),
        log_rhs=np.log(rhs),
        slope_tol=slope_tol,
        band_tol=band_tol,
    )
