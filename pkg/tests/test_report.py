import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qaclab.report import ComparabilityReport, compare_samples, fit_loglog_slope


def test_fit_recovers_exact_power_law():
    scales = np.geomspace(1, 100, 20)
    slope, intercept = fit_loglog_slope(scales, 3.0 * scales**2.5)
    assert np.isclose(slope, 2.5)
    assert np.isclose(intercept, np.log(3.0))


def test_comparable_samples_pass():
    scales = np.geomspace(1, 100, 12)
    rep = compare_samples("ok", scales, 2.0 * scales**3, scales**3)
    assert rep.passed
    assert abs(rep.slope) < 1e-12
    assert rep.band < 1e-12


def test_drifting_ratio_fails_slope():
    scales = np.geomspace(1, 100, 12)
    rep = compare_samples("drift", scales, scales**3.5, scales**3)
    assert not rep.passed
    assert rep.slope > 0.25


def test_few_samples_or_narrow_range_noted():
    scales = np.array([1.0, 2.0, 3.0])
    rep = compare_samples("thin", scales, scales, scales)
    assert not rep.passed
    assert rep.notes


def test_mismatched_lengths_rejected():
    with pytest.raises(ValueError):
        ComparabilityReport(
            name="bad",
            scales=np.array([1.0, 2.0]),
            log_lhs=np.zeros(3),
            log_rhs=np.zeros(2),
        )


@settings(deadline=None, max_examples=30)
@given(st.floats(0.3, 4.0), st.floats(0.1, 10.0))
def test_constant_multiples_always_comparable(expo, const):
    scales = np.geomspace(1, 200, 10)
    rep = compare_samples("c", scales, const * scales**expo, scales**expo)
    assert abs(rep.slope) < 1e-9
    assert rep.band < 1e-9
