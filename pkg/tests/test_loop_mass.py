import numpy as np
import pytest

from loopanomaly.conformal_field import AnalyticBump, Box, GridField, ZeroField
from loopanomaly.errors import ConfigurationError, RefusalError
from loopanomaly.loop_mass import (
    brownian_coefficient_identity,
    clen_mass_exact,
    convergence_table,
    delta_sweep,
    estimate_anomaly_direct,
    estimate_discrepancy,
    mass_direct_bruteforce,
    predicted_anomaly,
)
from loopanomaly.loop_space import MeasureSpec

BUMP = AnalyticBump(0.5, 2.0, box=Box.square(2.5))
STRONG = AnalyticBump(1.5, 2.0, box=Box.square(2.5))


def _plateau(c, m=40, h=0.1):
    v = np.zeros((m + 1, m + 1))
    v[1:-1, 1:-1] = c
    return GridField(v, h)


def test_clen_mass_examples():
    unit = ZeroField(Box(0, 1, 0, 1))
    assert clen_mass_exact(unit, delta=0.1) == pytest.approx(1 / (2 * np.pi * 0.1), rel=1e-14)
    assert clen_mass_exact(unit, delta=0.1) == pytest.approx(1.5915494309189535, rel=1e-14)
    gen = MeasureSpec.circle(1.0, normalization=1.0)
    assert clen_mass_exact(ZeroField(Box(0, 2, 0, 1)), delta=0.5, measure=gen) == pytest.approx(4.0)
    inner = Box(0.5, 3.5, 0.5, 3.5)
    doubled = clen_mass_exact(_plateau(np.log(2.0)), inner, 0.2)
    assert doubled == pytest.approx(2 * clen_mass_exact(ZeroField(inner), inner, 0.2), rel=1e-12)
    with pytest.raises(ConfigurationError):
        clen_mass_exact(unit, delta=0.0)


def test_brownian_coefficient():
    assert brownian_coefficient_identity()
    m = MeasureSpec.brownian()
    assert predicted_anomaly(BUMP, m, energy=1.0) == pytest.approx(1 / (48 * np.pi), rel=1e-14)


@pytest.mark.parametrize("estimator", ["direct", "discrepancy"])
def test_zero_field_exact_zero(estimator):
    f = ZeroField(Box.square(1.0))
    fn = estimate_anomaly_direct if estimator == "direct" else estimate_discrepancy
    e = fn(f, delta=0.01, N=2000, rng=0)
    assert e.value == 0.0 and e.std_error == 0.0
    assert e.details["per_sample_zero"]


def test_discrepancy_zero_on_plateau():
    f = _plateau(0.3)
    e = estimate_discrepancy(f, Box(1.5, 2.5, 1.5, 2.5), delta=1e-4, N=2000, rng=1)
    assert abs(e.value) < 1e-9


def test_normalization_equivariance():
    m1 = MeasureSpec(normalization=1.0)
    m2 = MeasureSpec(normalization=2.0)
    for fn in (estimate_anomaly_direct, estimate_discrepancy):
        a = fn(BUMP, delta=0.05, measure=m1, N=2000, rng=5)
        b = fn(BUMP, delta=0.05, measure=m2, N=2000, rng=5)
        assert b.value == pytest.approx(2 * a.value, rel=1e-14)
        assert b.std_error == pytest.approx(2 * a.std_error, rel=1e-14)
        assert b.normalized_value == pytest.approx(a.normalized_value, rel=1e-14)


def test_direct_and_discrepancy_agree_with_prediction():
    pred = predicted_anomaly(BUMP, MeasureSpec.brownian())
    d = estimate_anomaly_direct(BUMP, delta=0.02, N=30_000, rng=2)
    z = estimate_discrepancy(BUMP, delta=0.02, N=30_000, rng=3)
    assert d.value > 0 and d.fallback_rate == 0.0
    assert abs(d.value - pred) < 4 * d.std_error + 0.05 * pred
    assert abs(z.value - pred) < 4 * z.std_error + 0.05 * pred


@pytest.mark.parametrize("z_time", ["grid", "continuous", "average"])
def test_discrepancy_time_options(z_time):
    pred = predicted_anomaly(BUMP, MeasureSpec.brownian())
    z = estimate_discrepancy(BUMP, delta=0.02, N=20_000, rng=4, z_time=z_time)
    assert abs(z.value - pred) < 4 * z.std_error + 0.05 * pred
    assert z.details["z_time"] == z_time


def test_discrepancy_option_validation():
    with pytest.raises(ConfigurationError):
        estimate_discrepancy(BUMP, N=2000, weighting="volume")
    with pytest.raises(ConfigurationError):
        estimate_discrepancy(BUMP, N=2000, z_time="midpoint")


def test_small_N_rejected():
    with pytest.raises(ConfigurationError):
        estimate_anomaly_direct(BUMP, N=999)
    with pytest.raises(ConfigurationError):
        mass_direct_bruteforce(BUMP, N=500)


def test_refusal_on_fallback():
    with pytest.raises(RefusalError, match="fallback"):
        estimate_anomaly_direct(BUMP, delta=0.05, N=2000, rng=0, d_star=1e-3)


def test_worker_count_determinism():
    a = estimate_anomaly_direct(BUMP, delta=0.03, N=5000, rng=[7, 1], workers=1)
    b = estimate_anomaly_direct(BUMP, delta=0.03, N=5000, rng=[7, 1], workers=3)
    assert a.value == b.value and a.std_error == b.std_error
    c = estimate_discrepancy(BUMP, delta=0.03, N=5000, rng=8, workers=1)
    d = estimate_discrepancy(BUMP, delta=0.03, N=5000, rng=8, workers=2)
    assert c.value == d.value


def test_bruteforce_flat_is_exact():
    f = ZeroField(Box.square(1.0))
    m = mass_direct_bruteforce(f, delta=0.05, N=2000)
    assert m.value == pytest.approx(clen_mass_exact(f, delta=0.05), rel=1e-15)
    assert m.std_error == 0.0


def test_bruteforce_t_max_validation():
    with pytest.raises(ConfigurationError):
        mass_direct_bruteforce(BUMP, delta=0.05, N=2000, t_max=0.01)


def test_bruteforce_excess_is_positive_and_matches_direct():
    delta = 0.05
    bf = mass_direct_bruteforce(STRONG, delta=delta, N=100_000, rng=0)
    excess = bf.value - clen_mass_exact(STRONG, delta=delta)
    d = estimate_anomaly_direct(STRONG, delta=delta, N=20_000, rng=1)
    se = np.hypot(bf.std_error, d.std_error)
    assert excess > 0
    assert abs(excess - d.value) < 4 * se


def test_bruteforce_control_variate_consistent():
    delta = 0.1
    f = AnalyticBump(1.0, 1.0)
    cv = mass_direct_bruteforce(f, delta=delta, N=40_000, rng=2)
    raw = mass_direct_bruteforce(f, delta=delta, N=40_000, rng=3, control_variate=False, t_max=8.0)
    assert abs(cv.value - raw.value) < 4 * np.hypot(cv.std_error, raw.std_error)
    assert cv.std_error < raw.std_error
    value, se = cv
    assert value == cv.value and se == cv.std_error


def test_delta_sweep_validation_and_crn():
    with pytest.raises(ConfigurationError):
        delta_sweep(BUMP, deltas=(0.01, 0.02), N=2000)
    with pytest.raises(ConfigurationError):
        delta_sweep(BUMP, deltas=(0.02, -0.01), N=2000)
    with pytest.raises(ConfigurationError):
        delta_sweep(BUMP, deltas=(0.02,), N=2000, estimator="bruteforce")
    rows = delta_sweep(BUMP, deltas=(0.04, 0.02), N=3000, rng=9)
    again = estimate_anomaly_direct(BUMP, delta=0.02, N=3000, rng=9)
    assert rows[1].value == again.value
    # common random numbers make the per-delta values strongly correlated
    assert abs(rows[0].value - rows[1].value) < rows[0].std_error


def test_convergence_table():
    rows = delta_sweep(BUMP, deltas=(0.04, 0.02), N=2000, rng=1, estimator="discrepancy")
    table = convergence_table(rows, prediction=0.00625)
    assert [r["delta"] for r in table] == [0.04, 0.02]
    assert table[0]["difference"] == pytest.approx(rows[0].value - 0.00625)
    assert "difference" not in convergence_table(rows)[0]
