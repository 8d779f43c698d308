import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loopanomaly.conformal_field import AnalyticBump, FourierField, TaperedSine, ZeroField
from loopanomaly.errors import ConfigurationError, DomainError
from loopanomaly.spectral import (
    TorusSpec,
    bridge_half_statistic,
    clt_fraction,
    flat_loop_mass,
    heat_trace,
    heat_trace_minus_one,
    heat_trace_minus_weyl,
    log_det_scaled,
    mixing_distance,
    pa_rhs,
    sample_windings,
    spectral_report,
    torus_eigenvalues,
    torus_loop_mass,
    weyl_ratio,
    winding_total_weight,
    zeta_determinant,
    zeta_log_determinant,
)

from oracles import heat_trace_direct, torus_log_det_kronecker

UNIT = TorusSpec(1.0, 1.0)


def test_eigenvalues_unit_and_2pi():
    ev = torus_eigenvalues(UNIT, 3)
    assert ev[0] == 0.0
    np.testing.assert_allclose(ev[1:5], 4 * np.pi**2, rtol=1e-15)
    assert ev[5] > 4 * np.pi**2 * 1.5
    ev = torus_eigenvalues(TorusSpec(2 * np.pi, 2 * np.pi), 2)
    m = np.arange(-2, 3)
    np.testing.assert_allclose(ev, np.sort((m[:, None] ** 2 + m[None, :] ** 2).ravel()), atol=1e-13)
    with pytest.raises(ConfigurationError):
        torus_eigenvalues(UNIT, 0)
    with pytest.raises(ConfigurationError):
        TorusSpec(0.0, 1.0)


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_poisson_identity(t):
    for spec in (UNIT, TorusSpec(1.0, 2.0), TorusSpec(0.7, 1.3)):
        a = heat_trace(spec, t, method="spectral")
        b = heat_trace(spec, t, method="dual")
        assert a == pytest.approx(b, rel=1e-10)


@pytest.mark.parametrize("t", [1e-3, 0.05, 0.5, 3.0])
def test_heat_trace_direct_sum(t):
    for L1, L2 in ((1.0, 1.0), (1.0, 2.0), (2.0, 0.5)):
        assert heat_trace(TorusSpec(L1, L2), t) == pytest.approx(heat_trace_direct(L1, L2, t, 200), rel=1e-12)


@pytest.mark.parametrize("t", [1e-1, 1e-2, 1e-3])
def test_weyl_asymptotics(t):
    r = weyl_ratio(UNIT, t)
    assert abs(r - 1) < np.exp(-1 / (4 * t)) * 5 + 1e-14
    assert heat_trace_minus_weyl(UNIT, t) == pytest.approx(heat_trace(UNIT, t) - 1 / (4 * np.pi * t), abs=1e-9)


def test_heat_trace_monotone_and_tail():
    ts = np.geomspace(1e-3, 10, 40)
    z = np.array([heat_trace(UNIT, t) for t in ts])
    assert np.all(np.diff(z) <= 0) and np.all(np.diff(z[ts < 1]) < 0) and np.all(z >= 1)
    assert heat_trace_minus_one(UNIT, 2.0) == pytest.approx(4 * np.exp(-8 * np.pi**2), rel=1e-6)
    with pytest.raises(DomainError):
        heat_trace(UNIT, 0.0)


@pytest.mark.parametrize("L1,L2", [(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (0.5, 3.0)])
def test_zeta_determinant_kronecker(L1, L2):
    spec = TorusSpec(L1, L2)
    assert zeta_log_determinant(spec) == pytest.approx(torus_log_det_kronecker(L1, L2), abs=1e-10)


def test_unit_square_determinant_value():
    assert zeta_determinant(UNIT) == pytest.approx(0.348300982421, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(L1=st.floats(0.3, 3.0), L2=st.floats(0.3, 3.0), s=st.floats(0.25, 4.0))
def test_determinant_symmetry_and_scaling(L1, L2, s):
    a = zeta_log_determinant(TorusSpec(L1, L2))
    assert zeta_log_determinant(TorusSpec(L2, L1)) == pytest.approx(a, abs=1e-9)
    # eigenvalues scale by s^-2 and zeta(0) = -1, so log det' shifts by 2 log s
    assert zeta_log_determinant(TorusSpec(s * L1, s * L2)) == pytest.approx(a + 2 * np.log(s), abs=1e-9)


def test_log_det_scaled_options():
    base = zeta_log_determinant(UNIT)
    assert log_det_scaled(UNIT, "geometric") == pytest.approx(base)
    assert log_det_scaled(UNIT, "generator") == pytest.approx(base + np.log(2.0))
    with pytest.raises(ConfigurationError):
        log_det_scaled(UNIT, "bogus")


def test_mixing_rate_matches_gap():
    for spec in (UNIT, TorusSpec(1.0, 1.5)):
        t1, t2 = 0.2, 0.3
        rate = -np.log(mixing_distance(spec, t2) / mixing_distance(spec, t1)) / (t2 - t1)
        assert rate == pytest.approx(spec.spectral_gap, rel=0.05)


def test_bridge_half_statistic_decreases():
    # short bridges: midpoint variance t/4 against t/2; long ones: both uniform on the circle
    vals = [bridge_half_statistic(UNIT, t, N=20_000, rng=0) for t in (0.05, 0.5, 5.0)]
    assert vals[0] > 0.06
    assert vals[1] < 0.03 and vals[2] < 0.03


@pytest.mark.parametrize("L1,L2", [(1.0, 1.0), (1.0, 2.0)])
def test_flat_mass_matches_generator_normalization(L1, L2):
    spec = TorusSpec(L1, L2)
    delta, C = 1e-3, 60.0
    exact = flat_loop_mass(spec, delta, C)
    gen = pa_rhs(spec, ZeroField(), delta, C, "generator").total
    geo = pa_rhs(spec, None, delta, C, "geometric").total
    assert exact == pytest.approx(gen, abs=1e-8)
    assert geo - gen == pytest.approx(np.log(2.0), abs=1e-12)


def test_flat_mass_validation():
    with pytest.raises(DomainError):
        flat_loop_mass(UNIT, 1.0, 0.5)
    with pytest.raises(DomainError):
        pa_rhs(UNIT, None, 0.0, 1.0)


def test_pa_rhs_dirichlet_term_sine():
    spec = TorusSpec(2 * np.pi, 2 * np.pi)
    r = pa_rhs(spec, TaperedSine(3, taper=False), 0.01, 50.0)
    assert r.dirichlet_term == pytest.approx(np.pi / 24, rel=1e-9)
    assert r.curvature_term == 0.0 and r.euler_char_term == 0.0
    d = r.to_dict()
    assert d["total"] == pytest.approx(r.total)


def test_pa_rhs_two_field_difference():
    f1 = FourierField([(1, 0, 0.1, 0.0)])
    f2 = FourierField([(1, 0, 0.1, 0.0), (0, 1, 0.1, 0.3)])
    a = pa_rhs(UNIT, f1, 0.02, 50.0)
    b = pa_rhs(UNIT, f2, 0.02, 50.0)
    # only the rho-dependent terms move
    assert b.log_C == a.log_C and b.minus_log_det == a.minus_log_det
    diff = b.total - a.total
    want = ((b.volume_term - a.volume_term) + (f2.exact_energy() - f1.exact_energy()) / (48 * np.pi)
            + (b.minus_log_vol_rho - a.minus_log_vol_rho))
    assert diff == pytest.approx(want, rel=1e-8)


def test_winding_law():
    gen = np.random.default_rng(0)
    t = np.full(50_000, 0.3)
    w, retained = sample_windings(1.0, t, gen)
    assert retained > 1 - 1e-12
    p1 = np.exp(-1 / (2 * 0.3)) / winding_total_weight(1.0, 0.3)
    assert np.mean(w == 1) == pytest.approx(p1, abs=4 * np.sqrt(p1 / 50_000))
    assert abs(np.mean(w)) < 0.02
    _, r = sample_windings(1.0, np.array([0.3, 5.0]), gen, max_winding=1)
    assert r < 0.9


def test_torus_loop_mass_validation_and_flat():
    f = FourierField([(1, 0, 0.1, 0.0)])
    with pytest.raises(ConfigurationError):
        torus_loop_mass(UNIT, f, 0.02, 50.0, N=5000)
    with pytest.raises(ConfigurationError):
        torus_loop_mass(UNIT, AnalyticBump(0.5, 0.4, center=(0.5, 0.5)), 0.02, 50.0, N=10_000)
    with pytest.raises(DomainError):
        torus_loop_mass(UNIT, f, 1.0, 0.5, N=10_000)
    z = torus_loop_mass(UNIT, ZeroField(), 0.02, 50.0, N=10_000)
    assert z.value == flat_loop_mass(UNIT, 0.02, 50.0) and z.std_error == 0.0


def test_torus_loop_mass_small_run():
    f = FourierField([(1, 0, 0.1, 0.0), (0, 1, 0.1, 0.3)])
    est = torus_loop_mass(UNIT, f, 0.02, 50.0, N=10_000, rng=1, n_large=256)
    pred = pa_rhs(UNIT, f, 0.02, 50.0).total
    assert abs(est.value - pred) < 5 * est.std_error + 5e-3
    assert est.min_winding_retained > 0.999
    assert est.small_winding_neglected < 1e-6
    value, se = est
    assert est.to_dict()["value"] == value


def test_clt_fraction_long_loops():
    f = FourierField([(1, 0, 0.3, 0.0), (1, 1, 0.2, 0.5)])
    frac, dev = clt_fraction(UNIT, f, t=100.0, N=300, n=2048, rng=0)
    assert frac >= 0.99
    assert dev.shape == (300,)


def test_spectral_report_keys():
    f = FourierField([(1, 0, 0.1, 0.0)])
    rep = spectral_report(UNIT, field=f, delta=0.02, C=50.0)
    for key in ("periods", "eigenvalues", "t_grid", "Z", "weyl_ratio", "det_zeta", "log_det_zeta", "pa_rhs_terms"):
        assert key in rep
    assert rep["pa_rhs_terms"]["laplacian"] == "generator"
    assert "pa_rhs_terms" not in spectral_report(UNIT)
