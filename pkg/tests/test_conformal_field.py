import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loopanomaly.conformal_field import (
    AffineField,
    AnalyticBump,
    Box,
    FourierField,
    GridField,
    TaperedSine,
    ZeroField,
    dirichlet_curvature_identity,
    exp_lipschitz_bound,
    field_from_dict,
    lipschitz_estimate,
)
from loopanomaly.errors import ConfigurationError

from oracles import bump_energy_radial


def _plateau_grid(c=0.7, m=20, h=0.1):
    v = np.zeros((m + 1, m + 1))
    v[1:-1, 1:-1] = c
    return GridField(v, h)


def test_box_basics():
    b = Box(0, 2, -1, 1)
    assert b.area == 4 and b.width == 2 and b.height == 2
    assert Box.coerce((0, 2, -1, 1)) == b
    assert b.intersect(Box(5, 6, 5, 6)) is None
    with pytest.raises(ConfigurationError):
        Box(1, 0, 0, 1)


@pytest.mark.parametrize("field", [
    AnalyticBump(0.5, 1.0),
    AnalyticBump(0.5, 1.0, profile="cone"),
    TaperedSine(4),
    _plateau_grid(),
    ZeroField(),
], ids=["bump", "cone", "tsine", "grid", "zero"])
def test_compact_support(field):
    far = np.array([[100.0, 100.0], [-50.0, 3.0], [1e6, -1e6]])
    np.testing.assert_array_equal(field.eval(far), 0.0)


def test_grid_node_value_and_flat_gradient():
    f = _plateau_grid(0.7)
    assert f.eval(np.array([0.5, 0.5])) == pytest.approx(0.7)
    np.testing.assert_allclose(f.gradient(np.array([[0.95, 1.05]])), 0.0, atol=1e-14)
    assert f.gradient_spacing == f.h


def test_grid_requires_zero_boundary():
    with pytest.raises(ConfigurationError):
        GridField(np.ones((4, 4)), 0.1)
    with pytest.raises(ConfigurationError):
        GridField(np.zeros((1, 4)), 0.1)


def test_tapered_sine_interior():
    j = 5
    f = TaperedSine(j)
    x = np.array([[np.pi, np.pi], [2.0, 3.5]])
    np.testing.assert_allclose(f.eval(x), np.sin(j * x[:, 0]) / j, atol=1e-15)
    g = f.gradient(x)
    np.testing.assert_allclose(g[:, 0], np.cos(j * x[:, 0]), atol=1e-14)
    np.testing.assert_allclose(g[:, 1], 0.0, atol=1e-14)


@pytest.mark.parametrize("field", [
    AnalyticBump(0.8, 1.5, center=(0.2, -0.1), box=Box.square(2.0)),
    AnalyticBump(0.8, 1.5, profile="cone", box=Box.square(2.0)),
    TaperedSine(3),
    FourierField([(1, 2, 0.3, 0.4), (2, -1, 0.1, 0.0)]),
], ids=["bump", "cone", "tsine", "fourier"])
def test_gradient_matches_finite_differences(field):
    gen = np.random.default_rng(0)
    x = field.box.uniform(gen, 200)
    if isinstance(field, AnalyticBump) and field.profile == "cone":
        x = x[np.linalg.norm(x - field.center, axis=1) > 0.05]
    eps = 1e-6
    fd = np.stack([(field.eval(x + [eps, 0]) - field.eval(x - [eps, 0])) / (2 * eps),
                   (field.eval(x + [0, eps]) - field.eval(x - [0, eps])) / (2 * eps)], axis=1)
    np.testing.assert_allclose(field.gradient(x), fd, atol=2e-6)


def test_energy_zero_and_sine_torus():
    assert ZeroField().dirichlet_energy() == 0.0
    for j in (1, 3, 8):
        f = TaperedSine(j, taper=False)
        assert f.periodic
        assert f.dirichlet_energy() == pytest.approx(2 * np.pi**2, rel=1e-10)


@pytest.mark.parametrize("profile", ["smooth", "cone"])
def test_bump_energy_vs_radial_oracle(profile):
    f = AnalyticBump(0.6, 1.0, profile=profile)
    oracle = bump_energy_radial(0.6, 1.0, profile)
    assert f.dirichlet_energy() == pytest.approx(oracle, rel=1e-3)
    assert f.radial_energy() == pytest.approx(oracle, rel=1e-12)


def test_fourier_energy_closed_form():
    f = FourierField([(1, 0, 0.3, 0.0), (1, 1, 0.2, 0.5)])
    assert f.dirichlet_energy() == pytest.approx(f.exact_energy(), rel=1e-12)


def test_rho_volume():
    assert ZeroField(Box(0, 2, 0, 3)).rho_volume() == 6.0
    # plateau c on the interior cells; the boundary ring interpolates linearly
    f = _plateau_grid(np.log(2.0), m=40, h=0.05)
    inner = Box(0.05, 1.95, 0.05, 1.95)
    assert f.rho_volume(inner) == pytest.approx(2.0 * inner.area, rel=1e-12)


def test_bump_rho_volume_radial_oracle():
    from scipy import integrate

    f = AnalyticBump(0.5, 1.2)
    val, _ = integrate.quad(lambda r: np.expm1(0.5 * (1 - (r / 1.2) ** 2) ** 3) * r, 0, 1.2, epsrel=1e-13)
    oracle = f.box.area + 2 * np.pi * val
    assert f.rho_volume() == pytest.approx(oracle, rel=1e-6)
    # a region larger than the support adds area where rho = 0
    assert f.rho_volume(Box.square(3.0)) == pytest.approx(oracle - f.box.area + 36.0, rel=1e-6)


def test_grid_translation_invariance():
    gen = np.random.default_rng(2)
    v = np.zeros((17, 17))
    v[1:-1, 1:-1] = gen.normal(size=(15, 15))
    f = GridField(v, 0.125)
    e = f.dirichlet_energy()
    for sx, sy in ((1, 0), (3, -2), (-5, 7)):
        assert f.translated(sx, sy).dirichlet_energy() == pytest.approx(e, rel=1e-12)


def test_grid_energy_exact_against_fine_quadrature():
    gen = np.random.default_rng(3)
    v = np.zeros((7, 7))
    v[1:-1, 1:-1] = gen.normal(size=(5, 5))
    f = GridField(v, 0.5)
    m = 1800
    xs = f.box.x0 + (np.arange(m) + 0.5) * f.box.width / m
    X, Y = np.meshgrid(xs, xs)
    g = f.exact_gradient(np.stack([X, Y], axis=-1))
    fine = float(np.sum(g * g)) * (f.box.width / m) ** 2
    assert f.dirichlet_energy() == pytest.approx(fine, rel=1e-5)


def test_grid_binary_round_trip(tmp_path):
    v = np.zeros((5, 6))
    v[1:-1, 1:-1] = np.arange(12).reshape(3, 4) * 0.1
    f = GridField(v, 0.25, origin=(-1.0, 2.0))
    p = tmp_path / "f.grid"
    f.save(p)
    g = GridField.load(p)
    np.testing.assert_array_equal(g.values, f.values)
    assert g.box == f.box and g.h == f.h
    bad = bytearray(f.to_bytes())
    bad[:8] = b"XXXXXXXX"
    with pytest.raises(ConfigurationError):
        GridField.from_bytes(bytes(bad))


def test_lipschitz_examples():
    assert lipschitz_estimate(ZeroField()).value == 0.0
    sine = TaperedSine(3, taper=False)
    est = lipschitz_estimate(sine, samples=20_000, rng=1)
    assert est.value == pytest.approx(1.0)
    assert 0.99 < est.sampled <= 1.0 + 1e-9
    cone = AnalyticBump(1.0, 1.0, profile="cone")
    est = lipschitz_estimate(cone, samples=40_000, rng=2, scale=1e-3)
    assert est.value == pytest.approx(2.0)
    assert 1.9 < est.sampled <= 2.0 + 1e-9


def test_grid_lipschitz_exact():
    f = _plateau_grid(0.7, m=10, h=0.1)
    # the corner cells of the plateau carry the steepest bilinear slope, sqrt(2) c / h
    assert f.lipschitz_bound() == pytest.approx(np.sqrt(2) * 0.7 / 0.1)
    est = lipschitz_estimate(f, samples=20_000, rng=0, scale=1e-3)
    assert est.sampled <= f.lipschitz_bound() * (1 + 1e-9)


@pytest.mark.parametrize("field", [
    AnalyticBump(0.9, 1.0), AnalyticBump(0.9, 1.0, profile="cone"), TaperedSine(2),
    FourierField([(1, 1, 0.4, 0.0)]),
], ids=["bump", "cone", "tsine", "fourier"])
def test_exp_lipschitz_transfer(field):
    est = lipschitz_estimate(field, samples=30_000, rng=4, transform=np.exp)
    assert est.statistical
    assert est.sampled <= exp_lipschitz_bound(field) * (1 + 1e-9)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-2, 2), r=st.floats(0.2, 3), seed=st.integers(0, 1000))
def test_bump_lipschitz_property(a, r, seed):
    f = AnalyticBump(a, r)
    gen = np.random.default_rng(seed)
    x = f.box.uniform(gen, 300)
    y = x + 0.05 * r * gen.standard_normal(x.shape)
    d = np.linalg.norm(x - y, axis=1)
    q = np.abs(f.eval(x) - f.eval(y)) / d
    assert np.all(q <= f.lipschitz_bound() * (1 + 1e-9) + 1e-12)
    assert np.all(np.abs(f.eval(x)) <= f.sup_abs() + 1e-15)


def test_curvature_identity_coefficient_four():
    f = AnalyticBump(0.4, 1.0, center=(0.3, 0.1), box=Box.square(2.0))
    h = AnalyticBump(0.7, 1.5, box=Box.square(2.0))
    lhs, rhs = dirichlet_curvature_identity(f, h, coefficient=4.0, resolution=1024)
    assert rhs == pytest.approx(lhs, rel=1e-3)
    lhs2, rhs2 = dirichlet_curvature_identity(f, h, coefficient=2.0, resolution=1024)
    assert abs(rhs2 - lhs2) > 0.05 * abs(lhs2)


def test_field_from_dict_round_trips():
    for f in (AnalyticBump(0.5, 2.0, box=Box.square(2.5)), TaperedSine(4), ZeroField(),
              FourierField([(1, 0, 0.1, 0.0)]), AffineField((0.2, -0.1), 0.3)):
        g = field_from_dict(f.to_dict())
        pts = np.random.default_rng(0).uniform(-3, 3, (50, 2))
        np.testing.assert_array_equal(g.eval(pts), f.eval(pts))
    with pytest.raises(ConfigurationError):
        field_from_dict({"kind": "spline"})
    with pytest.raises(ConfigurationError):
        AnalyticBump(1.0, 2.0, box=Box.square(1.0))
