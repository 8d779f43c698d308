"""Flat-torus spectral quantities and the Polyakov-Alvarez loop-mass expansion.

On the torus ``R^2 / (L1 Z x L2 Z)`` the Laplacian has eigenvalues
``4 pi^2 (m^2 / L1^2 + k^2 / L2^2)``.  The heat trace factorizes as
``Z(t) = theta(L1, t) theta(L2, t)`` with
``theta(L, t) = sum_m exp(-4 pi^2 m^2 t / L^2) = L / sqrt(4 pi t) sum_w exp(-L^2 w^2 / (4 t))``
(Poisson summation).  Brownian motion (generator ``Lap / 2``) has transition
density ``p_t(z, z) = Z(t/2) / area``, and the Brownian loop measure has density
``p_t(z, z) dt / t`` against ``dz`` and the bridge law; on the plane this is
``dz dt / (2 pi t^2)``.

For ``rho = 0`` the mass of loops with ``delta <= t <= C`` is
``int_delta^C Z(t/2) dt / t = area/(2 pi delta) + log C + gamma - log det'(Lap/2) + o(1)``.
The determinant entering the expansion is therefore that of the Brownian
generator ``Lap / 2``; on a torus (``zeta(0) = -1``) it equals
``2 det' Lap``.  :func:`pa_rhs` takes the normalization as an option.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy import integrate

from ._streams import as_substreams, mean_and_se, run_chunks
from .conformal_field import ConformalField
from .errors import ConfigurationError, DomainError, NumericalError
from .length_functionals import lambda_bound
from .loop_mass import estimate_anomaly_direct
from .loop_space import MeasureSpec

EULER_GAMMA = float(np.euler_gamma)


@dataclass(frozen=True)
class TorusSpec:
    """Flat torus with periods ``L1``, ``L2``."""

    L1: float = 1.0
    L2: float = 1.0

    def __post_init__(self):
        if not (self.L1 > 0 and self.L2 > 0):
            raise ConfigurationError("torus periods must be positive")

    @property
    def area(self):
        return self.L1 * self.L2

    @property
    def euler_characteristic(self):
        return 0

    @property
    def gauss_curvature(self):
        return 0.0

    @property
    def spectral_gap(self):
        return 4.0 * np.pi**2 / max(self.L1, self.L2) ** 2

    @property
    def box(self):
        return (0.0, self.L1, 0.0, self.L2)


def torus_eigenvalues(spec: TorusSpec, m_max: int) -> np.ndarray:
    """Sorted ``4 pi^2 (m^2/L1^2 + k^2/L2^2)`` for ``|m|, |k| <= m_max`` (with multiplicity)."""
    if m_max < 1:
        raise ConfigurationError("m_max must be at least 1")
    m = np.arange(-m_max, m_max + 1)
    lam = 4.0 * np.pi**2 * ((m[:, None] / spec.L1) ** 2 + (m[None, :] / spec.L2) ** 2)
    return np.sort(lam.ravel())


def _terms(scale):
    """Number of theta terms so that ``exp(-scale m^2)`` drops below 1e-18 relative."""
    return int(np.ceil(np.sqrt(42.0 / max(scale, 1e-300)))) + 1


def theta_minus_one(L, t, method):
    """``theta(L, t) - 1`` (spectral) or ``theta(L, t) sqrt(4 pi t)/L - 1`` (dual)."""
    if method == "spectral":
        a = 4.0 * np.pi**2 * t / L**2
    else:
        a = L**2 / (4.0 * t)
    m = np.arange(1, _terms(a) + 1)
    return 2.0 * float(np.sum(np.exp(-a * m * m)))


def theta(L, t, method="auto"):
    if not t > 0:
        raise DomainError("t must be positive")
    if method == "auto":
        method = "spectral" if t >= 1.0 else "dual"
    if method == "spectral":
        return 1.0 + theta_minus_one(L, t, "spectral")
    if method == "dual":
        return L / np.sqrt(4.0 * np.pi * t) * (1.0 + theta_minus_one(L, t, "dual"))
    raise ConfigurationError(f"unknown method {method!r}")


def heat_trace(spec: TorusSpec, t: float, method: str = "auto") -> float:
    """``Z(t) = sum exp(-t lambda_n)``; eigenvalue series for ``t >= 1``, dual series below."""
    return theta(spec.L1, t, method) * theta(spec.L2, t, method)


def heat_trace_minus_weyl(spec: TorusSpec, t: float) -> float:
    """``Z(t) - area / (4 pi t)`` without cancellation (dual series)."""
    a = theta_minus_one(spec.L1, t, "dual")
    b = theta_minus_one(spec.L2, t, "dual")
    return spec.area / (4.0 * np.pi * t) * (a * b + a + b)


def heat_trace_minus_one(spec: TorusSpec, t: float) -> float:
    """``Z(t) - 1`` without cancellation (eigenvalue series)."""
    a = theta_minus_one(spec.L1, t, "spectral")
    b = theta_minus_one(spec.L2, t, "spectral")
    return a * b + a + b


def weyl_ratio(spec: TorusSpec, t: float) -> float:
    """``Z(t) 4 pi t / area``."""
    return heat_trace(spec, t) * 4.0 * np.pi * t / spec.area


def _periodic_kernel_minus_mean(L, x, t, terms=None):
    """One-dimensional periodic heat kernel of ``exp(t d^2/dx^2)`` minus ``1/L``."""
    a = 4.0 * np.pi**2 * t / L**2
    m = np.arange(1, (terms or _terms(a)) + 1)
    return (2.0 / L) * np.sum(np.exp(-a * m * m)[:, None] * np.cos(2 * np.pi * np.outer(m, x) / L), axis=0)


def transition_density(spec: TorusSpec, z, t: float) -> np.ndarray:
    """Kernel of ``exp(t Lap)`` from the origin to points ``z`` (shape ``(..., 2)``)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    k1 = 1.0 / spec.L1 + _periodic_kernel_minus_mean(spec.L1, z[:, 0], t)
    k2 = 1.0 / spec.L2 + _periodic_kernel_minus_mean(spec.L2, z[:, 1], t)
    return k1 * k2


def mixing_distance(spec: TorusSpec, t: float, grid: int = 64) -> float:
    """``sup_z |p_t(0, z) - 1/area|`` for the kernel of ``exp(t Lap)`` (maximum at ``z = 0``)."""
    xs = np.linspace(0.0, spec.L1, grid, endpoint=False)
    ys = np.linspace(0.0, spec.L2, grid, endpoint=False)
    X, Y = np.meshgrid(xs, ys)
    p = transition_density(spec, np.stack([X.ravel(), Y.ravel()], axis=1), t)
    return float(np.max(np.abs(p - 1.0 / spec.area)))


def zeta_log_determinant(spec: TorusSpec, split: float = 1.0) -> float:
    """``log det' Lap = -zeta'(0)`` from the Mellin representation of the spectral zeta function.

    Splitting ``int_0^inf t^(s-1) (Z(t) - 1) dt`` at ``t = split`` and
    subtracting the Weyl term on the small-``t`` piece gives
    ``-zeta'(0) = gamma + area/(4 pi split) + log(split)
    - int_0^split (Z - area/(4 pi t)) dt/t - int_split^inf (Z - 1) dt/t``.
    """
    small, e1 = integrate.quad(lambda t: heat_trace_minus_weyl(spec, t) / t, 0.0, split,
                               epsabs=1e-15, epsrel=1e-13, limit=200)
    large, e2 = integrate.quad(lambda t: heat_trace_minus_one(spec, t) / t, split, np.inf,
                               epsabs=1e-15, epsrel=1e-13, limit=200)
    if not (np.isfinite(small) and np.isfinite(large)) or max(e1, e2) > 1e-9:
        raise NumericalError(f"Mellin integrals did not converge (errors {e1:.2e}, {e2:.2e})")
    # general split s: the Weyl and constant subtractions integrate to
    # area/(4 pi s) and log(s) respectively
    return EULER_GAMMA + spec.area / (4.0 * np.pi * split) + np.log(split) - small - large


def zeta_determinant(spec: TorusSpec) -> float:
    """``det'_zeta Lap`` for the geometric Laplacian."""
    return float(np.exp(zeta_log_determinant(spec)))


LAPLACIAN_SCALES = {"geometric": 1.0, "generator": 0.5}


def log_det_scaled(spec: TorusSpec, laplacian: str = "generator") -> float:
    """``log det'(c Lap) = log det' Lap + zeta(0) log c``, with ``zeta(0) = -1`` on the torus."""
    if laplacian not in LAPLACIAN_SCALES:
        raise ConfigurationError(f"laplacian must be one of {sorted(LAPLACIAN_SCALES)}")
    c = LAPLACIAN_SCALES[laplacian]
    return zeta_log_determinant(spec) - np.log(c)


@dataclass(frozen=True)
class PARHS:
    """Itemized terms of the predicted mass of loops with ``delta <= len_rho <= C``."""

    volume_term: float
    log_C: float
    euler_gamma: float
    dirichlet_term: float
    curvature_term: float
    euler_char_term: float
    log_vol: float
    minus_log_vol_rho: float
    minus_log_det: float
    laplacian: str
    delta: float
    C: float

    @property
    def total(self):
        return (self.volume_term + self.log_C + self.euler_gamma + self.dirichlet_term
                + self.curvature_term + self.euler_char_term + self.log_vol
                + self.minus_log_vol_rho + self.minus_log_det)

    def to_dict(self):
        d = asdict(self)
        d["total"] = self.total
        return d


def pa_rhs(spec: TorusSpec, field: ConformalField, delta: float, C: float,
           laplacian: str = "generator", resolution=None) -> PARHS:
    """Polyakov-Alvarez prediction on a flat torus (``chi = 0``, ``K = 0``).

    ``Vol_rho/(2 pi delta) + log C + gamma + (rho, rho)_grad/(48 pi) + log Vol
    - log Vol_rho - log det'``, where the determinant is of ``Lap/2``
    (``laplacian="generator"``, the operator whose heat kernel defines the
    loop measure) or of ``Lap`` (``"geometric"``, which is larger by ``log 2``
    in the total).
    """
    if not (0 < delta < C):
        raise DomainError("need 0 < delta < C")
    vol_rho = field.rho_volume(spec.box, resolution) if field is not None else spec.area
    energy = field.dirichlet_energy(resolution) if field is not None else 0.0
    return PARHS(
        volume_term=vol_rho / (2.0 * np.pi * delta),
        log_C=float(np.log(C)),
        euler_gamma=EULER_GAMMA,
        dirichlet_term=energy / (48.0 * np.pi),
        curvature_term=0.0,
        euler_char_term=0.0,
        log_vol=float(np.log(spec.area)),
        minus_log_vol_rho=-float(np.log(vol_rho)),
        minus_log_det=-log_det_scaled(spec, laplacian),
        laplacian=laplacian,
        delta=float(delta),
        C=float(C),
    )


def flat_loop_mass(spec: TorusSpec, delta: float, C: float) -> float:
    """Exact ``int_delta^C Z(t/2) dt / t``: loops with ``delta <= t <= C`` for ``rho = 0``."""
    if not (0 < delta < C):
        raise DomainError("need 0 < delta < C")

    def integrand(logt):
        t = np.exp(logt)
        return heat_trace(spec, 0.5 * t)

    lo, hi = np.log(delta), np.log(C)
    knots = np.unique(np.clip(np.log([2.0, 2.0 * spec.area, 20.0 * spec.area]), lo, hi))
    pts = np.concatenate([[lo], knots, [hi]])
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            val, err = integrate.quad(integrand, a, b, epsabs=1e-12, epsrel=1e-13, limit=200)
            total += val
    return total


def winding_total_weight(L, t):
    """``sum_w exp(-(w L)^2 / (2 t))`` over all integers, via its Poisson dual."""
    a = 2.0 * np.pi**2 * t / L**2
    k = np.arange(1, _terms(a) + 1)
    return np.sqrt(2.0 * np.pi * t) / L * (1.0 + 2.0 * np.sum(np.exp(-a * k * k)))


def sample_windings(L, t, rng, max_winding=None):
    """Winding numbers of bridges of durations ``t`` around a circle of length ``L``.

    ``P(w) ~ exp(-(w L)^2 / (2 t))``.  The support is ``|w| <= 8 sqrt(max t)/L + 4``
    unless ``max_winding`` is given.  Returns the windings and the smallest
    retained fraction of the total weight.
    """
    t = np.asarray(t, dtype=float)
    wmax = int(np.ceil(8.0 * np.sqrt(t.max()) / L)) + 4 if max_winding is None else int(max_winding)
    w = np.arange(-wmax, wmax + 1)
    weights = np.exp(-(w[None, :] * L) ** 2 / (2.0 * t[:, None]))
    kept = weights.sum(axis=1)
    uniq, inv = np.unique(t, return_inverse=True)
    total = np.array([winding_total_weight(L, ti) for ti in uniq])[inv]
    retained = float(np.min(kept / total))
    cdf = np.cumsum(weights, axis=1) / kept[:, None]
    u = rng.random(t.size)
    idx = np.minimum(np.sum(cdf < u[:, None], axis=1), w.size - 1)
    return w[idx], retained


@dataclass(frozen=True)
class TorusMassEstimate:
    value: float
    std_error: float
    flat_exact: float
    small_correction: float
    small_std_error: float
    large_correction: float
    large_std_error: float
    delta: float
    C: float
    n_samples: int
    min_winding_retained: float
    small_winding_neglected: float

    def __iter__(self):
        yield self.value
        yield self.std_error

    def to_dict(self):
        return asdict(self)


def sample_torus_loops(spec: TorusSpec, t, n, rng, max_winding=None):
    """Torus loops rooted uniformly, as unwrapped planar paths of shape ``(len(t), n, 2)``.

    Each path is ``z + sqrt(t) B(s/t) + (s/t) (w1 L1, w2 L2)`` where ``B`` is a
    standard Brownian bridge and ``w`` the winding vector drawn from its exact
    law ``P(w) ~ exp(-|w L|^2 / (2 t))``.  Returns the paths and the smallest
    retained winding weight.
    """
    t = np.asarray(t, dtype=float)
    m = t.size
    z = rng.random((m, 2)) * np.array([spec.L1, spec.L2])
    inc = rng.standard_normal((m, n, 2)) * np.sqrt(1.0 / n)
    walk = np.cumsum(inc, axis=1)
    pts = np.empty_like(walk)
    pts[:, 0] = 0.0
    pts[:, 1:] = walk[:, :-1]
    frac = (np.arange(n) / n)[None, :, None]
    pts -= frac * walk[:, -1:, :]
    pts *= np.sqrt(t)[:, None, None]
    w1, r1 = sample_windings(spec.L1, t, rng, max_winding)
    w2, r2 = sample_windings(spec.L2, t, rng, max_winding)
    shift = np.stack([w1 * spec.L1, w2 * spec.L2], axis=1)
    retained = min(r1, r2)
    pts += frac * shift[:, None, :]
    pts += z[:, None, :]
    return pts, retained


def torus_loop_mass(spec: TorusSpec, field: ConformalField, delta: float, C: float, N: int = 100_000,
                    rng=0, n_small: int = 128, n_large: int = 1024, workers: int = 1,
                    max_winding=None) -> TorusMassEstimate:
    """Brownian loop mass of ``{delta <= len_rho <= C}`` on the torus.

    Decomposed as ``M0 + S - G``:

    * ``M0``: exact mass of ``{delta <= t <= C}`` (heat-trace quadrature);
    * ``S = mass{len_rho >= delta} - mass{t >= delta}``: only loops with
      ``t`` within a factor ``Lambda`` of ``delta`` contribute; they are tiny,
      so winding can be ignored (the neglected weight is reported) and ``S`` is
      ``(Vol_rho - area)/(2 pi delta)`` plus the direct anomaly estimate;
    * ``G = mass{len_rho > C} - mass{t > C}``: ``t`` is drawn log-uniformly on
      ``[C/Lambda, Lambda C]`` with weight ``2 log(Lambda) Z(t/2)``, the loop is
      a rooted torus bridge, and the sample value is the indicator difference.
    """
    if not (0 < delta < C):
        raise DomainError("need 0 < delta < C")
    if N < 10_000:
        raise ConfigurationError("torus_loop_mass needs N >= 10^4")
    if not field.periodic:
        raise ConfigurationError("torus loop masses need a periodic field")
    lam = lambda_bound(field)
    if lam * delta >= C / lam:
        raise ConfigurationError("delta and C windows overlap; lower delta or raise C")
    streams = as_substreams(rng)
    m0 = flat_loop_mass(spec, delta, C)
    vol_rho = field.rho_volume(spec.box)
    if lam == 1.0:
        return TorusMassEstimate(m0, 0.0, m0, 0.0, 0.0, 0.0, 0.0, delta, C, N, 1.0, 0.0)
    # small loops: planar direct estimator over one fundamental domain
    small = estimate_anomaly_direct(field, spec.box, delta, MeasureSpec.brownian(), N,
                                    streams.child(1), n_small, workers)
    s_val = (vol_rho - spec.area) / (2.0 * np.pi * delta) + small.value
    # weight of winding sectors w != 0 for the small-loop window
    tw = lam * delta
    neglected = 2.0 * (np.exp(-spec.L1**2 / (2 * tw)) + np.exp(-spec.L2**2 / (2 * tw)))
    log_lam = np.log(lam)
    chunk = max(64, (1 << 20) // (2 * n_large))

    def work(gen, size, index):
        v = gen.random(size)
        t = C * np.exp((2.0 * v - 1.0) * log_lam)
        paths, retained = sample_torus_loops(spec, t, n_large, gen, max_winding)
        lr = t * np.exp(field.eval(paths)).mean(axis=1)
        weight = 2.0 * log_lam * np.array([heat_trace(spec, 0.5 * ti) for ti in t])
        return weight * ((lr > C).astype(float) - (t > C).astype(float)), retained

    parts = run_chunks(work, N, streams.child(2), workers=workers, chunk=chunk)
    vals = np.concatenate([p[0] for p in parts])
    retained = min(p[1] for p in parts)
    if retained < 0.999:
        raise NumericalError(f"winding truncation keeps only {retained:.4f} of the bridge weight")
    g_val, g_se = mean_and_se(vals)
    total = m0 + s_val - g_val
    se = float(np.hypot(small.std_error, g_se))
    return TorusMassEstimate(total, se, m0, s_val, small.std_error, g_val, g_se, delta, C, N,
                             retained, float(neglected))


def clt_fraction(spec: TorusSpec, field: ConformalField, t: float, c: float = 1.0, exponent: float = 0.55,
                 N: int = 2000, n: int = 4096, rng=0):
    """Fraction of torus loops of duration ``t`` with ``|len_rho - t Vol_rho/Vol| <= c t^exponent``."""
    gen = as_substreams(rng).generator(7)
    mean_rate = field.rho_volume(spec.box) / spec.area
    hits = 0
    dev = []
    for start in range(0, N, 256):
        m = min(256, N - start)
        paths, _ = sample_torus_loops(spec, np.full(m, t), n, gen)
        lr = t * np.exp(field.eval(paths)).mean(axis=1)
        d = np.abs(lr - t * mean_rate)
        dev.append(d)
        hits += int(np.sum(d <= c * t**exponent))
    return hits / N, np.concatenate(dev)


def bridge_half_statistic(spec: TorusSpec, t: float, N: int = 20_000, rng=0, n: int = 64):
    """Kolmogorov-Smirnov distance between the wrapped midpoint of a rooted torus bridge of
    duration ``t`` and the wrapped position of free Brownian motion at time ``t/2``.

    As ``t`` grows the first half of the bridge looks like free motion and the
    statistic decreases toward the sampling noise floor.
    """
    gen = as_substreams(rng).generator(11)
    paths, _ = sample_torus_loops(spec, np.full(N, t), n, gen)
    start = paths[:, 0, 0]
    mid = np.mod(paths[:, n // 2, 0] - start, spec.L1)
    free = np.mod(np.sqrt(t / 2.0) * gen.standard_normal(N), spec.L1)
    a = np.sort(mid)
    b = np.sort(free)
    grid = np.concatenate([a, b])
    ca = np.searchsorted(a, grid, side="right") / N
    cb = np.searchsorted(b, grid, side="right") / N
    return float(np.max(np.abs(ca - cb)))


def spectral_report(spec: TorusSpec, m_max: int = 4, t_grid=(1e-3, 1e-2, 1e-1, 0.5, 1.0, 2.0),
                    field=None, delta=None, C=None, laplacian="generator"):
    """JSON-ready summary: periods, eigenvalues, heat trace on a grid, determinant, itemized PA terms."""
    out = {
        "periods": [spec.L1, spec.L2],
        "m_max": int(m_max),
        "eigenvalues": torus_eigenvalues(spec, m_max)[:16].tolist(),
        "t_grid": [float(t) for t in t_grid],
        "Z": [heat_trace(spec, t) for t in t_grid],
        "weyl_ratio": [weyl_ratio(spec, t) for t in t_grid],
        "det_zeta": zeta_determinant(spec),
        "log_det_zeta": zeta_log_determinant(spec),
    }
    if field is not None and delta is not None and C is not None:
        out["pa_rhs_terms"] = pa_rhs(spec, field, delta, C, laplacian).to_dict()
    return out
