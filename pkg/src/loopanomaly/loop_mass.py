"""Monte Carlo loop masses and the constant-order anomaly term.

For a loop measure ``c dx dt dl / t^2`` and a conformal factor ``rho``
supported in ``D``, the mass of loops centered in ``D`` with ``len_rho >= delta``
is ``c int_D int alpha^{-1} dl dx`` and the mass with ``clen_rho >= delta`` is
exactly ``c Vol_rho(D) / delta``.  Their difference converges, as
``delta -> 0``, to ``c (b/2) (rho, rho)_grad`` where ``b`` is the occupation
moment of the unit-loop law (``b = 1/12`` for Brownian loops, which gives
``(rho, rho)_grad / (48 pi)``).  The difference is positive: loops whose
rho-length reaches the cutoff outnumber those whose center rho-length does.

Estimators:

* ``direct``: ``x`` uniform on ``D``, per-sample ``c |D| (1/alpha - 1/beta)``;
* ``discrepancy``: ``t = beta``, ``Z`` a uniform time point of the loop,
  per-sample ``c |D| (exp(rho(Z)) - exp(rho(x))) / delta``;
* brute force: stratified sampling of ``t`` against ``dt / t^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from ._streams import Substreams, as_substreams, mean_and_se, run_chunks
from .conformal_field import Box, ConformalField
from .errors import ConfigurationError, RefusalError
from .length_functionals import default_d_star, lambda_bound, solve_alpha_batch
from .loop_space import MeasureSpec, _rows_per_chunk, iter_loop_chunks, sample_unit_loops

DEFAULT_N_LOOP = 128
FALLBACK_REFUSAL = 0.10


@dataclass(frozen=True)
class AnomalyEstimate:
    """Monte Carlo estimate of a loop-mass difference with its plain-MC standard error."""

    value: float
    std_error: float
    delta: float
    n_samples: int
    estimator: str
    measure: MeasureSpec
    field: ConformalField
    fallback_rate: float = 0.0
    details: dict = dc_field(default_factory=dict)

    @property
    def normalized_value(self):
        """Estimate divided by the measure normalization."""
        return self.value / self.measure.normalization

    @property
    def normalized_std_error(self):
        return self.std_error / self.measure.normalization


def _region(field, D):
    return field.box if D is None else Box.coerce(D)


def clen_mass_exact(field: ConformalField, D=None, delta: float = 0.1, measure: MeasureSpec = None,
                    resolution=None) -> float:
    """``c Vol_rho(D) / delta``: mass of loops centered in ``D`` with ``clen_rho >= delta``."""
    if not delta > 0:
        raise ConfigurationError("delta must be positive")
    measure = measure or MeasureSpec.brownian()
    return measure.normalization * field.rho_volume(_region(field, D), resolution) / delta


def predicted_anomaly(field: ConformalField, measure: MeasureSpec, b: Optional[float] = None,
                      energy: Optional[float] = None) -> float:
    """``c (b/2) (rho, rho)_grad`` with ``b`` defaulting to the sampler's closed form."""
    b = measure.exact_b if b is None else b
    energy = field.dirichlet_energy() if energy is None else energy
    return measure.normalization * 0.5 * b * energy


def brownian_coefficient_identity() -> bool:
    """``(1/2 pi) (1/24) == 1/(48 pi)``: the Brownian case of ``c b / 2``."""
    return bool(np.isclose((1.0 / (2.0 * np.pi)) * (1.0 / 24.0), 1.0 / (48.0 * np.pi), rtol=1e-15, atol=0))


def _check_N(N):
    if N < 1000:
        raise ConfigurationError("N must be at least 1000")


def _finish(values, delta, N, estimator, measure, field, fallback=0.0, **details):
    mean, se = mean_and_se(values)
    if np.all(values == 0.0):
        se = 0.0
    details.setdefault("per_sample_zero", bool(np.all(values == 0.0)))
    return AnomalyEstimate(mean, se, float(delta), int(N), estimator, measure, field, float(fallback), details)


def direct_samples(field, D, delta, measure, N, rng, n=DEFAULT_N_LOOP, workers=1, d_star=None):
    """Per-sample values ``c |D| (1/alpha - 1/beta)`` and fallback flags."""
    D = _region(field, D)
    streams = as_substreams(rng)
    lam = lambda_bound(field)
    d_star = default_d_star(field) if d_star is None else d_star
    scale = measure.normalization * D.area

    def work(loops, gen, index):
        x = D.uniform(gen, loops.shape[0])
        a, b, fb, _ = solve_alpha_batch(field, x, delta, loops, d_star=d_star, lam=lam)
        return scale * (1.0 / a - 1.0 / b), fb

    parts = iter_loop_chunks(measure, n, N, streams, workers, work)
    vals = np.concatenate([p[0] for p in parts])
    fb = np.concatenate([p[1] for p in parts])
    return vals, fb


def estimate_anomaly_direct(field: ConformalField, D=None, delta: float = 0.01,
                            measure: MeasureSpec = None, N: int = 100_000, rng=0,
                            n: int = DEFAULT_N_LOOP, workers: int = 1, d_star=None) -> AnomalyEstimate:
    """Mean of ``c |D| (1/alpha - 1/beta)`` over ``x ~ Uniform(D)`` and ``l ~ dl``.

    Estimates ``mass(len_rho >= delta) - mass(clen_rho >= delta)`` for loops
    centered in ``D``.  Raises :class:`RefusalError` when more than 10% of the
    loops need the ``alpha = delta`` fallback.
    """
    _check_N(N)
    measure = measure or MeasureSpec.brownian()
    vals, fb = direct_samples(field, D, delta, measure, N, rng, n, workers, d_star)
    rate = float(np.mean(fb))
    if rate > FALLBACK_REFUSAL:
        raise RefusalError(
            f"fallback rate {rate:.1%} exceeds {FALLBACK_REFUSAL:.0%} at delta={delta}: "
            "loops are too large for the field scale; lower delta or raise d_star"
        )
    return _finish(vals, delta, N, "direct", measure, field, rate, n=n,
                   d_star=float(default_d_star(field) if d_star is None else d_star))


def estimate_discrepancy(field: ConformalField, D=None, delta: float = 0.01,
                         measure: MeasureSpec = None, N: int = 100_000, rng=0,
                         n: int = DEFAULT_N_LOOP, workers: int = 1, weighting: str = "lebesgue",
                         z_time: str = "grid") -> AnomalyEstimate:
    """Mean of ``c |D| w(x) (exp(rho(Z)) - exp(rho(x))) / delta`` with ``t = beta``.

    ``weighting="lebesgue"`` (``w = 1``) gives the law under which the mean
    equals the first-order mass difference; ``"exp_rho"`` (``w = exp(rho(x))``)
    weights centers by ``1/beta``.  ``z_time="grid"`` draws ``Z`` uniformly
    among the loop's sample times (the same discrete occupation measure the
    rho-length quadrature uses); ``"continuous"`` draws a uniform time and
    interpolates linearly; ``"average"`` replaces ``exp(rho(Z))`` by its
    average over all sample times (a conditional expectation, same mean).
    """
    _check_N(N)
    if weighting not in ("lebesgue", "exp_rho"):
        raise ConfigurationError(f"unknown weighting {weighting!r}")
    if z_time not in ("grid", "continuous", "average"):
        raise ConfigurationError(f"unknown z_time {z_time!r}")
    measure = measure or MeasureSpec.brownian()
    D = _region(field, D)
    scale = measure.normalization * D.area

    def work(loops, gen, index):
        m = loops.shape[0]
        x = D.uniform(gen, m)
        rho_x = field.eval(x)
        b = delta * np.exp(-rho_x)
        u = gen.random(m) * n
        w = np.exp(rho_x) if weighting == "exp_rho" else 1.0
        if z_time == "average":
            ez = np.exp(field.eval(x[:, None, :] + np.sqrt(b)[:, None, None] * loops)).mean(axis=1)
            return scale * w * (ez - np.exp(rho_x)) / delta
        k = np.floor(u).astype(np.int64) % n
        rows = np.arange(m)
        z = loops[rows, k]
        if z_time == "continuous":
            z = z + (u - np.floor(u))[:, None] * (loops[rows, (k + 1) % n] - z)
        Z = x + np.sqrt(b)[:, None] * z
        return scale * w * (np.exp(field.eval(Z)) - np.exp(rho_x)) / delta

    vals = np.concatenate(iter_loop_chunks(measure, n, N, as_substreams(rng), workers, work))
    return _finish(vals, delta, N, "discrepancy", measure, field, 0.0, n=n,
                   weighting=weighting, z_time=z_time)


@dataclass(frozen=True)
class MassEstimate:
    value: float
    std_error: float
    delta: float
    n_samples: int
    details: dict = dc_field(default_factory=dict)

    def __iter__(self):
        yield self.value
        yield self.std_error


def mass_direct_bruteforce(field: ConformalField, D=None, delta: float = 0.05,
                           measure: MeasureSpec = None, N: int = 100_000, t_max: Optional[float] = None,
                           rng=0, n: int = DEFAULT_N_LOOP, workers: int = 1, strata: int = 16,
                           control_variate: bool = True) -> MassEstimate:
    """Mass of loops centered in ``D`` with ``len_rho >= delta``, by sampling ``t`` directly.

    ``t`` is stratified into ``strata`` log-uniform bins on
    ``[delta / Lambda, t_max]``; within a bin it is drawn from the density
    proportional to ``1/t^2``.  Above ``t_max >= Lambda delta`` every loop
    qualifies, which contributes ``c |D| / t_max`` exactly.

    With ``control_variate=True`` the indicator ``1{t >= beta(x)}`` is
    subtracted per sample and its exact mass ``c Vol_rho(D) / delta`` added
    back; the per-sample difference vanishes outside ``[delta/Lambda,
    Lambda delta]``, so only that window is sampled (``t_max`` is then only
    validated).
    """
    _check_N(N)
    measure = measure or MeasureSpec.brownian()
    D = _region(field, D)
    lam = lambda_bound(field)
    if t_max is None:
        t_max = 4.0 * lam * delta
    if t_max < lam * delta:
        raise ConfigurationError(f"t_max={t_max} is below Lambda * delta={lam * delta}")
    lo = delta / lam
    hi = lam * delta if control_variate else t_max
    if hi <= lo:  # rho == 0 with the control variate: the window is empty
        base = clen_mass_exact(field, D, delta, measure)
        return MassEstimate(base, 0.0, delta, N, {"control_variate": control_variate, "strata": 0})
    edges = np.geomspace(lo, hi, strata + 1)
    w_strata = 1.0 / edges[:-1] - 1.0 / edges[1:]
    scale = measure.normalization * D.area
    streams = as_substreams(rng)
    per = max(1, N // strata)

    def stratum(k):
        a, b = edges[k], edges[k + 1]

        def work(loops, gen, index):
            m = loops.shape[0]
            x = D.uniform(gen, m)
            u = gen.random(m)
            t = 1.0 / (1.0 / a - u * (1.0 / a - 1.0 / b))  # inverse CDF of 1/t^2 on [a, b]
            pts = x[:, None, :] + np.sqrt(t)[:, None, None] * loops
            lr = t * np.exp(field.eval(pts)).mean(axis=1)
            ind = (lr >= delta).astype(float)
            if control_variate:
                ind -= (t * np.exp(field.eval(x)) >= delta).astype(float)
            return ind

        vals = np.concatenate(iter_loop_chunks(measure, n, per, streams.child(k), workers, work))
        return vals

    total = 0.0
    var = 0.0
    for k in range(strata):
        v = stratum(k)
        mu, se = mean_and_se(v)
        total += scale * w_strata[k] * mu
        var += (scale * w_strata[k] * se) ** 2
    if control_variate:
        total += clen_mass_exact(field, D, delta, measure)
    else:
        total += scale / t_max
    return MassEstimate(total, float(np.sqrt(var)), delta, per * strata,
                        {"control_variate": control_variate, "strata": strata, "t_window": (lo, hi)})


def delta_sweep(field: ConformalField, D=None, deltas=(0.04, 0.02, 0.01), measure: MeasureSpec = None,
                N: int = 100_000, rng=0, n: int = DEFAULT_N_LOOP, workers: int = 1,
                estimator: str = "direct", d_star=None, **kwargs):
    """Run an anomaly estimator over descending ``deltas`` with common random numbers.

    Every ``delta`` reuses the same ``(x, l)`` draws, so differences between
    rows are not masked by independent sampling noise.
    """
    deltas = [float(d) for d in deltas]
    if not deltas or any(d <= 0 for d in deltas):
        raise ConfigurationError("deltas must be positive")
    if any(a <= b for a, b in zip(deltas, deltas[1:])):
        raise ConfigurationError("deltas must be strictly descending")
    streams = as_substreams(rng)
    out = []
    for d in deltas:
        if estimator == "direct":
            out.append(estimate_anomaly_direct(field, D, d, measure, N, streams, n, workers, d_star))
        elif estimator == "discrepancy":
            out.append(estimate_discrepancy(field, D, d, measure, N, streams, n, workers, **kwargs))
        else:
            raise ConfigurationError(f"unknown estimator {estimator!r}")
    return out


def convergence_table(estimates, prediction=None):
    """Rows ``(delta, value, std_error, value - prediction)`` for a sweep."""
    rows = []
    for e in estimates:
        row = {"delta": e.delta, "value": e.value, "std_error": e.std_error, "fallback_rate": e.fallback_rate}
        if prediction is not None:
            row["prediction"] = prediction
            row["difference"] = e.value - prediction
        rows.append(row)
    return rows
