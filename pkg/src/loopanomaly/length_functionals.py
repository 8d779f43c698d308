"""Euclidean and rho-lengths of loops and the cutoff thresholds beta and alpha.

For a loop ``L = (x, t, l)`` and a conformal factor ``rho``:

* ``len_rho(L) = int_0^t exp(rho(L(s))) ds``, computed by the trapezoid rule
  on the loop's own ``n`` cyclic sample times, i.e. ``t * mean_k exp(rho(x + sqrt(t) l_k))``;
* ``clen_rho(L) = exp(rho(x)) t``, the length frozen at the center;
* ``beta = exp(-rho(x)) delta`` solves ``clen_rho = delta``;
* ``alpha`` solves ``len_rho(x, alpha, l) = delta``.

With ``Lambda = exp(sup |rho|)`` one has ``t / Lambda <= len_rho <= Lambda t``,
so ``alpha`` lies in ``[delta / Lambda, Lambda delta]``.  The map
``t -> len_rho`` is strictly increasing there as long as the loop is small
compared to the scale on which ``exp(rho)`` varies; loops with
``diam(l) sqrt(delta) >= d_star`` are assigned ``alpha = delta`` instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal_field import ConformalField, exp_lipschitz_bound
from .errors import ConfigurationError, DomainError, MonotonicityError, NumericalError
from .loop_space import LoopTriple, UnitLoop, batch_diameter, diameter

REL_TOL = 1e-10
MAX_ITER = 80


@dataclass(frozen=True)
class ThresholdResult:
    alpha: float
    beta: float
    fallback_used: bool
    iterations: int

    def as_row(self, x, delta):
        return {"x1": float(x[0]), "x2": float(x[1]), "delta": float(delta), "alpha": self.alpha,
                "beta": self.beta, "fallback": int(self.fallback_used), "iters": self.iterations}


def len_rho_path(field: ConformalField, points, t):
    """``t`` times the mean of ``exp(rho)`` over the sample points (last axis pairs)."""
    vals = np.exp(field.eval(points))
    return np.asarray(t) * vals.mean(axis=-1)


def len_rho(field: ConformalField, L: LoopTriple) -> float:
    """rho-length of a loop triple (cyclic trapezoid rule)."""
    return float(len_rho_path(field, L.points(), L.t))


def clen_rho(field: ConformalField, L: LoopTriple) -> float:
    """Center rho-length ``exp(rho(x)) t``."""
    return float(np.exp(field.eval(L.x)) * L.t)


def beta(field: ConformalField, x, delta: float) -> float:
    if not delta > 0:
        raise DomainError("delta must be positive")
    return float(np.exp(-field.eval(np.asarray(x, dtype=float))) * delta)


def lambda_bound(field: ConformalField) -> float:
    """``Lambda = exp(sup |rho|)``."""
    return float(np.exp(field.sup_abs()))


def rigorous_d_star(field: ConformalField) -> float:
    """Loop diameter below which ``t -> len_rho`` is provably increasing on the bracket.

    Writing ``len_rho(t) = t A(sqrt t)`` with ``A`` the mean of ``exp(rho)``
    over the scaled loop, ``d len_rho / dt >= A - sqrt(t) |A'| / 2`` and
    ``|A'| <= Lip(exp rho) diam(l)``.  Since ``A >= exp(inf rho)`` and
    ``t <= Lambda delta``, monotonicity holds whenever
    ``diam(l) sqrt(delta) < 2 exp(inf rho) / (Lip(exp rho) sqrt(Lambda))``.
    """
    lip = exp_lipschitz_bound(field)
    if lip is None or lip == 0:
        return float("inf")
    lam = lambda_bound(field)
    return float(2.0 * np.exp(field.inf_value()) / (lip * np.sqrt(lam)))


def default_d_star(field: ConformalField) -> float:
    """Empirical ``d_star`` from :func:`calibrate_d_star` (fixed seed, cached on the field).

    Never below :func:`rigorous_d_star`.
    """
    cached = getattr(field, "_d_star_cache", None)
    if cached is None:
        cal = calibrate_d_star(field)
        cached = max(cal["empirical"], cal["rigorous"])
        try:
            field._d_star_cache = cached
        except AttributeError:  # pragma: no cover - slotted fields
            pass
    return cached


def _solve(field, x, delta, loops, rho_x, lam, tol=REL_TOL, max_iter=MAX_ITER):
    """Vectorized safeguarded secant solve of ``len_rho(t) = delta`` for each row.

    The first step is the secant through the origin (``len_rho(0) = 0``)
    started from ``beta``; later steps use the last two iterates and fall back
    to bisection whenever a step leaves the current bracket.
    """
    m = loops.shape[0]
    beta_v = delta * np.exp(-rho_x)
    lo = np.full(m, delta / lam)
    hi = np.full(m, delta * lam)
    t = beta_v.copy()
    t_prev = np.zeros(m)
    f_prev = np.full(m, -delta)
    alpha = np.empty(m)
    iters = np.zeros(m, dtype=np.int64)
    active = np.arange(m)
    for it in range(1, max_iter + 1):
        tt = t[active]
        pts = x[active, None, :] + np.sqrt(tt)[:, None, None] * loops[active]
        f = tt * np.exp(field.eval(pts)).mean(axis=1) - delta
        iters[active] = it
        exact = f == 0.0
        lo_a = np.where(f < 0, tt, lo[active])
        hi_a = np.where(f > 0, tt, hi[active])
        lo[active], hi[active] = lo_a, hi_a
        tp, fp = t_prev[active], f_prev[active]
        denom = f - fp
        with np.errstate(divide="ignore", invalid="ignore"):
            step = tt - f * (tt - tp) / denom
        bad = ~np.isfinite(step) | (step <= lo_a) | (step >= hi_a)
        new = np.where(bad, 0.5 * (lo_a + hi_a), step)
        done = exact | (np.abs(new - tt) <= tol * tt) | ((hi_a - lo_a) <= tol * lo_a)
        alpha[active[done]] = np.where(exact[done], tt[done], new[done])
        keep = ~done
        t_prev[active[keep]] = tt[keep]
        f_prev[active[keep]] = f[keep]
        t[active[keep]] = new[keep]
        active = active[keep]
        if active.size == 0:
            return alpha, beta_v, iters
    raise NumericalError(f"alpha iteration did not converge for {active.size} loops")


def solve_alpha_batch(field: ConformalField, x, delta: float, loops, d_star=None, lam=None,
                      diam=None, tol=REL_TOL):
    """Thresholds for many ``(x, l)`` pairs at once.

    ``x`` has shape ``(m, 2)`` and ``loops`` shape ``(m, n, 2)``.  Returns
    ``(alpha, beta, fallback, iterations)`` arrays.  ``diam`` defaults to the
    32-direction projected width of each loop.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    x = np.asarray(x, dtype=float)
    loops = np.asarray(loops, dtype=float)
    lam = lambda_bound(field) if lam is None else float(lam)
    d_star = default_d_star(field) if d_star is None else float(d_star)
    rho_x = field.eval(x)
    m = x.shape[0]
    if np.isfinite(d_star):
        diam = batch_diameter(loops) if diam is None else np.asarray(diam)
        fallback = diam * np.sqrt(delta) >= d_star
    else:
        fallback = np.zeros(m, dtype=bool)
    alpha = np.full(m, float(delta))
    iters = np.zeros(m, dtype=np.int64)
    beta_v = delta * np.exp(-rho_x)
    idx = np.flatnonzero(~fallback)
    if idx.size:
        a, _, it = _solve(field, x[idx], delta, loops[idx], rho_x[idx], lam, tol=tol)
        alpha[idx] = a
        iters[idx] = it
    return alpha, beta_v, fallback, iters


def alpha(field: ConformalField, x, delta: float, loop: UnitLoop, d_star=None, lam=None,
          tol=REL_TOL) -> ThresholdResult:
    """Threshold ``alpha`` for one loop, with the bracket checked explicitly."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    if d_star is not None and not d_star > 0:
        raise ConfigurationError("d_star must be positive")
    x = np.asarray(x, dtype=float).reshape(2)
    pts = loop.points if isinstance(loop, UnitLoop) else np.asarray(loop, dtype=float)
    lam = lambda_bound(field) if lam is None else float(lam)
    d_star = default_d_star(field) if d_star is None else float(d_star)
    b = float(delta * np.exp(-field.eval(x)))
    if diameter(pts) * np.sqrt(delta) >= d_star:
        return ThresholdResult(float(delta), b, True, 0)
    lo, hi = delta / lam, delta * lam
    f_lo = float(len_rho_path(field, x + np.sqrt(lo) * pts, lo)) - delta
    f_hi = float(len_rho_path(field, x + np.sqrt(hi) * pts, hi)) - delta
    if f_lo > 0 or f_hi < 0:
        raise MonotonicityError(
            f"bracket [{lo:.6g}, {hi:.6g}] does not straddle delta={delta:.6g} "
            f"(f(lo)={f_lo:.3g}, f(hi)={f_hi:.3g})"
        )
    a, _, it = _solve(field, x[None, :], delta, pts[None], field.eval(x)[None], lam, tol=tol)
    return ThresholdResult(float(a[0]), b, False, int(it[0]))


def calibrate_d_star(field: ConformalField, probes: int = 10_000, n: int = 64, rng=0,
                     cap: float = 8.0, grid: int = 48):
    """Empirical largest ``d`` for which ``t -> len_rho`` stays increasing on every probe.

    For random centers in the field's box and Brownian unit loops, ``len_rho``
    is evaluated on a geometric grid of times; the loop's physical diameter at
    the first time where the sequence decreases is a failing ``d``.  Returns
    the smallest failing ``d`` over all probes (``cap`` if none fails) and the
    rigorous lower bound from :func:`rigorous_d_star`.
    """
    from .loop_space import MeasureSpec, sample_unit_loops

    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    loops = sample_unit_loops(MeasureSpec.brownian(), n, probes, gen)
    x = field.box.uniform(gen, probes)
    diam = batch_diameter(loops)
    # physical diameters from 1e-3 * cap to cap
    dphys = cap * np.geomspace(1e-3, 1.0, grid)
    first_fail = np.full(probes, np.inf)
    prev = None
    for d in dphys:
        t = (d / diam) ** 2
        cur = len_rho_path(field, x[:, None, :] + np.sqrt(t)[:, None, None] * loops, t)
        if prev is not None:
            bad = (cur <= prev) & ~np.isfinite(first_fail)
            first_fail[bad] = d
        prev = cur
    empirical = float(min(cap, np.min(first_fail)))
    return {"empirical": empirical, "rigorous": rigorous_d_star(field), "probes": probes}


def threshold_expansion(field: ConformalField, x, delta: float, loop: UnitLoop, tol=1e-13):
    """Terms of the first-order expansions of ``alpha - beta`` and ``1/alpha - 1/beta``.

    Returns a dict with ``alpha``, ``beta``, ``gap = len_rho(x, beta, l) -
    clen_rho(x, beta, l)`` and the residuals

    * ``res_alpha = alpha - beta + exp(-rho(x)) gap`` (the expansion
      ``alpha - beta = -exp(-rho(x)) gap + o(delta^2)``), and
      ``res_alpha_flipped`` with the opposite sign of the gap term;
    * ``res_inverse = 1/alpha - 1/beta - gap / (delta beta)`` (the expansion
      ``1/alpha - 1/beta = gap / (delta beta) + o(1)``), and
      ``res_inverse_flipped`` with the opposite sign.
    """
    x = np.asarray(x, dtype=float).reshape(2)
    pts = loop.points if isinstance(loop, UnitLoop) else np.asarray(loop, dtype=float)
    res = alpha(field, x, delta, pts, d_star=np.inf, tol=tol)
    b = res.beta
    rho_x = float(field.eval(x))
    gap = float(len_rho_path(field, x + np.sqrt(b) * pts, b)) - delta
    a = res.alpha
    return {
        "alpha": a,
        "beta": b,
        "gap": gap,
        "res_alpha": a - b + np.exp(-rho_x) * gap,
        "res_alpha_flipped": a - b - np.exp(-rho_x) * gap,
        "res_inverse": 1.0 / a - 1.0 / b - gap / (delta * b),
        "res_inverse_flipped": 1.0 / a - 1.0 / b + gap / (delta * b),
        "inverse_square_scaled": abs(a**-2 - b**-2) * np.sqrt(delta) / max(diameter(pts), 1e-300),
    }
