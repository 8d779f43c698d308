"""Independent reference computations used to freeze expected values.

None of these call into the package; they use mpmath or scipy on closed forms.
"""

import mpmath as mp
import numpy as np
from scipy import integrate, special


def torus_log_det_kronecker(L1, L2, dps=30):
    """``log det' Lap`` on R^2/(L1 Z x L2 Z) from the Kronecker limit formula.

    ``det' Lap = L2^2 |eta(i L2/L1)|^4`` with the Dedekind eta product.
    """
    with mp.workdps(dps):
        y = mp.mpf(L2) / mp.mpf(L1)
        q = mp.e ** (-2 * mp.pi * y)
        log_eta = -mp.pi * y / 12 + mp.nsum(lambda k: mp.log(1 - q**k), [1, mp.inf])
        return float(2 * mp.log(L2) + 4 * log_eta)


def heat_trace_direct(L1, L2, t, m_max=60):
    """Brute-force eigenvalue sum ``sum exp(-t 4 pi^2 (m^2/L1^2 + k^2/L2^2))``."""
    m = np.arange(-m_max, m_max + 1)
    a = np.exp(-t * 4 * np.pi**2 * (m / L1) ** 2).sum()
    b = np.exp(-t * 4 * np.pi**2 * (m / L2) ** 2).sum()
    return float(a * b)


def bump_energy_radial(amplitude, radius, profile="smooth"):
    """``2 pi int_0^R |phi'(r)|^2 r dr`` by adaptive quadrature of the radial profile."""
    if profile == "smooth":
        d = lambda r: amplitude * 3 * (1 - (r / radius) ** 2) ** 2 * (-2 * r / radius**2)
    else:
        d = lambda r: amplitude * 2 * (1 - r / radius) * (-1 / radius)
    val, _ = integrate.quad(lambda r: d(r) ** 2 * r, 0, radius, epsabs=1e-14, epsrel=1e-13)
    return 2 * np.pi * val


def bridge_moment_discrete(n):
    """Per-coordinate second moment about the mean of a Brownian bridge sampled at ``k/n``.

    ``(1/n) sum_k Var(B_k - mean B)`` evaluated from the exact bridge covariance
    ``min(s,u) - s u`` with mpmath rationals.
    """
    s = np.arange(n) / n
    cov = np.minimum.outer(s, s) - np.outer(s, s)
    centered = cov - cov.mean(axis=0) - cov.mean(axis=1)[:, None] + cov.mean()
    return float(np.trace(centered) / n)


def circle_len_affine(slope, offset, x, t, R):
    """``int_0^t exp(rho)`` over a circle loop of radius ``R sqrt(t)`` centered at ``x`` in ``rho = a.x + c``.

    Equals ``t exp(rho(x)) I_0(|a| R sqrt(t))``.
    """
    a = np.asarray(slope, dtype=float)
    rho_x = float(a @ np.asarray(x, dtype=float) + offset)
    return t * np.exp(rho_x) * special.i0(np.linalg.norm(a) * R * np.sqrt(t))


def circle_alpha_affine(slope, offset, x, delta, R):
    """Root of ``circle_len_affine(t) = delta`` by mpmath's bracketed solver."""
    f = lambda t: circle_len_affine(slope, offset, x, float(t), R) - delta
    # f is evaluated in double precision, so the solver must work at that precision too
    with mp.workdps(15):
        return float(mp.findroot(f, (delta * 1e-3, delta * 1e3), solver="anderson"))
