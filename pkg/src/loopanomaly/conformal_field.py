"""Conformal factors: compactly supported Lipschitz fields ``rho`` on the plane.

Every field exposes pointwise evaluation on arrays of shape ``(..., 2)``, its
gradient, a bound on ``sup |rho|``, a Lipschitz bound, the Dirichlet energy
``(rho, rho)_grad = int |grad rho|^2`` and the rho-volume ``int exp(rho)``.

Families:

* :class:`AnalyticBump` - radial bump, ``A (1 - (r/R)^2)^3`` ("smooth") or
  ``A max(0, 1 - r/R)^2`` ("cone").
* :class:`TaperedSine` - ``amplitude * taper(x) * sin(j x_1)``; without the
  taper it is periodic on its box.
* :class:`FourierField` - finite sum of plane waves, periodic on its box
  (torus fields).
* :class:`AffineField` - ``c + g . x``, a local test patch without compact
  support.
* :class:`GridField` - bilinear interpolation of nodal values that vanish on
  the boundary of the box.  Square-subdivision fields are grid fields.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .errors import ConfigurationError, NumericalError

GRID_MAGIC = b"CFGRID01"


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ConfigurationError(f"degenerate box {self}")

    @classmethod
    def square(cls, half_width, center=(0.0, 0.0)):
        cx, cy = center
        return cls(cx - half_width, cx + half_width, cy - half_width, cy + half_width)

    @classmethod
    def coerce(cls, value):
        if isinstance(value, Box):
            return value
        return cls(*[float(v) for v in value])

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    @property
    def lower(self):
        return np.array([self.x0, self.y0])

    @property
    def sizes(self):
        return np.array([self.width, self.height])

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def intersect(self, other):
        x0, x1 = max(self.x0, other.x0), min(self.x1, other.x1)
        y0, y1 = max(self.y0, other.y0), min(self.y1, other.y1)
        if x1 <= x0 or y1 <= y0:
            return None
        return Box(x0, x1, y0, y1)

    def uniform(self, rng, size):
        u = rng.random((size, 2))
        return self.lower + u * self.sizes

    def midpoints(self, nx, ny=None):
        """Cell-center grid of an ``nx x ny`` subdivision and the cell area."""
        ny = nx if ny is None else ny
        hx, hy = self.width / nx, self.height / ny
        xs = self.x0 + hx * (np.arange(nx) + 0.5)
        ys = self.y0 + hy * (np.arange(ny) + 0.5)
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X, Y], axis=-1), hx * hy

    def as_tuple(self):
        return (self.x0, self.x1, self.y0, self.y1)


class ConformalField:
    """Base class.  Subclasses implement ``_eval`` and ``_grad`` on ``(..., 2)`` arrays."""

    kind = "abstract"
    periodic = False

    def __init__(self, box):
        self.box = Box.coerce(box)

    # -- pointwise -----------------------------------------------------------
    def __call__(self, pts):
        return self.eval(pts)

    def eval(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.periodic:
            return self._eval(self._wrap(pts))
        return self._eval(pts)

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.periodic:
            return self._grad(self._wrap(pts))
        return self._grad(pts)

    def _wrap(self, pts):
        lo, size = self.box.lower, self.box.sizes
        return lo + np.mod(pts - lo, size)

    def _eval(self, pts):  # pragma: no cover - abstract
        raise NotImplementedError

    def _grad(self, pts):  # pragma: no cover - abstract
        raise NotImplementedError

    # -- global quantities ---------------------------------------------------
    def sup_abs(self) -> float:
        """Upper bound on ``sup |rho|``."""
        raise NotImplementedError

    def inf_value(self) -> float:
        """Lower bound on ``inf rho``."""
        return -self.sup_abs()

    def lipschitz_bound(self) -> Optional[float]:
        """Analytic Lipschitz bound, or ``None`` when unavailable."""
        return None

    def quadrature_resolution(self) -> int:
        return 1024

    def dirichlet_energy(self, resolution=None) -> float:
        """Composite midpoint rule for ``int_D |grad rho|^2``."""
        res = resolution or self.quadrature_resolution()
        total = 0.0
        for pts, w in _blocks(self.box, res):
            g = self.gradient(pts)
            total += w * float(np.sum(g * g))
        return total

    def rho_volume(self, region=None, resolution=None) -> float:
        """``int_region exp(rho)``; outside the support the integrand is 1."""
        region = self.box if region is None else Box.coerce(region)
        if self.periodic:
            inner = region
            outside = 0.0
        else:
            inner = region.intersect(self.box)
            outside = region.area - (inner.area if inner is not None else 0.0)
        if inner is None:
            return region.area
        res = resolution or self.quadrature_resolution()
        total = 0.0
        for pts, w in _blocks(inner, res):
            total += w * float(np.sum(np.expm1(self.eval(pts))))
        return inner.area + total + outside

    def to_dict(self) -> dict:
        raise NotImplementedError


def _blocks(box, res, rows=128):
    """Midpoint grid of ``res x res`` cells over ``box``, yielded in row blocks."""
    hx, hy = box.width / res, box.height / res
    xs = box.x0 + hx * (np.arange(res) + 0.5)
    for start in range(0, res, rows):
        ys = box.y0 + hy * (np.arange(start, min(res, start + rows)) + 0.5)
        X, Y = np.meshgrid(xs, ys)
        yield np.stack([X, Y], axis=-1), hx * hy


class ZeroField(ConformalField):
    """``rho = 0`` everywhere (trivially periodic on any box)."""

    kind = "zero"
    periodic = True

    def __init__(self, box=(0.0, 1.0, 0.0, 1.0)):
        super().__init__(box)

    def _eval(self, pts):
        return np.zeros(pts.shape[:-1])

    def _grad(self, pts):
        return np.zeros(pts.shape)

    def sup_abs(self):
        return 0.0

    def lipschitz_bound(self):
        return 0.0

    def dirichlet_energy(self, resolution=None):
        return 0.0

    def rho_volume(self, region=None, resolution=None):
        region = self.box if region is None else Box.coerce(region)
        return region.area

    def to_dict(self):
        return {"kind": self.kind, "box": list(self.box.as_tuple())}


class AffineField(ConformalField):
    """``rho(x) = offset + slope . x`` inside ``box`` (or everywhere when ``box`` is None).

    Meant as a local patch for threshold tests; it is not compactly supported
    and the box only serves as the integration region.
    """

    kind = "affine"

    def __init__(self, slope=(1.0, 0.0), offset=0.0, box=(-1.0, 1.0, -1.0, 1.0)):
        super().__init__(box)
        self.slope = np.asarray(slope, dtype=float).reshape(2)
        self.offset = float(offset)

    def _eval(self, pts):
        return self.offset + pts @ self.slope

    def _grad(self, pts):
        return np.broadcast_to(self.slope, pts.shape).copy()

    def sup_abs(self):
        corners = np.array([[self.box.x0, self.box.y0], [self.box.x0, self.box.y1],
                            [self.box.x1, self.box.y0], [self.box.x1, self.box.y1]])
        return float(np.max(np.abs(self._eval(corners))))

    def lipschitz_bound(self):
        return float(np.hypot(*self.slope))

    def dirichlet_energy(self, resolution=None):
        return float(self.slope @ self.slope) * self.box.area

    def to_dict(self):
        return {"kind": self.kind, "slope": self.slope.tolist(), "offset": self.offset,
                "box": list(self.box.as_tuple())}


# Lipschitz constants of the radial profiles in u = r / R
_SMOOTH_PROFILE_LIP = 96.0 / (25.0 * np.sqrt(5.0))
_CONE_PROFILE_LIP = 2.0


class AnalyticBump(ConformalField):
    """Radial bump of height ``amplitude`` and support radius ``radius``.

    ``profile="smooth"`` is ``(1 - u^2)^3`` (C^2) and ``profile="cone"`` is
    ``max(0, 1 - u)^2`` (Lipschitz, with a cone point at the center), where
    ``u = |x - center| / radius``.  The box defaults to the square circumscribing
    the support disk and must contain it.
    """

    kind = "analytic_bump"

    def __init__(self, amplitude=1.0, radius=1.0, center=(0.0, 0.0), profile="smooth", box=None):
        self.amplitude = float(amplitude)
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float).reshape(2)
        if profile not in ("smooth", "cone"):
            raise ConfigurationError(f"unknown bump profile {profile!r}")
        if not self.radius > 0:
            raise ConfigurationError("bump radius must be positive")
        self.profile = profile
        if box is None:
            box = Box.square(self.radius, tuple(self.center))
        super().__init__(box)
        b = self.box
        cx, cy = self.center
        r = self.radius
        if cx - r < b.x0 - 1e-12 or cx + r > b.x1 + 1e-12 or cy - r < b.y0 - 1e-12 or cy + r > b.y1 + 1e-12:
            raise ConfigurationError("bump support must lie inside its box")

    def _eval(self, pts):
        d0 = pts[..., 0] - self.center[0]
        d1 = pts[..., 1] - self.center[1]
        r2 = (d0 * d0 + d1 * d1) * (1.0 / self.radius**2)
        if self.profile == "smooth":
            w = np.maximum(1.0 - r2, 0.0)
            return self.amplitude * w * w * w
        w = np.maximum(1.0 - np.sqrt(r2), 0.0)
        return self.amplitude * w * w

    def _grad(self, pts):
        d = pts - self.center
        r = np.sqrt(np.sum(d * d, axis=-1))
        u = r / self.radius
        inside = u < 1.0
        if self.profile == "smooth":
            # d/dx A(1 - r^2/R^2)^3 = -6 A (1 - u^2)^2 x / R^2
            w = np.where(inside, 1.0 - u * u, 0.0)
            coef = -6.0 * self.amplitude * w * w / self.radius**2
            return coef[..., None] * d
        # d/dx A(1 - r/R)^2 = -2 A (1 - u) x / (R r); the cone point gets 0
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(inside & (r > 0), -2.0 * self.amplitude * (1.0 - u) / (self.radius * r), 0.0)
        return coef[..., None] * d

    def laplacian(self, pts):
        """Analytic Laplacian (smooth profile only)."""
        if self.profile != "smooth":
            raise ConfigurationError("the cone profile has a singular Laplacian")
        d = np.asarray(pts, dtype=float) - self.center
        u2 = np.sum(d * d, axis=-1) / self.radius**2
        w = np.where(u2 < 1.0, 1.0 - u2, 0.0)
        return self.amplitude / self.radius**2 * (-12.0 * w * w + 24.0 * u2 * w)

    def sup_abs(self):
        return abs(self.amplitude)

    def inf_value(self):
        return min(0.0, self.amplitude)

    def lipschitz_bound(self):
        lip = _SMOOTH_PROFILE_LIP if self.profile == "smooth" else _CONE_PROFILE_LIP
        return abs(self.amplitude) * lip / self.radius

    def radial_energy(self):
        """Closed form of ``int |grad rho|^2`` (scale invariant in the radius)."""
        c = 6.0 * np.pi / 5.0 if self.profile == "smooth" else 2.0 * np.pi / 3.0
        return c * self.amplitude**2

    def quadrature_resolution(self):
        return 2048

    def to_dict(self):
        return {"kind": self.kind, "amplitude": self.amplitude, "radius": self.radius,
                "center": self.center.tolist(), "profile": self.profile,
                "box": list(self.box.as_tuple())}


def smoothstep5(u):
    """Quintic C^2 ramp ``6u^5 - 15u^4 + 10u^3`` clipped to ``[0, 1]``."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def smoothstep5_prime(u):
    inside = (u > 0.0) & (u < 1.0)
    return np.where(inside, 30.0 * u * u * (1.0 - u) ** 2, 0.0)


class TaperedSine(ConformalField):
    """``amplitude * T(x) * sin(j (x_1 - x0_shift))`` with a C^2 taper ``T``.

    ``T`` is the product over both axes of a quintic ramp rising over a margin
    of ``margin`` times the side length at each end of the box.  The amplitude
    defaults to ``1/j``.  With ``taper=False`` the field is the plain sine,
    periodic on the box (``j`` times the box width should be a multiple of
    ``2 pi``).  ``origin`` shifts the phase: the argument is ``j (x_1 - origin)``.
    """

    kind = "tapered_sine"

    def __init__(self, j=1.0, box=(0.0, 2 * np.pi, 0.0, 2 * np.pi), amplitude=None,
                 taper=True, margin=0.1, origin=0.0):
        super().__init__(box)
        self.j = float(j)
        if not self.j > 0:
            raise ConfigurationError("wavenumber j must be positive")
        self.amplitude = 1.0 / self.j if amplitude is None else float(amplitude)
        self.taper = bool(taper)
        self.margin = float(margin)
        self.origin = float(origin)
        if self.taper and not 0 < self.margin < 0.5:
            raise ConfigurationError("taper margin must be in (0, 0.5)")
        self.periodic = not self.taper

    def _ramp(self, v, lo, size):
        m = self.margin * size
        u = (v - lo) / m
        w = (lo + size - v) / m
        return smoothstep5(np.minimum(u, w)), m, u, w

    def _taper(self, pts):
        b = self.box
        tx, mx, ux, wx = self._ramp(pts[..., 0], b.x0, b.width)
        ty, my, uy, wy = self._ramp(pts[..., 1], b.y0, b.height)
        # derivative of min(u, w)-ramp: +1/m on the left half, -1/m on the right
        dtx = smoothstep5_prime(np.minimum(ux, wx)) * np.where(ux <= wx, 1.0, -1.0) / mx
        dty = smoothstep5_prime(np.minimum(uy, wy)) * np.where(uy <= wy, 1.0, -1.0) / my
        return tx * ty, dtx * ty, tx * dty

    def _eval(self, pts):
        s = self.amplitude * np.sin(self.j * (pts[..., 0] - self.origin))
        if not self.taper:
            return s
        t, _, _ = self._taper(pts)
        return t * s

    def _grad(self, pts):
        arg = self.j * (pts[..., 0] - self.origin)
        s = self.amplitude * np.sin(arg)
        ds = self.amplitude * self.j * np.cos(arg)
        if not self.taper:
            return np.stack([ds, np.zeros_like(ds)], axis=-1)
        t, tx, ty = self._taper(pts)
        return np.stack([tx * s + t * ds, ty * s], axis=-1)

    def sup_abs(self):
        return abs(self.amplitude)

    def lipschitz_bound(self):
        base = abs(self.amplitude) * self.j
        if not self.taper:
            return base
        slope = 1.875 / (self.margin * min(self.box.width, self.box.height))
        return base + abs(self.amplitude) * np.sqrt(2.0) * slope

    def quadrature_resolution(self):
        cycles = self.j * self.box.width / (2.0 * np.pi)
        return int(max(1024, 64 * np.ceil(cycles)))

    def to_dict(self):
        return {"kind": self.kind, "j": self.j, "amplitude": self.amplitude, "taper": self.taper,
                "margin": self.margin, "origin": self.origin, "box": list(self.box.as_tuple())}


class FourierField(ConformalField):
    """Periodic field ``sum_k a_k cos(2 pi (m_k x / L1 + n_k y / L2) + phi_k)`` on ``box``.

    ``modes`` is a sequence of ``(m, n, amplitude, phase)`` with integer ``m``, ``n``.
    """

    kind = "fourier"
    periodic = True

    def __init__(self, modes, box=(0.0, 1.0, 0.0, 1.0)):
        super().__init__(box)
        modes = np.asarray(modes, dtype=float).reshape(-1, 4)
        if np.any(np.abs(modes[:, :2] - np.round(modes[:, :2])) > 0):
            raise ConfigurationError("Fourier mode indices must be integers")
        self.modes = modes
        self._k = 2.0 * np.pi * modes[:, :2] / self.box.sizes
        self._a = modes[:, 2]
        self._phi = modes[:, 3]

    def _phase(self, pts):
        rel = pts - self.box.lower
        return rel[..., 0, None] * self._k[:, 0] + rel[..., 1, None] * self._k[:, 1] + self._phi

    def _eval(self, pts):
        out = np.zeros(pts.shape[:-1])
        rel = pts - self.box.lower
        for (k0, k1), a, phi in zip(self._k, self._a, self._phi):
            out += a * np.cos(rel[..., 0] * k0 + rel[..., 1] * k1 + phi)
        return out

    def _grad(self, pts):
        s = -self._a * np.sin(self._phase(pts))
        return np.stack([s @ self._k[:, 0], s @ self._k[:, 1]], axis=-1)

    def sup_abs(self):
        return float(np.sum(np.abs(self._a)))

    def lipschitz_bound(self):
        return float(np.sum(np.abs(self._a) * np.hypot(self._k[:, 0], self._k[:, 1])))

    def exact_energy(self):
        """Closed form for distinct nonzero modes: ``sum a^2 |k|^2 area / 2``."""
        return float(np.sum(self._a**2 * np.sum(self._k**2, axis=1)) * self.box.area / 2.0)

    def quadrature_resolution(self):
        kmax = int(np.max(np.abs(self.modes[:, :2]))) if len(self.modes) else 1
        return int(max(256, 32 * kmax))

    def to_dict(self):
        return {"kind": self.kind, "modes": self.modes.tolist(), "box": list(self.box.as_tuple())}


class GridField(ConformalField):
    """Bilinear interpolation of nodal values on a uniform square grid.

    ``values[i, k]`` sits at ``(x0 + k h, y0 + i h)``; the node counts fix the
    box.  Values on the boundary nodes must vanish so that the field is
    Lipschitz on the whole plane (it is zero outside the box).
    """

    kind = "grid"

    def __init__(self, values, cell_size, origin=(0.0, 0.0), require_zero_boundary=True, kind=None):
        v = np.array(values, dtype=float, copy=True)
        if v.ndim != 2 or min(v.shape) < 2:
            raise ConfigurationError("grid values must be a 2-D array with at least 2 nodes per side")
        if not cell_size > 0:
            raise ConfigurationError("cell size must be positive")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("grid values must be finite")
        if require_zero_boundary:
            edge = np.concatenate([v[0], v[-1], v[:, 0], v[:, -1]])
            if np.any(edge != 0.0):
                raise ConfigurationError("grid field values must vanish on the boundary nodes")
        v.setflags(write=False)
        self.values = v
        self.h = float(cell_size)
        self.gradient_spacing = self.h
        ny, nx = v.shape
        x0, y0 = (float(c) for c in origin)
        super().__init__(Box(x0, x0 + (nx - 1) * self.h, y0, y0 + (ny - 1) * self.h))
        if kind is not None:
            self.kind = kind

    @property
    def shape(self):
        return self.values.shape

    def _locate(self, pts):
        ny, nx = self.values.shape
        fx = (pts[..., 0] - self.box.x0) / self.h
        fy = (pts[..., 1] - self.box.y0) / self.h
        inside = (fx >= 0) & (fx <= nx - 1) & (fy >= 0) & (fy <= ny - 1)
        ix = np.clip(np.floor(fx).astype(np.int64), 0, nx - 2)
        iy = np.clip(np.floor(fy).astype(np.int64), 0, ny - 2)
        return ix, iy, fx - ix, fy - iy, inside

    def _corners(self, ix, iy):
        v = self.values
        return v[iy, ix], v[iy, ix + 1], v[iy + 1, ix], v[iy + 1, ix + 1]

    def _eval(self, pts):
        ix, iy, u, w, inside = self._locate(pts)
        v00, v10, v01, v11 = self._corners(ix, iy)
        val = v00 + u * (v10 - v00) + w * (v01 - v00) + u * w * (v11 - v10 - v01 + v00)
        return np.where(inside, val, 0.0)

    def _grad(self, pts):
        """Central differences at spacing ``gradient_spacing``."""
        hg = self.gradient_spacing
        ex = np.array([hg, 0.0])
        ey = np.array([0.0, hg])
        gx = (self._eval(pts + ex) - self._eval(pts - ex)) / (2 * hg)
        gy = (self._eval(pts + ey) - self._eval(pts - ey)) / (2 * hg)
        return np.stack([gx, gy], axis=-1)

    def exact_gradient(self, pts):
        """Gradient of the bilinear interpolant (one-sided on cell edges, zero outside)."""
        pts = np.asarray(pts, dtype=float)
        ix, iy, u, w, inside = self._locate(pts)
        v00, v10, v01, v11 = self._corners(ix, iy)
        d = v11 - v10 - v01 + v00
        gx = (v10 - v00 + w * d) / self.h
        gy = (v01 - v00 + u * d) / self.h
        return np.where(inside[..., None], np.stack([gx, gy], axis=-1), 0.0)

    def sup_abs(self):
        return float(np.max(np.abs(self.values)))

    def inf_value(self):
        return float(min(0.0, self.values.min()))

    def lipschitz_bound(self):
        """Exact Lipschitz constant: the gradient is affine per cell, so its norm peaks at a corner."""
        v = self.values
        a = v[:-1, 1:] - v[:-1, :-1]  # bottom edge difference
        c = v[1:, 1:] - v[1:, :-1]  # top edge difference
        l = v[1:, :-1] - v[:-1, :-1]  # left edge difference
        r = v[1:, 1:] - v[:-1, 1:]  # right edge difference
        corners = [np.hypot(a, l), np.hypot(a, r), np.hypot(c, l), np.hypot(c, r)]
        return float(max(np.max(g) for g in corners) / self.h)

    def dirichlet_energy(self, resolution=None):
        """Exact Dirichlet energy of the bilinear interpolant, summed cell by cell.

        On a cell with slopes ``p = v10 - v00``, ``q = v01 - v00`` and twist
        ``d = v11 - v10 - v01 + v00`` the integral is
        ``p^2 + p d + q^2 + q d + 2 d^2 / 3`` (independent of the cell size).
        """
        v = self.values
        p = v[:-1, 1:] - v[:-1, :-1]
        q = v[1:, :-1] - v[:-1, :-1]
        d = v[1:, 1:] - v[:-1, 1:] - v[1:, :-1] + v[:-1, :-1]
        cell = p * p + p * d + q * q + q * d + 2.0 * d * d / 3.0
        return float(np.sum(cell))

    def quadrature_resolution(self):
        ny, nx = self.values.shape
        return 4 * (max(nx, ny) - 1)

    def rho_volume(self, region=None, resolution=None):
        region = self.box if region is None else Box.coerce(region)
        inner = region.intersect(self.box)
        if inner is None:
            return region.area
        res = resolution or self.quadrature_resolution()
        total = 0.0
        for pts, w in _blocks(inner, res):
            total += w * float(np.sum(np.expm1(self._eval(pts))))
        return region.area + total

    def translated(self, cells_x=0, cells_y=0):
        """Copy shifted by whole cells."""
        origin = (self.box.x0 + cells_x * self.h, self.box.y0 + cells_y * self.h)
        return GridField(self.values, self.h, origin, require_zero_boundary=False, kind=self.kind)

    # -- binary file ---------------------------------------------------------
    def to_bytes(self):
        ny, nx = self.values.shape
        head = GRID_MAGIC + struct.pack("<IId4d", ny, nx, self.h, *self.box.as_tuple())
        return head + self.values.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data, require_zero_boundary=True):
        if data[:8] != GRID_MAGIC:
            raise ConfigurationError("not a grid field file (bad magic)")
        ny, nx, h, x0, x1, y0, y1 = struct.unpack_from("<IId4d", data, 8)
        off = 8 + struct.calcsize("<IId4d")
        vals = np.frombuffer(data, dtype="<f8", count=ny * nx, offset=off).reshape(ny, nx)
        field = cls(vals, h, (x0, y0), require_zero_boundary=require_zero_boundary)
        if not np.allclose([field.box.x1, field.box.y1], [x1, y1], rtol=0, atol=1e-9 * max(1.0, abs(x1), abs(y1))):
            raise ConfigurationError("grid header bounding box disagrees with dims and cell size")
        return field

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, require_zero_boundary=True):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), require_zero_boundary)

    def to_dict(self):
        return {"kind": self.kind, "shape": list(self.values.shape), "cell_size": self.h,
                "box": list(self.box.as_tuple())}


# ----------------------------------------------------------------------------
# Lipschitz estimation


@dataclass(frozen=True)
class LipschitzEstimate:
    """Sampled Lipschitz quotient and the analytic bound when known."""

    sampled: float
    analytic: Optional[float]
    value: float
    statistical: bool


def lipschitz_estimate(field: ConformalField, samples: int = 20_000, rng=0, transform=None,
                       scale=None) -> LipschitzEstimate:
    """Largest sampled ``|g(x) - g(y)| / |x - y|`` for ``g = transform(rho)``.

    Pairs are drawn with ``x`` uniform on a slightly enlarged box and ``y``
    a Gaussian perturbation of ``x`` of size ``scale`` (default 1% of the box).
    ``value`` is the analytic bound when available and ``transform`` is None,
    otherwise the sampled maximum (flagged ``statistical``).
    """
    if isinstance(rng, np.random.Generator):
        gen = rng
    else:
        gen = np.random.default_rng(rng)
    box = field.box
    pad = 0.05 * max(box.width, box.height)
    big = Box(box.x0 - pad, box.x1 + pad, box.y0 - pad, box.y1 + pad)
    g = field.eval if transform is None else (lambda p: transform(field.eval(p)))
    x = big.uniform(gen, samples)
    best = 0.0
    base = scale or 0.01 * max(box.width, box.height)
    for sc in (base, base / 10.0, base / 100.0):
        y = x + sc * gen.standard_normal(x.shape)
        dist = np.hypot(*(x - y).T)
        ok = dist > 0
        q = np.abs(g(x[ok]) - g(y[ok])) / dist[ok]
        best = max(best, float(q.max()) if q.size else 0.0)
    analytic = field.lipschitz_bound() if transform is None else None
    if analytic is not None:
        return LipschitzEstimate(best, analytic, analytic, False)
    return LipschitzEstimate(best, None, best, True)


# ----------------------------------------------------------------------------
# Dirichlet energy and curvature


def dirichlet_curvature_identity(f: ConformalField, h: ConformalField, coefficient=4.0,
                                 resolution=1024, region=None):
    """Both sides of ``int|grad(f+h)|^2 - int|grad h|^2 = int (|grad_h f|^2 + c K_h f) dnu_h``.

    ``K_h = -exp(-h) Lap(h) / 2`` is the Gauss curvature of ``exp(h)|dz|^2``,
    ``dnu_h = exp(h) dx`` and ``|grad_h f|^2 = exp(-h) |grad f|^2``.  The
    identity holds with ``coefficient = 4``.  ``h`` must provide an analytic
    ``laplacian``.  Returns ``(lhs, rhs)``.
    """
    region = Box.coerce(region) if region is not None else _union(f.box, h.box)
    lhs = rhs = 0.0
    for pts, w in _blocks(region, resolution):
        gf = f.gradient(pts)
        gh = h.gradient(pts)
        tot = gf + gh
        lhs += w * float(np.sum(tot * tot) - np.sum(gh * gh))
        hv = h.eval(pts)
        eh = np.exp(hv)
        curv = -0.5 * np.exp(-hv) * h.laplacian(pts)
        grad_h_sq = np.exp(-hv) * np.sum(gf * gf, axis=-1)
        rhs += w * float(np.sum((grad_h_sq + coefficient * curv * f.eval(pts)) * eh))
    return lhs, rhs


def _union(a, b):
    return Box(min(a.x0, b.x0), max(a.x1, b.x1), min(a.y0, b.y0), max(a.y1, b.y1))


def exp_lipschitz_bound(field: ConformalField) -> Optional[float]:
    """``Lip(exp rho) <= exp(sup rho) Lip(rho)``."""
    lip = field.lipschitz_bound()
    if lip is None:
        return None
    return float(np.exp(field.sup_abs()) * lip)


# ----------------------------------------------------------------------------
# square subdivision fields


def corner_f(z):
    """``f(z) = Re[z^2 log(z^2)] / pi + |z|^2 / 2`` on ``|arg z| < pi/4``, extended by ``f(iz) = -f(z)``.

    ``z`` is a complex array.  ``f`` vanishes on the diagonals and at 0.
    """
    z = np.asarray(z, dtype=complex)
    ang = np.angle(z)
    k = np.floor((ang + np.pi / 4) / (np.pi / 2)).astype(int)
    w = z * (1j) ** (-(k % 4))
    w2 = w * w
    with np.errstate(divide="ignore", invalid="ignore"):
        core = np.where(w2 == 0, 0.0, (w2 * np.log(w2)).real)
    val = core / np.pi + 0.5 * np.abs(w) ** 2
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    return sign * val


_OMEGA = np.exp(1j * np.pi / 4)


def quadrant_unit_laplacian(x, y):
    """A C^1 function whose Laplacian is 1 on the open first quadrant and 0 on the others.

    Built from ``g(z) = f(omega z)`` (Laplacian -2, 2, -2, 2 on quadrants
    I..IV) and the ramps ``max(+-x, 0)^2``, ``max(+-y, 0)^2`` (Laplacian 2 on
    their half planes):
    ``q = -g/8 + 3/16 (x+^2 + y+^2) - 1/16 (x-^2 + y-^2)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g = corner_f(_OMEGA * (x + 1j * y))
    xp, xm = np.maximum(x, 0.0), np.maximum(-x, 0.0)
    yp, ym = np.maximum(y, 0.0), np.maximum(-y, 0.0)
    return -g / 8.0 + (3.0 / 16.0) * (xp * xp + yp * yp) - (1.0 / 16.0) * (xm * xm + ym * ym)


def cell_indicator_potential(x, y, x0, x1, y0, y1):
    """C^1 function with Laplacian 1 on ``(x0, x1) x (y0, y1)`` and 0 elsewhere (off the edges)."""
    q = quadrant_unit_laplacian
    return q(x - x0, y - y0) - q(x - x1, y - y0) - q(x - x0, y - y1) + q(x - x1, y - y1)


@dataclass(frozen=True)
class SquareSubdivisionSpec:
    """``m x m`` (or ``my x mx``) grid of cells over ``box`` with one Laplacian target per cell.

    ``nodes_per_cell`` sets the sampling resolution of the output grid field.
    """

    targets: np.ndarray
    box: Box = Box(0.0, 1.0, 0.0, 1.0)
    nodes_per_cell: int = 32

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if t.ndim != 2 or t.size == 0:
            raise ConfigurationError("targets must be a non-empty 2-D array")
        if not np.all(np.isfinite(t)):
            raise ConfigurationError("cell Laplacian targets must be finite")
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "box", Box.coerce(self.box))
        my, mx = t.shape
        if not np.isclose(self.box.width / mx, self.box.height / my, rtol=1e-12):
            raise ConfigurationError("cells must be square")
        if int(self.nodes_per_cell) < 2:
            raise ConfigurationError("nodes_per_cell must be at least 2")

    @property
    def cell_side(self):
        return self.box.width / self.targets.shape[1]

    def cell_edges(self):
        my, mx = self.targets.shape
        xs = self.box.x0 + self.cell_side * np.arange(mx + 1)
        ys = self.box.y0 + self.cell_side * np.arange(my + 1)
        return xs, ys

    def potential(self, x, y):
        """The superposition ``phi`` before the boundary correction."""
        xs, ys = self.cell_edges()
        out = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        my, mx = self.targets.shape
        for i in range(my):
            for k in range(mx):
                c = self.targets[i, k]
                if c != 0.0:
                    out += c * cell_indicator_potential(x, y, xs[k], xs[k + 1], ys[i], ys[i + 1])
        return out


def _dst_poisson_zero_bc(rhs, h):
    """Solve the 5-point ``Lap_h u = rhs`` on interior nodes with ``u = 0`` on the boundary."""
    ny, nx = rhs.shape
    jx = np.arange(1, nx + 1)
    jy = np.arange(1, ny + 1)
    lx = (2.0 * np.cos(np.pi * jx / (nx + 1)) - 2.0) / h**2
    ly = (2.0 * np.cos(np.pi * jy / (ny + 1)) - 2.0) / h**2
    coeff = sfft.dstn(rhs, type=1)
    coeff /= ly[:, None] + lx[None, :]
    return sfft.idstn(coeff, type=1)


def five_point_laplacian(u, h):
    """5-point Laplacian on interior nodes of a node array."""
    return (u[1:-1, 2:] + u[1:-1, :-2] + u[2:, 1:-1] + u[:-2, 1:-1] - 4.0 * u[1:-1, 1:-1]) / h**2


def build_square_subdivision(spec: SquareSubdivisionSpec, tol=1e-10) -> GridField:
    """Grid field with the prescribed constant Laplacian on each cell and zero boundary values.

    The superposition ``phi`` of cell potentials is sampled on the node grid;
    its boundary values are removed by subtracting the discrete harmonic
    extension, obtained as ``phi - u`` where ``u`` solves the 5-point Poisson
    problem ``Lap_h u = Lap_h phi`` with zero boundary values (fast sine
    transform).  Raises :class:`NumericalError` if the normwise relative
    residual exceeds ``tol``.
    """
    my, mx = spec.targets.shape
    k = int(spec.nodes_per_cell)
    h = spec.cell_side / k
    nx, ny = mx * k + 1, my * k + 1
    xs = spec.box.x0 + h * np.arange(nx)
    ys = spec.box.y0 + h * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    phi = spec.potential(X, Y)
    values = np.zeros_like(phi)
    if np.any(phi != 0.0):
        rhs = five_point_laplacian(phi, h)
        values[1:-1, 1:-1] = _dst_poisson_zero_bc(rhs, h)
        resid = five_point_laplacian(values, h) - rhs
        # normwise relative residual |A u - f| / (|A| |u| + |f|)
        scale = 8.0 / h**2 * float(np.max(np.abs(values))) + float(np.max(np.abs(rhs)))
        rel = float(np.max(np.abs(resid))) / max(scale, np.finfo(float).tiny)
        if not rel <= tol:
            raise NumericalError(f"harmonic extension residual {rel:.3e} exceeds {tol:.1e}", residual=rel)
    field = GridField(values, h, (spec.box.x0, spec.box.y0), kind="square_subdivision")
    field.subdivision = spec
    return field


def subdivision_laplacian_check(field: GridField, spec: SquareSubdivisionSpec, stride: int = 8):
    """Compare the 5-point Laplacian at spacing ``stride * h_grid`` with the cell targets.

    Stencils are centered on grid nodes, skipping nodes whose stencil reaches a
    cell edge or comes within ``4 * stride * h_grid`` of a cell corner.
    Returns a dict with the stencil spacing, the maximum error, and the
    ``h log(1/h)`` tolerance scale.
    """
    v = field.values
    hs = stride * field.h
    ny, nx = v.shape
    xs_e, ys_e = spec.cell_edges()
    idx_x = np.arange(stride, nx - stride)
    idx_y = np.arange(stride, ny - stride)
    IX, IY = np.meshgrid(idx_x, idx_y)
    lap = (v[IY, IX + stride] + v[IY, IX - stride] + v[IY + stride, IX] + v[IY - stride, IX]
           - 4.0 * v[IY, IX]) / hs**2
    X = field.box.x0 + IX * field.h
    Y = field.box.y0 + IY * field.h
    dx_edge = np.min(np.abs(X[..., None] - xs_e), axis=-1)
    dy_edge = np.min(np.abs(Y[..., None] - ys_e), axis=-1)
    off_edges = (dx_edge > hs * (1 + 1e-9)) & (dy_edge > hs * (1 + 1e-9))
    corner_d = np.hypot(dx_edge, dy_edge)
    keep = off_edges & (corner_d > 4.0 * hs)
    cx = np.clip(np.searchsorted(xs_e, X, side="right") - 1, 0, len(xs_e) - 2)
    cy = np.clip(np.searchsorted(ys_e, Y, side="right") - 1, 0, len(ys_e) - 2)
    target = spec.targets[cy, cx]
    err = np.abs(lap - target)[keep]
    return {
        "spacing": hs,
        "max_error": float(err.max()) if err.size else 0.0,
        "tolerance_scale": hs * np.log(1.0 / hs),
        "points": int(err.size),
    }


def edge_gradient_mismatch(field: GridField, spec: SquareSubdivisionSpec) -> float:
    """Largest jump of one-sided normal differences across interior cell edges at edge midpoints."""
    v = field.values
    k = int(round(spec.cell_side / field.h))
    my, mx = spec.targets.shape
    worst = 0.0
    mid = k // 2
    for ci in range(1, mx):  # vertical interior edges
        col = ci * k
        rows = np.arange(my) * k + mid
        left = (v[rows, col] - v[rows, col - 1]) / field.h
        right = (v[rows, col + 1] - v[rows, col]) / field.h
        worst = max(worst, float(np.max(np.abs(right - left))))
    for ri in range(1, my):  # horizontal interior edges
        row = ri * k
        cols = np.arange(mx) * k + mid
        below = (v[row, cols] - v[row - 1, cols]) / field.h
        above = (v[row + 1, cols] - v[row, cols]) / field.h
        worst = max(worst, float(np.max(np.abs(above - below))))
    return worst


def field_from_dict(d: dict) -> ConformalField:
    """Build a field from a configuration mapping (``kind`` plus parameters)."""
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "zero":
        return ZeroField(**d)
    if kind == "affine":
        return AffineField(**d)
    if kind == "analytic_bump":
        return AnalyticBump(**d)
    if kind == "tapered_sine":
        return TaperedSine(**d)
    if kind == "fourier":
        return FourierField(**d)
    if kind == "grid":
        if "path" not in d:
            raise ConfigurationError("grid field needs a 'path' to a grid file")
        return GridField.load(d["path"])
    if kind == "square_subdivision":
        spec = SquareSubdivisionSpec(
            np.asarray(d["targets"], dtype=float),
            Box.coerce(d.get("box", (0.0, 1.0, 0.0, 1.0))),
            int(d.get("nodes_per_cell", 32)),
        )
        return build_square_subdivision(spec)
    raise ConfigurationError(f"unknown field kind {kind!r}")
