"""Loops in the plane through the (center, time-length, unit loop) parametrization.

A loop ``L`` of time-length ``t`` with Euclidean center ``x`` is stored as the
triple ``(x, t, l)`` where ``l(s) = t**-0.5 * (L(t s) - x)`` is a zero-centered
loop parametrized by ``[0, 1]``.  Unit loops are kept as ``n`` samples at the
times ``k/n``; the segment from the last sample back to the first closes the
loop.

Three rotationally invariant unit-loop laws are provided: the mean-subtracted
Brownian bridge (the Brownian loop measure has density ``dx dt dl / (2 pi t^2)``),
a uniformly rotated circle and a uniformly rotated square boundary (generalized
loop measures with density ``dx dt dl / t^2``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ._streams import Substreams, as_substreams, mean_and_se, run_chunks
from .errors import ConfigurationError, DomainError, ResolutionError

BROWNIAN = "brownian_bridge"
CIRCLE = "circle"
SQUARE = "square"
POINT = "point"
SAMPLER_KINDS = (BROWNIAN, CIRCLE, SQUARE, POINT)
_SAMPLER_TAGS = {BROWNIAN: 0, CIRCLE: 1, SQUARE: 2, POINT: 3, "unknown": 255}
_TAG_SAMPLERS = {v: k for k, v in _SAMPLER_TAGS.items()}

# Elements per sampling chunk; the chunk row count depends only on n.
_CHUNK_ELEMENTS = 1 << 21


@dataclass
class MeasureSpec:
    """A rotationally invariant loop measure ``normalization * dx dt dl / t^2``.

    ``sampler_kind`` selects the law of the unit loop ``dl``.  ``radius`` is the
    circle radius and ``half_width`` the square half-side.  When
    ``normalization`` is omitted it is ``1/(2 pi)`` for the Brownian measure and
    ``1`` for the generalized ones.  ``b`` caches an estimate of the occupation
    moment once :func:`occupation_moment_b` has run.
    """

    sampler_kind: str = BROWNIAN
    radius: float = 1.0
    half_width: float = 1.0
    normalization: Optional[float] = None
    b: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        if self.sampler_kind not in SAMPLER_KINDS:
            raise ConfigurationError(
                f"unknown sampler_kind {self.sampler_kind!r}; expected one of {SAMPLER_KINDS}"
            )
        if self.sampler_kind == CIRCLE and not self.radius > 0:
            raise ConfigurationError("circle radius must be positive")
        if self.sampler_kind == SQUARE and not self.half_width > 0:
            raise ConfigurationError("square half_width must be positive")
        if self.normalization is None:
            self.normalization = 1.0 / (2.0 * np.pi) if self.sampler_kind == BROWNIAN else 1.0
        if not self.normalization > 0:
            raise ConfigurationError("normalization must be positive")

    @classmethod
    def brownian(cls):
        return cls(BROWNIAN)

    @classmethod
    def circle(cls, radius=1.0, normalization=None):
        return cls(CIRCLE, radius=radius, normalization=normalization)

    @classmethod
    def square(cls, half_width=1.0, normalization=None):
        return cls(SQUARE, half_width=half_width, normalization=normalization)

    @property
    def exact_b(self):
        """Closed-form occupation moment of the continuum sampler."""
        if self.sampler_kind == BROWNIAN:
            return 1.0 / 12.0
        if self.sampler_kind == CIRCLE:
            return self.radius**2 / 2.0
        if self.sampler_kind == SQUARE:
            return 2.0 * self.half_width**2 / 3.0
        return 0.0

    def discrete_b(self, n):
        """Occupation moment of the ``n``-point discretization (trapezoid in time)."""
        if self.sampler_kind == BROWNIAN:
            return (1.0 - 1.0 / n**2) / 12.0
        if self.sampler_kind == SQUARE:
            # Average of x^2 over n equally spaced points on the boundary; it
            # depends on the phase, so average over a fine phase grid.
            base = _square_points(n, np.linspace(0.0, 1.0, 512, endpoint=False), self.half_width)
            base = base - base.mean(axis=1, keepdims=True)
            return float(np.mean(base**2))
        return self.exact_b

    @property
    def tag(self):
        return _SAMPLER_TAGS[self.sampler_kind]

    def to_dict(self):
        return {
            "sampler_kind": self.sampler_kind,
            "radius": float(self.radius),
            "half_width": float(self.half_width),
            "normalization": float(self.normalization),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("b", None)
        return cls(**d)


@dataclass(frozen=True, eq=False)
class UnitLoop:
    """Zero-centered loop sampled at times ``k/n``, ``k = 0..n-1``."""

    points: np.ndarray
    sampler_kind: str = "unknown"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ConfigurationError("points must have shape (n, 2)")
        if pts.shape[0] < 1:
            raise ResolutionError("a unit loop needs at least one point")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def centered(cls, points, sampler_kind="unknown"):
        pts = np.asarray(points, dtype=float)
        return cls(pts - pts.mean(axis=0), sampler_kind)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def mean(self):
        return self.points.mean(axis=0)

    def diameter(self):
        return diameter(self)

    def __call__(self, u):
        """Piecewise-linear evaluation at unit times ``u`` (taken mod 1)."""
        u = np.asarray(u, dtype=float)
        pos = np.mod(u, 1.0) * self.n
        k = np.floor(pos).astype(int) % self.n
        frac = (pos - np.floor(pos))[..., None]
        p0 = self.points[k]
        p1 = self.points[(k + 1) % self.n]
        return p0 + frac * (p1 - p0)

    def __eq__(self, other):
        if not isinstance(other, UnitLoop):
            return NotImplemented
        return self.sampler_kind == other.sampler_kind and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.sampler_kind, self.points.tobytes()))

    # -- serialization -------------------------------------------------------
    def to_bytes(self):
        """Little-endian record: uint32 n, uint8 sampler tag, then 2n float64."""
        tag = _SAMPLER_TAGS.get(self.sampler_kind, 255)
        header = struct.pack("<IB", self.n, tag)
        return header + self.points.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data):
        n, tag = struct.unpack_from("<IB", data, 0)
        body = np.frombuffer(data, dtype="<f8", count=2 * n, offset=5)
        return cls(body.reshape(n, 2), _TAG_SAMPLERS.get(tag, "unknown"))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path):
        idx = np.arange(self.n)
        table = np.column_stack([idx, self.points])
        np.savetxt(path, table, delimiter=",", header="index,x,y", comments="",
                   fmt=["%d", "%.17g", "%.17g"])


@dataclass(frozen=True)
class LoopTriple:
    """A planar loop of time-length ``t`` centered at ``x`` with shape ``unit_loop``."""

    x: np.ndarray
    t: float
    unit_loop: UnitLoop

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(2)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if not self.t > 0:
            raise DomainError("time-length t must be positive")

    def points(self):
        """Sample points of the embedded path at times ``t k / n``."""
        return self.x + np.sqrt(self.t) * self.unit_loop.points

    def embed(self, s):
        return embed(self, s)

    @property
    def center(self):
        return self.x + np.sqrt(self.t) * self.unit_loop.mean


def embed(L: LoopTriple, s):
    """Position of the loop at time ``s`` in ``[0, t]``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr > L.t):
        raise DomainError(f"time {s} outside [0, {L.t}]")
    u = s_arr / L.t
    # u = 1 maps back to the starting point
    return np.sqrt(L.t) * L.unit_loop(np.where(u >= 1.0, 0.0, u)) + L.x


# ----------------------------------------------------------------------------
# samplers


def _check_n(n):
    if int(n) != n or n < 4:
        raise ResolutionError(f"loop resolution n must be an integer >= 4, got {n}")
    return int(n)


def _rows_per_chunk(n):
    return max(64, _CHUNK_ELEMENTS // (2 * n))


def _bridge_points(rng, size, n):
    inc = rng.standard_normal((size, n, 2))
    inc *= np.sqrt(1.0 / n)
    walk = np.cumsum(inc, axis=1)
    end = walk[:, -1:, :]
    pts = np.empty_like(walk)
    pts[:, 0, :] = 0.0
    pts[:, 1:, :] = walk[:, :-1, :]
    pts -= (np.arange(n) / n)[None, :, None] * end
    return pts


def _circle_points(n, phase, radius):
    ang = 2.0 * np.pi * (np.arange(n)[None, :] / n + np.asarray(phase)[:, None])
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def _square_points(n, phase, half_width):
    """Boundary of ``[-a, a]^2`` at constant speed from ``(a, 0)``, rotated by ``2 pi phase``."""
    a = half_width
    u = np.mod(np.arange(n) / n, 1.0)
    # arclength parameter along the perimeter (8a) starting at (a, 0), counterclockwise
    p = 8.0 * a * u
    corners = np.array([[a, 0.0], [a, a], [-a, a], [-a, -a], [a, -a], [a, 0.0]])
    marks = np.array([0.0, a, 3 * a, 5 * a, 7 * a, 8 * a])
    x = np.interp(p, marks, corners[:, 0])
    y = np.interp(p, marks, corners[:, 1])
    ang = 2.0 * np.pi * np.asarray(phase)
    c, s = np.cos(ang)[:, None], np.sin(ang)[:, None]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1)


def sample_unit_loops(spec: MeasureSpec, n: int, size: int, rng) -> np.ndarray:
    """Draw ``size`` unit loops as an array of shape ``(size, n, 2)``.

    ``rng`` is a ``numpy.random.Generator``.  Every loop is mean-subtracted.
    """
    n = _check_n(n)
    kind = spec.sampler_kind
    if kind == BROWNIAN:
        pts = _bridge_points(rng, size, n)
    elif kind == CIRCLE:
        pts = _circle_points(n, rng.random(size), spec.radius)
    elif kind == SQUARE:
        pts = _square_points(n, rng.random(size), spec.half_width)
    elif kind == POINT:
        return np.zeros((size, n, 2))
    else:  # pragma: no cover - MeasureSpec validates
        raise ConfigurationError(f"unknown sampler_kind {kind!r}")
    pts -= pts.mean(axis=1, keepdims=True)
    return pts


def sample_unit_loop(spec: MeasureSpec, n: int = 1024, rng=None, phase=None) -> UnitLoop:
    """Draw a single unit loop.

    ``rng`` may be a ``Generator`` or anything accepted by ``Substreams``.
    ``phase`` pins the rotation ``U`` of the circle and square samplers.
    """
    n = _check_n(n)
    if phase is not None and spec.sampler_kind in (CIRCLE, SQUARE):
        fn = _circle_points if spec.sampler_kind == CIRCLE else _square_points
        size = spec.radius if spec.sampler_kind == CIRCLE else spec.half_width
        pts = fn(n, np.array([phase], dtype=float), size)[0]
        return UnitLoop(pts - pts.mean(axis=0), spec.sampler_kind)
    if not isinstance(rng, np.random.Generator):
        rng = as_substreams(rng).generator()
    return UnitLoop(sample_unit_loops(spec, n, 1, rng)[0], spec.sampler_kind)


def iter_loop_chunks(spec, n, N, streams, workers=1, fn=None):
    """Apply ``fn(loops, rng, index)`` to deterministic chunks of sampled loops."""
    streams = as_substreams(streams)
    rows = _rows_per_chunk(n)

    def work(rng, size, index):
        loops = sample_unit_loops(spec, n, size, rng)
        return fn(loops, rng, index) if fn is not None else loops

    return run_chunks(work, N, streams, workers=workers, chunk=rows)


# ----------------------------------------------------------------------------
# diameters


def diameter(loop) -> float:
    """Maximum pairwise distance among the sample points (exact)."""
    pts = loop.points if isinstance(loop, UnitLoop) else np.asarray(loop, dtype=float)
    if pts.shape[0] < 2:
        return 0.0
    cand = pts
    if pts.shape[0] > 8:
        try:
            cand = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            # degenerate (collinear or repeated) points: diameter is the extent
            # along the principal direction
            centered = pts - pts.mean(axis=0)
            _, _, vt = np.linalg.svd(centered, full_matrices=False)
            proj = centered @ vt[0]
            return float(proj.max() - proj.min())
    diff = cand[:, None, :] - cand[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff))))


def batch_diameter(loops, directions=32) -> np.ndarray:
    """Largest projected width of each loop over ``directions`` angles in ``[0, pi)``.

    Underestimates the true diameter by a factor of at most
    ``cos(pi / (2 * directions))``.
    """
    loops = np.asarray(loops, dtype=float)
    ang = np.pi * np.arange(directions) / directions
    dirs = np.stack([np.cos(ang), np.sin(ang)])
    proj = loops @ dirs
    return np.max(proj.max(axis=1) - proj.min(axis=1), axis=-1)


# ----------------------------------------------------------------------------
# occupation statistics


@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo estimate of the occupation moment ``b``.

    ``value`` and ``std_error`` come from the selected ``method``.  The plain
    path-average estimator is always reported alongside.
    """

    value: float
    std_error: float
    n_samples: int
    n: int
    method: str
    plain_value: float
    plain_std_error: float

    def __iter__(self):
        yield self.value
        yield self.std_error


def _first_mode_power_mean(n):
    """Exact mean of the control statistic for the discrete Brownian bridge.

    The control is ``|c_1|^2 + |c_{-1}|^2`` summed over both coordinates and
    halved, where ``c_m`` is the normalized discrete Fourier coefficient.  The
    increments of the discrete bridge are exchangeable with variance ``1/n``,
    which gives ``E|c_m|^2 = 1 / (4 n^2 sin^2(pi m / n))`` per coordinate.
    """
    return 2.0 / (4.0 * n**2 * np.sin(np.pi / n) ** 2)


def occupation_moment_b(spec: MeasureSpec, n: int = 1024, N: int = 100_000, rng=0,
                        workers=1, method="auto") -> MomentEstimate:
    """Second central moment of one coordinate of the expected occupation measure.

    Each loop contributes its time average of ``|l(s)|^2 / 2`` (both coordinates
    are used, which is equivalent by rotational invariance).  For the Brownian
    sampler, ``method="control_variate"`` (the ``"auto"`` default) subtracts the
    regression on the lowest Fourier mode power, whose mean is known exactly;
    ``method="plain"`` keeps the raw path average.
    """
    if N < 1000:
        raise ConfigurationError("occupation_moment_b needs N >= 1000")
    n = _check_n(n)
    if method == "auto":
        method = "control_variate" if spec.sampler_kind == BROWNIAN else "plain"
    if method not in ("plain", "control_variate"):
        raise ConfigurationError(f"unknown method {method!r}")
    if method == "control_variate" and spec.sampler_kind != BROWNIAN:
        raise ConfigurationError("the control variate is only available for the Brownian sampler")
    phase = np.exp(-2j * np.pi * np.arange(n) / n) / n

    def stats(loops, rng, index):
        y = 0.5 * np.mean(np.sum(loops**2, axis=2), axis=1)
        c1 = loops.transpose(0, 2, 1) @ phase  # (size, 2) first Fourier coefficient
        ctrl = np.sum(np.abs(c1) ** 2, axis=1)  # |c_1|^2 + |c_{-1}|^2 halved, both coords
        return y, ctrl

    parts = iter_loop_chunks(spec, n, N, as_substreams(rng).child(101), workers, stats)
    y = np.concatenate([p[0] for p in parts])
    ctrl = np.concatenate([p[1] for p in parts])
    plain, plain_se = mean_and_se(y)
    value, se = plain, plain_se
    if method == "control_variate":
        mu = _first_mode_power_mean(n)
        cc = ctrl - ctrl.mean()
        denom = float(np.dot(cc, cc))
        coef = float(np.dot(cc, y - plain) / denom) if denom > 0 else 0.0
        adjusted = y - coef * (ctrl - mu)
        value, se = mean_and_se(adjusted)
    spec.b = value
    return MomentEstimate(value, se, int(N), n, method, plain, plain_se)


@dataclass(frozen=True)
class ScalingCheck:
    """Comparison of occupation histograms under the scaling ``theta(z/sqrt t, s) = t theta(z, ts)``."""

    max_deviation: float
    max_zscore: float
    bin_side: float
    n_bins: int
    hist_s: np.ndarray
    hist_ts_rescaled: np.ndarray
    stderr: np.ndarray


def occupation_positions(spec, s, n, N, rng, workers=1):
    """Positions of loops of time-length ``s`` at a uniform time, relative to the center."""
    def draw(loops, gen, index):
        u = gen.random(loops.shape[0])
        pos = u * n
        k = np.floor(pos).astype(int) % n
        frac = (pos - np.floor(pos))[:, None]
        rows = np.arange(loops.shape[0])
        p0 = loops[rows, k]
        p1 = loops[rows, (k + 1) % n]
        return np.sqrt(s) * (p0 + frac * (p1 - p0))

    return np.concatenate(iter_loop_chunks(spec, n, N, rng, workers, draw))


def occupation_scaling_check(spec: MeasureSpec, t: float, s: float = 1.0, bins: int = 24,
                             n: int = 256, N: int = 200_000, rng=0, workers=1,
                             extent: Optional[float] = None) -> ScalingCheck:
    """Sup-norm discrepancy between ``theta(., s)`` and the rescaled ``t theta(sqrt t ., t s)``.

    Both densities are estimated as 2-D histograms from independent samples on
    a ``bins x bins`` grid covering ``[-extent, extent]^2`` (in the ``s``
    frame).  For ``t = 1`` the two sides are the same object and the
    discrepancy is zero.
    """
    if not (t > 0 and s > 0):
        raise DomainError("t and s must be positive")
    n = _check_n(n)
    if bins < 2 or bins > 2 * n:
        raise ConfigurationError(f"bins={bins} incompatible with loop resolution n={n}")
    streams = as_substreams(rng)
    if extent is None:
        extent = 3.0 * np.sqrt(s) * max(np.sqrt(spec.exact_b * 2.0), 1e-12)
    edges = np.linspace(-extent, extent, bins + 1)
    side = edges[1] - edges[0]

    def density(points, scale):
        h, _, _ = np.histogram2d(points[:, 0] / scale, points[:, 1] / scale, bins=[edges, edges])
        return h / (len(points) * side**2), h

    pos_s = occupation_positions(spec, s, n, N, streams.child(1), workers)
    dens_s, counts_s = density(pos_s, 1.0)
    if t == 1:
        zero = np.zeros_like(dens_s)
        return ScalingCheck(0.0, 0.0, side, bins, dens_s, dens_s, zero)
    pos_ts = occupation_positions(spec, t * s, n, N, streams.child(2), workers)
    # theta(., ts) sampled on the sqrt(t)-dilated bins, multiplied by t
    dens_ts, counts_ts = density(pos_ts, np.sqrt(t))
    rescaled = dens_ts  # dilation by sqrt t divides density by t; multiplying by t restores it
    var = (counts_s + counts_ts) / (N * side**2) ** 2
    se = np.sqrt(var)
    diff = np.abs(dens_s - rescaled)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, 0.0)
    return ScalingCheck(float(diff.max()), float(z.max()), side, bins, dens_s, rescaled, se)


def occupation_support_radius(spec: MeasureSpec, s: float):
    """Radius of the occupation support for the circle law, ``R sqrt(s)``."""
    if spec.sampler_kind != CIRCLE:
        raise ConfigurationError("support radius is only defined for the circle sampler")
    return spec.radius * np.sqrt(s)
