"""Uniform box grids and sampled fields on them.

A :class:`Box` is the periodic-friendly grid ``x_j = -a + j h`` with
``h = 2a / n`` on every axis, so the origin is the node ``j = n / 2``.  The
same geometry is shared by densities, semigroup outputs and Kolmogorov
solutions; a :class:`GridFunction` is a stack of time slices sampled on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import InvalidArgument, OutOfDomain


@dataclass(frozen=True)
class Box:
    """Uniform grid on ``[-halfwidth, halfwidth)^d`` with ``n`` nodes per axis."""

    d: int
    halfwidth: float
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise InvalidArgument(f"d must be 1 or 2, got {self.d}")
        if self.halfwidth <= 0:
            raise InvalidArgument("halfwidth must be positive")
        if self.n < 4 or self.n % 2:
            raise InvalidArgument(f"n must be an even integer >= 4, got {self.n}")

    @property
    def h(self) -> float:
        return 2.0 * self.halfwidth / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.halfwidth + self.h * np.arange(self.n)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (d,)``."""
        grids = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack(grids, axis=-1)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular frequencies ``2 pi k / (n h)`` in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, self.h)

    @cached_property
    def frequency_radius(self) -> np.ndarray:
        """``|u|`` on the full frequency grid (shape ``shape``)."""
        k = self.wavenumbers
        if self.d == 1:
            return np.abs(k)
        return np.hypot(k[:, None], k[None, :])

    @property
    def cutoff(self) -> float:
        """Largest axis frequency represented on the grid (Nyquist)."""
        return np.pi / self.h

    def cell_volume(self) -> float:
        return self.h ** self.d

    def padded(self, factor: int) -> "Box":
        """Concentric box with the same spacing and ``factor`` times the width."""
        if factor < 1 or int(factor) != factor:
            raise InvalidArgument("pad factor must be a positive integer")
        return Box(self.d, self.halfwidth * factor, self.n * int(factor))

    def pad_offset(self, factor: int) -> int:
        return (self.n * int(factor) - self.n) // 2

    def interior_mask(self, margin: float) -> np.ndarray:
        """Boolean mask of nodes at distance >= margin from the box boundary."""
        ax = self.axis
        ok = (ax - margin >= -self.halfwidth - 1e-12) & (ax + margin <= ax[-1] + 1e-12)
        if self.d == 1:
            return ok
        return ok[:, None] & ok[None, :]

    def contains(self, x, margin: float = 0.0) -> np.ndarray:
        pts = as_points(self, x)
        lo = -self.halfwidth + margin - 1e-12
        hi = self.axis[-1] - margin + 1e-12
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def same_geometry(self, other: "Box") -> bool:
        return (self.d == other.d and self.n == other.n
                and np.isclose(self.halfwidth, other.halfwidth, rtol=1e-12, atol=0))

    def as_dict(self) -> dict:
        return {"d": self.d, "halfwidth": self.halfwidth, "n": self.n}


def edge_pad(values: np.ndarray, box: Box, factor: int) -> np.ndarray:
    """Constant extension of a sampled field onto ``box.padded(factor)``.

    Only the leading ``box.d`` axes are spatial; trailing axes (vector
    components) are left alone.
    """
    off = box.pad_offset(factor)
    if off == 0:
        return np.array(values, copy=True)
    extra = values.ndim - box.d
    width = [(off, off)] * box.d + [(0, 0)] * extra
    return np.pad(values, width, mode="edge")


def crop(values: np.ndarray, box: Box, factor: int) -> np.ndarray:
    off = box.pad_offset(factor)
    if off == 0:
        return values
    sl = tuple(slice(off, off + box.n) for _ in range(box.d))
    return values[sl]


@dataclass
class GridFunction:
    """Sampled scalar or vector field on a :class:`Box`.

    ``values`` has shape ``(len(times),) + box.shape + components`` when
    ``times`` is given and ``box.shape + components`` for a single slice.
    """

    box: Box
    values: np.ndarray
    times: np.ndarray | None = None
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        lead = 1 if self.times is not None else 0
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=float)
            if self.times.ndim != 1 or self.values.shape[0] != self.times.size:
                raise InvalidArgument("times and values disagree on the number of slices")
            if np.any(np.diff(self.times) <= 0):
                raise InvalidArgument("time slices must be strictly increasing")
        if self.values.shape[lead:lead + self.box.d] != self.box.shape:
            raise InvalidArgument(
                f"values of shape {self.values.shape} do not match grid {self.box.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("grid function has non-finite values")

    @classmethod
    def from_callable(cls, box: Box, func, times=None) -> "GridFunction":
        """Sample ``func(x)`` (or ``func(t, x)`` when ``times`` is given)."""
        pts = box.points if box.d > 1 else box.axis
        if times is None:
            return cls(box, np.asarray(func(pts), dtype=float))
        times = np.asarray(times, dtype=float)
        data = np.stack([np.asarray(func(t, pts), dtype=float) for t in times])
        return cls(box, data, times)

    @property
    def is_sliced(self) -> bool:
        return self.times is not None

    @property
    def component_shape(self) -> tuple:
        lead = 1 if self.is_sliced else 0
        return self.values.shape[lead + self.box.d:]

    def slice(self, i: int) -> "GridFunction":
        if not self.is_sliced:
            raise InvalidArgument("grid function has no time slices")
        return GridFunction(self.box, self.values[i])

    def sup_norm(self) -> float:
        v = self.values
        if self.component_shape:
            ncomp = len(self.component_shape)
            v = np.sqrt(np.sum(v ** 2, axis=tuple(range(-ncomp, 0))))
        return float(np.max(np.abs(v))) if v.size else 0.0

    # -- off-grid evaluation -------------------------------------------------

    def _check_inside(self, x: np.ndarray):
        if not np.all(self.box.contains(x)):
            raise OutOfDomain("evaluation point outside the grid box")

    def _slice_values(self, t):
        if not self.is_sliced:
            return self.values
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise OutOfDomain(f"time {t} outside [{ts[0]}, {ts[-1]}]")
        j = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 2)) if ts.size > 1 else 0
        if ts.size == 1:
            return self.values[0]
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1.0 - w) * self.values[j] + w * self.values[j + 1]

    def __call__(self, x, t=None, method: str = "linear"):
        """Evaluate at points ``x`` (shape ``(..., d)``, or ``(...)`` when d = 1).

        Time is interpolated linearly between slices; space by multilinear
        (``method="linear"``) or cubic-spline interpolation.
        """
        x = as_points(self.box, x)
        self._check_inside(x)
        vals = self._slice_values(t if t is not None else 0.0)
        if method == "linear":
            return interp_linear(self.box, vals, x)
        if method == "cubic":
            return self._cubic(vals, x, t)
        raise InvalidArgument(f"unknown interpolation method {method!r}")

    def _cubic(self, vals, x, t):
        key = ("cubic", t)
        if key not in self._splines:
            self._splines[key] = cubic_interpolant(self.box, vals)
        return self._splines[key](x)


def as_points(box: Box, x) -> np.ndarray:
    """Coerce ``x`` to shape ``(..., d)``; bare arrays are points when d = 1."""
    x = np.asarray(x, dtype=float)
    if box.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != box.d:
        raise InvalidArgument(f"points of shape {x.shape} do not have {box.d} coordinates")
    return x


def interp_linear(box: Box, vals: np.ndarray, x) -> np.ndarray:
    """Multilinear interpolation of grid values at ``x`` (no bounds check)."""
    pts = as_points(box, x)
    if box.d == 1:
        xx = pts[..., 0]
        if vals.ndim == 1:
            return np.interp(xx, box.axis, vals)
        return np.stack([np.interp(xx, box.axis, vals[:, c]) for c in range(vals.shape[1])], axis=-1)
    s = (pts - box.axis[0]) / box.h
    i = np.clip(np.floor(s).astype(np.int64), 0, box.n - 2)
    f = s - i
    i0, i1 = i[..., 0], i[..., 1]
    f0, f1 = f[..., 0], f[..., 1]
    if vals.ndim > 2:
        f0 = f0[..., None]
        f1 = f1[..., None]
    return ((1 - f0) * (1 - f1) * vals[i0, i1] + f0 * (1 - f1) * vals[i0 + 1, i1]
            + (1 - f0) * f1 * vals[i0, i1 + 1] + f0 * f1 * vals[i0 + 1, i1 + 1])


def cubic_interpolant(box: Box, vals: np.ndarray):
    """Cubic spline through scalar grid values; returns ``f(x)``."""
    if vals.ndim != box.d:
        raise InvalidArgument("cubic interpolation supports scalar fields only")
    if box.d == 1:
        spl = CubicSpline(box.axis, vals)

        def f1(x):
            return spl(as_points(box, x)[..., 0])
        f1.spline = spl
        return f1
    spl2 = RectBivariateSpline(box.axis, box.axis, vals, kx=3, ky=3, s=0)

    def f2(x):
        pts = as_points(box, x)
        return spl2.ev(pts[..., 0], pts[..., 1])
    f2.spline = spl2
    return f2
