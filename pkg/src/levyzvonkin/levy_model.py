"""Truncated alpha-stable model: Levy measure, characteristic exponent, generator.

The Levy measure is ``1{|y| <= 1} |y|^{-(d+alpha)} dy`` with no normalizing
constant.  Because it is rotation invariant, every exponent used here reduces
to the radial integral

    G(S) = int_0^S g(s) s^{-1-alpha} ds,
    g(s) = 2 (1 - cos s)          (d = 1)
    g(s) = 2 pi (1 - J0(s))       (d = 2)

through ``Psi(u) = |u|^alpha G(|u|)``.  The scaled exponent
``t Psi(t^{-1/alpha} u)`` equals ``|u|^alpha G(|u| t^{-1/alpha})`` and the
lower bound over ``0 < t <= T`` is the same expression with ``t = T``.

``G`` is evaluated without any oscillatory adaptive quadrature:

* ``S <= s_switch``: Gauss-Jacobi rule for the weight ``v^{1-alpha}`` on
  ``[0, 1]`` applied to the entire function ``g(Sv) / (Sv)^2``; the removable
  ``(1 - cos) ~ s^2 / 2`` behaviour at the origin is absorbed exactly.
* ``S > s_switch``: the closed-form value ``G(inf)`` minus a tail whose
  oscillatory part is rotated onto the imaginary axis and integrated by
  Gauss-Laguerre (``J0 = Re H0^(1)`` in d = 2).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import ndimage, signal, special

from .errors import InvalidArgument, OutOfDomain
from .grid import Box, GridFunction, as_points, cubic_interpolant


@dataclass(frozen=True)
class QuadSettings:
    """Quadrature knobs.  Tolerances live here so configs can override them."""

    n_jacobi: int = 96
    n_laguerre: int = 60
    s_switch: float = 30.0
    rtol_d1: float = 1e-8
    rtol_d2: float = 1e-6
    taylor_radius: float = 1e-3
    gauss_per_panel: int = 6
    n_angles: int = 64
    panel_width: float | None = None


@dataclass(frozen=True)
class LevyModel:
    d: int
    alpha: float
    quad: QuadSettings = field(default_factory=QuadSettings)

    def __post_init__(self):
        if self.d not in (1, 2):
            raise InvalidArgument(f"d must be 1 or 2, got {self.d}")
        if not 1.0 < self.alpha < 2.0:
            raise InvalidArgument(f"alpha must lie in (1, 2), got {self.alpha}")

    @property
    def sphere_area(self) -> float:
        """Surface measure of the unit sphere in R^d (2 for d = 1)."""
        return 2.0 if self.d == 1 else 2.0 * np.pi

    def levy_density(self, y) -> np.ndarray:
        r = np.linalg.norm(as_points(Box(self.d, 1.0, 4), y), axis=-1)
        with np.errstate(divide="ignore"):
            out = np.where((r <= 1.0) & (r > 0), r ** (-(self.d + self.alpha)), 0.0)
        return out

    def second_moment(self, radius: float = 1.0) -> float:
        """``int_{|y|<=radius} y_i^2 nu(dy)`` for one coordinate axis."""
        return self.sphere_area / self.d * radius ** (2.0 - self.alpha) / (2.0 - self.alpha)

    def jump_rate(self, eps: float) -> float:
        """Total mass of ``nu`` on the shell ``eps < |y| <= 1``."""
        return self.sphere_area * (eps ** (-self.alpha) - 1.0) / self.alpha

    @cached_property
    def exponent(self) -> "CharExponent":
        return CharExponent(self)


class CharExponent:
    """Radial evaluator of the characteristic exponent with a grid cache."""

    def __init__(self, model: LevyModel):
        self.model = model
        q = model.quad
        a = model.alpha
        x, w = special.roots_jacobi(q.n_jacobi, 0.0, 1.0 - a)
        self._v = (x + 1.0) / 2.0
        self._wv = w / 2.0 ** (2.0 - a)
        self._xl, self._wl = special.roots_laguerre(q.n_laguerre)
        if model.d == 1:
            self.g_inf = -2.0 * special.gamma(-a) * np.cos(np.pi * a / 2.0)
        else:
            self.g_inf = (2.0 * np.pi * 2.0 ** (-a) * special.gamma(1.0 - a / 2.0)
                          / (a * special.gamma(1.0 + a / 2.0)))
        self._grid_cache: dict = {}
        self._lock = threading.Lock()

    def _h(self, s: np.ndarray) -> np.ndarray:
        """``g(s) / s^2``, continuous at 0."""
        out = np.empty_like(s)
        small = s < 1e-3
        ss = s[small]
        big = s[~small]
        if self.model.d == 1:
            out[~small] = 4.0 * np.sin(big / 2.0) ** 2 / big ** 2
            out[small] = 1.0 - ss ** 2 / 12.0 + ss ** 4 / 360.0
        else:
            out[~small] = 2.0 * np.pi * (1.0 - special.j0(big)) / big ** 2
            out[small] = 2.0 * np.pi * (0.25 - ss ** 2 / 64.0 + ss ** 4 / 2304.0)
        return out

    def radial(self, S) -> np.ndarray:
        """``G(S)`` for an array of nonnegative ``S``."""
        S = np.asarray(S, dtype=float)
        flat = S.ravel()
        out = np.empty_like(flat)
        a = self.model.alpha
        lo = flat <= self.model.quad.s_switch
        if np.any(lo):
            Sl = flat[lo]
            # chunked to keep the (len(S), n_jacobi) work array small
            res = np.empty_like(Sl)
            step = 20000
            for i in range(0, Sl.size, step):
                blk = Sl[i:i + step]
                res[i:i + step] = blk ** (2.0 - a) * (self._h(np.outer(blk, self._v)) @ self._wv)
            out[lo] = res
        hi = ~lo
        if np.any(hi):
            Sh = flat[hi]
            res = np.empty_like(Sh)
            step = 20000
            for i in range(0, Sh.size, step):
                blk = Sh[i:i + step]
                z = blk[:, None] + 1j * self._xl[None, :]
                if self.model.d == 1:
                    kern = z ** (-1.0 - a)
                    scale = 2.0
                else:
                    kern = special.hankel1e(0, z) * z ** (-1.0 - a)
                    scale = 2.0 * np.pi
                tail = np.real(1j * np.exp(1j * blk) * (kern @ self._wl))
                res[i:i + step] = self.g_inf - scale * (blk ** (-a) / a - tail)
            out[hi] = res
        return out.reshape(S.shape)

    def psi_radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return r ** self.model.alpha * self.radial(r)

    def psi_scaled_radial(self, t: float, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return r ** self.model.alpha * self.radial(r * t ** (-1.0 / self.model.alpha))

    def on_box(self, box: Box) -> np.ndarray:
        """``Psi`` on the FFT frequency grid of ``box`` (memoized, read-only)."""
        key = (box.d, box.n, float(box.h))
        with self._lock:
            cached = self._grid_cache.get(key)
        if cached is not None:
            return cached
        radius = box.frequency_radius
        uniq, inv = np.unique(radius, return_inverse=True)
        vals = self.psi_radial(uniq)[inv].reshape(radius.shape)
        vals.setflags(write=False)
        with self._lock:
            self._grid_cache[key] = vals
        return vals


def _frequency_radius(model: LevyModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidArgument("frequency must be finite")
    if model.d == 1:
        if u.ndim and u.shape[-1] == 1:
            u = u[..., 0]
        return np.abs(u)
    if u.shape[-1] != 2:
        raise InvalidArgument("frequency vectors must have 2 components for d = 2")
    return np.linalg.norm(u, axis=-1)


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def eval_psi(model: LevyModel, u):
    """Characteristic exponent ``Psi(u) = int (1 - cos(u.y)) nu(dy)``."""
    return _scalar(model.exponent.psi_radial(_frequency_radius(model, u)))


def eval_psi_scaled(model: LevyModel, t: float, u):
    """``t Psi(t^{-1/alpha} u)`` through the change-of-variables integral."""
    if not t > 0:
        raise InvalidArgument(f"t must be positive, got {t}")
    return _scalar(model.exponent.psi_scaled_radial(t, _frequency_radius(model, u)))


def eval_psi_tilde(model: LevyModel, T: float, u):
    """Lower bound ``int_{|r| <= T^{-1/alpha}} (1 - cos(u.r)) |r|^{-d-alpha} dr``."""
    if not T > 0:
        raise InvalidArgument(f"T must be positive, got {T}")
    return _scalar(model.exponent.psi_scaled_radial(T, _frequency_radius(model, u)))


# -- generator ---------------------------------------------------------------


def radial_rule(model: LevyModel, r_lo: float, h: float, r_hi: float = 1.0):
    """Composite Gauss-Legendre nodes on ``[r_lo, r_hi]`` with the weight
    ``r^{-1-alpha}`` folded in.

    Panels double geometrically away from ``r_lo`` until they reach the
    resolution width (grid spacing unless overridden), then stay uniform.
    """
    q = model.quad
    width = q.panel_width if q.panel_width is not None else h
    edges = [r_lo]
    step = 0.5 * r_lo  # geometric panels [r, 2r]
    while edges[-1] < r_hi:
        step = min(2.0 * step, width) if edges[-1] + 2.0 * step < r_hi else r_hi - edges[-1]
        step = max(step, 1e-15)
        edges.append(min(edges[-1] + step, r_hi))
        if edges[-1] >= r_hi - 1e-15:
            break
    edges = np.asarray(edges)
    xg, wg = np.polynomial.legendre.leggauss(q.gauss_per_panel)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * xg[None, :] + 0.5 * (b + a)
    weights = 0.5 * (b - a) * wg[None, :]
    nodes = nodes.ravel()
    weights = weights.ravel() * nodes ** (-1.0 - model.alpha)
    return nodes, weights


def _hessian_trace(f_spline, box: Box, pts: np.ndarray) -> np.ndarray:
    spl = f_spline.spline
    if box.d == 1:
        return spl(pts[..., 0], 2)
    return (spl.ev(pts[..., 0], pts[..., 1], dx=2, dy=0)
            + spl.ev(pts[..., 0], pts[..., 1], dx=0, dy=2))


def _jump_rule(model: LevyModel, h: float, r_min: float):
    """Symmetric jump offsets (one of each +-y pair), weights and the Taylor span."""
    q = model.quad
    a = model.alpha
    r_taylor = q.taylor_radius
    nodes, weights = radial_rule(model, max(r_taylor, r_min), h)
    if model.d == 1:
        dirs = np.array([[1.0]])
        dir_w = np.array([1.0])
        taylor_coef = 1.0
    else:
        th = np.pi * np.arange(q.n_angles) / q.n_angles
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        dir_w = np.full(q.n_angles, np.pi / q.n_angles)
        taylor_coef = 0.5 * np.pi
    offsets = (nodes[:, None, None] * dirs[None, :, :]).reshape(-1, model.d)
    w = (weights[:, None] * dir_w[None, :]).ravel()
    span = 0.0
    if r_min < r_taylor:
        span = taylor_coef * (r_taylor ** (2.0 - a) - r_min ** (2.0 - a)) / (2.0 - a)
    return offsets, w, span


def apply_generator(model: LevyModel, f: GridFunction, x, *, t: float | None = None,
                    r_min: float = 0.0, chunk: int = 2_000_000):
    """Quadrature of ``Lf(x) = int [f(x+y) - f(x) - 1{|y|<=1} y.Df(x)] nu(dy)``.

    ``f`` is interpolated by cubic splines.  Below ``quad.taylor_radius`` the
    bracket is replaced by ``y^T D^2f(x) y / 2``; the compensating linear term
    cancels exactly because the rule pairs ``y`` with ``-y``.  With
    ``r_min > 0`` jumps shorter than ``r_min`` are dropped, which gives the
    generator of the process without its small jumps.

    Every point needs a margin of 1 (the jump reach) inside the grid box.
    """
    box = f.box
    if f.component_shape:
        raise InvalidArgument("apply_generator needs a scalar field")
    pts = as_points(box, x)
    if not np.all(box.contains(pts, margin=1.0)):
        raise OutOfDomain("generator needs a margin of 1 inside the grid box")
    vals = f._slice_values(t if t is not None else 0.0) if f.is_sliced else f.values
    spline = cubic_interpolant(box, vals)
    offsets, w, span = _jump_rule(model, box.h, r_min)

    flat = pts.reshape(-1, box.d)
    out = np.empty(flat.shape[0])
    per = max(1, chunk // max(1, offsets.shape[0]))
    for i in range(0, flat.shape[0], per):
        p = flat[i:i + per]
        f0 = spline(p)
        plus = spline(p[:, None, :] + offsets[None, :, :])
        minus = spline(p[:, None, :] - offsets[None, :, :])
        out[i:i + per] = (plus + minus - 2.0 * f0[:, None]) @ w
    if span:
        out += span * _hessian_trace(spline, box, flat)
    res = out.reshape(pts.shape[:-1])
    return float(res) if res.ndim == 0 else res


def _bspline3(z):
    z = np.abs(z)
    return np.where(z < 1.0, 2.0 / 3.0 - z * z + 0.5 * z ** 3,
                    np.where(z < 2.0, (2.0 - z) ** 3 / 6.0, 0.0))


def _bspline3_dd(z):
    z = np.abs(z)
    return np.where(z < 1.0, 3.0 * z - 2.0, np.where(z < 2.0, 2.0 - z, 0.0))


@lru_cache(maxsize=16)
def _lattice_kernel(model: LevyModel, h: float, r_min: float) -> np.ndarray:
    """Generator of the cubic B-spline basis sampled on the lattice.

    ``Lf(x_i) = sum_j c_j K[i - j]`` for ``f = sum_j c_j B((x - x_j) / h)``.
    """
    d = model.d
    offsets, w, span = _jump_rule(model, h, r_min)
    R = int(np.ceil(1.0 / h)) + 2
    K = np.zeros((2 * R + 1,) * d)
    m4 = np.arange(4)
    for sign in (1.0, -1.0):
        s = sign * offsets / h
        # B(m + s) is nonzero for the four integers m in (-2 - s, 2 - s)
        m0 = np.floor(-s).astype(np.int64) - 1
        m = m0[..., None] + m4
        b = _bspline3(m + s[..., None])
        if d == 1:
            np.add.at(K, m[:, 0] + R, w[:, None] * b[:, 0])
        else:
            wb = w[:, None, None] * b[:, 0, :, None] * b[:, 1, None, :]
            i0 = np.broadcast_to(m[:, 0, :, None], wb.shape) + R
            i1 = np.broadcast_to(m[:, 1, None, :], wb.shape) + R
            np.add.at(K, (i0, i1), wb)
    c = np.arange(-1, 2)
    b0, dd0 = _bspline3(c), _bspline3_dd(c)
    mid = slice(R - 1, R + 2)
    if d == 1:
        K[mid] += -2.0 * w.sum() * b0 + span * dd0 / h ** 2
    else:
        K[mid, mid] += (-2.0 * w.sum() * np.outer(b0, b0)
                        + span * (np.outer(dd0, b0) + np.outer(b0, dd0)) / h ** 2)
    # constants are annihilated exactly; remove the rounding in the sum
    K[(R,) * d] -= K.sum()
    return K


def generator_on_grid(model: LevyModel, f: GridFunction, *, t: float | None = None,
                      margin: float = 1.0, r_min: float = 0.0):
    """Generator quadrature at every node at least ``margin`` inside the box.

    Returns ``(mask, values)`` where ``values`` holds NaN off the mask.
    """
    box = f.box
    if f.component_shape:
        raise InvalidArgument("generator_on_grid needs a scalar field")
    vals = f._slice_values(t if t is not None else 0.0) if f.is_sliced else f.values
    mask = box.interior_mask(max(margin, 1.0))
    # on the nodes the quadrature is a fixed convolution of the spline coefficients
    coef = ndimage.spline_filter(np.asarray(vals, dtype=float), order=3, mode="mirror")
    K = _lattice_kernel(model, float(box.h), float(r_min))
    R = K.shape[0] // 2
    lf = signal.fftconvolve(np.pad(coef, R, mode="reflect"), K, mode="valid")
    out = np.full(box.shape, np.nan)
    out[mask] = lf[mask]
    return mask, out
