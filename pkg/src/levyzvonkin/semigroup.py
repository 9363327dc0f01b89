"""Heat semigroup ``P_t phi(x) = E[phi(x + L_t)]`` on grids and its scaling laws.

The default route multiplies ``fft(phi)`` by ``exp(-t Psi)`` on a box that is
``pad_factor`` times wider, with ``phi`` extended by constants beyond the
original edge.  A spatial route (linear convolution with the sampled density)
is kept as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import spectral
from .density import build_density
from .errors import InvalidArgument
from .grid import Box, GridFunction, crop, edge_pad
from .io import write_csv, write_json
from .levy_model import LevyModel


def _scalar_values(phi: GridFunction) -> np.ndarray:
    if phi.is_sliced:
        raise InvalidArgument("expected a single time slice")
    return phi.values


def _check_box(model: LevyModel, phi: GridFunction):
    if phi.box.d != model.d:
        raise InvalidArgument("grid dimension does not match the model")


def semigroup_hat(model: LevyModel, t: float, values: np.ndarray, box: Box,
                  pad_factor: int = 2) -> tuple[Box, np.ndarray]:
    """Padded box and the Fourier coefficients of ``P_t phi`` on it (scalar phi)."""
    big = box.padded(pad_factor)
    fhat = spectral.fft(edge_pad(values, box, pad_factor), box.d)
    if t > 0:
        fhat = fhat * np.exp(-t * model.exponent.on_box(big))
    return big, fhat


def apply_semigroup(model: LevyModel, t: float, phi: GridFunction, *,
                    pad_factor: int = 2, order: int = 0,
                    method: str = "spectral") -> GridFunction:
    """``P_t phi`` (``order=0``), its gradient (1) or its Hessian (2).

    Vector-valued ``phi`` is handled component by component for ``order=0``.
    """
    _check_box(model, phi)
    if t < 0:
        raise InvalidArgument("t must be nonnegative")
    box = phi.box
    vals = _scalar_values(phi)
    if phi.component_shape:
        if order != 0:
            raise InvalidArgument("derivatives are only supported for scalar fields")
        comps = [apply_semigroup(model, t, GridFunction(box, vals[..., c]),
                                 pad_factor=pad_factor, method=method).values
                 for c in range(vals.shape[-1])]
        return GridFunction(box, np.stack(comps, axis=-1))
    if t == 0 and order == 0:
        return GridFunction(box, vals.copy())
    if method == "spatial":
        if order != 0:
            raise InvalidArgument("the spatial route only computes P_t phi")
        return GridFunction(box, _spatial(model, t, vals, box, pad_factor))
    if method != "spectral":
        raise InvalidArgument(f"unknown method {method!r}")
    big, fhat = semigroup_hat(model, t, vals, box, pad_factor)
    out = spectral.derivatives_from_hat(big, fhat, order)
    return GridFunction(box, crop(out, box, pad_factor))


def _spatial(model, t, vals, box, pad_factor):
    dg = build_density(model, t, box, derivatives=False)
    ext = edge_pad(vals, box, pad_factor)
    full = signal.fftconvolve(ext, dg.values, mode="full") * box.cell_volume()
    c = box.n // 2 + box.pad_offset(pad_factor)
    sl = tuple(slice(c, c + box.n) for _ in range(box.d))
    return full[sl]


# -- Hoelder norm --------------------------------------------------------------


def _diff_mag(a: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    diff = a - b
    if diff.ndim > d:
        return np.sqrt(np.sum(diff.reshape(diff.shape[:d] + (-1,)) ** 2, axis=-1))
    return np.abs(diff)


def holder_seminorm(phi: GridFunction, beta: float, *, n_random: int = 10_000,
                    seed: int = 0, dyadic: bool = True) -> float:
    """Grid estimate of ``sup |phi(x) - phi(y)| / |x - y|^beta``.

    Pairs scanned: all adjacent pairs along every axis (and the diagonal in
    d = 2), ``n_random`` uniformly drawn node pairs from a seeded generator and,
    with ``dyadic``, all pairs at lags ``2^k h`` along the axes.  The dyadic
    lags fill the range between the mesh scale and the box scale, which random
    pairs sample poorly.
    """
    if not 0 < beta < 1:
        raise InvalidArgument("beta must lie in (0, 1)")
    box = phi.box
    v = _scalar_values(phi)
    d = box.d
    h = box.h
    best = 0.0
    lags = [1]
    if dyadic:
        while lags[-1] * 2 < box.n:
            lags.append(lags[-1] * 2)
    for lag in lags:
        for ax in range(d):
            a = np.take(v, np.arange(lag, box.n), axis=ax)
            b = np.take(v, np.arange(0, box.n - lag), axis=ax)
            best = max(best, float(np.max(_diff_mag(a, b, d))) / (lag * h) ** beta)
        if d == 2 and lag == 1:
            dist = np.sqrt(2.0) * h
            best = max(best, float(np.max(_diff_mag(v[1:, 1:], v[:-1, :-1], d))) / dist ** beta)
            best = max(best, float(np.max(_diff_mag(v[1:, :-1], v[:-1, 1:], d))) / dist ** beta)
    if n_random:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, box.n, size=(n_random, d))
        j = rng.integers(0, box.n, size=(n_random, d))
        keep = np.any(i != j, axis=1)
        i, j = i[keep], j[keep]
        vi = v[tuple(i.T)]
        vj = v[tuple(j.T)]
        dist = np.linalg.norm((i - j) * h, axis=1)
        diff = vi - vj
        mag = np.abs(diff) if diff.ndim == 1 else np.linalg.norm(diff, axis=-1)
        if mag.size:
            best = max(best, float(np.max(mag / dist ** beta)))
    return best


def holder_norm(phi: GridFunction, beta: float, *, n_random: int = 10_000,
                seed: int = 0, dyadic: bool = True) -> float:
    """``||phi||_inf + [phi]_beta`` estimated on the grid (deterministic given ``seed``)."""
    if not 0 < beta < 1:
        raise InvalidArgument("beta must lie in (0, 1)")
    return phi.sup_norm() + holder_seminorm(phi, beta, n_random=n_random, seed=seed,
                                            dyadic=dyadic)


# -- scaling report -------------------------------------------------------------


@dataclass(frozen=True)
class ProbeFamily:
    """Closed-form test function with the smoothness class it represents.

    ``expected`` maps a derivative order to the exponent ``e`` in
    ``||D^k P_t phi||_inf ~ t^e``.
    """

    name: str
    kind: str
    func: object
    expected: dict
    tolerance: dict = field(default_factory=dict)

    def sample(self, box: Box) -> GridFunction:
        pts = box.points if box.d > 1 else box.axis[:, None]
        return GridFunction(box, np.asarray(self.func(pts), dtype=float))


def bounded_family(alpha: float, width: float = 0.01) -> ProbeFamily:
    """Smoothed step ``tanh(x_1 / width)``: bounded with one sharp transition."""
    return ProbeFamily("smoothed_step", "bounded",
                      lambda x: np.tanh(x[..., 0] / width),
                      {1: -1.0 / alpha, 2: -2.0 / alpha}, {1: 0.07, 2: 0.1})


def c1_family(alpha: float) -> ProbeFamily:
    """Lipschitz kink ``|x|``: one derivative jump, bounded on the box."""
    return ProbeFamily("kink", "C1",
                      lambda x: np.linalg.norm(x, axis=-1),
                      {2: -1.0 / alpha}, {2: 0.07})


def holder_family(alpha: float, beta: float, x0=0.0) -> ProbeFamily:
    """Cusp ``|x - x0|^beta``; beyond the box it is continued by constants."""
    return ProbeFamily(f"cusp_beta{beta:g}", "Cbeta",
                      lambda x: np.linalg.norm(x - x0, axis=-1) ** beta,
                      {2: -(2.0 - beta) / alpha}, {2: 0.1})


def default_families(alpha: float, beta: float) -> list:
    return [bounded_family(alpha), c1_family(alpha), holder_family(alpha, beta)]


@dataclass
class ScalingRow:
    family: str
    norm: str
    slope: float
    stderr: float
    points: int
    expected: float
    tolerance: float
    intercept: float
    residuals: list

    @property
    def passed(self) -> bool:
        return abs(self.slope - self.expected) <= self.tolerance


@dataclass
class ScalingReport:
    alpha: float
    times: np.ndarray
    rows: list
    norms: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self, path):
        hdr = ["family", "norm", "slope", "stderr", "points", "expected", "tolerance", "passed"]
        rows = [(r.family, r.norm, r.slope, r.stderr, r.points, r.expected, r.tolerance, r.passed)
                for r in self.rows]
        return write_csv(path, hdr, rows)

    def to_json(self, path):
        return write_json(path, {
            "alpha": self.alpha, "times": self.times,
            "rows": [r.__dict__ | {"passed": r.passed} for r in self.rows],
            "norms": self.norms})


def fit_loglog(x, y) -> tuple[float, float, float, np.ndarray]:
    """Least-squares line through ``(log x, log y)``: slope, stderr, intercept, residuals."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    dof = max(lx.size - 2, 1)
    s2 = float(res @ res) / dof
    var = s2 * np.linalg.inv(A.T @ A)[0, 0]
    return float(coef[0]), float(np.sqrt(var)), float(coef[1]), res


def derivative_sup_norm(model: LevyModel, t: float, phi: GridFunction, order: int, *,
                        pad_factor: int = 2, window: float | None = None) -> float:
    """``max`` over nodes of ``|D^k P_t phi|`` (Euclidean over gradient entries,
    largest entry for the Hessian), optionally restricted to ``|x|_inf <= window``."""
    out = apply_semigroup(model, t, phi, pad_factor=pad_factor, order=order).values
    box = phi.box
    if order == 1:
        mag = np.linalg.norm(out, axis=-1)
    elif order == 2:
        mag = np.max(np.abs(out.reshape(box.shape + (-1,))), axis=-1)
    else:
        mag = np.abs(out)
    if window is not None:
        mask = box.interior_mask(max(box.halfwidth - window, 0.0))
        mag = mag[mask]
    return float(np.max(mag))


def derivative_scaling_report(model: LevyModel, families, times, box: Box, *,
                              pad_factor: int = 2, window: float | None = None) -> ScalingReport:
    """Fit ``log ||D^k P_t phi||_inf`` against ``log t`` for every family and order."""
    times = np.asarray(times, dtype=float)
    if times.size < 4:
        raise InvalidArgument("a slope fit needs at least 4 time points")
    if np.any(times <= 0):
        raise InvalidArgument("times must be positive")
    if window is None:
        window = box.halfwidth / 2.0
    rows, norms = [], {}
    for fam in families:
        phi = fam.sample(box)
        for order, expected in sorted(fam.expected.items()):
            vals = np.array([derivative_sup_norm(model, t, phi, order, pad_factor=pad_factor,
                                                 window=window) for t in times])
            slope, se, icpt, res = fit_loglog(times, vals)
            label = f"D{order}"
            norms[f"{fam.name}/{label}"] = vals
            rows.append(ScalingRow(fam.name, label, slope, se, int(times.size), expected,
                                   fam.tolerance.get(order, 0.1), icpt, res.tolist()))
    return ScalingReport(model.alpha, times, rows, norms)
