"""Transition density of the driving process by discrete Fourier inversion.

On the box ``x_j = -a + j h`` the inversion integral becomes

    p(x_j) = (2a)^{-d} sum_k (-1)^{|k|} e^{-t Psi(u_k)} e^{-2 pi i k.j / n},

a single forward FFT of the alternating-sign multiplier.  Gradient and Hessian
use the multipliers ``-i u_j`` and ``-u_j u_k``.  The discrete mass is exactly
``e^{-t Psi(0)} = 1``; what escapes the box shows up as wrap-around, which is
measured (``edge_mass``) rather than renormalized away.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import spectral
from .errors import InvalidArgument, NegativeDensityError, ResolutionError
from .grid import Box
from .io import write_blob, write_csv
from .levy_model import LevyModel


@dataclass(frozen=True)
class DensityGrid:
    """Sampled ``p_t`` with gradient (trailing axis ``d``) and Hessian (``d, d``)."""

    t: float
    box: Box
    alpha: float
    values: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    edge_mass: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def box_halfwidth(self) -> float:
        return self.box.halfwidth

    @property
    def n_points_per_axis(self) -> int:
        return self.box.n

    def mass(self) -> float:
        return float(self.values.sum() * self.box.cell_volume())

    def symmetry_error(self) -> float:
        """``max |p(x) - p(-x)| / max p`` over nodes that have a mirror node."""
        v = self.values
        core = v[(slice(1, None),) * self.box.d]
        mirrored = np.flip(core)
        return float(np.max(np.abs(core - mirrored)) / np.max(v))

    def to_csv(self, path):
        """Write ``x_1..x_d, value`` rows (row-major node order)."""
        pts = self.box.points.reshape(-1, self.box.d)
        cols = [f"x{i + 1}" for i in range(self.box.d)] + ["value"]
        rows = (tuple(p) + (v,) for p, v in zip(pts, self.values.ravel()))
        return write_csv(path, cols, rows)

    def to_blob(self, path):
        meta = {"t": self.t, "alpha": self.alpha, "d": self.box.d,
                "grid": self.box.as_dict(), "edge_mass": self.edge_mass}
        return write_blob(path, self.values, meta)


def decay_margin(model: LevyModel, t: float, box: Box) -> float:
    """``exp(-t Psi)`` at the axis cutoff, i.e. the largest neglected mode weight."""
    return float(np.exp(-t * model.exponent.psi_radial(np.array([box.cutoff]))[0]))


def needed_cutoff(model: LevyModel, t: float, decay_tol: float) -> float:
    """Smallest axis frequency ``U`` with ``exp(-t Psi(U)) < decay_tol``."""
    target = -np.log(decay_tol) / t
    hi = 1.0
    while model.exponent.psi_radial(np.array([hi]))[0] < target:
        hi *= 2.0
    lo = hi / 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if model.exponent.psi_radial(np.array([mid]))[0] < target:
            lo = mid
        else:
            hi = mid
    return hi


def _alternating_sign(box: Box) -> np.ndarray:
    s = 1.0 - 2.0 * (np.arange(box.n) % 2)
    if box.d == 1:
        return s
    return s[:, None] * s[None, :]


def build_density(model: LevyModel, t: float, box: Box | None = None, *,
                  derivatives: bool = True, mass_tol: float = 1e-4,
                  neg_tol: float = 1e-6, decay_tol: float = 1e-12,
                  edge_width: float = 1.0) -> DensityGrid:
    """Density ``p_t`` (and optionally its derivatives) on ``box``.

    Raises
    ------
    ResolutionError
        If ``exp(-t Psi)`` has not decayed below ``decay_tol`` at the grid cutoff.
    NegativeDensityError
        If a node value falls below ``-neg_tol * max(p)``.
    """
    if not t > 0:
        raise InvalidArgument(f"t must be positive, got {t}")
    if box is None:
        box = Box(model.d, 8.0, 1024 if model.d == 1 else 256)
    if box.d != model.d:
        raise InvalidArgument("grid dimension does not match the model")
    if decay_margin(model, t, box) >= decay_tol:
        need = needed_cutoff(model, t, decay_tol)
        n_need = int(2 ** np.ceil(np.log2(need * 2.0 * box.halfwidth / np.pi)))
        raise ResolutionError(
            f"frequency cutoff {box.cutoff:.4g} too small for t={t}; need >= {need:.4g}",
            needed_cutoff=need, needed_n=n_need)

    m = np.exp(-t * model.exponent.on_box(box)) * _alternating_sign(box)
    scale = (2.0 * box.halfwidth) ** (-box.d)
    # inverse transform with e^{-iux} is a forward FFT
    fwd = lambda a: spectral.fft(a, box.d)
    values = np.real(fwd(m)) * scale
    d1 = d2 = None
    if derivatives:
        # multipliers for e^{-iux}: conjugates of the e^{+iux} ones
        g = [np.real(fwd(m * np.conj(mu))) * scale for mu in spectral.gradient_multipliers(box)]
        d1 = np.stack(g, axis=-1)
        hm = spectral.hessian_multipliers(box)
        d2 = np.stack([np.stack([np.real(fwd(m * np.conj(hm[j][k]))) * scale
                                 for k in range(box.d)], axis=-1) for j in range(box.d)], axis=-2)

    vmax = float(values.max())
    if values.min() < -neg_tol * vmax:
        i = np.unravel_index(np.argmin(values), values.shape)
        raise NegativeDensityError(
            f"density {values.min():.3e} at node {i} below -{neg_tol:g} * max")
    near_edge = ~box.interior_mask(edge_width)
    edge_mass = float(values[near_edge].sum() * box.cell_volume())
    mass = float(values.sum() * box.cell_volume())
    if abs(mass - 1.0) > mass_tol:
        raise ResolutionError(f"grid mass {mass:.6f} outside 1 +- {mass_tol:g}",
                              needed_cutoff=box.cutoff, needed_n=box.n)
    return DensityGrid(t=float(t), box=box, alpha=model.alpha, values=values,
                       d1=d1, d2=d2, edge_mass=edge_mass,
                       meta={"decay_margin": decay_margin(model, t, box), "mass": mass})


def derivative_l1_norm(dg: DensityGrid, order: int, axes=(0,)) -> float:
    """Grid L1 norm of ``d p / dx_i`` (order 1) or ``d^2 p / dx_i dx_j`` (order 2)."""
    if order == 1:
        if dg.d1 is None:
            raise InvalidArgument("density was built without derivatives")
        f = dg.d1[..., axes[0]]
    elif order == 2:
        if dg.d2 is None:
            raise InvalidArgument("density was built without derivatives")
        j = axes[0]
        k = axes[1] if len(axes) > 1 else axes[0]
        f = dg.d2[..., j, k]
    else:
        raise InvalidArgument("order must be 1 or 2")
    return float(np.abs(f).sum() * dg.box.cell_volume())


def self_convolve(dg: DensityGrid) -> np.ndarray:
    """Linear (non-periodic) convolution ``p_t * p_t`` sampled on the same box."""
    box = dg.box
    full = signal.fftconvolve(dg.values, dg.values, mode="full") * box.cell_volume()
    c = box.n // 2
    sl = tuple(slice(c, c + box.n) for _ in range(box.d))
    return full[sl]


def chapman_kolmogorov_error(model: LevyModel, t: float, box: Box) -> float:
    """Sup distance between ``p_t * p_t`` and ``p_{2t}``, both built independently."""
    p1 = build_density(model, t, box, derivatives=False)
    p2 = build_density(model, 2.0 * t, box, derivatives=False)
    return float(np.max(np.abs(self_convolve(p1) - p2.values)))


def parseval_error(model: LevyModel, t: float, box: Box) -> float:
    """Relative mismatch of the grid L2 norm and its Fourier-side counterpart."""
    dg = build_density(model, t, box, derivatives=False)
    lhs = float(np.sum(dg.values ** 2) * box.cell_volume())
    rhs = float(np.sum(np.exp(-2.0 * t * model.exponent.on_box(box)))) * (2.0 * box.halfwidth) ** (-box.d)
    return abs(lhs - rhs) / rhs
