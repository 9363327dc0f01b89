"""Zvonkin representation along paths, pathwise Malliavin derivatives and the
fractional-Sobolev functionals that bound them.

Sign convention: the transform ``u`` solves ``du/dt + b.Du + Lu = -b`` with
``u(T) = 0`` (the backward solver's source is ``phi = b``).  Ito's formula then
gives, for the solution ``X`` of ``dX = b dt + dL``,

    int_0^t b(X_s) ds = u(0, x) - u(t, X_t) + sum of compensated jumps of u.

Discretely, with every noise increment applied at the end of its mesh step,
the jump terms telescope and the residual of this identity becomes

    R = sum_k [b(X_k) dt + u(t_{k+1}, X_k + b dt) - u(t_k, X_k) + Lu(t_k, X_k) dt],

a sum of local truncation errors of the backward equation along the path.

On Poisson space the Malliavin derivative ``D_{l,y} X(t)`` is the effect on
``X(t)`` of adding one jump ``gamma(y) = y`` at time ``l``.  It is computed
exactly by running the perturbed path (``malliavin_variational``) and,
independently, from the implicit identity obtained by applying the Zvonkin
representation to both paths (``malliavin_u_recursion``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import HorizonTooLarge, InvalidArgument, OutOfDomain
from .grid import GridFunction, crop, edge_pad, interp_linear
from .io import write_csv, write_json
from .kolmogorov import (KolmogorovSolution, drift_norm, estimate_cT, max_admissible_horizon,
                         solve_backward)
from .levy_model import LevyModel, generator_on_grid
from .simulate import MollifierFamily, as_drift, euler_batch, mollify, sample_noise_batch
from . import spectral


# -- the transform u ---------------------------------------------------------------


class ZvonkinField:
    """``u`` (one component per space dimension), its generator and evaluation helpers.

    ``u`` and ``Lu`` are evaluated off-grid by multilinear interpolation and
    linearly in time between slices.  ``Lu`` is tabulated on grid nodes at
    least one unit inside the box, by the generator quadrature
    (``lu_method="quadrature"``) or the exact Fourier symbol (``"spectral"``).
    """

    def __init__(self, model: LevyModel, sols, *, lu_method: str = "quadrature",
                 pad_factor: int = 2):
        if isinstance(sols, KolmogorovSolution):
            sols = [sols]
        if len(sols) != model.d:
            raise InvalidArgument("need one solution per drift component")
        self.model = model
        self.sols = list(sols)
        self.box = sols[0].box
        self.times = np.asarray(sols[0].times)
        self.lu_method = lu_method
        self.pad_factor = pad_factor
        self._u = np.stack([s.u.values for s in sols], axis=-1)
        self._lu = {}

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def check(self, x):
        if not np.all(self.box.contains(x, margin=1.0)):
            raise OutOfDomain("path left the solved box (margin 1 needed for the generator)")

    def _lu_slice(self, k: int) -> np.ndarray:
        if k not in self._lu:
            comps = []
            for c in range(self.model.d):
                gf = GridFunction(self.box, self._u[k, ..., c])
                if self.lu_method == "quadrature":
                    mask, vals = generator_on_grid(self.model, gf)
                    vals = np.where(mask, vals, 0.0)
                elif self.lu_method == "spectral":
                    big = self.box.padded(self.pad_factor)
                    psi = self.model.exponent.on_box(big)
                    hat = spectral.fft(edge_pad(gf.values, self.box, self.pad_factor), self.box.d)
                    vals = crop(spectral.ifft_real(-psi * hat, self.box.d), self.box, self.pad_factor)
                else:
                    raise InvalidArgument(f"unknown generator method {self.lu_method!r}")
                comps.append(vals)
            self._lu[k] = np.stack(comps, axis=-1)
        return self._lu[k]

    def _interp(self, vals, x):
        # x keeps its coordinate axis so a single node is not mistaken for a point
        out = interp_linear(self.box, vals if self.model.d > 1 else vals[..., 0], x)
        return out[..., None] if self.model.d == 1 else out

    def _locate(self, t):
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise OutOfDomain(f"time {t} outside [0, {ts[-1]}]")
        j = int(np.clip(np.searchsorted(ts, t + 1e-12) - 1, 0, ts.size - 2))
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        if abs(w) < 1e-9:
            w = 0.0
        if abs(w - 1.0) < 1e-9:
            j, w = j + 1, 0.0
        return j, w

    def u_slice(self, k: int, x):
        return self._interp(self._u[k], x)

    def lu_slice(self, k: int, x):
        return self._interp(self._lu_slice(k), x)

    def u_at(self, t: float, x):
        j, w = self._locate(t)
        out = self.u_slice(j, x)
        if w:
            out = (1.0 - w) * out + w * self.u_slice(j + 1, x)
        return out

    def lu_at(self, t: float, x):
        j, w = self._locate(t)
        out = self.lu_slice(j, x)
        if w:
            out = (1.0 - w) * out + w * self.lu_slice(j + 1, x)
        return out

    def grad_sup(self) -> float:
        """``max |Du|`` over all slices (Euclidean per component, max over components)."""
        return max(float(np.max(np.linalg.norm(s.grad_u.values, axis=-1))) for s in self.sols)


def solve_zvonkin(model: LevyModel, b: GridFunction, T: float, *, beta: float,
                  n_slices: int, steps_per_slice: int = 2, lu_method: str = "quadrature",
                  **kwargs) -> ZvonkinField:
    """Backward solves with source ``b_i`` for every drift component ``i``."""
    d = model.d
    comp = b.component_shape
    sols = []
    for i in range(d):
        if comp:
            phi = GridFunction(b.box, b.values[..., i], b.times)
        else:
            phi = b
        sols.append(solve_backward(model, b, phi, T, beta=beta, n_slices=n_slices,
                                   steps_per_slice=steps_per_slice, **kwargs))
    return ZvonkinField(model, sols, lu_method=lu_method)


def zvonkin_residual(field: ZvonkinField, drift, mesh, states) -> np.ndarray:
    """Residual ``R`` of the Zvonkin identity for every path.

    ``states`` has shape ``(paths, len(mesh), d)`` (or ``(len(mesh), d)`` for
    one path, e.g. an event-augmented :class:`PathRecord`); all noise is assumed
    to act at the end of each mesh interval.
    """
    d = field.model.d
    f = as_drift(drift, d)
    X = np.asarray(states, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    mesh = np.asarray(mesh, dtype=float)
    if X.shape[1] != mesh.size:
        raise InvalidArgument("states and mesh disagree")
    field.check(X)
    R = np.zeros((X.shape[0], d))
    for k in range(mesh.size - 1):
        t0, t1 = mesh[k], mesh[k + 1]
        dt = t1 - t0
        xk = X[:, k]
        bx = f(t0, xk)
        R += (bx * dt + field.u_at(t1, xk + bx * dt) - field.u_at(t0, xk)
              + field.lu_at(t0, xk) * dt)
    R = R[..., 0] if d == 1 else np.linalg.norm(R, axis=-1)
    return R[0] if single else R


# -- Malliavin derivatives ---------------------------------------------------------------


@dataclass
class MalliavinField:
    """``D_{l,y} X(t)`` per path on a product grid of perturbation times and marks.

    ``values`` has shape ``(paths, n_l, n_y, d)``; ``y_grid`` has shape ``(n_y, d)``.
    """

    t: float
    l_grid: np.ndarray
    y_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("Malliavin field has non-finite values")

    def anticipation_gap(self) -> float:
        """``max |D_{l,y} X(t)|`` over ``l > t`` (must be exactly 0)."""
        late = self.l_grid > self.t
        if not np.any(late):
            return 0.0
        return float(np.max(np.abs(self.values[:, late])))

    def flat(self) -> np.ndarray:
        P = self.values.shape[0]
        return self.values.reshape(P, -1, self.values.shape[-1])


def _mesh_index(mesh, l):
    k = int(np.searchsorted(mesh, l - 1e-12))
    if k >= mesh.size or abs(mesh[k] - l) > 1e-9 * max(1.0, mesh[-1]):
        raise InvalidArgument(f"perturbation time {l} is not a mesh point")
    return k


def perturbed_differences(drift, mesh, states, l_idx, marks, *, grad_drift=None,
                          linearized: bool = False, t_index: int | None = None,
                          keep_path: bool = False):
    """``D`` for many ``(l, y)`` nodes at once.

    ``D`` is 0 before mesh index ``l_idx[i]``, equals ``y_i`` there and then
    follows ``D_{k+1} = D_k + [b(X_k + D_k) - b(X_k)] dt`` (the difference of
    the perturbed and unperturbed Euler paths).  With ``linearized`` the
    bracket is replaced by ``Db(X_k) D_k``.

    Returns ``(paths, nodes, d)`` at ``t_index`` (default: last mesh point),
    or the whole ``(paths, nodes, len(mesh), d)`` history if ``keep_path``.
    """
    X = np.asarray(states, dtype=float)
    if X.ndim == 2:
        X = X[None]
    P, M, d = X.shape
    f = as_drift(drift, d)
    marks = np.asarray(marks, dtype=float).reshape(-1, d)
    l_idx = np.asarray(l_idx, dtype=np.int64)
    if np.any(np.linalg.norm(marks, axis=-1) >= 1.0 + 1e-12):
        raise InvalidArgument("marks must satisfy |y| < 1")
    N = marks.shape[0]
    last = M - 1 if t_index is None else int(t_index)
    D = np.zeros((P, N, d))
    hist = np.zeros((P, N, M, d)) if keep_path else None
    for k in range(last + 1):
        inject = l_idx == k
        if np.any(inject):
            D[:, inject] = marks[inject][None]
        if keep_path:
            hist[:, :, k] = D
        if k == last:
            break
        dt = mesh[k + 1] - mesh[k]
        xk = X[:, k][:, None, :]
        if linearized:
            if grad_drift is None:
                raise InvalidArgument("linearized recursion needs the drift gradient")
            J = np.asarray(grad_drift(mesh[k], np.broadcast_to(xk, D.shape)), dtype=float)
            if d == 1:
                J = J.reshape(D.shape)
                D = D + J * D * dt
            else:
                D = D + np.einsum("pnij,pnj->pni", J, D) * dt
        else:
            D = D + (f(mesh[k], xk + D) - f(mesh[k], np.broadcast_to(xk, D.shape))) * dt
    if keep_path:
        hist[:, :, last + 1:] = np.nan
        return hist
    return D


def malliavin_variational(drift, mesh, states, l: float, y, *, grad_drift=None,
                          linearized: bool = False) -> np.ndarray:
    """Trajectory ``t_k -> D_{l,y} X(t_k)`` along stored path(s).

    Returns shape ``(len(mesh), d)`` for one path or ``(paths, len(mesh), d)``.
    Perturbation times beyond the horizon give an identically zero trajectory.
    """
    mesh = np.asarray(mesh, dtype=float)
    X = np.asarray(states, dtype=float)
    single = X.ndim == 2
    d = X.shape[-1]
    y = np.asarray(y, dtype=float).reshape(1, d)
    if l > mesh[-1] + 1e-12:
        shape = (mesh.size, d) if single else (X.shape[0], mesh.size, d)
        return np.zeros(shape)
    k = _mesh_index(mesh, l)
    hist = perturbed_differences(drift, mesh, X, [k], y, grad_drift=grad_drift,
                                 linearized=linearized, keep_path=True)[:, 0]
    return hist[0] if single else hist


@dataclass
class RecursionDiagnostics:
    max_inner_residual: float
    max_inner_iterations: int
    contraction_estimate: float


def malliavin_u_recursion(field: ZvonkinField, drift, mesh, states, l_idx, marks, *,
                          damping: float = 0.5, tol: float = 1e-10, max_inner: int = 50,
                          t_index: int | None = None, return_history: bool = False):
    """``D`` from the implicit Zvonkin identity, solved step by step.

    At mesh point ``t_n`` (after the perturbation time ``l = t_m``)

        D_n = u(t_n, X_n) - u(t_n, X_n + D_n) + u(l, X_m + y) - u(l, X_m) + y + S_n,

    where ``S_n`` collects, step by step, the jump increments of
    ``u(., Y) - u(., X)`` for the perturbed path ``Y = X + D`` minus their
    compensator ``[Lu(Y) - Lu(X)] dt``.  The implicit equation is solved by
    damped fixed-point iteration; it contracts because ``|Du| < 1``.

    Returns ``(D, diagnostics)``; ``D`` has shape ``(paths, nodes, d)`` at
    ``t_index`` or the full history if ``return_history``.
    """
    X = np.asarray(states, dtype=float)
    if X.ndim == 2:
        X = X[None]
    P, M, d = X.shape
    mesh = np.asarray(mesh, dtype=float)
    if mesh.size != field.times.size or not np.allclose(mesh, field.times, atol=1e-12):
        raise InvalidArgument("the u-recursion needs u on the path mesh")
    f = as_drift(drift, d)
    marks = np.asarray(marks, dtype=float).reshape(-1, d)
    l_idx = np.asarray(l_idx, dtype=np.int64)
    N = marks.shape[0]
    last = M - 1 if t_index is None else int(t_index)
    field.check(X)
    D = np.zeros((P, N, d))
    S = np.zeros((P, N, d))
    C0 = np.zeros((P, N, d))
    hist = np.zeros((P, N, last + 1, d)) if return_history else None
    worst_res, worst_it = 0.0, 0
    for k in range(last + 1):
        inject = l_idx == k
        if np.any(inject):
            xk = np.broadcast_to(X[:, k][:, None, :], (P, int(inject.sum()), d))
            yk = marks[inject][None]
            C0[:, inject] = field.u_slice(k, xk + yk) - field.u_slice(k, xk) + yk
            D[:, inject] = yk
            S[:, inject] = 0.0
        if return_history:
            hist[:, :, k] = D
        if k == last:
            break
        dt = mesh[k + 1] - mesh[k]
        xk = np.broadcast_to(X[:, k][:, None, :], D.shape)
        Y = xk + D
        bX = f(mesh[k], xk)
        bY = f(mesh[k], Y)
        Xm = xk + bX * dt
        Ym = Y + bY * dt
        x1 = np.broadcast_to(X[:, k + 1][:, None, :], D.shape)
        dL = x1 - Xm
        field.check(Ym + dL)
        S = S + ((field.u_slice(k + 1, Ym + dL) - field.u_slice(k + 1, Ym))
                 - (field.u_slice(k + 1, Xm + dL) - field.u_slice(k + 1, Xm))
                 - (field.lu_slice(k, Y) - field.lu_slice(k, xk)) * dt)
        c = field.u_slice(k + 1, x1) + C0 + S
        Dn = D.copy()
        res = np.inf
        for it in range(1, max_inner + 1):
            target = c - field.u_slice(k + 1, x1 + Dn)
            res = float(np.max(np.abs(target - Dn))) if Dn.size else 0.0
            Dn = (1.0 - damping) * Dn + damping * target
            if res < tol:
                break
        worst_res = max(worst_res, res)
        worst_it = max(worst_it, it)
        D = Dn
    diag = RecursionDiagnostics(worst_res, worst_it, field.grad_sup())
    return (hist if return_history else D), diag


# -- (l, y) grids and functionals --------------------------------------------------------


@dataclass(frozen=True)
class SlobodeckijSpec:
    """Exponents of the fractional form: ``s`` in (0, 1/2), potential ``delta``, horizon ``tau``."""

    s: float
    delta: float
    tau: float
    alpha: float

    def __post_init__(self):
        if not 0 < self.s < 0.5:
            raise InvalidArgument("s must lie in (0, 1/2)")
        if not self.delta > 0:
            raise InvalidArgument("delta must be positive")
        if not self.alpha + self.delta < 2:
            raise InvalidArgument("alpha + delta must be below 2")
        if not self.tau > 0:
            raise InvalidArgument("tau must be positive")


def potential(spec: SlobodeckijSpec, y, d: int) -> np.ndarray:
    """Weight blowing up at the origin and at the unit sphere."""
    r = np.linalg.norm(np.asarray(y, dtype=float).reshape(-1, d), axis=-1)
    out = np.full(r.shape, np.inf)
    inner = (r > 0) & (r <= 0.5)
    outer = (r > 0.5) & (r < 1.0)
    out[inner] = r[inner] ** (-(d + spec.alpha + spec.delta))
    out[outer] = 2.0 ** (d + spec.alpha) / np.sqrt(1.0 - r[outer])
    return out


@dataclass(frozen=True)
class NodeGrid:
    """Product grid: ``n_l`` midpoints in (0, tau) times ``n_r`` log-spaced radii
    in ``[r_min, r_max]`` times ``n_dir`` directions."""

    l: np.ndarray
    radii: np.ndarray
    directions: np.ndarray
    tau: float

    @property
    def d(self) -> int:
        return self.directions.shape[1]

    @property
    def marks(self) -> np.ndarray:
        """``(n_r * n_dir, d)`` marks, radius-major."""
        return (self.radii[:, None, None] * self.directions[None, :, :]).reshape(-1, self.d)

    @property
    def l_weights(self) -> np.ndarray:
        return np.full(self.l.size, self.tau / self.l.size)

    def radial_log_step(self) -> float:
        return float(np.log(self.radii[-1] / self.radii[0]) / (self.radii.size - 1))

    def mark_weights(self) -> np.ndarray:
        """Lebesgue weights of the marks (log-midpoint rule in the radius)."""
        d = self.d
        ang = (2.0 if d == 1 else 2.0 * np.pi) / self.directions.shape[0]
        w_r = self.radii ** d * self.radial_log_step()
        return (w_r[:, None] * np.full(self.directions.shape[0], ang)[None, :]).ravel()


def make_node_grid(d: int, tau: float, *, n_l: int = 16, n_r: int = 16, r_min: float = 1e-2,
                   r_max: float = 0.99, mesh=None) -> NodeGrid:
    """Default (l, y) grid; ``l`` values are snapped to ``mesh`` when given."""
    l = tau * (np.arange(n_l) + 0.5) / n_l
    if mesh is not None:
        mesh = np.asarray(mesh)
        l = mesh[np.clip(np.round(l / (mesh[1] - mesh[0])).astype(int), 1, mesh.size - 2)]
    radii = np.geomspace(r_min, r_max, n_r)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        th = 2.0 * np.pi * np.arange(8) / 8
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    return NodeGrid(l, radii, dirs, tau)


@dataclass
class SecondMoments:
    """Associative reducer: path count, ``sum D D^T`` over nodes, ``sum |D|^2``."""

    n: int
    gram: np.ndarray
    sq: np.ndarray

    @classmethod
    def empty(cls, n_nodes: int):
        return cls(0, np.zeros((n_nodes, n_nodes)), np.zeros(n_nodes))

    @classmethod
    def from_field(cls, mf: MalliavinField):
        F = mf.flat()
        gram = np.einsum("pic,pjc->ij", F, F)
        return cls(F.shape[0], gram, np.einsum("pic,pic->i", F, F))

    def merge(self, other: "SecondMoments") -> "SecondMoments":
        return SecondMoments(self.n + other.n, self.gram + other.gram, self.sq + other.sq)

    def mean_sq(self) -> np.ndarray:
        return self.sq / self.n

    def pair_msd(self) -> np.ndarray:
        """``E|D_i - D_j|^2`` for all node pairs."""
        m = self.sq / self.n
        return np.maximum(m[:, None] + m[None, :] - 2.0 * self.gram / self.n, 0.0)


def _node_coords(grid: NodeGrid):
    L = np.repeat(grid.l, grid.marks.shape[0])
    Y = np.tile(grid.marks, (grid.l.size, 1))
    return L, Y


def potential_term(moments: SecondMoments, grid: NodeGrid, spec: SlobodeckijSpec) -> float:
    """``int int p(y) E|D_{l,y}|^2 dy dl`` with analytic end corrections.

    Per (l, direction) the profile ``g(r) = E|D|^2 / r^2`` is interpolated in
    ``log r`` (held constant beyond the sampled radii, since ``D ~ y`` for small
    marks) and integrated against ``p(r) r^{2 + d - 1}`` exactly at both
    singular ends.
    """
    d = grid.d
    nl, nr, nd = grid.l.size, grid.radii.size, grid.directions.shape[0]
    ms = moments.mean_sq().reshape(nl, nr, nd)
    g = ms / grid.radii[None, :, None] ** 2
    ang = (2.0 if d == 1 else 2.0 * np.pi) / nd
    a = spec.alpha + spec.delta
    lr = np.log(grid.radii)
    total = 0.0
    for i in range(nl):
        for j in range(nd):
            prof = g[i, :, j]
            gi = lambda r: np.interp(np.log(max(r, 1e-300)), lr, prof)
            inner = integrate.quad(gi, 0.0, 0.5, weight="alg", wvar=(1.0 - a, 0.0),
                                   points=None, limit=200)[0]
            outer = integrate.quad(lambda r: gi(r) * r ** (d + 1), 0.5, 1.0, weight="alg",
                                   wvar=(0.0, -0.5), limit=200)[0] * 2.0 ** (d + spec.alpha)
            total += (inner + outer) * ang * grid.l_weights[i]
    return float(total)


def fit_holder_rate(moments: SecondMoments, grid: NodeGrid, *, n_nearest: int = 8,
                    kappa_min: float = 0.05, kappa_max: float = 2.0):
    """Exponent ``kappa`` in ``E|D_i - D_j|^2 ~ c_i rho^kappa`` from near pairs,
    and the per-node constants ``c_i``.  ``rho = |l_i - l_j| + |y_i - y_j|``.

    Node scales differ by orders of magnitude, so ``kappa`` is fitted with a
    separate intercept per node (regression on node-demeaned logs).
    """
    L, Y = _node_coords(grid)
    rho = np.abs(L[:, None] - L[None, :]) + np.linalg.norm(Y[:, None] - Y[None, :], axis=-1)
    msd = moments.pair_msd()
    np.fill_diagonal(rho, np.inf)
    nn = np.argsort(rho, axis=1, kind="stable")[:, :n_nearest]
    rows = np.arange(rho.shape[0])[:, None]
    r_nn = rho[rows, nn]
    m_nn = msd[rows, nn]
    ok = (m_nn > 0) & np.isfinite(r_nn) & (r_nn > 0)
    lr = np.where(ok, np.log(np.where(ok, r_nn, 1.0)), 0.0)
    lm = np.where(ok, np.log(np.where(ok, m_nn, 1.0)), 0.0)
    cnt = ok.sum(axis=1)
    use = cnt >= 2
    kappa = 2.0
    if np.any(use):
        mr = lr[use].sum(axis=1) / cnt[use]
        mm = lm[use].sum(axis=1) / cnt[use]
        xr = np.where(ok[use], lr[use] - mr[:, None], 0.0)
        xm = np.where(ok[use], lm[use] - mm[:, None], 0.0)
        sxx = float(np.sum(xr * xr))
        if sxx > 0:
            kappa = float(np.sum(xr * xm) / sxx)
    kappa = float(np.clip(kappa, kappa_min, kappa_max))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ok, m_nn / np.where(ok, r_nn, 1.0) ** kappa, 0.0)
    c = ratio.sum(axis=1) / np.maximum(cnt, 1)
    return kappa, c


@dataclass
class FunctionalValue:
    total: float
    seminorm: float
    diagonal_correction: float
    potential: float
    kappa: float


def slobodeckij_functional(moments: SecondMoments, grid: NodeGrid,
                           spec: SlobodeckijSpec) -> FunctionalValue:
    """Slobodeckij double integral plus potential term for the ensemble ``moments``.

    Off-diagonal node pairs are summed with product weights.  The excluded
    self-cell of node ``i`` (radius ``rho_i`` = half its cell in the ``|l| + |y|``
    metric) contributes ``w_i c_i V' rho_i^{kappa - 2s} / (kappa - 2s)`` with the
    fitted Hoelder rate ``kappa``, where ``V(rho) = v_d rho^{d+1}`` is the
    volume of that ball.
    """
    d = grid.d
    L, Y = _node_coords(grid)
    w = np.repeat(grid.l_weights, grid.marks.shape[0]) * np.tile(grid.mark_weights(), grid.l.size)
    rho = np.abs(L[:, None] - L[None, :]) + np.linalg.norm(Y[:, None] - Y[None, :], axis=-1)
    msd = moments.pair_msd()
    expo = d + 1 + 2 * spec.s
    off = ~np.eye(rho.shape[0], dtype=bool) & (rho > 0)
    kern = np.zeros_like(rho)
    kern[off] = rho[off] ** (-expo)
    semi = float(np.einsum("i,ij,ij,j->", w, msd, kern, w))
    kappa, c = fit_holder_rate(moments, grid, kappa_min=2 * spec.s + 0.05)
    v_d = 2.0 if d == 1 else 2.0 * np.pi / 3.0
    dl = grid.tau / grid.l.size
    radii = np.tile(np.repeat(grid.radii, grid.directions.shape[0]), grid.l.size)
    dr = radii * grid.radial_log_step()
    rho_i = 0.5 * (dl + dr)
    power = kappa - 2 * spec.s
    if power <= 0:
        diag = np.inf
    else:
        diag = float(np.sum(w * c * v_d * (d + 1) * rho_i ** power / power))
    pot = potential_term(moments, grid, spec)
    return FunctionalValue(semi + diag + pot, semi, diag, pot, kappa)


def pairwise_ratio(moments: SecondMoments, grid: NodeGrid) -> float:
    """``max_{i != j} E|D_i - D_j|^2 / (|l_i - l_j| + |gamma(y_i) - gamma(y_j)|)``."""
    L, Y = _node_coords(grid)
    den = np.abs(L[:, None] - L[None, :]) + np.linalg.norm(Y[:, None] - Y[None, :], axis=-1)
    msd = moments.pair_msd()
    off = den > 0
    return float(np.max(msd[off] / den[off]))


def bound_growth(y, cT: float):
    """``(y + 1)^2 / (1 - C(T)^2 y)``; infinite where the denominator vanishes."""
    y = np.asarray(y, dtype=float)
    den = 1.0 - cT ** 2 * y
    with np.errstate(divide="ignore"):
        out = np.where(den > 0, (y + 1.0) ** 2 / np.where(den > 0, den, 1.0), np.inf)
    return float(out) if out.ndim == 0 else out


def malliavin_field(drift, mesh, states, grid: NodeGrid, *, t_index: int | None = None
                    ) -> MalliavinField:
    """Exact perturbed-path derivative on the whole (l, y) grid at ``t_index``."""
    mesh = np.asarray(mesh, dtype=float)
    X = np.asarray(states, dtype=float)
    if X.ndim == 2:
        X = X[None]
    last = mesh.size - 1 if t_index is None else int(t_index)
    l_idx_single = np.array([_mesh_index(mesh, l) if l <= mesh[-1] + 1e-12 else mesh.size
                             for l in grid.l])
    marks = grid.marks
    nm = marks.shape[0]
    l_idx = np.repeat(l_idx_single, nm)
    all_marks = np.tile(marks, (grid.l.size, 1))
    D = perturbed_differences(drift, mesh, X, l_idx, all_marks, t_index=last)
    vals = D.reshape(X.shape[0], grid.l.size, nm, X.shape[-1])
    return MalliavinField(float(mesh[last]), grid.l.copy(), marks, vals)


@dataclass
class FunctionalReport:
    levels: list
    functional: list
    pairwise: list
    kappa: list
    cT: float
    drift_norm: float
    growth_value: float
    anticipation_gap: float
    spread: float
    master_seed: int
    n_paths: int

    def rows(self):
        return [(n, f.total, f.seminorm, f.diagonal_correction, f.potential, f.kappa, p,
                 self.master_seed)
                for n, f, p in zip(self.levels, self.functional, self.pairwise)]

    def to_csv(self, path):
        return write_csv(path, ["level", "functional", "seminorm", "diagonal", "potential",
                                "kappa", "pairwise_ratio", "master_seed"], self.rows())

    def to_json(self, path):
        return write_json(path, {
            "levels": self.levels, "functional": [f.__dict__ for f in self.functional],
            "pairwise": self.pairwise, "cT": self.cT, "drift_norm": self.drift_norm,
            "bound_growth": self.growth_value, "anticipation_gap": self.anticipation_gap,
            "spread": self.spread, "master_seed": self.master_seed, "n_paths": self.n_paths})


def lemma13_bound_check(model: LevyModel, family: MollifierFamily, spec: SlobodeckijSpec, *,
                        beta: float, n_paths: int = 200, n_steps: int = 64,
                        master_seed: int = 0, x0=0.0, grid: NodeGrid | None = None,
                        cT: float | None = None, eps_cut: float | None = None,
                        chunk: int = 50) -> FunctionalReport:
    """Functional and pairwise ratio of the Malliavin field for every level of ``family``.

    All levels share the same noise.  The horizon is ``spec.tau`` and the field
    is evaluated at ``t = tau``.

    Raises
    ------
    HorizonTooLarge
        If ``C(tau) ||b||_{C^beta} > 1/2``.
    """
    T = spec.tau
    b_grid = mollify(family, max(family.levels)).grid
    bnorm = drift_norm(b_grid, beta)
    if cT is None:
        cT = float(estimate_cT(model, [T], beta).C[0])
    if cT * bnorm > 0.5:
        # C(T) ||b|| <= 1/2 is the backward-solver condition with half the norm
        Tmax = max_admissible_horizon(model, 0.5 * bnorm, beta, T)
        raise HorizonTooLarge(f"C(T) ||b|| = {cT * bnorm:.3f} > 1/2 at T={T}; "
                              f"largest admissible T ~ {Tmax:.4g}", max_horizon=Tmax)
    noise = sample_noise_batch(model, T, n_steps, n_paths, master_seed=master_seed,
                               eps_cut=eps_cut)
    mesh = noise.mesh
    grid = grid or make_node_grid(model.d, T, mesh=mesh)
    funcs, pairs, kappas = [], [], []
    gap = 0.0
    for n in family.levels:
        b_n = mollify(family, n)
        X = euler_batch(b_n, noise, x0, record=True)
        mom = SecondMoments.empty(grid.l.size * grid.marks.shape[0])
        # at mid-horizon half of the perturbation times lie in the future
        mid = malliavin_field(b_n, mesh, X[:chunk], grid, t_index=n_steps // 2)
        gap = max(gap, mid.anticipation_gap())
        for p0 in range(0, n_paths, chunk):
            mf = malliavin_field(b_n, mesh, X[p0:p0 + chunk], grid)
            gap = max(gap, mf.anticipation_gap())
            mom = mom.merge(SecondMoments.from_field(mf))
        fv = slobodeckij_functional(mom, grid, spec)
        funcs.append(fv)
        kappas.append(fv.kappa)
        pairs.append(pairwise_ratio(mom, grid))
    tot = np.array([f.total for f in funcs])
    spread = float((tot.max() - tot.min()) / tot.min())
    return FunctionalReport(list(family.levels), funcs, pairs, kappas, cT, bnorm,
                         bound_growth(bnorm ** 2, cT), gap, spread, master_seed, n_paths)
