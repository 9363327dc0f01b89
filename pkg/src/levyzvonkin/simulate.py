"""Truncated alpha-stable noise, Euler solutions of ``dX = b(t, X) dt + dL`` and
mollified drifts.

Noise model
-----------
Jumps with ``eps_cut < |y| <= 1`` form a compound Poisson process with rate
``nu(eps_cut < |y| <= 1)``; their radii are drawn by inverting the radial
distribution function and their directions uniformly.  Jumps below the cut are
replaced by a centered Gaussian with the exact small-jump covariance.  The
process has no compensating drift because the measure is symmetric.

Every path owns a generator seeded by ``SeedSequence([master_seed, index])``,
so path ``i`` is the same whatever else is simulated.  Batch simulations store
the noise as one increment per base step (jumps assigned to the step in which
they occur, applied at its end); coarser meshes are obtained by summing
adjacent increments, which keeps all refinement levels exactly coupled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, signal

from .errors import BlowUpError, InvalidArgument
from .grid import Box, GridFunction, interp_linear
from .io import write_csv
from .levy_model import LevyModel


def default_eps_cut(d: int) -> float:
    return 1e-3 if d == 1 else 1e-2


def path_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-path generator; stable across platforms and numpy versions."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


def _draw_radii(rng, n, alpha, eps):
    # radial density on (eps, 1] is proportional to r^{-1-alpha}
    u = rng.random(n)
    a = eps ** (-alpha)
    return (a - u * (a - 1.0)) ** (-1.0 / alpha)


def _draw_directions(rng, n, d):
    if d == 1:
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


@dataclass
class PathRecord:
    """One trajectory: noise (jumps and per-step Gaussians) and optional states.

    ``mesh`` is the base mesh for noise-only records and the event-augmented
    mesh once :func:`euler_solve` has filled ``states``.
    """

    seed: tuple
    T: float
    n_steps: int
    eps_cut: float
    jump_times: np.ndarray
    jump_marks: np.ndarray
    small_jump_gaussian: np.ndarray
    mesh: np.ndarray = None
    states: np.ndarray | None = None
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.mesh is None:
            self.mesh = self.base_mesh

    @property
    def d(self) -> int:
        return self.small_jump_gaussian.shape[1]

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def base_mesh(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def step_of_jumps(self) -> np.ndarray:
        """Base step index ``k`` with ``t_k < tau <= t_{k+1}`` for every jump time."""
        k = np.ceil(self.jump_times / self.dt).astype(np.int64) - 1
        return np.clip(k, 0, self.n_steps - 1)

    def increments(self) -> np.ndarray:
        """Noise increment of every base step, shape ``(n_steps, d)``."""
        inc = self.small_jump_gaussian.copy()
        if self.jump_times.size:
            k = self.step_of_jumps()
            for j in range(self.d):
                inc[:, j] += np.bincount(k, weights=self.jump_marks[:, j], minlength=self.n_steps)
        return inc

    def levy_at_mesh(self) -> np.ndarray:
        """``L`` at the base mesh points (jumps counted at the end of their step)."""
        out = np.zeros((self.n_steps + 1, self.d))
        out[1:] = np.cumsum(self.increments(), axis=0)
        return out

    def zeroed(self) -> "PathRecord":
        """Same mesh and seed with all noise removed."""
        return PathRecord(self.seed, self.T, self.n_steps, self.eps_cut,
                          np.zeros(0), np.zeros((0, self.d)),
                          np.zeros_like(self.small_jump_gaussian))

    def check(self):
        r = np.linalg.norm(self.jump_marks, axis=-1) if self.jump_times.size else np.zeros(0)
        if np.any(r > 1.0) or np.any(r <= self.eps_cut):
            raise InvalidArgument("jump marks outside the shell (eps_cut, 1]")
        if self.states is not None and not np.all(np.isfinite(self.states)):
            raise BlowUpError("non-finite state")

    def to_json_line(self, checkpoints=()) -> str:
        """One JSON object: seed, jump list and states at the requested times."""
        rec = {"seed": list(self.seed), "T": self.T, "n_steps": self.n_steps,
               "eps_cut": self.eps_cut,
               "jumps": [[float(t)] + [float(v) for v in y]
                         for t, y in zip(self.jump_times, self.jump_marks)]}
        if self.states is not None:
            idx = [int(np.searchsorted(self.mesh, c - 1e-12)) for c in checkpoints]
            rec["checkpoints"] = {format(float(c), ".17g"): self.states[i].tolist()
                                  for c, i in zip(checkpoints, idx)}
        return json.dumps(rec, sort_keys=True)


def sample_levy_increments(model: LevyModel, T: float, n_steps: int, *,
                           eps_cut: float | None = None, seed=(0, 0)) -> PathRecord:
    """Noise part of a path on the uniform mesh ``t_k = k T / n_steps``.

    ``seed`` is ``(master_seed, path_index)``.
    """
    eps = default_eps_cut(model.d) if eps_cut is None else float(eps_cut)
    if not 0 < eps < 1:
        raise InvalidArgument(f"eps_cut must lie in (0, 1), got {eps}")
    if not T > 0 or n_steps < 1:
        raise InvalidArgument("need T > 0 and at least one step")
    master, index = seed
    rng = path_rng(master, index)
    d = model.d
    n = rng.poisson(model.jump_rate(eps) * T)
    times = np.sort(rng.uniform(0.0, T, n))
    marks = _draw_radii(rng, n, model.alpha, eps)[:, None] * _draw_directions(rng, n, d)
    sigma = np.sqrt(model.second_moment(eps) * T / n_steps)
    gauss = sigma * rng.standard_normal((n_steps, d))
    return PathRecord((int(master), int(index)), float(T), int(n_steps), eps,
                      times, marks, gauss)


@dataclass
class NoiseBatch:
    """Per-step noise increments for a batch of paths, shape ``(paths, steps, d)``."""

    master_seed: int
    first_index: int
    T: float
    increments: np.ndarray
    eps_cut: float

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def d(self) -> int:
        return self.increments.shape[2]

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def mesh(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def coarsen(self, factor: int) -> "NoiseBatch":
        """Same noise on a mesh ``factor`` times coarser (increments summed)."""
        if self.n_steps % factor:
            raise InvalidArgument("coarsening factor must divide the step count")
        inc = self.increments.reshape(self.n_paths, self.n_steps // factor, factor, self.d).sum(2)
        return NoiseBatch(self.master_seed, self.first_index, self.T, inc, self.eps_cut)

    def levy_T(self) -> np.ndarray:
        return self.increments.sum(axis=1)

    def levy_at_mesh(self) -> np.ndarray:
        out = np.zeros((self.n_paths, self.n_steps + 1, self.d))
        out[:, 1:] = np.cumsum(self.increments, axis=1)
        return out


def sample_noise_batch(model: LevyModel, T: float, n_steps: int, n_paths: int, *,
                       master_seed: int = 0, first_index: int = 0,
                       eps_cut: float | None = None) -> NoiseBatch:
    """Increments of ``n_paths`` independent paths (indices ``first_index ...``)."""
    eps = default_eps_cut(model.d) if eps_cut is None else float(eps_cut)
    inc = np.empty((n_paths, n_steps, model.d))
    for p in range(n_paths):
        rec = sample_levy_increments(model, T, n_steps, eps_cut=eps,
                                     seed=(master_seed, first_index + p))
        inc[p] = rec.increments()
    return NoiseBatch(int(master_seed), int(first_index), float(T), inc, eps)


def levy_endpoint_sample(model: LevyModel, t: float, n_paths: int, *, master_seed: int = 0,
                         eps_cut: float | None = None) -> np.ndarray:
    """``L_t`` for ``n_paths`` paths, shape ``(n_paths, d)``."""
    return sample_noise_batch(model, t, 1, n_paths, master_seed=master_seed,
                              eps_cut=eps_cut).levy_T()


# -- drifts -------------------------------------------------------------------


def as_drift(b, d: int):
    """Normalize a drift to ``f(t, x) -> array (..., d)``.

    Accepts a callable ``b(t, x)`` (scalar output allowed for d = 1) or a
    :class:`GridFunction` (multilinear interpolation, linear in time).
    """
    if isinstance(b, GridFunction):
        box = b.box

        def f(t, x):
            x = np.asarray(x, dtype=float)
            if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
                x = x[..., None]
            vals = b._slice_values(t if b.is_sliced else 0.0)
            out = interp_linear(box, vals, x)
            return out[..., None] if out.ndim == x.ndim - 1 else out
        return f
    if not callable(b):
        raise InvalidArgument("drift must be callable or a GridFunction")

    def g(t, x):
        out = np.asarray(b(t, x), dtype=float)
        if out.shape == x.shape[:-1]:
            out = out[..., None]
        return np.broadcast_to(out, x.shape)
    return g


def _check_bounded(drift, d: int, T: float, bound: float = 1e8):
    rng = np.random.default_rng(12345)
    x = rng.uniform(-8.0, 8.0, size=(256, d))
    for t in (0.0, 0.5 * T, T):
        v = drift(t, x)
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > bound:
            raise InvalidArgument("drift is not bounded on the sampling window")


def euler_solve(drift, noise: PathRecord, x0, *, check: bool = True) -> PathRecord:
    """Event-augmented Euler scheme along one path.

    The mesh is the base mesh with every jump time inserted; the Gaussian
    small-jump increment of a base step is added at its end.  Between events
    ``X`` moves by ``b(t, X) dt``.
    """
    d = noise.d
    f = as_drift(drift, d)
    if check:
        _check_bounded(f, d, noise.T)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,)).copy()
    base = noise.base_mesh
    jt = noise.jump_times
    ev_t = np.concatenate([base, jt])
    # kind: -1 base point, j >= 0 jump index; base points sort after equal jump times
    ev_kind = np.concatenate([-np.ones(base.size, dtype=np.int64), np.arange(jt.size)])
    order = np.lexsort((ev_kind < 0, ev_t))
    ev_t = ev_t[order]
    ev_kind = ev_kind[order]
    states = np.empty((ev_t.size, d))
    states[0] = x0
    x = x0.copy()
    t_prev = ev_t[0]
    base_k = 0
    for i in range(1, ev_t.size):
        t = ev_t[i]
        x = x + f(t_prev, x[None, :])[0] * (t - t_prev)
        kind = ev_kind[i]
        if kind >= 0:
            x = x + noise.jump_marks[kind]
        else:
            base_k += 1
            x = x + noise.small_jump_gaussian[base_k - 1]
        if not np.all(np.isfinite(x)):
            raise BlowUpError(f"state became non-finite at t={t}")
        states[i] = x
        t_prev = t
    out = PathRecord(noise.seed, noise.T, noise.n_steps, noise.eps_cut, noise.jump_times,
                     noise.jump_marks, noise.small_jump_gaussian, mesh=ev_t, states=states, x0=x0)
    return out


def euler_batch(drift, noise: NoiseBatch, x0, *, record: bool = False,
                checkpoints=None, check: bool = True):
    """Euler scheme on the uniform mesh, vectorized over paths.

    ``X_{k+1} = X_k + b(t_k, X_k) dt + dL_k`` with the batch increments.
    Returns the full ``(paths, steps + 1, d)`` array if ``record``; otherwise
    the states at ``checkpoints`` (mesh times), shape ``(paths, len, d)``.
    """
    d = noise.d
    f = as_drift(drift, d)
    if check:
        _check_bounded(f, d, noise.T)
    P, K = noise.n_paths, noise.n_steps
    dt = noise.dt
    x = np.broadcast_to(np.asarray(x0, dtype=float), (P, d)).copy()
    ck = None
    if checkpoints is not None:
        ck = [int(round(c / dt)) for c in checkpoints]
        if any(abs(k * dt - c) > 1e-9 * max(1.0, noise.T) for k, c in zip(ck, checkpoints)):
            raise InvalidArgument("checkpoints must lie on the mesh")
    traj = np.empty((P, K + 1, d)) if record else None
    snaps = {}
    if record:
        traj[:, 0] = x
    if ck is not None and 0 in ck:
        snaps[0] = x.copy()
    for k in range(K):
        x = x + f(k * dt, x) * dt + noise.increments[:, k]
        if record:
            traj[:, k + 1] = x
        if ck is not None and (k + 1) in ck:
            snaps[k + 1] = x.copy()
    if not np.all(np.isfinite(x)):
        raise BlowUpError("non-finite state in batch Euler scheme")
    if record:
        return traj
    if ck is None:
        return x
    return np.stack([snaps[k] for k in ck], axis=1)


# -- mollification ---------------------------------------------------------------


def _bump(r):
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def bump_mass(d: int) -> float:
    """``int exp(-1/(1-|x|^2)) dx`` over the unit ball (computed once)."""
    f = lambda r: np.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0
    if d == 1:
        return 2.0 * integrate.quad(f, 0.0, 1.0)[0]
    return 2.0 * np.pi * integrate.quad(lambda r: r * f(r), 0.0, 1.0)[0]


@dataclass
class MollifierFamily:
    """Base drift ``b`` (callable of ``x`` only) and mollification levels.

    ``b`` returns shape ``(...)`` in d = 1 or ``(..., d)``.  ``window`` is the
    half-width of the region where ``b_n`` is tabulated; ``cells_per_scale``
    sets the tabulation grid to ``h = 1 / (cells_per_scale * n)``.
    """

    base: object
    d: int
    levels: list
    window: float = 12.0
    cells_per_scale: int = 10
    max_nodes: int = 1 << 16
    _cache: dict = field(default_factory=dict, repr=False)

    def grid_for(self, n: int) -> Box:
        h = 1.0 / (self.cells_per_scale * n)
        npts = int(2 ** np.ceil(np.log2(2.0 * self.window / h)))
        cap = self.max_nodes if self.d == 1 else int(np.sqrt(self.max_nodes * 64))
        npts = min(max(npts, 64), cap)
        return Box(self.d, self.window, npts)


def mollify(family: MollifierFamily, n: int):
    """``b_n = b * phi_n`` with ``phi_n(x) = n^d phi(n x)``, as ``f(t, x)``.

    The convolution is done on a tabulation grid (kernel normalized to unit
    discrete mass) and evaluated off-grid by multilinear interpolation.
    """
    if n < 1:
        raise InvalidArgument("mollification level must be >= 1")
    if n in family._cache:
        return family._cache[n]
    box = family.grid_for(n)
    d = family.d
    h = box.h
    rad = int(np.ceil(1.0 / (n * h)))
    off = h * np.arange(-rad, rad + 1)
    if d == 1:
        kern = _bump(np.abs(off) * n)
    else:
        kern = _bump(np.hypot(off[:, None], off[None, :]) * n)
    kern /= kern.sum()
    # tabulate b beyond the box edge so the convolution is exact inside it
    ext_axis = -box.halfwidth + h * np.arange(-rad, box.n + rad)
    if d == 1:
        pts = ext_axis[:, None]
    else:
        g = np.meshgrid(ext_axis, ext_axis, indexing="ij")
        pts = np.stack(g, axis=-1)
    bv = np.asarray(family.base(pts), dtype=float)
    if bv.shape == pts.shape[:-1]:
        bv = bv[..., None]
    comps = []
    for c in range(bv.shape[-1]):
        comps.append(signal.fftconvolve(bv[..., c], kern, mode="valid"))
    vals = np.stack(comps, axis=-1)
    gf = GridFunction(box, vals if d > 1 or vals.shape[-1] > 1 else vals[..., 0])
    f = as_drift(gf, d)
    f.grid = gf
    family._cache[n] = f
    return f


def base_drift(family: MollifierFamily):
    return as_drift(lambda t, x: family.base(x), family.d)


# -- strong convergence --------------------------------------------------------------


@dataclass
class ConvergenceTable:
    levels: list
    checkpoints: list
    distances: np.ndarray
    stderr: np.ndarray
    n_paths: int
    master_seed: int

    def decreasing(self, n_se: float = 2.0) -> np.ndarray:
        """Per checkpoint: each distance below its predecessor (up to ``n_se`` SE)."""
        dist, se = self.distances, self.stderr
        ok = dist[1:] < dist[:-1] + n_se * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
        return np.all(ok, axis=0)

    def final_over_first(self) -> np.ndarray:
        return self.distances[-1] / self.distances[0]

    def rows(self):
        out = []
        for i in range(len(self.levels) - 1):
            for j, c in enumerate(self.checkpoints):
                out.append((self.levels[i], self.levels[i + 1], c, self.distances[i, j],
                            self.stderr[i, j], self.n_paths, self.master_seed))
        return out

    def to_csv(self, path):
        return write_csv(path, ["level_a", "level_b", "t", "l2_distance", "stderr", "paths",
                                "master_seed"], self.rows())


def _l2_distance(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Root mean square distance over paths and its delta-method standard error."""
    sq = np.sum((a - b) ** 2, axis=-1)
    m = sq.mean(axis=0)
    se_m = sq.std(axis=0, ddof=1) / np.sqrt(sq.shape[0])
    rms = np.sqrt(m)
    se = np.where(rms > 0, se_m / (2.0 * np.where(rms > 0, rms, 1.0)), 0.0)
    return rms, se


def strong_convergence_study(family: MollifierFamily, levels, noise, x0, checkpoints
                             ) -> ConvergenceTable:
    """Coupled Euler solutions for ``b_n``, ``n`` in ``levels``, on shared noise.

    ``noise`` is one :class:`NoiseBatch` used for every level, or a list with
    one batch per level; in that case all batches must carry the same seeds.
    """
    levels = list(levels)
    if isinstance(noise, NoiseBatch):
        batches = [noise] * len(levels)
    else:
        batches = list(noise)
        if len(batches) != len(levels):
            raise InvalidArgument("one noise batch per level required")
        ref = batches[0]
        for nb in batches[1:]:
            if (nb.master_seed, nb.first_index, nb.n_paths) != (ref.master_seed, ref.first_index,
                                                                 ref.n_paths):
                raise InvalidArgument("noise seeds differ across levels; coupling is broken")
            if not np.array_equal(nb.increments, ref.increments):
                raise InvalidArgument("noise increments differ across levels")
    sols = [euler_batch(mollify(family, n), nb, x0, checkpoints=checkpoints)
            for n, nb in zip(levels, batches)]
    dist, se = [], []
    for a, b in zip(sols[:-1], sols[1:]):
        r, s = _l2_distance(a, b)
        dist.append(r)
        se.append(s)
    return ConvergenceTable(levels, list(checkpoints), np.array(dist), np.array(se),
                            batches[0].n_paths, batches[0].master_seed)


def uniqueness_check(drift, noise: NoiseBatch, x0, factors=(1, 2, 4, 8)) -> dict:
    """Same noise, same drift, different steps: ``E|X_T^{dt} - X_T^{fine}|^2``.

    The finest mesh is the one of ``noise``; each factor coarsens it.  Also
    reports the distance between two identical runs, which must be 0.
    """
    fine = euler_batch(drift, noise, x0)
    again = euler_batch(drift, noise, x0)
    rows = []
    for f in factors:
        if f == 1:
            continue
        xc = euler_batch(drift, noise.coarsen(f), x0)
        sq = np.sum((xc - fine) ** 2, axis=-1)
        rows.append((noise.dt * f, float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(sq.size))))
    return {"rows": rows, "identical_run_gap": float(np.max(np.abs(fine - again)))}


def level_switch_check(family: MollifierFamily, n_coarse: int, n_fine: int, noise: NoiseBatch,
                       x0, burn_in: float, checkpoints) -> dict:
    """Two coupled solutions that share the fine drift after a burn-in.

    ``X1`` uses ``b_{n_coarse}`` on ``[0, burn_in)`` and ``b_{n_fine}`` after;
    ``X2`` uses ``b_{n_fine}`` throughout.  Reports ``E|X1 - X2|^2`` at the
    checkpoints and the ratio ``E|X1_t - X2_t|^2 / int_0^t E|X1_s - X2_s|^2 ds``
    (trapezoid on the mesh) wherever the denominator is nonzero.
    """
    if n_coarse > n_fine:
        raise InvalidArgument("n_coarse must not exceed n_fine")
    bc, bf = mollify(family, n_coarse), mollify(family, n_fine)
    dt = noise.dt

    def switched(t, x):
        return bc(t, x) if t < burn_in - 1e-12 else bf(t, x)
    x1 = euler_batch(switched, noise, x0, record=True)
    x2 = euler_batch(bf, noise, x0, record=True)
    msd = np.sum((x1 - x2) ** 2, axis=-1).mean(axis=0)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (msd[1:] + msd[:-1]) * dt)])
    rows = []
    for c in checkpoints:
        k = int(round(c / dt))
        ratio = msd[k] / integral[k] if integral[k] > 0 else float("nan")
        rows.append((float(c), float(msd[k]), float(ratio)))
    return {"rows": rows, "msd": msd}


def export_paths(path, records, checkpoints=()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json_line(checkpoints) + "\n")
    return path
