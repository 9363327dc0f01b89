import numpy as np
import pytest

from levyzvonkin import Box, GridFunction, HorizonTooLarge, InvalidArgument, LevyModel
from levyzvonkin.kolmogorov import (drift_norm, estimate_cT, k2_constant, max_admissible_horizon,
                                    solve_backward, solve_forward)
from levyzvonkin.levy_model import eval_psi

M = LevyModel(1, 1.8)
BOX = Box(1, 8.0, 512)
# a frequency of the periodic grid, so padding by constants is the only error source
U = 2 * np.pi * 4 / (2 * BOX.halfwidth)


def cosine(box=BOX):
    return GridFunction.from_callable(box, lambda x: np.cos(U * x))


def duhamel(t):
    psi = eval_psi(M, U)
    return (1.0 - np.exp(-t * psi)) / psi


def test_forward_matches_duhamel_formula():
    sol = solve_forward(M, cosine(), 0.4, n_slices=4, steps_per_slice=4, pad_factor=1)
    for j, t in enumerate(sol.times):
        exact = duhamel(t) * np.cos(U * BOX.axis)
        assert np.max(np.abs(sol.u.values[j] - exact)) < 1e-10
    g = sol.grad_u.values[-1][..., 0]
    assert np.max(np.abs(g + duhamel(0.4) * U * np.sin(U * BOX.axis))) < 1e-8
    assert sol.residuals["pde_max_rel"] < 1e-2


def test_backward_without_drift_is_time_reversed_duhamel():
    zero = GridFunction(BOX, np.zeros(BOX.shape))
    T = 0.3
    sol = solve_backward(M, zero, cosine(), T, beta=0.5, n_slices=3, steps_per_slice=4,
                         pad_factor=1)
    assert np.all(sol.u.values[-1] == 0.0)
    for j, t in enumerate(sol.times):
        exact = duhamel(T - t) * np.cos(U * BOX.axis)
        assert np.max(np.abs(sol.u.values[j] - exact)) < 1e-9
    # with no drift the first Picard sweep is already the fixed point
    assert sol.picard_diffs[-1] < 1e-6 * sol.diagnostics["phi_holder"]


def test_zero_source_gives_zero_solution():
    b = GridFunction.from_callable(BOX, lambda x: 0.1 * np.sin(x))
    zero = GridFunction(BOX, np.zeros(BOX.shape))
    sol = solve_backward(M, b, zero, 0.2, beta=0.5, cT=0.1)
    assert not np.any(sol.u.values) and not np.any(sol.grad_u.values)


def test_backward_with_drift_contracts_and_has_small_residual():
    # the residual of a cusp source is limited by the spatial mesh
    box = Box(1, 8.0, 1024)
    b = GridFunction.from_callable(box, lambda x: 0.3 * np.sin(x))
    phi = GridFunction.from_callable(box, lambda x: np.minimum(np.abs(x) ** 0.7, 1.0))
    sol = solve_backward(M, b, phi, 0.25, beta=0.7, n_slices=4, steps_per_slice=4)
    assert sol.contraction_ok
    assert all(r < 0.55 for r in sol.picard_ratios)
    assert sol.residuals["pde_max_rel"] < 1e-2
    assert np.all(sol.u.values[-1] == 0.0)


def test_horizon_too_large_reports_admissible_horizon():
    b = GridFunction.from_callable(BOX, lambda x: 5.0 * np.sin(x))
    with pytest.raises(HorizonTooLarge) as info:
        solve_backward(M, b, cosine(), 50.0, beta=0.7)
    tmax = info.value.max_horizon
    assert 0 < tmax < 50.0
    bnorm = drift_norm(b, 0.7)
    assert 2 * estimate_cT(M, [tmax], 0.7, BOX).C[0] * bnorm <= 0.5
    assert max_admissible_horizon(M, bnorm, 0.7, tmax, BOX) == tmax


def test_cT_is_monotone_in_the_horizon():
    table = estimate_cT(M, np.geomspace(1e-3, 1.0, 6), 0.7)
    assert table.monotone()
    assert np.all(table.C > 0)
    assert k2_constant(M, 0.1, 0.7) > 0


def test_invalid_arguments():
    zero = GridFunction(BOX, np.zeros(BOX.shape))
    with pytest.raises(InvalidArgument):
        solve_forward(M, cosine(), 0.0)
    with pytest.raises(InvalidArgument):
        solve_backward(M, zero, cosine(), 0.1, beta=1.2)
    with pytest.raises(InvalidArgument):
        solve_forward(LevyModel(2, 1.5), cosine(), 0.1)
    with pytest.raises(InvalidArgument):
        estimate_cT(M, [0.0], 0.5)
    with pytest.warns(RuntimeWarning):
        solve_backward(M, zero, cosine(), 0.1, beta=0.1, n_slices=1, steps_per_slice=2,
                       pad_factor=1)
