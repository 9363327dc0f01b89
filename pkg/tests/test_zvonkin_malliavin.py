import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from levyzvonkin import Box, GridFunction, HorizonTooLarge, InvalidArgument, LevyModel
from levyzvonkin.simulate import MollifierFamily, euler_batch, sample_noise_batch
from levyzvonkin.zvonkin_malliavin import (MalliavinField, SecondMoments, SlobodeckijSpec,
                                           bound_growth, lemma13_bound_check, make_node_grid,
                                           malliavin_field, malliavin_u_recursion,
                                           malliavin_variational, pairwise_ratio,
                                           perturbed_differences, potential, potential_term,
                                           slobodeckij_functional, solve_zvonkin,
                                           zvonkin_residual)

M = LevyModel(1, 1.8)
BOX = Box(1, 8.0, 512)
T = 0.25


def sine_drift(box=BOX, amp=0.3):
    return GridFunction.from_callable(box, lambda x: amp * np.sin(x))


def zero_drift(t, x):
    return np.zeros_like(x)


@pytest.fixture(scope="module")
def paths():
    nb = sample_noise_batch(M, T, 16, 20, master_seed=0)
    return nb, euler_batch(sine_drift(), nb, 0.0, record=True)


def test_zero_drift_gives_zero_residual():
    b = GridFunction(BOX, np.zeros(BOX.shape))
    field = solve_zvonkin(M, b, T, beta=0.7, n_slices=8)
    nb = sample_noise_batch(M, T, 8, 5)
    X = euler_batch(b, nb, 0.0, record=True)
    assert np.all(zvonkin_residual(field, b, nb.mesh, X) == 0.0)


def test_residual_halves_with_the_mesh():
    b = sine_drift()
    res = []
    for n in (16, 32):
        field = solve_zvonkin(M, b, T, beta=0.7, n_slices=n)
        nb = sample_noise_batch(M, T, n, 20, master_seed=0)
        X = euler_batch(b, nb, 0.0, record=True)
        res.append(np.sqrt(np.mean(zvonkin_residual(field, b, nb.mesh, X) ** 2)))
    assert 1.4 < res[0] / res[1] < 2.8


def test_residual_on_a_single_path_and_two_dimensions():
    m2 = LevyModel(2, 1.8)
    box = Box(2, 6.0, 64)
    b = GridFunction(box, np.stack([0.2 * np.sin(box.points[..., 0]), np.zeros(box.shape)], -1))
    field = solve_zvonkin(m2, b, 0.1, beta=0.7, n_slices=4, check_residual=False, cT=0.5)
    nb = sample_noise_batch(m2, 0.1, 4, 3)
    X = euler_batch(b, nb, 0.0, record=True)
    R = zvonkin_residual(field, b, nb.mesh, X)
    assert R.shape == (3,) and np.all(R >= 0) and np.all(R < 1e-2)
    assert zvonkin_residual(field, b, nb.mesh, X[0]) == pytest.approx(R[0])


def test_variational_trivial_and_linear_cases():
    mesh = np.linspace(0.0, 1.0, 101)
    X = np.zeros((101, 1))
    D = malliavin_variational(zero_drift, mesh, X, 0.3, 0.4)
    assert np.all(D[:30] == 0.0) and np.all(D[30:] == 0.4)
    lin = lambda t, x: -x
    D = malliavin_variational(lin, mesh, X, 0.3, 0.4)
    assert D[-1, 0] == pytest.approx(0.4 * 0.99 ** 70, rel=1e-12)
    assert D[-1, 0] == pytest.approx(0.4 * np.exp(-0.7), rel=1e-2)
    Dl = malliavin_variational(lin, mesh, X, 0.3, 0.4, linearized=True,
                               grad_drift=lambda t, x: -np.ones(x.shape))
    assert np.allclose(Dl, D)
    assert not np.any(malliavin_variational(lin, mesh, X, 1.5, 0.4))
    with pytest.raises(InvalidArgument):
        malliavin_variational(lin, mesh, X, 0.305, 0.4)
    with pytest.raises(InvalidArgument):
        malliavin_variational(lin, mesh, X, 0.3, 0.4, linearized=True)
    with pytest.raises(InvalidArgument):
        perturbed_differences(lin, mesh, X, [3], [[1.2]])


def test_u_recursion_with_zero_drift_returns_the_mark():
    b = GridFunction(BOX, np.zeros(BOX.shape))
    field = solve_zvonkin(M, b, T, beta=0.7, n_slices=8)
    nb = sample_noise_batch(M, T, 8, 4)
    X = euler_batch(b, nb, 0.0, record=True)
    marks = np.array([[0.3], [-0.6]])
    D, diag = malliavin_u_recursion(field, b, nb.mesh, X, [2, 5], marks)
    assert np.allclose(D, marks[None], atol=1e-12)
    assert diag.contraction_estimate == 0.0


def test_u_recursion_agrees_with_perturbed_paths(paths):
    nb, X = paths
    b = sine_drift()
    field = solve_zvonkin(M, b, T, beta=0.7, n_slices=16)
    marks = np.array([[0.3], [-0.5]])
    D, diag = malliavin_u_recursion(field, b, nb.mesh, X, [4, 8], marks, return_history=True)
    Dp = perturbed_differences(b, nb.mesh, X, [4, 8], marks, keep_path=True)
    # before and at the perturbation time both routes are exact
    assert np.all(D[:, 0, :4] == 0.0) and np.allclose(D[:, 0, 4], 0.3)
    assert np.max(np.abs(D[:, :, -1] - Dp[:, :, -1])) < 2e-3
    assert diag.max_inner_residual < 1e-10 and diag.contraction_estimate < 0.5
    with pytest.raises(InvalidArgument):
        malliavin_u_recursion(field, b, nb.mesh[::2], X[:, ::2], [2], marks[:1])


def test_spec_validation():
    SlobodeckijSpec(0.25, 0.1, 0.25, 1.8)
    for bad in [(0.5, 0.1, 1, 1.8), (0.2, 0.0, 1, 1.8), (0.2, 0.3, 1, 1.8), (0.2, 0.1, 0, 1.8)]:
        with pytest.raises(InvalidArgument):
            SlobodeckijSpec(*bad)


def test_potential_shape():
    spec = SlobodeckijSpec(0.25, 0.1, 0.25, 1.8)
    p = potential(spec, np.array([0.0, 0.25, 0.75, 1.0]), 1)
    assert np.isinf(p[0]) and np.isinf(p[3])
    assert p[1] == pytest.approx(0.25 ** -2.9)
    assert p[2] == pytest.approx(2 ** 2.8 / 0.5)


def mark_field(grid, n_paths=3):
    """D = y at every node, the field of a driftless path."""
    vals = np.broadcast_to(grid.marks[None, None], (n_paths, grid.l.size) + grid.marks.shape)
    return MalliavinField(grid.tau, grid.l, grid.marks, np.array(vals))


def test_zero_field_has_zero_functional():
    grid = make_node_grid(1, T, n_l=4, n_r=6)
    spec = SlobodeckijSpec(0.25, 0.1, T, 1.8)
    zero = MalliavinField(T, grid.l, grid.marks, np.zeros((2, 4, 12, 1)))
    fv = slobodeckij_functional(SecondMoments.from_field(zero), grid, spec)
    assert fv.total == 0.0


@pytest.mark.parametrize("d", [1, 2])
def test_potential_term_of_the_mark_field(d):
    # E|D|^2 = |y|^2 so the term is tau * int p(y) |y|^2 dy, in closed form
    alpha, delta = 1.8, 0.1
    spec = SlobodeckijSpec(0.25, delta, T, alpha)
    grid = make_node_grid(d, T, n_l=3, n_r=5)
    S = 2.0 if d == 1 else 2.0 * np.pi
    a = alpha + delta
    inner = 0.5 ** (2 - a) / (2 - a)
    outer = sum(special.comb(d + 1, k) * (-1) ** k * 0.5 ** (k + 0.5) / (k + 0.5)
                for k in range(d + 2))
    exact = T * S * (inner + 2.0 ** (d + alpha) * outer)
    got = potential_term(SecondMoments.from_field(mark_field(grid)), grid, spec)
    assert got == pytest.approx(exact, rel=1e-8)


def test_pairwise_ratio_of_the_mark_field_is_at_most_two():
    grid = make_node_grid(1, T, n_l=4, n_r=6)
    assert pairwise_ratio(SecondMoments.from_field(mark_field(grid)), grid) <= 2.0


def test_bound_growth():
    assert bound_growth(0.0, 0.7) == 1.0
    ys = np.linspace(0, 1.9, 20)
    vals = bound_growth(ys, 0.7)
    assert np.all(np.diff(vals) > 0)
    assert bound_growth(2.04, 0.7) > 100 and np.isinf(bound_growth(3.0, 0.7))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_second_moments_merge_is_associative(seed):
    rng = np.random.default_rng(seed)
    parts = [MalliavinField(1.0, np.array([0.5]), np.zeros((3, 1)), rng.normal(size=(k, 1, 3, 1)))
             for k in (1, 2, 3)]
    a, b, c = (SecondMoments.from_field(p) for p in parts)
    left, right = a.merge(b).merge(c), a.merge(b.merge(c))
    assert left.n == right.n == 6
    assert np.allclose(left.gram, right.gram) and np.allclose(left.sq, right.sq)
    whole = MalliavinField(1.0, np.array([0.5]), np.zeros((3, 1)),
                           np.concatenate([p.values for p in parts]))
    assert np.allclose(SecondMoments.from_field(whole).pair_msd(), left.pair_msd())
    assert np.all(left.pair_msd() >= 0)


def test_field_does_not_anticipate(paths):
    nb, X = paths
    grid = make_node_grid(1, T, n_l=4, n_r=4, mesh=nb.mesh)
    mf = malliavin_field(sine_drift(), nb.mesh, X, grid, t_index=8)
    assert np.any(grid.l > mf.t) and mf.anticipation_gap() == 0.0
    assert malliavin_field(sine_drift(), nb.mesh, X, grid).anticipation_gap() == 0.0


def holder(x):
    x = x[..., 0]
    return np.sign(x) * np.minimum(np.abs(x), 1.0) ** 0.7


def test_bound_check_small_run():
    fam = MollifierFamily(lambda x: 0.3 * holder(x), 1, [4, 16])
    spec = SlobodeckijSpec(0.25, 0.05, T, 1.8)
    rep = lemma13_bound_check(M, fam, spec, beta=0.7, n_paths=40, n_steps=32, chunk=20)
    assert rep.anticipation_gap == 0.0
    assert all(np.isfinite(f.total) and f.total > 0 for f in rep.functional)
    assert rep.spread < 0.2
    assert len(rep.rows()) == 2


def test_bound_check_refuses_long_horizon():
    fam = MollifierFamily(lambda x: 5.0 * holder(x), 1, [4])
    spec = SlobodeckijSpec(0.25, 0.05, 20.0, 1.8)
    with pytest.raises(HorizonTooLarge) as info:
        lemma13_bound_check(M, fam, spec, beta=0.7, n_paths=4, n_steps=32)
    assert 0 < info.value.max_horizon < 20.0
