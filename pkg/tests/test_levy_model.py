import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from levyzvonkin import Box, GridFunction, InvalidArgument, LevyModel, OutOfDomain
from levyzvonkin.levy_model import (apply_generator, eval_psi, eval_psi_scaled, eval_psi_tilde,
                                    generator_on_grid, radial_rule)


def psi_oracle(d, alpha, r):
    """Independent radial integral with the singular weight handled by QUADPACK."""
    if d == 1:
        g = lambda s: 2.0 * (1.0 - np.cos(s))
        limit0 = r * r
    else:
        g = lambda s: 2.0 * np.pi * (1.0 - special.j0(s))
        limit0 = np.pi * r * r / 2.0
    f = lambda y: g(r * y) / y ** 2 if y > 0 else limit0
    return integrate.quad(f, 0.0, 1.0, weight="alg", wvar=(1.0 - alpha, 0.0), limit=2000)[0]


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("alpha", [1.05, 1.2, 1.5, 1.8])
@pytest.mark.parametrize("r", [0.3, 2.0, 17.0, 29.9, 30.1, 250.0, 3000.0])
def test_psi_matches_quadrature_oracle(d, alpha, r):
    m = LevyModel(d, alpha)
    u = r if d == 1 else [r, 0.0]
    assert eval_psi(m, u) == pytest.approx(psi_oracle(d, alpha, r), rel=1e-8)


def test_psi_zero_at_origin():
    for d in (1, 2):
        assert eval_psi(LevyModel(d, 1.5), 0.0 if d == 1 else [0.0, 0.0]) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 500.0), st.floats(0.0, 2 * np.pi), st.sampled_from([1.1, 1.5, 1.9]))
def test_psi_nonnegative_even_and_isotropic(r, theta, alpha):
    m1, m2 = LevyModel(1, alpha), LevyModel(2, alpha)
    assert eval_psi(m1, r) >= 0.0
    assert eval_psi(m1, r) == eval_psi(m1, -r)
    rot = [r * np.cos(theta), r * np.sin(theta)]
    assert eval_psi(m2, rot) == pytest.approx(eval_psi(m2, [r, 0.0]), rel=1e-12, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(0.05, 200.0))
def test_scaled_exponent_is_rescaled_psi(t, r):
    m = LevyModel(1, 1.7)
    assert eval_psi_scaled(m, t, r) == pytest.approx(t * eval_psi(m, t ** (-1 / 1.7) * r),
                                                     rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0), st.floats(0.01, 1e3))
def test_scaled_exponent_dominates_tilde(t1, t2, r):
    t, T = min(t1, t2), max(t1, t2)
    m = LevyModel(1, 1.8)
    assert eval_psi_scaled(m, t, r) >= eval_psi_tilde(m, T, r) - 1e-8


def test_bad_arguments():
    m = LevyModel(1, 1.5)
    with pytest.raises(InvalidArgument):
        eval_psi_scaled(m, 0.0, 1.0)
    with pytest.raises(InvalidArgument):
        eval_psi_tilde(m, -1.0, 1.0)
    with pytest.raises(InvalidArgument):
        eval_psi(m, np.nan)
    with pytest.raises(InvalidArgument):
        eval_psi(LevyModel(2, 1.5), [1.0, 2.0, 3.0])
    with pytest.raises(InvalidArgument):
        LevyModel(3, 1.5)
    with pytest.raises(InvalidArgument):
        LevyModel(1, 2.0)
    with pytest.raises(InvalidArgument):
        LevyModel(1, 0.6)


@pytest.mark.parametrize("d", [1, 2])
def test_second_moment_and_jump_rate(d):
    m = LevyModel(d, 1.4)
    S = 2.0 if d == 1 else 2.0 * np.pi
    # int_{|y| <= r} y_1^2 nu(dy) = (S / d) int_0^r s^{1 - alpha} ds
    assert m.second_moment(0.5) == pytest.approx(S / d * 0.5 ** 0.6 / 0.6, rel=1e-12)
    assert m.jump_rate(0.1) == pytest.approx(S * integrate.quad(lambda s: s ** -2.4, 0.1, 1)[0],
                                             rel=1e-10)


def test_radial_rule_integrates_weight():
    m = LevyModel(1, 1.3)
    nodes, w = radial_rule(m, 0.01, 0.05)
    assert np.all((nodes > 0.01) & (nodes < 1.0))
    exact = (0.01 ** -1.3 - 1.0) / 1.3
    assert w.sum() == pytest.approx(exact, rel=1e-7)
    assert (w * nodes ** 2).sum() == pytest.approx((1 - 0.01 ** 0.7) / 0.7, rel=1e-10)


@pytest.mark.parametrize("alpha", [1.2, 1.8])
def test_generator_on_cosine_1d(alpha):
    m = LevyModel(1, alpha)
    box = Box(1, 2.5, 2048)
    for u in (0.7, 2.3, 5.0):
        f = GridFunction.from_callable(box, lambda x: np.cos(u * x))
        x = np.array([-0.8, 0.1, 0.9])
        got = apply_generator(m, f, x)
        assert np.max(np.abs(got + eval_psi(m, u) * np.cos(u * x))) <= 1e-5 * eval_psi(m, u)


def test_generator_of_constant_is_zero_and_needs_margin():
    m = LevyModel(1, 1.5)
    box = Box(1, 4.0, 256)
    f = GridFunction(box, np.full(box.shape, 3.0))
    assert np.max(np.abs(apply_generator(m, f, np.array([0.0, 1.5])))) < 1e-12
    with pytest.raises(OutOfDomain):
        apply_generator(m, f, np.array([3.5]))
    mask, vals = generator_on_grid(m, f)
    assert np.all(np.isnan(vals[~mask])) and np.max(np.abs(vals[mask])) < 1e-12


@pytest.mark.parametrize("d, n", [(1, 512), (2, 128)])
def test_grid_generator_matches_pointwise_quadrature(d, n):
    m = LevyModel(d, 1.8)
    box = Box(d, 6.0, n)
    pts = box.points if d > 1 else box.axis[:, None]
    f = GridFunction(box, np.cos(1.3 * pts[..., 0]) * np.exp(-0.1 * np.sum(pts ** 2, axis=-1)))
    mask, vals = generator_on_grid(m, f)
    idx = np.argwhere(mask)
    sel = tuple(idx[:: max(1, len(idx) // 200)].T)
    ref = apply_generator(m, f, pts[sel])
    # the two routes differ only in the spline end conditions
    assert np.max(np.abs(vals[sel] - ref)) < 1e-5 * np.max(np.abs(ref))
