import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levyzvonkin import Box, GridFunction, InvalidArgument, LevyModel
from levyzvonkin.levy_model import eval_psi
from levyzvonkin.semigroup import (apply_semigroup, default_families, derivative_scaling_report,
                                   fit_loglog, holder_norm, holder_seminorm)

M = LevyModel(1, 1.8)
BOX = Box(1, 8.0, 1024)


def test_cosine_is_an_eigenfunction():
    # a frequency of the unpadded periodic grid is resolved exactly
    u = 2 * np.pi * 3 / (2 * BOX.halfwidth)
    phi = GridFunction.from_callable(BOX, lambda x: np.cos(u * x))
    out = apply_semigroup(M, 0.3, phi, pad_factor=1)
    exact = np.exp(-0.3 * eval_psi(M, u)) * np.cos(u * BOX.axis)
    assert np.max(np.abs(out.values - exact)) < 1e-10


def test_spectral_and_spatial_routes_agree():
    phi = GridFunction.from_callable(BOX, lambda x: np.minimum(np.abs(x) ** 0.5, 1.0))
    a = apply_semigroup(M, 0.2, phi)
    b = apply_semigroup(M, 0.2, phi, method="spatial")
    assert np.max(np.abs(a.values - b.values)) < 1e-5


def test_semigroup_law():
    phi = GridFunction.from_callable(BOX, lambda x: np.tanh(x))
    once = apply_semigroup(M, 0.3, phi)
    twice = apply_semigroup(M, 0.1, apply_semigroup(M, 0.2, phi))
    inner = BOX.interior_mask(2.0)
    assert np.max(np.abs(once.values - twice.values)[inner]) < 1e-5


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 1.0))
def test_constants_are_preserved(c, t):
    phi = GridFunction(BOX, np.full(BOX.shape, c))
    assert np.max(np.abs(apply_semigroup(M, t, phi).values - c)) < 1e-12 * max(1, abs(c))


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.01, 1.0))
def test_linearity(a, b, t):
    f = GridFunction.from_callable(BOX, np.tanh)
    g = GridFunction.from_callable(BOX, lambda x: np.exp(-x * x))
    lhs = apply_semigroup(M, t, GridFunction(BOX, a * f.values + b * g.values)).values
    rhs = a * apply_semigroup(M, t, f).values + b * apply_semigroup(M, t, g).values
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_contraction_in_sup_norm():
    phi = GridFunction.from_callable(BOX, lambda x: np.sign(x) * np.minimum(np.abs(x), 1.0))
    out = apply_semigroup(M, 0.5, phi)
    assert out.sup_norm() <= phi.sup_norm() + 1e-9


def test_time_zero_and_vector_fields():
    phi = GridFunction(BOX, np.stack([np.sin(BOX.axis), np.cos(BOX.axis)], axis=-1))
    assert np.array_equal(apply_semigroup(M, 0.0, phi).values, phi.values)
    out = apply_semigroup(M, 0.2, phi)
    single = apply_semigroup(M, 0.2, GridFunction(BOX, np.cos(BOX.axis)))
    assert np.max(np.abs(out.values[..., 1] - single.values)) < 1e-14
    with pytest.raises(InvalidArgument):
        apply_semigroup(M, -0.1, phi)


def test_holder_norm_known_values():
    box = Box(1, 4.0, 4096)
    phi = GridFunction.from_callable(box, lambda x: np.minimum(np.abs(x) ** 0.5, 1.0))
    # sup = 1 and the seminorm of |x|^(1/2) is 1 (attained at lag |x|)
    assert holder_norm(phi, 0.5) == pytest.approx(2.0, abs=1e-3)
    lin = GridFunction.from_callable(box, lambda x: x)
    # for a linear function the ratio grows with the lag: between the
    # largest dyadic lag and the box width
    assert np.sqrt(4.0) - 1e-9 <= holder_seminorm(lin, 0.5) <= np.sqrt(8.0) + 1e-9
    with pytest.raises(InvalidArgument):
        holder_norm(phi, 1.0)


def test_holder_norm_is_deterministic():
    phi = GridFunction.from_callable(BOX, np.sin)
    assert holder_norm(phi, 0.3, seed=4) == holder_norm(phi, 0.3, seed=4)


def test_fit_loglog_recovers_power():
    t = np.geomspace(0.1, 1, 8)
    slope, se, icpt, _ = fit_loglog(t, 3.0 * t ** -0.7)
    assert slope == pytest.approx(-0.7, abs=1e-12) and se < 1e-10
    assert np.exp(icpt) == pytest.approx(3.0)


def test_scaling_report_quick():
    times = np.geomspace(0.05, 1.0, 8)
    rep = derivative_scaling_report(M, default_families(1.8, 0.5), times, Box(1, 20.0, 8192))
    assert len(rep.rows) == 4
    assert rep.passed, [(r.family, r.norm, r.slope, r.expected) for r in rep.rows]
    with pytest.raises(InvalidArgument):
        derivative_scaling_report(M, default_families(1.8, 0.5), times[:3], BOX)
