import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from talenti_lab.model_space import ModelParams, eval_H, inv_H
from talenti_lab.rearrangement import (
    StepFunction,
    WeightedFunction,
    decreasing_rearrangement,
    distribution_function,
    hardy_littlewood_bound,
    lp_distance,
    lp_norm,
    sample_on_model,
    schwarz_symmetrize,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
weight = st.floats(1e-6, 1.0)


@st.composite
def cells(draw, min_size=1, max_size=64, distinct=False):
    n = draw(st.integers(min_size, max_size))
    vals = draw(st.lists(finite, min_size=n, max_size=n, unique=distinct))
    wts = np.array(draw(st.lists(weight, min_size=n, max_size=n)))
    total = draw(st.floats(0.05, 1.0))
    return WeightedFunction(np.array(vals), wts * (total / wts.sum()))


@given(cells())
def test_equimeasurable(u):
    s = decreasing_rearrangement(u)
    for t in np.concatenate([np.abs(u.values), [0.0], np.abs(u.values) * 0.5]):
        assert distribution_function(u, t) == s.superlevel_measure(t)


@given(cells())
def test_sharp_is_nonincreasing_left_continuous(u):
    s = decreasing_rearrangement(u)
    assert np.all(np.diff(s.values) < 0)  # ties merged
    assert s.total_mass == math.fsum(u.weights)
    # left continuity: value at each interior breakpoint is the step to its left
    for k in range(1, s.values.size):
        assert s(s.breakpoints[k]) == s.values[k - 1]
    assert s(0.0) == s.values[0]


@given(cells(distinct=True), st.sampled_from([1.0, 2.0, 3.5, math.inf]))
def test_lp_norm_exact_without_ties(u, p):
    assume(len(np.unique(np.abs(u.values))) == u.values.size)
    assert lp_norm(u, p) == lp_norm(decreasing_rearrangement(u), p)


@given(cells(), st.sampled_from([1.0, 2.0, 3.5, math.inf]))
def test_lp_norm_with_ties(u, p):
    # merged tie masses are re-rounded, so equality holds to a few ulps
    a, b = lp_norm(u, p), lp_norm(decreasing_rearrangement(u), p)
    assert b == pytest.approx(a, rel=1e-14, abs=1e-300)


@given(st.data())
def test_contraction(data):
    u = data.draw(cells())
    n = u.values.size
    other = np.array(data.draw(st.lists(finite, min_size=n, max_size=n)))
    w = WeightedFunction(other, u.weights)
    diff = WeightedFunction(np.abs(u.values) - np.abs(other), u.weights)
    su, sw = decreasing_rearrangement(u), decreasing_rearrangement(w)
    for p in (1.0, 2.0, math.inf):
        assert lp_distance(su, sw, p) <= lp_norm(diff, p) * (1 + 1e-12) + 1e-12


@given(cells(), st.data())
def test_hardy_littlewood(u, data):
    mask = np.array(data.draw(st.lists(st.booleans(), min_size=u.values.size, max_size=u.values.size)))
    m = math.fsum(u.weights[mask])
    lhs = math.fsum(np.abs(u.values[mask]) * u.weights[mask])
    assert lhs <= hardy_littlewood_bound(u, min(m, u.total_mass)) * (1 + 1e-12) + 1e-12


@given(cells())
def test_integral_and_cumulative_agree(u):
    s = decreasing_rearrangement(u)
    xs = np.linspace(0, s.total_mass, 17)
    np.testing.assert_allclose(s.cumulative(xs), [s.integral(x) for x in xs], rtol=1e-12, atol=1e-9)
    assert s.integral() == pytest.approx(lp_norm(u, 1.0), rel=1e-13)


@given(cells(max_size=16), st.sampled_from([ModelParams(1.0, 2.0), ModelParams(3.0, 4.0), ModelParams(0.7, 2.5)]))
def test_schwarz_equimeasurable(u, p):
    assume(u.total_mass < 1.0)
    star = schwarz_symmetrize(u, p)
    for t in np.abs(u.values):
        assert star.superlevel_measure(t) == pytest.approx(distribution_function(u, t), abs=1e-13)
    for q in (1.0, 2.0, math.inf):
        assert star.lp_norm(q) == pytest.approx(lp_norm(u, q), rel=1e-11)
    # radial and non-increasing
    rho = np.linspace(0, star.r_v, 50)
    assert np.all(np.diff(star(rho)) <= 0)


def test_schwarz_fixes_radial_profiles():
    p = ModelParams(1.0, 2.0)
    u = sample_on_model(lambda r: np.cos(r) + 2.0, p, 0.5, 512)
    star = schwarz_symmetrize(u, p)
    rho = inv_H(p, np.linspace(0.01, 0.49, 40))
    np.testing.assert_allclose(star(rho), np.cos(rho) + 2.0, atol=2.0 / 512)


def test_step_function_validation():
    with pytest.raises(ValueError):
        StepFunction(np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        StepFunction(np.array([0.0, 0.5, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        WeightedFunction(np.array([1.0]), np.array([-1.0]))
    with pytest.raises(ValueError):
        WeightedFunction(np.array([np.nan]), np.array([1.0]))
    with pytest.raises(ValueError):
        decreasing_rearrangement(WeightedFunction(np.array([1.0]), np.array([0.0])))
    with pytest.raises(ValueError):
        lp_norm(WeightedFunction(np.ones(2), np.ones(2)), 0.5)


def test_zero_weight_cells_ignored():
    u = WeightedFunction(np.array([5.0, 1.0, 3.0]), np.array([0.0, 0.25, 0.25]))
    s = decreasing_rearrangement(u)
    np.testing.assert_array_equal(s.values, [3.0, 1.0])
    np.testing.assert_array_equal(s.breakpoints, [0.0, 0.25, 0.5])
    assert lp_norm(u, math.inf) == 3.0


def test_sample_on_model_masses():
    p = ModelParams(1.0, 2.0)
    u = sample_on_model(np.cos, p, 0.3, 64)
    assert u.total_mass == pytest.approx(0.3, abs=1e-15)
    assert eval_H(p, inv_H(p, 0.3)) == pytest.approx(0.3)
