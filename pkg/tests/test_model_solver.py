import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize, sparse
from scipy.sparse import linalg as splinalg

from talenti_lab.model_solver import (
    constant_sharp,
    integral_of_w,
    model_first_eigenvalue,
    model_gradient_lq_norm,
    solve_model_poisson,
    sobolev_c1,
    sobolev_c2,
    torsional_rigidity_model,
    weak_form_residual,
)
from talenti_lab.model_space import ModelParams, eval_h, eval_H, inv_H
from talenti_lab.rearrangement import StepFunction

LN2 = math.log(2.0)
SPHERE = ModelParams(1.0, 2.0)


@pytest.fixture(scope="module")
def hemi():
    return solve_model_poisson(SPHERE, constant_sharp(2.0, 0.5), 0.5, 1.0, 2048)


def test_hemisphere_stress_function(hemi):
    assert hemi.w[0] == pytest.approx(2 * LN2, abs=1e-10)
    exact = 4 * np.log(math.sqrt(2) * np.cos(hemi.grid / 2))
    np.testing.assert_allclose(hemi.w, exact, atol=1e-10)
    np.testing.assert_allclose(hemi.w_prime, -2 * np.tan(hemi.grid / 2), atol=1e-12)
    assert hemi.route_gap <= 1e-10
    assert hemi.w[-1] == 0.0


def test_weak_form(hemi):
    for c, a in [(0.3, 0.2), (0.8, 0.5), (1.2, 0.3)]:
        phi = lambda r: np.where(np.abs(r - c) < a, (1 - ((r - c) / a) ** 2) ** 3, 0.0)
        dphi = lambda r: np.where(np.abs(r - c) < a, -6 * (r - c) / a**2 * (1 - ((r - c) / a) ** 2) ** 2, 0.0)
        assert weak_form_residual(hemi, phi, dphi) <= 1e-8


def test_torsion_closed_form():
    assert torsional_rigidity_model(SPHERE, 0.5) == pytest.approx(2 * LN2 - 1, abs=1e-10)


@given(st.floats(0.1, 10.0))
def test_alpha_scaling(alpha):
    f = StepFunction(np.array([0.0, 0.1, 0.25]), np.array([3.0, 1.0]))
    base = solve_model_poisson(SPHERE, f, 0.25, 1.0, 64)
    scaled = solve_model_poisson(SPHERE, f, 0.25, alpha, 64)
    np.testing.assert_allclose(scaled.w * alpha, base.w, rtol=1e-12, atol=1e-14)


@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_linearity(a, b):
    bp = np.array([0.0, 0.05, 0.2, 0.3])
    f1 = StepFunction(bp, np.array([2.0, 1.0, 0.5]))
    f2 = StepFunction(bp, np.array([1.0, 1.0, 0.0]))
    fs = StepFunction(bp, a * f1.values + b * f2.values + 1e-300 * np.array([2, 1, 0]))
    p = ModelParams(3.0, 4.0)
    w1 = solve_model_poisson(p, f1, 0.3, 1.0, 64).w
    w2 = solve_model_poisson(p, f2, 0.3, 1.0, 64).w
    ws = solve_model_poisson(p, fs, 0.3, 1.0, 64).w
    np.testing.assert_allclose(ws, a * w1 + b * w2, rtol=1e-10, atol=1e-12)


@st.composite
def step_data(draw):
    n = draw(st.integers(1, 6))
    v = draw(st.floats(0.05, 0.95))
    cuts = np.sort(draw(st.lists(st.floats(0.01, 0.99), min_size=n - 1, max_size=n - 1, unique=True)))
    bp = np.concatenate([[0.0], v * cuts, [v]])
    vals = np.sort(draw(st.lists(st.floats(0.0, 10.0), min_size=n, max_size=n)))[::-1]
    return StepFunction(bp, vals)


@given(
    step_data(),
    st.sampled_from([ModelParams(1.0, 2.0), ModelParams(1.0, 3.0), ModelParams(3.0, 4.0), ModelParams(0.5, 1.5), ModelParams(2.0, 6.5)]),
    st.sampled_from([16, 64, 257]),
)
def test_routes_agree(f, p, n_grid):
    # raises when the radial and mass representations disagree
    sol = solve_model_poisson(p, f, f.total_mass, 1.0, n_grid)
    assert np.all(np.diff(sol.w) <= 1e-15 * max(1.0, sol.w[0]))
    assert np.all(sol.w >= 0)


def test_monotone_in_data():
    p = ModelParams(1.0, 3.0)
    small = solve_model_poisson(p, constant_sharp(1.0, 0.4), 0.4, 1.0, 128)
    big = solve_model_poisson(p, StepFunction(np.array([0.0, 0.1, 0.4]), np.array([4.0, 1.0])), 0.4, 1.0, 128)
    assert np.all(big.w >= small.w)
    assert np.all(np.diff(small.w) <= 0)


def test_gradient_l1_oracle(hemi):
    # int |w'| dm = int_0^v 2 xi / I(xi) = 2 int_0^v sqrt(xi/(1-xi))
    assert model_gradient_lq_norm(hemi, 1.0) == pytest.approx(math.pi / 2 - 1, abs=1e-9)
    # L^2: int w'^2 dm = int w f dm = 2 int w dm = 2 T
    assert model_gradient_lq_norm(hemi, 2.0) == pytest.approx(2 * (2 * LN2 - 1), abs=1e-9)
    assert integral_of_w(hemi) == pytest.approx(2 * LN2 - 1, abs=1e-10)
    with pytest.raises(ValueError):
        model_gradient_lq_norm(hemi, 3.0)


def _fd_torsion(p, v, n):
    """Conservative finite differences for -(h w')' = 2 h on [0, r_v], w(r_v) = 0."""
    r_v = float(inv_H(p, v))
    dx = r_v / n
    x = np.arange(n) * dx
    hm = np.array([eval_h(p, (k + 0.5) * dx) for k in range(n)])
    diag = hm.copy()
    diag[1:] += hm[:-1]
    A = sparse.diags([diag, -hm[:-1], -hm[:-1]], [0, 1, -1], format="csc") / dx**2
    lo = np.clip(x - 0.5 * dx, 0, None)
    mass = np.array([eval_H(p, b) - eval_H(p, a) for a, b in zip(lo, x + 0.5 * dx)]) / dx
    w = splinalg.spsolve(A, 2.0 * mass)
    return float(np.dot(w, mass) * dx)


def test_torsion_against_finite_differences():
    p = ModelParams(1.0, 3.0)
    coarse, fine = _fd_torsion(p, 0.4, 1000), _fd_torsion(p, 0.4, 2000)
    ref = (4 * fine - coarse) / 3
    assert torsional_rigidity_model(p, 0.4) == pytest.approx(ref, rel=1e-4)


@pytest.mark.parametrize("v", [0.25, 0.5, 0.9])
def test_c1_sphere(v):
    assert sobolev_c1(SPHERE, v, math.inf) == pytest.approx(-math.log1p(-v), abs=1e-10)
    assert sobolev_c1(SPHERE, v, 2.0) == pytest.approx(2 * math.atanh(math.sqrt(v)), rel=1e-10)


def test_c2_fubini():
    # K=3, N=4: unit-speed sin^3, H(t) = (2 - 3 cos t + cos^3 t) / 4
    p = ModelParams(3.0, 4.0)
    H = lambda t: (2 - 3 * math.cos(t) + math.cos(t) ** 3) / 4
    iso = lambda x: 0.75 * math.sin(optimize.brentq(lambda t: H(t) - x, 0, math.pi, xtol=1e-15)) ** 3
    # q = 1: int_0^v int_s^v g = int_0^v xi g(xi), g = xi^{1/2} / I^2
    ref, _ = integrate.quad(lambda x: x * math.sqrt(x) / iso(x) ** 2, 0, 0.3, epsabs=1e-14, epsrel=1e-13, limit=200)
    assert sobolev_c2(p, 0.3, 2.0, 1.0) == pytest.approx(ref, rel=1e-8)


def test_sobolev_exponent_ranges():
    with pytest.raises(ValueError):
        sobolev_c1(SPHERE, 0.5, 1.0)  # p must exceed N/2
    with pytest.raises(ValueError):
        sobolev_c2(ModelParams(3.0, 4.0), 0.3, 3.0, 1.0)  # p > N/2
    with pytest.raises(ValueError):
        sobolev_c2(ModelParams(3.0, 8.0), 0.3, 2.0, 5.0)  # q(1/p - 2/N) >= 1
    with pytest.raises(ValueError):
        sobolev_c1(SPHERE, 1.0, math.inf)


def _shooting_eigenvalue(p, v):
    r_v = float(inv_H(p, v))
    s, n = p.scale, p.N

    def end_value(lam):
        eps = 1e-6 * r_v
        y0 = [1 - lam * eps**2 / (2 * n), -lam * eps / n]
        rhs = lambda t, y: [y[1], -(n - 1) * s / math.tan(s * t) * y[1] - lam * y[0]]
        sol = integrate.solve_ivp(rhs, (eps, r_v), y0, rtol=1e-12, atol=1e-13, method="DOP853")
        return sol.y[0, -1]

    # first sign change of w(r_v; lambda) brackets the ground state
    lams = np.linspace(0.1, 40.0, 200) / r_v**2
    vals = [end_value(x) for x in lams]
    k = next(i for i in range(len(vals) - 1) if vals[i] * vals[i + 1] < 0)
    return optimize.brentq(end_value, lams[k], lams[k + 1], xtol=1e-13)


@pytest.mark.parametrize("K,N,v", [(1.0, 2.0, 0.5), (1.0, 3.0, 0.3), (3.0, 4.0, 0.6)])
def test_eigenvalue_shooting(K, N, v):
    p = ModelParams(K, N)
    assert model_first_eigenvalue(p, v, 1024) == pytest.approx(_shooting_eigenvalue(p, v), rel=1e-6)


def test_eigenvalue_hemisphere_and_scaling():
    assert model_first_eigenvalue(SPHERE, 0.5) == pytest.approx(2.0, abs=1e-6)
    # doubling K halves lengths, so eigenvalues double
    a = model_first_eigenvalue(ModelParams(1.0, 3.0), 0.3, 512)
    b = model_first_eigenvalue(ModelParams(2.0, 3.0), 0.3, 512)
    assert b == pytest.approx(2 * a, rel=1e-10)


def test_input_validation():
    with pytest.raises(ValueError):
        solve_model_poisson(SPHERE, constant_sharp(1.0, 0.5), 0.4)
    with pytest.raises(ValueError):
        solve_model_poisson(SPHERE, constant_sharp(1.0, 0.5), 0.5, alpha=0.0)
    with pytest.raises(ValueError):
        model_first_eigenvalue(SPHERE, 1.0)
