import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg

from talenti_lab.fem import (
    CoefficientField,
    SolverConvergenceError,
    assemble_full,
    assemble_stiffness,
    cotan_laplacian,
    first_eigen,
    levy_gromov_diagnostic,
    lq_gradient_norm,
    lumped_mass,
    solve_poisson,
    superlevel_mass,
    superlevel_perimeter,
)
from talenti_lab.mesh import (
    DomainSpec,
    MeshError,
    SurfaceMesh,
    cap_domain,
    caps_domain,
    generate_icosphere,
    two_cap_domain,
)
from talenti_lab.model_space import ModelParams, iso_profile

NORTH = (0.0, 0.0, 1.0)


@pytest.mark.parametrize("s", [0, 1, 2, 3])
def test_icosphere_counts(s):
    m = generate_icosphere(s)
    assert m.n_vertices == 10 * 4**s + 2
    assert m.n_triangles == 20 * 4**s
    m.validate()
    assert math.fsum(m.vertex_measure) == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(np.linalg.norm(m.vertices, axis=1), 1.0)
    assert np.any(np.all(m.vertices == NORTH, axis=1))


def test_icosphere_radius_and_area():
    m = generate_icosphere(4, radius=2.0)
    m.validate()
    assert m.total_area == pytest.approx(4 * math.pi * 4.0, rel=2e-3)
    assert m.max_edge_length == pytest.approx(2 * generate_icosphere(4).max_edge_length)


def test_mesh_validation_errors():
    m = generate_icosphere(1)
    with pytest.raises(MeshError):
        SurfaceMesh(m.vertices, m.triangles[:-1]).validate()
    flipped = m.triangles.copy()
    flipped[0] = flipped[0, ::-1]
    with pytest.raises(MeshError):
        SurfaceMesh(m.vertices, flipped).validate()
    with pytest.raises(MeshError):
        SurfaceMesh(1.1 * m.vertices, m.triangles).validate()
    with pytest.raises(MeshError):
        SurfaceMesh(m.vertices, m.triangles + 1000)


def test_stiffness_matches_cotan_formula(ico3):
    K = assemble_full(ico3)
    L = cotan_laplacian(ico3)
    assert abs(K - L).max() <= 1e-12 * abs(L).max()
    assert abs(K - K.T).max() == 0.0
    np.testing.assert_allclose(K @ np.ones(ico3.n_vertices), 0.0, atol=1e-12)


@given(st.floats(0.1, 10.0))
def test_stiffness_scales_with_coefficient(c):
    m = generate_icosphere(2)
    K1 = assemble_full(m)
    Kc = assemble_full(m, CoefficientField.identity(m.n_triangles, c))
    assert abs(Kc - c * K1).max() <= 1e-12 * c * abs(K1).max()


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1.0), st.floats(1.0, 4.0))
def test_ellipticity_sandwich(seed, a, b):
    m = generate_icosphere(2)
    rng = np.random.default_rng(seed)
    coeff = CoefficientField.random(m.n_triangles, a, b, rng)
    K_id, K_h = assemble_full(m), assemble_full(m, coeff)
    x = rng.normal(size=m.n_vertices)
    e_id, e_h = x @ (K_id @ x), x @ (K_h @ x)
    assert coeff.alpha * e_id <= e_h * (1 + 1e-12)
    assert e_h <= coeff.beta * e_id * (1 + 1e-12)


def test_coefficient_validation():
    A = np.tile(np.eye(2), (4, 1, 1))
    A[0, 0, 1] = 0.1
    with pytest.raises(ValueError):
        CoefficientField(A, 1.0, 1.0)
    with pytest.raises(ValueError):
        CoefficientField(np.tile(2 * np.eye(2), (4, 1, 1)), 0.5, 1.0)
    with pytest.raises(ValueError):
        assemble_full(generate_icosphere(1), CoefficientField.identity(3))


def test_cap_mass_and_measure(ico4):
    dom = cap_domain(ico4, NORTH, 0.3)
    assert 0.29 <= dom.v <= 0.3
    assert math.fsum(dom.cell_weights) == pytest.approx(dom.v, abs=1e-14)
    assert dom.weighted(np.ones(ico4.n_vertices)).total_mass == pytest.approx(dom.v, abs=1e-14)
    assert np.all(dom.cell_weights[~dom.inside] == 0)
    assert not np.any(dom.interior & dom.boundary)


def test_domain_validation(ico3):
    with pytest.raises(MeshError):
        DomainSpec(ico3, np.ones(5, bool))
    lone = np.zeros(ico3.n_vertices, bool)
    lone[0] = True
    with pytest.raises(MeshError):
        DomainSpec(ico3, lone)
    with pytest.raises(MeshError):
        caps_domain(ico3, [NORTH, (0.0, 0.3, 0.95)], [0.1, 0.1])
    two = two_cap_domain(ico3)
    assert two.v <= 0.3
    assert two.inside[np.argmax(ico3.vertices[:, 2])] and two.inside[np.argmin(ico3.vertices[:, 2])]


def test_zero_load_gives_zero(ico3):
    dom = cap_domain(ico3, NORTH, 0.4)
    res = solve_poisson(dom, None, 0.0)
    assert np.all(res.u == 0.0)


def test_maximum_principle_and_monotonicity(ico4):
    big = cap_domain(ico4, NORTH, 0.5)
    small = cap_domain(ico4, NORTH, 0.25)
    assert np.all(big.inside[small.inside])
    rng = np.random.default_rng(7)
    f = rng.random(ico4.n_vertices)
    ub = solve_poisson(big, None, f).u
    us = solve_poisson(small, None, f).u
    assert ub.min() >= -1e-12
    assert np.all(us <= ub + 1e-10)
    assert np.all(ub[~big.interior] == 0.0)
    lam_b, _ = first_eigen(big)
    lam_s, _ = first_eigen(small)
    assert lam_s > lam_b


def test_hemisphere_center_value(ico4):
    dom = cap_domain(ico4, NORTH, 0.5)
    u = solve_poisson(dom, None, 2.0).u
    center = np.argmax(ico4.vertices[:, 2])
    assert u[center] == pytest.approx(2 * math.log(2), abs=5 * ico4.max_edge_length)


def test_eigen_dense_oracle():
    m = generate_icosphere(2)
    dom = cap_domain(m, NORTH, 0.4)
    lam, u = first_eigen(dom)
    K = assemble_stiffness(dom).toarray()
    M = np.diag(lumped_mass(dom))
    ref = linalg.eigh(K, M, eigvals_only=True)[0]
    assert lam == pytest.approx(ref, rel=1e-10)
    x = u[dom.interior_indices]
    assert x @ M @ x == pytest.approx(1.0)
    assert np.all(x >= -1e-12)


@given(st.floats(0.2, 5.0))
def test_eigen_scales_with_coefficient(c):
    m = generate_icosphere(2)
    dom = cap_domain(m, NORTH, 0.3)
    lam, _ = first_eigen(dom)
    lam_c, _ = first_eigen(dom, CoefficientField.identity(m.n_triangles, c))
    assert lam_c == pytest.approx(c * lam, rel=1e-9)


def test_eigen_two_cap_near_degenerate(ico3):
    lam, u = first_eigen(two_cap_domain(ico3))
    assert np.isfinite(lam) and lam > 0


def test_cg_failure_raises(ico3):
    from talenti_lab.fem import _cg

    K = assemble_stiffness(cap_domain(ico3, NORTH, 0.5))
    b = np.random.default_rng(0).random(K.shape[0])
    with pytest.raises(SolverConvergenceError):
        _cg(K, b, 1e-10, 2)


def test_gradient_integrals(ico4):
    z = ico4.vertices[:, 2]
    assert lq_gradient_norm(ico4, z, 2.0) == pytest.approx(2 / 3, abs=5e-3)
    assert lq_gradient_norm(ico4, z, 1.0) == pytest.approx(math.pi / 4, abs=5e-3)


def test_level_sets_of_height(ico4):
    z = ico4.vertices[:, 2]
    assert superlevel_perimeter(ico4, z, 0.0) == pytest.approx(0.5, abs=5e-3)
    assert superlevel_perimeter(ico4, z, 0.5) == pytest.approx(math.sqrt(3) / 4, abs=5e-3)
    assert superlevel_mass(ico4, z, 0.5) == pytest.approx(0.25, abs=5e-3)
    with pytest.warns(RuntimeWarning):
        assert superlevel_perimeter(ico4, z, 2.0) == 0.0


def test_levy_gromov_diagnostic(ico4):
    dom = cap_domain(ico4, NORTH, 0.5)
    u = solve_poisson(dom, None, 2.0).u
    p = ModelParams(1.0, 2.0)
    rows = levy_gromov_diagnostic(dom, u, lambda v: iso_profile(p, v), n_levels=6)
    assert len(rows) == 6
    # radial level sets are near-optimal: perimeter close to the model profile
    for t, mass, per, prof, margin in rows:
        assert 0 < mass < 0.5
        assert margin == pytest.approx(per - prof)
        assert abs(margin) <= 0.02
