import numpy as np
import pytest
from scipy import linalg

from fraccal.dnmap import raised_cosine
from fraccal.kernels import Kernel, build_finite_propagation, build_prescribed_decay, gaussian_kernel, l2_operator_norm
from fraccal.solver import (
    DirichletProblem,
    SolverError,
    bilinear_form,
    coercivity_audit,
    poisson,
    solve_dirichlet,
    stability_constant,
    wellposedness_check,
)
from fraccal.torus import Field, GridMismatchError, GridSpec, sobolev_gram, sobolev_norm


@pytest.fixture
def setup(small_grid, small_regions):
    omega = small_regions[0]
    return small_grid, omega


def random_on(grid, mask, rng):
    return Field(grid, np.where(mask.member, rng.standard_normal(grid.N), 0.0))


def test_zero_data_gives_zero(setup):
    grid, omega = setup
    p = DirichletProblem(grid, 0.5, omega, Kernel.zero(grid))
    rep = solve_dirichlet(p, Field.zeros(grid), Field.zeros(grid))
    assert not np.any(rep.u.values)


@pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
def test_manufactured_solution(setup, rng, s):
    grid, omega = setup
    K = build_prescribed_decay(grid, lambda r: 0.5 * np.exp(-r)) + Kernel(grid, 0.05 * rng.standard_normal((grid.N, grid.N)))
    p = DirichletProblem(grid, s, omega, K)
    u_star = Field(grid, rng.standard_normal(grid.N))
    F = p.apply_operator(u_star)
    rep = solve_dirichlet(p, u_star, F)
    assert np.linalg.norm(rep.u.values - u_star.values) <= 1e-9 * np.linalg.norm(u_star.values)
    assert rep.exterior_mismatch == 0.0
    assert rep.interior_residual < 1e-10


def test_bilinear_form_matches_strong_form(setup, rng):
    grid, omega = setup
    p = DirichletProblem(grid, 0.5, omega, gaussian_kernel(grid, 0.8, 0.3))
    u, v = Field(grid, rng.standard_normal(grid.N)), Field(grid, rng.standard_normal(grid.N))
    assert bilinear_form(p, u, v) == pytest.approx(grid.h * v.values @ p.strong_matrix @ u.values, rel=1e-10)


def test_bilinear_form_symmetric_without_perturbation(setup, rng):
    grid, omega = setup
    p = DirichletProblem(grid, 0.4, omega, Kernel.zero(grid))
    u, v = Field(grid, rng.standard_normal(grid.N)), Field(grid, rng.standard_normal(grid.N))
    assert abs(bilinear_form(p, u, v) - bilinear_form(p, v, u)) <= 1e-12 * (1 + abs(bilinear_form(p, u, v)))


def test_bilinear_form_single_mode(setup):
    grid, omega = setup
    k, s = 6, 0.5
    u = Field(grid, np.sin(np.pi * k / grid.L * grid.x))
    p = DirichletProblem(grid, s, omega, Kernel.zero(grid))
    assert bilinear_form(p, u, u) == pytest.approx((np.pi * k / grid.L) ** (2 * s) * u.l2_norm() ** 2, rel=1e-12)


def test_bilinear_form_bounded(setup, rng):
    grid, omega = setup
    K = Kernel(grid, rng.standard_normal((grid.N, grid.N)) / grid.N)
    p = DirichletProblem(grid, 0.5, omega, K)
    norm = l2_operator_norm(K)
    for _ in range(20):
        u, v = Field(grid, rng.standard_normal(grid.N)), Field(grid, rng.standard_normal(grid.N))
        bound = (1 + norm) * sobolev_norm(u, 0.5) * sobolev_norm(v, 0.5)
        assert abs(bilinear_form(p, u, v)) <= bound * (1 + 1e-6)


def test_wellposedness_and_singular_shift(setup):
    grid, omega = setup
    p0 = DirichletProblem(grid, 0.5, omega, Kernel.zero(grid))
    assert wellposedness_check(p0).ok
    lam1 = linalg.eigvalsh(p0.interior_block)[0]
    bad = Kernel(grid, -lam1 * np.eye(grid.N) / grid.h)
    p_bad = DirichletProblem(grid, 0.5, omega, bad)
    rep = wellposedness_check(p_bad)
    assert not rep.ok and rep.min_singular_value < 1e-10 * rep.block_norm
    with pytest.raises(SolverError, match="singular"):
        solve_dirichlet(p_bad, Field.zeros(grid), Field.zeros(grid))
    # continuation from Psi = 0 to the singular shift
    ts = np.linspace(0, 1, 21)
    sv = np.array([wellposedness_check(p0.with_kernel(bad.scaled(t))).min_singular_value for t in ts])
    assert np.all(sv[:-1] > 0)
    assert np.all(np.abs(np.diff(sv)) <= abs(lam1) * (ts[1] - ts[0]) * (1 + 1e-9))


def test_coercivity_zero_perturbation(setup):
    grid, omega = setup
    rep = coercivity_audit(DirichletProblem(grid, 0.5, omega, Kernel.zero(grid)))
    assert rep.c0_hat > 0 and rep.c1_used == 0.0


@pytest.mark.parametrize("make", [
    lambda g: build_finite_propagation(g, 1.0, lambda d: 0.2 * np.ones_like(d)),
    lambda g: build_prescribed_decay(g, lambda r: 0.9 * np.exp(-r)),
    lambda g: gaussian_kernel(g, 0.5, -0.3),
])
def test_coercivity_inequality_on_random_fields(setup, rng, make):
    grid, omega = setup
    p = DirichletProblem(grid, 0.5, omega, make(grid))
    rep = coercivity_audit(p)
    assert rep.c0_hat > 0
    i = p.interior
    S = sobolev_gram(grid, 0.5)[np.ix_(i, i)]
    for _ in range(200):
        v = rng.standard_normal(i.size)
        lhs = grid.h * v @ p.interior_block @ v + rep.c1_used * grid.h * v @ v
        rhs = rep.c0_hat * v @ S @ v
        assert lhs >= rhs - 1e-9 * abs(rhs)


def test_poisson_only_reads_exterior(setup, rng):
    grid, omega = setup
    p = DirichletProblem(grid, 0.5, omega, gaussian_kernel(grid, 1.0, 0.2))
    f = Field(grid, rng.standard_normal(grid.N))
    g = Field(grid, np.where(omega.member, rng.standard_normal(grid.N), f.values))
    assert np.allclose(poisson(p, f).values, poisson(p, g).values, atol=1e-12, rtol=0)


def test_nonlocal_coupling_reaches_interior(setup):
    grid, omega = setup
    p = DirichletProblem(grid, 0.5, omega, Kernel.zero(grid))
    f = Field(grid, raised_cosine(grid, 7.0, 1.0))
    u = poisson(p, f)
    assert np.abs(u.values[omega.member]).max() > 1e-8 * f.l2_norm()


def test_stability_constant_is_stable(setup, rng):
    grid, omega = setup
    p = DirichletProblem(grid, 0.5, omega, build_prescribed_decay(grid, lambda r: 0.5 * np.exp(-r)))
    consts = []
    for _ in range(50):
        c = rng.uniform(2.0, 8.0)
        f = Field(grid, rng.normal() * raised_cosine(grid, c, 1.0))
        F = Field(grid, np.where(omega.member, rng.standard_normal(grid.N), 0.0))
        consts.append(stability_constant(p, f, F))
    consts = np.array(consts)
    assert np.all(np.isfinite(consts)) and consts.max() > 0
    assert consts[:25].max() >= 0.8 * consts.max()


def test_problem_validation(setup):
    grid, omega = setup
    with pytest.raises(ValueError):
        DirichletProblem(grid, 1.2, omega, Kernel.zero(grid))
    with pytest.raises(GridMismatchError):
        DirichletProblem(grid, 0.5, omega, Kernel.zero(GridSpec(10.0, 64)))
    with pytest.raises(ValueError):
        DirichletProblem(grid, 0.5, ~omega | omega, Kernel.zero(grid))


def test_adjoint_transposes_kernel(setup, rng):
    grid, omega = setup
    K = Kernel(grid, rng.standard_normal((grid.N, grid.N)))
    p = DirichletProblem(grid, 0.5, omega, K)
    assert np.array_equal(p.adjoint().kernel.K, K.K.T)


def test_weak_and_strong_forms_agree(setup, rng):
    grid, omega = setup
    K = build_prescribed_decay(grid, lambda r: 0.5 * np.exp(-r))
    p = DirichletProblem(grid, 0.4, omega, K)
    u = Field(grid, rng.standard_normal(grid.N))
    Au = p.apply_operator(u).values
    scale = np.abs(Au).max() * grid.h
    for j in rng.choice(grid.N, 10, replace=False):
        e = np.zeros(grid.N)
        e[j] = 1.0
        assert abs(bilinear_form(p, u, Field(grid, e)) - grid.h * Au[j]) <= 1e-10 * max(scale, 1)


def test_adjoint_shares_min_singular_value(setup, rng):
    grid, omega = setup
    K = Kernel(grid, 0.2 * rng.standard_normal((grid.N, grid.N)) / np.sqrt(grid.N) / grid.h)
    p = DirichletProblem(grid, 0.5, omega, K)
    a, b = wellposedness_check(p), wellposedness_check(p.adjoint())
    assert abs(a.min_singular_value - b.min_singular_value) <= 1e-10 * a.block_norm
