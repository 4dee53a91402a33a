import numpy as np
import pytest

from fraccal.dnmap import ExteriorBasis, raised_cosine
from fraccal.geometry import RegionMask
from fraccal.kernels import DecayProfile, Kernel, build_prescribed_decay
from fraccal.runge import assemble, certify, n_eps_from_decay, truncate
from fraccal.solver import DirichletProblem
from fraccal.torus import Field, GridSpec


@pytest.fixture(scope="module")
def coarse():
    # 7 omega nodes: the full nodal window basis resolves every mode
    grid = GridSpec(10.0, 64)
    omega = RegionMask.from_intervals(grid, [(-1.0, 1.0)])
    w1 = RegionMask.from_intervals(grid, [(3.0, 6.0)])
    p = DirichletProblem(grid, 0.5, omega, build_prescribed_decay(grid, lambda r: 0.5 * np.exp(-r)))
    return assemble(p, ExteriorBasis.nodal(w1))


@pytest.fixture(scope="module")
def bumps(small_grid, small_regions):
    omega, w1, _ = small_regions
    p = DirichletProblem(small_grid, 0.5, omega,
                         build_prescribed_decay(small_grid, lambda r: 0.5 * np.exp(-r)))
    return assemble(p, window=w1, basis_size=12)


def random_v(sys, rng):
    p = sys.problem
    return Field(p.grid, np.where(p.omega.member, rng.standard_normal(p.grid.N), 0.0))


def test_w_orthonormal(bumps, coarse):
    for sys in (bumps, coarse):
        h = sys.problem.grid.h
        G = h * sys.w.T @ sys.w
        assert np.abs(G - np.eye(G.shape[0])).max() <= 1e-9


def test_w_are_normalised_images(bumps):
    # w_j = A phi_j / sqrt(lambda_j) on the resolved modes
    r = bumps.rank
    img = bumps.A @ bumps.phi[:, :r] / np.sqrt(bumps.lam[:r])
    assert np.allclose(img, bumps.w[:, :r], atol=1e-6 * np.abs(img).max())


def test_generalized_eigen_relation(bumps):
    h = bumps.problem.grid.h
    r = bumps.rank
    lhs = h * bumps.A.T @ bumps.A @ bumps.phi[:, :r]
    rhs = bumps.S @ bumps.phi[:, :r] * bumps.lam[:r]
    assert np.abs(lhs - rhs).max() <= 1e-8 * np.abs(lhs).max()


def test_spectrum_sorted(bumps):
    assert np.all(np.diff(bumps.lam) <= 0) and bumps.lam[0] > 0
    assert bumps.spectrum_csv().startswith("j,lambda\n")


def test_completeness_with_full_basis(coarse, rng):
    assert coarse.rank == coarse.problem.omega.count
    h = coarse.problem.grid.h
    i = coarse.problem.interior
    for _ in range(10):
        v = random_v(coarse, rng).values[i]
        r = coarse.rank
        proj = coarse.w[:, :r] @ (h * coarse.w[:, :r].T @ v)
        assert np.linalg.norm(proj - v) <= 1e-8 * np.linalg.norm(v)


def test_full_inversion_and_full_truncation(coarse, rng):
    v = random_v(coarse, rng)
    lam_min = coarse.lam[coarse.rank - 1]
    full = truncate(coarse, v, 0.5 * np.sqrt(lam_min))
    assert not np.any(full.r_eps.values)
    assert certify(coarse, full, v).approx_err <= 1e-8 * v.l2_norm()
    none = truncate(coarse, v, 2 * np.sqrt(coarse.lam[0]))
    assert not np.any(none.f_coeffs)
    assert np.allclose(none.r_eps.values, v.values, atol=1e-12)


def test_residual_identity(bumps, rng):
    h = bumps.problem.grid.h
    i = bumps.problem.interior
    for rel in (1e-1, 1e-3, 1e-5):
        v = random_v(bumps, rng)
        data = truncate(bumps, v, rel * np.sqrt(bumps.lam[0]))
        misfit = bumps.A @ data.f_coeffs - v.values[i]
        assert h * misfit @ misfit == pytest.approx(data.r_eps.l2_norm() ** 2, rel=1e-10)


def test_certificates_on_random_draws(bumps, rng):
    for _ in range(50):
        v = random_v(bumps, rng)
        N_eps = 10 ** rng.uniform(-7, 0) * np.sqrt(bumps.lam[0])
        cert = certify(bumps, truncate(bumps, v, N_eps), v)
        assert cert.ok, cert
        assert cert.basis_subspace


def test_top_mode(bumps):
    p = bumps.problem
    vals = np.zeros(p.grid.N)
    vals[p.interior] = bumps.w[:, 0]
    v = Field(p.grid, vals)
    data = truncate(bumps, v, 0.5 * np.sqrt(bumps.lam[0]))
    cert = certify(bumps, data, v)
    assert cert.approx_err <= 1e-10
    assert cert.f_norm == pytest.approx(bumps.lam[0] ** -0.5, rel=1e-8)


def test_top_eigenvalue_continuous_in_perturbation(small_grid, small_regions):
    omega, w1, _ = small_regions
    basis = ExteriorBasis.bumps(w1, 12)
    base = Kernel(small_grid, np.exp(-small_grid.torus_distance))

    def lam1(t):
        p = DirichletProblem(small_grid, 0.5, omega, base.scaled(t))
        return assemble(p, basis).lam[0]

    l0 = lam1(0.0)
    d_big, d_small = abs(lam1(1e-2) - l0), abs(lam1(1e-3) - l0)
    assert d_small <= 0.2 * d_big + 1e-14 * l0


def test_thinning_drops_dependent_fields(small_grid, small_regions):
    omega, w1, _ = small_regions
    p = DirichletProblem(small_grid, 0.5, omega, Kernel.zero(small_grid))
    a = raised_cosine(small_grid, 4.5, 1.0)
    b = raised_cosine(small_grid, 4.0, 1.0)
    c = a + 1e-5 * raised_cosine(small_grid, 5.0, 0.5)
    basis = ExteriorBasis(w1, [Field(small_grid, x) for x in (a, b, c)], ["a", "b", "c"])
    sys = assemble(p, basis)
    assert len(sys.thinned) == 1 and sys.basis.size == 2


def test_truncate_rejects_field_outside_omega(bumps):
    g = bumps.problem.grid
    with pytest.raises(ValueError):
        truncate(bumps, Field(g, np.ones(g.N)), 1e-3)


def test_assemble_rejects_overlapping_window(small_grid, small_regions):
    omega = small_regions[0]
    p = DirichletProblem(small_grid, 0.5, omega, Kernel.zero(small_grid))
    with pytest.raises(ValueError):
        assemble(p, window=omega)


def test_n_eps_from_decay():
    prof = DecayProfile(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.5, 0.25]))
    assert n_eps_from_decay(prof, 2.0, 0.75) == pytest.approx(0.25 ** 0.25)
    with pytest.raises(ValueError):
        n_eps_from_decay(prof, 2.0, 1.5)


def test_numerical_rank_saturates_on_fine_grids():
    # singular values of the window-to-omega map decay faster than double
    # precision resolves: refinement adds omega nodes but not resolved modes
    ranks = []
    for N in (128, 512):
        grid = GridSpec(10.0, N)
        omega = RegionMask.from_intervals(grid, [(-1.0, 1.0)])
        w1 = RegionMask.from_intervals(grid, [(3.0, 6.0)])
        p = DirichletProblem(grid, 0.5, omega, Kernel.zero(grid))
        sys = assemble(p, ExteriorBasis.nodal(w1))
        assert sys.rank < omega.count
        ranks.append(sys.rank)
    assert ranks[0] == ranks[1]


def test_forward_map_linear(bumps, rng):
    a, b = rng.standard_normal(bumps.basis.size), rng.standard_normal(bumps.basis.size)
    lhs = bumps.apply(2.5 * a - 0.5 * b)
    rhs = 2.5 * bumps.apply(a) - 0.5 * bumps.apply(b)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(np.abs(rhs).max(), 1.0)


def test_truncation_ladder_monotone_on_bumps(bumps, rng):
    v = random_v(bumps, rng)
    errs, norms = [], []
    for rel in (1e-1, 1e-2, 1e-3, 1e-4):
        d = truncate(bumps, v, rel * np.sqrt(bumps.lam[0]))
        errs.append(d.r_eps.l2_norm())
        norms.append(bumps.s_norm(d.f_coeffs))
    assert all(x >= y - 1e-12 for x, y in zip(errs, errs[1:]))
    assert all(x <= y + 1e-12 for x, y in zip(norms, norms[1:]))
