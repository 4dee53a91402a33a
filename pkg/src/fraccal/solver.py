"""Exterior-value Dirichlet problem for (-Delta)^s u + Psi u = F on omega.

Rows of the discrete operator are collocated at the nodes of omega; the
exterior values are imposed, never solved for. The strong-form matrix is

    A = D_s + h K,

with D_s the circulant matrix of |xi|^(2s). For a node characteristic test
function e_j the weak form B(u, e_j) equals h (A u)_j, so collocation and
Galerkin with nodal tests agree up to the factor h.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .geometry import RegionMask
from .kernels import Kernel, l2_operator_norm
from .torus import (
    Field,
    GridMismatchError,
    GridSpec,
    Multiplier,
    _check_order,
    sobolev_gram,
    sobolev_norm,
)

WELLPOSED_FLOOR = 1e-10


class SolverError(RuntimeError):
    """The interior block is singular; see ``wellposedness_check``."""


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    grid: GridSpec
    s: float
    omega: RegionMask
    kernel: Kernel

    def __post_init__(self):
        _check_order(self.s)
        if self.omega.grid != self.grid or self.kernel.grid != self.grid:
            raise GridMismatchError("problem components live on different grids")
        if self.omega.is_empty() or self.omega.count == self.grid.N:
            raise ValueError("omega must be a non-empty proper subset of the grid")

    @cached_property
    def laplacian_matrix(self) -> np.ndarray:
        return Multiplier.fractional(self.grid, self.s).matrix()

    @cached_property
    def strong_matrix(self) -> np.ndarray:
        return self.laplacian_matrix + self.grid.h * self.kernel.K

    @cached_property
    def interior(self) -> np.ndarray:
        return self.omega.nodes

    @cached_property
    def exterior(self) -> np.ndarray:
        return np.flatnonzero(~self.omega.member)

    @cached_property
    def interior_block(self) -> np.ndarray:
        i = self.interior
        return self.strong_matrix[np.ix_(i, i)]

    @cached_property
    def coupling_block(self) -> np.ndarray:
        return self.strong_matrix[np.ix_(self.interior, self.exterior)]

    @cached_property
    def _lu(self):
        return linalg.lu_factor(self.interior_block, check_finite=False)

    def adjoint(self) -> "DirichletProblem":
        """Problem for the adjoint perturbation (transposed kernel)."""
        return DirichletProblem(self.grid, self.s, self.omega, self.kernel.T)

    def with_kernel(self, kernel: Kernel) -> "DirichletProblem":
        return DirichletProblem(self.grid, self.s, self.omega, kernel)

    def apply_operator(self, u: Field) -> Field:
        """(-Delta)^s u + Psi u on the whole torus."""
        return Field(self.grid, self.strong_matrix @ u.values)

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A_{omega,omega} x = rhs; rhs may hold several columns."""
        self._require_wellposed()
        return linalg.lu_solve(self._lu, rhs, check_finite=False)

    @cached_property
    def _wellposed(self):
        return wellposedness_check(self)

    def _require_wellposed(self) -> None:
        check = self._wellposed
        if not check.ok:
            raise SolverError(
                "interior block is numerically singular "
                f"(min singular value {check.min_singular_value:.3e}, "
                f"norm {check.block_norm:.3e})"
            )

    def poisson_matrix(self, data: np.ndarray) -> np.ndarray:
        """Poisson operator applied to the columns of ``data`` (N x m)."""
        data = np.atleast_2d(np.asarray(data, dtype=float).T).T
        out = data.copy()
        rhs = -self.coupling_block @ data[self.exterior]
        out[self.interior] = self.solve_interior(rhs)
        return out


def bilinear_form(p: DirichletProblem, u: Field, v: Field) -> float:
    """B(u, v) = <(-Delta)^(s/2) u, (-Delta)^(s/2) v> + <Psi u, v>."""
    if u.grid != p.grid or v.grid != p.grid:
        raise GridMismatchError("fields and problem live on different grids")
    grid = p.grid
    U = np.fft.fft(u.values)
    V = np.fft.fft(v.values)
    sym = np.abs(grid.xi) ** (2 * p.s)
    local = grid.h / grid.N * np.real(np.sum(sym * np.conj(V) * U))
    nonlocal_part = grid.h**2 * float(v.values @ (p.kernel.K @ u.values))
    return float(local + nonlocal_part)


@dataclass(frozen=True)
class WellposednessReport:
    min_singular_value: float
    block_norm: float
    ok: bool


def wellposedness_check(p: DirichletProblem) -> WellposednessReport:
    sv = linalg.svdvals(p.interior_block)
    smin = float(sv[-1])
    norm = float(sv[0])
    return WellposednessReport(smin, norm, bool(smin > WELLPOSED_FLOOR * norm))


@dataclass(frozen=True)
class CoercivityReport:
    c0_hat: float
    c1_used: float


def coercivity_audit(p: DirichletProblem) -> CoercivityReport:
    """Best constant c0 in B(v, v) + c1 ||v||^2 >= c0 ||v||_{H^s}^2 on omega.

    c1 is the L2 operator norm of the perturbation; c0 is the smallest
    generalized eigenvalue of (Q_sym + c1 M, S) over omega-supported v.
    """
    h = p.grid.h
    i = p.interior
    Q = h * p.interior_block
    Q = 0.5 * (Q + Q.T)
    c1 = l2_operator_norm(p.kernel)
    M = h * np.eye(i.size)
    S = sobolev_gram(p.grid, p.s)[np.ix_(i, i)]
    theta = linalg.eigh(Q + c1 * M, S, eigvals_only=True, subset_by_index=[0, 0])[0]
    return CoercivityReport(c0_hat=float(theta), c1_used=float(c1))


@dataclass(frozen=True, eq=False)
class SolveReport:
    u: Field
    interior_residual: float
    exterior_mismatch: float
    condition_estimate: float

    def to_json(self) -> str:
        return json.dumps({
            "interior_residual": self.interior_residual,
            "exterior_mismatch": self.exterior_mismatch,
            "condition_estimate": self.condition_estimate,
        })


def solve_dirichlet(p: DirichletProblem, f_ext: Field, F_src: Field) -> SolveReport:
    """Solve the interior equation with u = f_ext imposed on the exterior."""
    if f_ext.grid != p.grid or F_src.grid != p.grid:
        raise GridMismatchError("data and problem live on different grids")
    i, e = p.interior, p.exterior
    u = f_ext.values.copy()
    rhs = F_src.values[i] - p.coupling_block @ f_ext.values[e]
    u[i] = p.solve_interior(rhs)
    residual = p.strong_matrix[i] @ u - F_src.values[i]
    check = p._wellposed
    return SolveReport(
        u=Field(p.grid, u),
        interior_residual=float(np.abs(residual).max()),
        exterior_mismatch=float(np.abs(u[e] - f_ext.values[e]).max()),
        condition_estimate=check.block_norm / check.min_singular_value,
    )


def poisson(p: DirichletProblem, f_ext: Field) -> Field:
    """P_Psi f: the solution with zero source and exterior values f."""
    if f_ext.grid != p.grid:
        raise GridMismatchError("data and problem live on different grids")
    return Field(p.grid, p.poisson_matrix(f_ext.values)[:, 0])


def stability_constant(p: DirichletProblem, f_ext: Field, F_src: Field) -> float:
    """Empirical ratio ||u||_{H^s} / (||f||_{H^s} + ||F||_{L2(omega)})."""
    u = solve_dirichlet(p, f_ext, F_src).u
    F_in = np.sqrt(p.grid.h) * np.linalg.norm(F_src.values[p.interior])
    denom = sobolev_norm(f_ext, p.s) + F_in
    return sobolev_norm(u, p.s) / denom if denom > 0 else 0.0
