"""Quantitative Runge approximation by truncated spectral inversion.

The operator A maps coefficients of an exterior basis to the restriction of
the Poisson solution to omega. The eigenpairs of A*A in the H^s geometry of
the basis are computed by whitening with the Cholesky factor of the basis
Gram S and taking an SVD of sqrt(h) A L^-T:

    A^T M A phi = lambda S phi,   M = h I on omega.

The left singular vectors, rescaled by 1/sqrt(h), are the L2(omega)
orthonormal fields w_j = A phi_j / lambda_j^(1/2). Left singular vectors
beyond the numerical rank complete {w_j} to an orthonormal basis of
L2(omega) and carry lambda_j = 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dnmap import ExteriorBasis
from .solver import DirichletProblem
from .torus import ConditioningError, Field, dual_norm_on, sobolev_norm

EIGEN_FLOOR = 1e-14
CERT_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class RungeSystem:
    problem: DirichletProblem
    basis: ExteriorBasis
    A: np.ndarray          # omega-nodes x basis size
    S: np.ndarray          # H^s Gram of the basis
    lam: np.ndarray        # nonincreasing, length = omega nodes
    phi: np.ndarray        # basis coefficients of phi_j (columns); zero for null modes
    w: np.ndarray          # omega-node values of w_j (columns)
    rank: int
    thinned: tuple = ()

    @property
    def window(self):
        return self.basis.window

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        return self.A @ coeffs

    def field_from_coeffs(self, coeffs: np.ndarray) -> Field:
        return Field(self.problem.grid, self.basis.matrix @ coeffs)

    def s_norm(self, coeffs: np.ndarray) -> float:
        return float(np.sqrt(max(coeffs @ self.S @ coeffs, 0.0)))

    def spectrum_csv(self) -> str:
        lines = ["j,lambda"] + [f"{j + 1},{v:.17g}" for j, v in enumerate(self.lam)]
        return "\n".join(lines) + "\n"


def _thin_basis(basis: ExteriorBasis, s: float, cond_cap: float = 1e10):
    # drop basis fields until the H^s Gram is safely positive definite
    keep = list(range(basis.size))
    dropped = []
    while True:
        S = basis.sobolev_gram(s)[np.ix_(keep, keep)]
        ev = np.linalg.eigvalsh(S)
        if ev[0] > ev[-1] / cond_cap:
            break
        worst = int(np.argmax(np.abs(np.linalg.eigh(S)[1][:, 0])))
        dropped.append(basis.names[keep[worst]])
        del keep[worst]
    if not dropped:
        return basis, ()
    sub = ExteriorBasis(basis.window, [basis.functions[k] for k in keep],
                        [basis.names[k] for k in keep])
    return sub, tuple(dropped)


def assemble(p: DirichletProblem, basis: ExteriorBasis | None = None, *,
             window=None, basis_size: int = 12) -> RungeSystem:
    """Build A on ``basis`` (default: ``basis_size`` bumps on ``window``)."""
    if basis is None:
        if window is None:
            raise ValueError("either basis or window is required")
        basis = ExteriorBasis.bumps(window, basis_size)
    if not basis.window.isdisjoint(p.omega):
        raise ValueError("window must be disjoint from omega")
    basis, dropped = _thin_basis(basis, p.s)
    h = p.grid.h
    U = p.poisson_matrix(basis.matrix)
    A = U[p.interior]
    S = basis.sobolev_gram(p.s)
    try:
        Lc = linalg.cholesky(S, lower=True)
    except linalg.LinAlgError as exc:
        raise ConditioningError("basis Gram is not positive definite") from exc
    # B = sqrt(h) A L^-T
    B = np.sqrt(h) * linalg.solve_triangular(Lc, A.T, lower=True).T
    Uw, sv, Vt = linalg.svd(B, full_matrices=True)
    n_omega = A.shape[0]
    lam = np.zeros(n_omega)
    k = min(sv.size, n_omega)
    lam[:k] = sv[:k] ** 2
    rank = int(np.sum(lam > EIGEN_FLOOR * lam[0])) if lam[0] > 0 else 0
    lam[rank:] = 0.0
    phi = np.zeros((basis.size, n_omega))
    phi[:, :k] = linalg.solve_triangular(Lc.T, Vt[:k].T, lower=False)
    phi[:, rank:] = 0.0
    w = Uw / np.sqrt(h)
    return RungeSystem(p, basis, A, S, lam, phi, w, rank, dropped)


@dataclass(frozen=True, eq=False)
class RungeData:
    f_coeffs: np.ndarray
    f_eps: Field
    r_eps: Field
    N_eps: float
    used_modes: int


def truncate(sys: RungeSystem, v: Field, N_eps: float) -> RungeData:
    """Keep the modes with lambda_j > N_eps^2; the rest forms the residual."""
    p = sys.problem
    outside = np.flatnonzero(~p.omega.member)
    if np.any(v.values[outside]):
        raise ValueError("v must be supported in omega")
    h = p.grid.h
    vo = v.values[p.interior]
    coef = h * (sys.w.T @ vo)
    keep = sys.lam > N_eps**2
    f = sys.phi[:, keep] @ (coef[keep] / np.sqrt(sys.lam[keep]))
    r = np.zeros(p.grid.N)
    r[p.interior] = sys.w[:, ~keep] @ coef[~keep]
    return RungeData(
        f_coeffs=f,
        f_eps=sys.field_from_coeffs(f),
        r_eps=Field(p.grid, r),
        N_eps=float(N_eps),
        used_modes=int(keep.sum()),
    )


def n_eps_from_decay(profile, R: float, delta: float) -> float:
    """Threshold mu(R)^(1 - delta) read off a decay profile."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return float(profile(R)) ** (1.0 - delta)


@dataclass(frozen=True)
class Certificate:
    approx_err: float
    f_norm: float
    f_norm_bound: float
    astar_r_norm: float
    astar_bound: float
    approx_sq: float
    dual_bound: float
    residual_norm: float
    astar_ok: bool
    f_norm_ok: bool
    dual_bound_ok: bool
    basis_subspace: bool

    @property
    def ok(self) -> bool:
        return self.astar_ok and self.f_norm_ok and self.dual_bound_ok

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return json.dumps(d)


def certify(sys: RungeSystem, data: RungeData, v: Field) -> Certificate:
    """Evaluate the three truncation estimates directly from A, S and v."""
    p = sys.problem
    h = p.grid.h
    i = p.interior
    vo = v.values[i]
    ro = data.r_eps.values[i]
    v_l2 = np.sqrt(h) * np.linalg.norm(vo)
    r_l2 = np.sqrt(h) * np.linalg.norm(ro)
    # A* r has basis coefficients S^-1 A^T M r
    g = h * (sys.A.T @ ro)
    astar = np.sqrt(max(g @ linalg.solve(sys.S, g, assume_a="pos"), 0.0))
    # modes under the eigen floor are never inverted, so the effective
    # threshold cannot drop below the floor resolution
    lam_floor = EIGEN_FLOOR * sys.lam[0] if sys.lam.size else 0.0
    astar_bound = max(data.N_eps, np.sqrt(lam_floor)) * r_l2
    f_norm = sys.s_norm(data.f_coeffs)
    f_bound = v_l2 / data.N_eps if data.N_eps > 0 else np.inf
    misfit = sys.A @ data.f_coeffs - vo
    approx_sq = h * float(misfit @ misfit)
    dual_bound = sobolev_norm(v, p.s) * dual_norm_on(data.r_eps, p.omega, p.s)
    # rounding floor for quantities formed by cancellation against v
    round_floor = 1e-12 * v_l2

    def within(lhs, rhs, floor):
        return lhs <= rhs * (1 + CERT_SLACK) + floor

    return Certificate(
        approx_err=float(np.sqrt(approx_sq)),
        f_norm=f_norm,
        f_norm_bound=float(f_bound),
        astar_r_norm=float(astar),
        astar_bound=float(astar_bound),
        approx_sq=approx_sq,
        dual_bound=float(dual_bound),
        residual_norm=float(r_l2),
        astar_ok=bool(within(astar, astar_bound, 0.0)),
        f_norm_ok=bool(within(f_norm, f_bound, 0.0)),
        dual_bound_ok=bool(within(approx_sq, dual_bound, round_floor**2)),
        basis_subspace=sys.basis.size < sys.window.count,
    )
