"""Dirichlet-to-Neumann pairings <Lambda f, g> = B(P f, g)."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import RegionMask
from .solver import DirichletProblem, bilinear_form, poisson
from .torus import Field, sobolev_gram


def raised_cosine(grid, center: float, half_width: float) -> np.ndarray:
    z = (grid.x - center) / half_width
    return np.where(np.abs(z) < 1.0, 0.5 * (1.0 + np.cos(np.pi * z)), 0.0)


@dataclass(frozen=True, eq=False)
class ExteriorBasis:
    """Fields supported in a window; exactly zero elsewhere."""

    window: RegionMask
    functions: tuple
    names: tuple

    def __post_init__(self):
        funcs = tuple(self.functions)
        if not funcs:
            raise ValueError("basis must contain at least one field")
        outside = ~self.window.member
        for f in funcs:
            if f.grid != self.window.grid:
                raise ValueError("basis field lives on a different grid")
            if np.any(f.values[outside]):
                raise ValueError("basis field does not vanish outside its window")
        object.__setattr__(self, "functions", funcs)
        object.__setattr__(self, "names", tuple(self.names))
        gram = self.matrix.T @ self.matrix
        scale = np.linalg.norm(gram, 2)
        if np.linalg.eigvalsh(gram)[0] <= 1e-12 * scale:
            raise ValueError("basis fields are not linearly independent")

    @classmethod
    def bumps(cls, window: RegionMask, count: int = 12) -> "ExteriorBasis":
        """Raised-cosine bumps centred on a uniform sub-grid of each window run."""
        grid = window.grid
        runs = window.to_intervals()
        funcs, names = [], []
        per_run = np.full(len(runs), count // len(runs))
        per_run[: count % len(runs)] += 1
        for (lo, hi), m in zip(runs, per_run):
            spacing = (hi - lo) / (m + 1)
            for k in range(m):
                c = lo + (k + 1) * spacing
                vals = raised_cosine(grid, c, spacing) * window.member
                funcs.append(Field(grid, vals))
                names.append(f"bump@{c:.6g}")
        return cls(window, funcs, names)

    @classmethod
    def nodal(cls, window: RegionMask) -> "ExteriorBasis":
        grid = window.grid
        funcs, names = [], []
        for j in window.nodes:
            e = np.zeros(grid.N)
            e[j] = 1.0
            funcs.append(Field(grid, e))
            names.append(f"node@{grid.x[j]:.6g}")
        return cls(window, funcs, names)

    @property
    def size(self) -> int:
        return len(self.functions)

    @property
    def matrix(self) -> np.ndarray:
        """N x m array whose columns are the basis fields."""
        return np.column_stack([f.values for f in self.functions])

    def sobolev_gram(self, s: float) -> np.ndarray:
        B = self.matrix
        return B.T @ sobolev_gram(self.window.grid, s) @ B


@dataclass(frozen=True, eq=False)
class DNMatrix:
    entries: np.ndarray
    basis_in: ExteriorBasis
    basis_out: ExteriorBasis

    def to_csv(self) -> str:
        lines = ["basis_in," + ",".join(self.basis_out.names)]
        for name, row in zip(self.basis_in.names, self.entries):
            lines.append(name + "," + ",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"

    def metadata_json(self, builders=()) -> str:
        return json.dumps({
            "window_in": self.basis_in.window.to_intervals(),
            "window_out": self.basis_out.window.to_intervals(),
            "kernel_builders": list(builders),
        })


def _pairing_matrix(p: DirichletProblem, solutions: np.ndarray, tests: np.ndarray) -> np.ndarray:
    # B(u_a, g_b) for solution columns u_a and test columns g_b, in one sweep
    return p.grid.h * tests.T @ (p.strong_matrix @ solutions)


def assemble_dn(p: DirichletProblem, basis_in: ExteriorBasis, basis_out: ExteriorBasis) -> DNMatrix:
    for b in (basis_in, basis_out):
        if not b.window.isdisjoint(p.omega):
            raise ValueError("exterior windows must be disjoint from omega")
    U = p.poisson_matrix(basis_in.matrix)
    entries = _pairing_matrix(p, U, basis_out.matrix).T
    return DNMatrix(entries, basis_in, basis_out)


def dn_pairing(p: DirichletProblem, f: Field, g: Field) -> float:
    return bilinear_form(p, poisson(p, f), g)


def adjoint_gap(p: DirichletProblem, basis_in: ExteriorBasis, basis_out: ExteriorBasis) -> float:
    """max |B_Psi(P_Psi f, g) - B_Psi*(P_Psi* g, f)| over basis pairs."""
    q = p.adjoint()
    forward = assemble_dn(p, basis_in, basis_out).entries
    backward = assemble_dn(q, basis_out, basis_in).entries.T
    return float(np.abs(forward - backward).max())


@dataclass(frozen=True)
class AlessandriniGap:
    lhs: float
    rhs: float
    gap: float

    @property
    def within_contract(self) -> bool:
        return self.gap <= 1e-8 * max(abs(self.lhs), abs(self.rhs), 1.0)


def alessandrini_gap(p1: DirichletProblem, p2: DirichletProblem, f: Field, g: Field) -> AlessandriniGap:
    """Compare <(Lambda_1 - Lambda_2) f, g> with <(Psi1 - Psi2) P_1 f, P_2* g>."""
    if p1.grid != p2.grid or p1.omega != p2.omega or p1.s != p2.s:
        raise ValueError("problems must share grid, omega and s")
    lhs = dn_pairing(p1, f, g) - dn_pairing(p2, f, g)
    u1 = poisson(p1, f).values
    u2 = poisson(p2.adjoint(), g).values
    h = p1.grid.h
    rhs = h * float(u2 @ (h * (p1.kernel.K - p2.kernel.K) @ u1))
    return AlessandriniGap(lhs=lhs, rhs=rhs, gap=abs(lhs - rhs))
