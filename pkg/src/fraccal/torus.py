"""Periodic 1-D grids, sampled fields and Fourier multipliers.

The real line is truncated to the torus [-L, L) sampled at N uniform nodes.
Fourier multipliers act through the FFT; the forward transform carries the
spacing h so that the discrete Parseval identity reproduces the h-weighted
L2 norm exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg


class GridMismatchError(ValueError):
    """Raised when objects living on different grids are combined."""


class ConditioningError(RuntimeError):
    """Raised when a Gram matrix is numerically singular."""


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Uniform periodic grid on [-L, L) with N nodes."""

    L: float
    N: int

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.N < 16 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two and at least 16")

    def __eq__(self, other):
        return isinstance(other, GridSpec) and self.L == other.L and self.N == other.N

    def __hash__(self):
        return hash((self.L, self.N))

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @cached_property
    def x(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def xi(self) -> np.ndarray:
        """Angular frequencies pi*k/L in numpy FFT ordering."""
        k = np.fft.fftfreq(self.N, d=1.0 / self.N)
        return np.pi * k / self.L

    @cached_property
    def index_offset(self) -> np.ndarray:
        """(i - j) mod N for every node pair."""
        i = np.arange(self.N)
        return (i[:, None] - i[None, :]) % self.N

    @cached_property
    def torus_distance(self) -> np.ndarray:
        """Pairwise torus distances min(|x-y|, 2L-|x-y|) between nodes."""
        m = self.index_offset
        return self.h * np.minimum(m, self.N - m)

    def circulant(self, symbol: np.ndarray) -> np.ndarray:
        """Dense matrix of the multiplier with the given symbol."""
        col = np.fft.ifft(symbol).real
        return col[self.index_offset]

    def to_json(self) -> str:
        return json.dumps({"L": self.L, "N": self.N})

    @classmethod
    def from_json(cls, text: str) -> "GridSpec":
        data = json.loads(text)
        return cls(L=float(data["L"]), N=int(data["N"]))


def _check_same_grid(*grids: GridSpec) -> GridSpec:
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError(f"grid mismatch: {first} vs {g}")
    return first


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples of a function at the nodes of a grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.N,):
            raise ValueError(f"expected {self.grid.N} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls(grid, np.zeros(grid.N))

    @classmethod
    def from_function(cls, grid: GridSpec, fun) -> "Field":
        return cls(grid, fun(grid.x))

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self.grid, other.grid)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self.grid, other.grid)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, alpha: float) -> "Field":
        return Field(self.grid, alpha * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.h) * np.linalg.norm(self.values))

    def to_csv(self) -> str:
        lines = ["x,value"]
        lines += [f"{x:.17g},{v:.17g}" for x, v in zip(self.grid.x, self.values)]
        return "\n".join(lines) + "\n"


def l2_inner(u: Field, v: Field) -> float:
    """Discrete L2 pairing h * sum(u_j v_j)."""
    grid = _check_same_grid(u.grid, v.grid)
    return float(grid.h * np.dot(u.values, v.values))


@dataclass(frozen=True, eq=False)
class Multiplier:
    grid: GridSpec
    symbol: np.ndarray

    def __post_init__(self):
        symbol = np.array(self.symbol, dtype=float)
        if symbol.shape != (self.grid.N,) or not np.all(np.isfinite(symbol)):
            raise ValueError("symbol must be a finite real array of length N")
        object.__setattr__(self, "symbol", symbol)

    @classmethod
    def fractional(cls, grid: GridSpec, s: float) -> "Multiplier":
        """Symbol |xi|^(2s); the zero mode maps to 0."""
        return cls(grid, np.abs(grid.xi) ** (2 * s))

    @classmethod
    def bessel(cls, grid: GridSpec, r: float) -> "Multiplier":
        """Symbol <xi>^r = (1 + |xi|^2)^(r/2)."""
        return cls(grid, (1.0 + grid.xi**2) ** (r / 2))

    def matrix(self) -> np.ndarray:
        return self.grid.circulant(self.symbol)


def multiplier_apply(u: Field, m: Multiplier) -> Field:
    """Return F^-1(m * F(u))."""
    grid = _check_same_grid(u.grid, m.grid)
    out = np.fft.ifft(m.symbol * np.fft.fft(u.values)).real
    return Field(grid, out)


def _check_order(s: float) -> None:
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")


def frac_laplacian(u: Field, s: float) -> Field:
    _check_order(s)
    return multiplier_apply(u, Multiplier.fractional(u.grid, s))


def sobolev_inner(u: Field, v: Field, r: float) -> float:
    """Discrete H^r inner product with weight <xi>^(2r)."""
    grid = _check_same_grid(u.grid, v.grid)
    weight = (1.0 + grid.xi**2) ** r
    U = np.fft.fft(u.values)
    V = np.fft.fft(v.values)
    return float(grid.h / grid.N * np.real(np.sum(weight * np.conj(U) * V)))


def sobolev_norm(u: Field, r: float) -> float:
    return float(np.sqrt(max(sobolev_inner(u, u, r), 0.0)))


def sobolev_gram(grid: GridSpec, r: float) -> np.ndarray:
    """H^r Gram matrix of the nodal characteristic functions (N x N)."""
    return grid.h * grid.circulant((1.0 + grid.xi**2) ** r)


@dataclass(frozen=True, eq=False)
class _LocalGram:
    # Cholesky factor of the H^s Gram restricted to a node subset.
    factor: tuple

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.factor, rhs)


def local_gram(grid: GridSpec, nodes: np.ndarray, s: float) -> _LocalGram:
    S = sobolev_gram(grid, s)[np.ix_(nodes, nodes)]
    try:
        factor = linalg.cho_factor(S, lower=True)
    except linalg.LinAlgError as exc:
        raise ConditioningError("H^s Gram matrix is not positive definite") from exc
    diag = np.diag(factor[0])
    if diag.min() <= 1e-8 * diag.max():
        raise ConditioningError("H^s Gram matrix is numerically singular")
    return _LocalGram(factor)


def dual_norm_on(g: Field, U, s: float) -> float:
    """Norm of g as a functional on H^s fields supported in U.

    Parameters
    ----------
    g : Field
        Density paired against test functions through h * sum(g_j v_j).
    U : RegionMask
        Support of the admissible test functions.
    s : float
        Sobolev order in (0, 1).

    Returns
    -------
    float
        sqrt(h^2 g_U^T S^-1 g_U) with S the H^s Gram of the nodes of U.
    """
    _check_order(s)
    grid = _check_same_grid(g.grid, U.grid)
    nodes = U.nodes
    if nodes.size == 0:
        raise ValueError("dual_norm_on needs a non-empty region")
    gU = g.values[nodes]
    if not np.any(gU):
        return 0.0
    gram = local_gram(grid, nodes, s)
    q = grid.h**2 * float(gU @ gram.solve(gU))
    return float(np.sqrt(max(q, 0.0)))


def poincare_constant(omega, s: float) -> float:
    """Sharp discrete constant in ||u||_L2 <= c ||(-Delta)^(s/2) u||_L2 on omega."""
    _check_order(s)
    grid = omega.grid
    D = Multiplier.fractional(grid, s).matrix()
    nodes = omega.nodes
    lam_min = linalg.eigvalsh(D[np.ix_(nodes, nodes)], subset_by_index=[0, 0])[0]
    if lam_min <= 0:
        return float("inf")
    return float(1.0 / np.sqrt(lam_min))
