"""Hilbert-Schmidt kernel perturbations realised by nodal quadrature.

A kernel psi(x, y) is stored as the dense matrix K[i, j] = psi(x_i, x_j) and
acts by (Psi u)_i = h * sum_j K[i, j] u_j.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import RegionMask, neighborhood
from .torus import Field, GridMismatchError, GridSpec


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Kernel:
    grid: GridSpec
    K: np.ndarray
    builder: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.shape != (self.grid.N, self.grid.N):
            raise ValueError("kernel matrix must be N x N")
        if not np.all(np.isfinite(K)):
            raise ValueError("kernel entries must be finite")
        K.flags.writeable = False
        object.__setattr__(self, "K", K)

    @classmethod
    def zero(cls, grid: GridSpec) -> "Kernel":
        return cls(grid, np.zeros((grid.N, grid.N)), builder="zero")

    @property
    def T(self) -> "Kernel":
        return Kernel(self.grid, self.K.T, builder=f"adjoint({self.builder})", params=self.params)

    def __add__(self, other: "Kernel") -> "Kernel":
        if other.grid != self.grid:
            raise GridMismatchError("kernels live on different grids")
        return Kernel(self.grid, self.K + other.K, builder=f"{self.builder}+{other.builder}")

    def __sub__(self, other: "Kernel") -> "Kernel":
        if other.grid != self.grid:
            raise GridMismatchError("kernels live on different grids")
        return Kernel(self.grid, self.K - other.K, builder=f"{self.builder}-{other.builder}")

    def scaled(self, alpha: float) -> "Kernel":
        return Kernel(self.grid, alpha * self.K, builder=self.builder,
                      params={**self.params, "scale": alpha})

    def hs_norm(self) -> float:
        return float(self.grid.h * np.linalg.norm(self.K))

    def to_csv(self, floor: float = 0.0) -> str:
        i, j = np.nonzero(np.abs(self.K) > floor)
        lines = ["i,j,value"]
        lines += [f"{a},{b},{self.K[a, b]:.17g}" for a, b in zip(i, j)]
        return "\n".join(lines) + "\n"

    def metadata_json(self) -> str:
        return json.dumps({"builder": self.builder, "parameters": self.params,
                           "grid": {"L": self.grid.L, "N": self.grid.N}})


def _check_grid(K: Kernel, u: Field) -> None:
    if K.grid != u.grid:
        raise GridMismatchError("kernel and field live on different grids")


def apply(K: Kernel, u: Field) -> Field:
    _check_grid(K, u)
    return Field(u.grid, K.grid.h * (K.K @ u.values))


def apply_adjoint(K: Kernel, u: Field) -> Field:
    _check_grid(K, u)
    return Field(u.grid, K.grid.h * (K.K.T @ u.values))


# --- builders -------------------------------------------------------------

def build_finite_propagation(grid: GridSpec, R: float, amplitude_profile=None) -> Kernel:
    """Band kernel supported on torus distance <= R.

    ``amplitude_profile`` maps distances in [0, R] to positive values; the
    default is the constant 1.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if R >= grid.L / 2:
        raise ValueError("R must be smaller than L/2 so the band does not wrap")
    d = grid.torus_distance
    band = d <= R + 1e-9 * grid.h
    values = np.ones_like(d) if amplitude_profile is None else amplitude_profile(d)
    K = np.where(band, values, 0.0)
    if np.any(K[band] <= 0):
        raise ValueError("amplitude profile must be positive on the band")
    return Kernel(grid, K, builder="finite_propagation", params={"R": R})


def radial_profile(mu, dmu, rho, c_n: float = 2.0):
    """(-(mu^2)'(rho) / c_n)^(1/2) for n = 1, given mu and its derivative."""
    rho = np.asarray(rho, dtype=float)
    return np.sqrt(np.maximum(-2.0 * mu(rho) * dmu(rho) / c_n, 0.0))


def _gaussian_unit(grid: GridSpec, width: float) -> np.ndarray:
    g = np.exp(-0.5 * (grid.x / width) ** 2)
    return g / (np.sqrt(grid.h) * np.linalg.norm(g))


def build_prescribed_decay(grid: GridSpec, mu_tilde, *, center_width: float = 1.0,
                           c_n: float = 2.0) -> Kernel:
    """Kernel psi(x, y) = psi1(x) * psi2(|x - y|) admitting mu_tilde as decay.

    psi1 is a unit-L2 Gaussian. The radial factor is the cell-integrated
    form of (-(mu^2)'/c_n)^(1/2): on the cell [rho_m, rho_m + h]

        psi2(rho_m)^2 = (mu^2(rho_m) - mu^2(rho_m + h)) / (c_n h),

    so the discrete tail sums telescope and never exceed mu_tilde^2(r).
    The zero-distance node is counted once, hence its own weight.
    """
    h = grid.h
    M = grid.N // 2
    rho = h * np.arange(M + 2)
    mu = np.asarray(mu_tilde(rho), dtype=float)
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise ValueError("mu_tilde must be positive and finite")
    if np.any(np.diff(mu) >= 0):
        raise ValueError("mu_tilde must be strictly decreasing")
    drop = mu[:-1] ** 2 - mu[1:] ** 2
    psi2 = np.sqrt(drop / (c_n * h))
    psi2[0] = np.sqrt(drop[0] / h)
    m = grid.index_offset
    dist_index = np.minimum(m, grid.N - m)
    psi1 = _gaussian_unit(grid, center_width)
    K = psi1[:, None] * psi2[dist_index]
    return Kernel(grid, K, builder="prescribed_decay",
                  params={"center_width": center_width, "mu0": float(mu[0])})


@dataclass(frozen=True, eq=False)
class DecayProfile:
    radii: np.ndarray
    mu: np.ndarray
    kind: str = "prescribed"
    warning: str | None = None

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        if radii.shape != mu.shape:
            raise ValueError("radii and mu must have equal length")
        if np.any(np.diff(radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        if np.any(mu < 0):
            raise ValueError("decay values must be nonnegative")
        if self.kind not in ("prescribed", "hs_bound", "operator_norm"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "mu", mu)

    def __call__(self, r):
        return np.interp(r, self.radii, self.mu)

    def to_csv(self) -> str:
        lines = ["r,mu"] + [f"{r:.17g},{m:.17g}" for r, m in zip(self.radii, self.mu)]
        return "\n".join(lines) + "\n"


def admissible_decay(c_fun, sigma_fun, f_growth, radii) -> DecayProfile:
    """mu(r) = exp(-(c(r) f(r))^(1/sigma(r))) sampled on ``radii``."""
    r = np.asarray(radii, dtype=float)
    c = np.broadcast_to(np.asarray(c_fun(r), dtype=float), r.shape)
    sig = np.broadcast_to(np.asarray(sigma_fun(r), dtype=float), r.shape)
    f = np.asarray(f_growth(r), dtype=float)
    if np.any(c <= 0) or np.any(sig <= 0):
        raise ValueError("c and sigma must be positive")
    mu = np.exp(-((c * f) ** (1.0 / sig)))
    note = None
    tail = mu[len(mu) * 2 // 3:]
    if not (np.all(np.diff(tail) <= 0) and mu[-1] < 0.5 * mu[0]):
        note = "mu does not visibly tend to 0 over the sampled range"
    return DecayProfile(r, mu, kind="prescribed", warning=note)


def build_admissible(grid: GridSpec, c_fun, sigma_fun, f_growth, *, scale: float = 1.0,
                     center_width: float = 1.0) -> tuple[DecayProfile, Kernel]:
    """Decay profile of the admissible family and a kernel realising it.

    The kernel is built from a strictly decreasing minorant of scale * mu
    (running minimum times a vanishing exponential tilt).
    """
    rho = grid.h * np.arange(grid.N // 2 + 2)
    profile = admissible_decay(c_fun, sigma_fun, f_growth, rho)
    minorant = scale * np.minimum.accumulate(profile.mu) * np.exp(-1e-6 * rho)
    if np.any(minorant <= 0):
        raise ValueError("mu underflows on the grid; choose slower growth")

    def mu_tilde(r):
        return np.interp(r, rho, minorant)

    kernel = build_prescribed_decay(grid, mu_tilde, center_width=center_width)
    kernel = Kernel(grid, kernel.K, builder="admissible", params={"scale": scale})
    if profile.warning:
        warnings.warn(profile.warning, stacklevel=2)
    return profile, kernel


def _as_node_samples(grid: GridSpec, k) -> np.ndarray:
    if callable(k):
        return np.asarray(k(grid.x), dtype=float)
    k = np.asarray(k, dtype=float)
    if k.shape != (grid.N,):
        raise ValueError("samples must have length N")
    return k


def build_separable_schwartz(grid: GridSpec, k1, k2) -> Kernel:
    """K[i, j] = k1(x_i) * k2(x_i - x_j), with the difference wrapped to [-L, L).

    ``k1`` and ``k2`` are callables or node samples; for ``k2`` the sample at
    node x_m is the value at z = x_m.
    """
    k1v = _as_node_samples(grid, k1)
    k2v = _as_node_samples(grid, k2)
    # wrapped difference (i - j) h lands on node index (i - j + N/2) mod N
    idx = (grid.index_offset + grid.N // 2) % grid.N
    K = k1v[:, None] * k2v[idx]
    return Kernel(grid, K, builder="separable_schwartz")


def gaussian_kernel(grid: GridSpec, width: float = 1.0, amplitude: float = 1.0) -> Kernel:
    """Translation-invariant kernel amplitude * exp(-(d/width)^2) in torus distance."""
    K = amplitude * np.exp(-((grid.torus_distance / width) ** 2))
    return Kernel(grid, K, builder="gaussian", params={"width": width, "amplitude": amplitude})


def separable_bump(grid: GridSpec, center: float, width: float, amplitude: float,
                   support: RegionMask | None = None) -> Kernel:
    """Rank-one bump a * b(x) b(y) with b a Gaussian, optionally cut to ``support``."""
    b = np.exp(-(((grid.x - center) / width) ** 2))
    if support is not None:
        b = b * support.member
    return Kernel(grid, amplitude * np.outer(b, b), builder="bump",
                  params={"center": center, "width": width, "amplitude": amplitude})


# --- estimators -----------------------------------------------------------

def estimate_decay(K: Kernel, base: RegionMask, radii) -> tuple[DecayProfile, DecayProfile]:
    """Empirical decay profiles (hs_bound, operator_norm) of a kernel.

    hs_bound(r) is h times the Frobenius norm of the entries at torus
    distance >= r. operator_norm(r) is the largest singular value of the
    block mapping fields on ``base`` to nodes outside N(base, r), times h.
    """
    grid = K.grid
    if base.is_empty():
        raise ValueError("base mask must be non-empty")
    radii = np.asarray(radii, dtype=float)
    headroom = grid.L
    if np.any(radii > headroom):
        warnings.warn(f"radii beyond torus headroom {headroom} were dropped", stacklevel=2)
        radii = radii[radii <= headroom]
    d = grid.torus_distance
    tol = 1e-9 * grid.h
    sq = K.K**2
    hs = np.array([grid.h * np.sqrt(sq[d >= r - tol].sum()) for r in radii])
    op = np.empty_like(radii)
    cols = base.nodes
    for n, r in enumerate(radii):
        far = (~neighborhood(base, r)).nodes
        if far.size == 0:
            op[n] = 0.0
            continue
        block = K.K[np.ix_(far, cols)]
        op[n] = grid.h * (np.linalg.norm(block, 2) if np.any(block) else 0.0)
    return (DecayProfile(radii, hs, kind="hs_bound"),
            DecayProfile(radii, op, kind="operator_norm"))


def estimate_propagation(K: Kernel, tol: float = 0.0) -> float:
    """Smallest R with |K[i, j]| <= tol whenever dist(x_i, x_j) > R."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    grid = K.grid
    m = grid.index_offset
    dist_index = np.minimum(m, grid.N - m)
    big = np.abs(K.K) > tol
    if not big.any():
        return 0.0
    return float(grid.h * dist_index[big].max())


def l2_operator_norm(K: Kernel, tol: float = 1e-8, maxiter: int = 20000) -> float:
    """Largest singular value of h*K by power iteration on (hK)^T (hK)."""
    A = K.grid.h * K.K
    if not np.any(A):
        return 0.0
    v = np.ones(A.shape[1]) + 0.01 * np.cos(np.arange(A.shape[1]))
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(maxiter):
        w = A @ v
        z = A.T @ w
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        new = float(np.linalg.norm(w))
        v = z / nz
        if abs(new - sigma) <= tol * new:
            return float(np.linalg.norm(A @ v))
        sigma = new
    raise ConvergenceError(f"power iteration did not converge in {maxiter} steps")
