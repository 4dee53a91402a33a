"""Node-set geometry: region masks, neighbourhoods and ball-chain counts."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .torus import GridMismatchError, GridSpec


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Boolean subset of grid nodes."""

    grid: GridSpec
    member: np.ndarray

    def __post_init__(self):
        member = np.array(self.member, dtype=bool)
        if member.shape != (self.grid.N,):
            raise ValueError(f"mask must have length {self.grid.N}")
        member.flags.writeable = False
        object.__setattr__(self, "member", member)

    @classmethod
    def from_intervals(cls, grid: GridSpec, intervals) -> "RegionMask":
        """Nodes lying in any of the closed intervals [lo, hi]."""
        x = grid.x
        tol = 1e-9 * grid.h
        member = np.zeros(grid.N, dtype=bool)
        for lo, hi in intervals:
            if hi < lo:
                raise ValueError(f"empty interval ({lo}, {hi})")
            member |= (x >= lo - tol) & (x <= hi + tol)
        return cls(grid, member)

    @classmethod
    def empty(cls, grid: GridSpec) -> "RegionMask":
        return cls(grid, np.zeros(grid.N, dtype=bool))

    @property
    def nodes(self) -> np.ndarray:
        return np.flatnonzero(self.member)

    @property
    def count(self) -> int:
        return int(self.member.sum())

    def is_empty(self) -> bool:
        return not self.member.any()

    def _other(self, other: "RegionMask") -> np.ndarray:
        if other.grid != self.grid:
            raise GridMismatchError("masks live on different grids")
        return other.member

    def __or__(self, other):
        return RegionMask(self.grid, self.member | self._other(other))

    def __and__(self, other):
        return RegionMask(self.grid, self.member & self._other(other))

    def __invert__(self):
        return RegionMask(self.grid, ~self.member)

    def __eq__(self, other):
        return (
            isinstance(other, RegionMask)
            and other.grid == self.grid
            and np.array_equal(self.member, other.member)
        )

    def __hash__(self):
        return hash((self.grid, self.member.tobytes()))

    def issubset(self, other: "RegionMask") -> bool:
        return not np.any(self.member & ~self._other(other))

    def isdisjoint(self, other: "RegionMask") -> bool:
        return not np.any(self.member & self._other(other))

    def centroid(self) -> float:
        return float(self.grid.x[self.member].mean())

    def to_intervals(self) -> list[tuple[float, float]]:
        """Maximal runs of member nodes as closed intervals (no wrap-around)."""
        x = self.grid.x
        padded = np.concatenate([[False], self.member, [False]]).astype(int)
        edges = np.flatnonzero(np.diff(padded))
        return [(float(x[a]), float(x[b - 1])) for a, b in zip(edges[::2], edges[1::2])]

    def to_json(self) -> str:
        return json.dumps([{"lo": lo, "hi": hi} for lo, hi in self.to_intervals()])

    @classmethod
    def from_json(cls, grid: GridSpec, text: str) -> "RegionMask":
        return cls.from_intervals(grid, [(d["lo"], d["hi"]) for d in json.loads(text)])


def neighborhood(A: RegionMask, r: float) -> RegionMask:
    """Nodes within torus distance r of A."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    if A.is_empty():
        raise ValueError("neighborhood of an empty mask")
    grid = A.grid
    reach = min(int(math.floor(r / grid.h + 1e-9)), grid.N // 2)
    out = A.member.copy()
    for shift in range(1, reach + 1):
        out |= np.roll(A.member, shift) | np.roll(A.member, -shift)
    return RegionMask(grid, out)


def flat_distance_to(x: np.ndarray, region: RegionMask) -> np.ndarray:
    """Euclidean distance on the fundamental interval from points x to region."""
    pts = region.grid.x[region.member]
    return np.abs(np.asarray(x)[:, None] - pts[None, :]).min(axis=1)


def torus_set_distance(a: RegionMask, b: RegionMask) -> float:
    d = a.grid.torus_distance[np.ix_(a.nodes, b.nodes)]
    return float(d.min())


@dataclass(frozen=True)
class GeometryVerdict:
    separation_ok: bool
    polar_cone_ok: bool
    min_gap: float


def measurement_geometry_ok(omega: RegionMask, w1: RegionMask, w2: RegionMask) -> GeometryVerdict:
    """Check the two-window measurement geometry over all node pairs.

    ``separation_ok`` asks |x1 - x2| >= max(dist(x1, omega), dist(x2, omega))
    for every x1 in w1, x2 in w2. ``polar_cone_ok`` is the 1-D polar cone
    test: the windows sit on opposite sides of the centroid of omega.
    """
    masks = (omega, w1, w2)
    if any(m.is_empty() for m in masks):
        raise ValueError("masks must be non-empty")
    if not (omega.isdisjoint(w1) and omega.isdisjoint(w2) and w1.isdisjoint(w2)):
        raise ValueError("masks overlap")
    x = omega.grid.x
    x1 = x[w1.member]
    x2 = x[w2.member]
    d1 = flat_distance_to(x1, omega)
    d2 = flat_distance_to(x2, omega)
    gap = np.abs(x1[:, None] - x2[None, :]) - np.maximum(d1[:, None], d2[None, :])
    min_gap = float(gap.min())
    origin = omega.centroid()
    products = (x1[:, None] - origin) * (x2[None, :] - origin)
    return GeometryVerdict(
        separation_ok=bool(min_gap >= 0),
        polar_cone_ok=bool(np.all(products <= 0)),
        min_gap=min_gap,
    )


@dataclass(frozen=True)
class ChainReport:
    y1: float
    N_vert: int
    N1: int
    N2: int
    N3: int
    C: float
    sigma: float
    n_omega: int = 1
    ball_count: int = 1

    @property
    def total(self) -> int:
        return self.N_vert + self.N1 + self.N2 + self.N3

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def chain_counts(
    r_W: float,
    x_W: float,
    r_Omega: float,
    x_Omega: float,
    h_param: float,
    *,
    c_ns: float = 1.0,
    c_scale: float = 1.0,
    n_omega: int = 1,
) -> ChainReport:
    """Step counts of the half-ball chain from the window to the domain.

    The vertical chain starts at height y1 = 5 r_W / 12 and grows by 7/6
    until height 1; the horizontal chain uses balls of radius 1/5; the
    downward chain shrinks heights by 9/10 until h_param. Counts are rounded
    up. ``c_scale`` multiplies the geometry constant C.
    """
    if not 0 < r_W <= 2:
        raise ValueError("r_W must lie in (0, 2]")
    if r_Omega <= 0:
        raise ValueError("r_Omega must be positive")
    if not 0 < h_param < 1:
        raise ValueError("h_param must lie in (0, 1)")
    y1 = 5.0 * r_W / 12.0
    n_vert = math.ceil(1.0 + math.log(y1) / math.log(6.0 / 7.0))
    gap = abs(x_W - x_Omega)
    n1 = math.ceil(5.0 * gap)
    n2 = math.ceil(5.0 * r_Omega)
    n3 = math.ceil(math.log(h_param) / math.log(0.9))
    C = c_scale * r_Omega * abs(math.log(r_W)) * gap
    sigma = c_ns / C if C > 0 else float("inf")
    return ChainReport(
        y1=y1, N_vert=max(n_vert, 0), N1=n1, N2=n2, N3=n3, C=C, sigma=sigma,
        n_omega=n_omega, ball_count=2**n3 * n_omega,
    )


def chain_bound(r_W: float, x_W: float, r_Omega: float, x_Omega: float, h_param: float) -> int:
    """Upper bound on the total step count, with slack for the four ceilings."""
    total = (
        14 * abs(math.log(r_W))
        + 5 * abs(x_W - x_Omega)
        + 5 * r_Omega
        + 10 * abs(math.log(h_param))
    )
    return math.ceil(total) + 4


def sigma_constant(report: ChainReport, c_ns: float) -> float:
    if c_ns <= 0:
        raise ValueError("c_ns must be positive")
    if report.C <= 0:
        raise ValueError("geometry constant C must be positive")
    return c_ns / report.C
