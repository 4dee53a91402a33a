"""Empirical logarithmic stability and the decay admissibility series."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import RegionMask
from .kernels import DecayProfile
from .parallel import worker_count
from .solver import DirichletProblem, solve_dirichlet
from .torus import Field, dual_norm_on, frac_laplacian

ETA_FLOOR = 1e-14


class DegenerateRegressionError(ValueError):
    pass


@dataclass(frozen=True)
class StabilityRecord:
    v_id: str
    v_norm_neg: float
    eta: float

    @property
    def usable(self) -> bool:
        return ETA_FLOOR < self.eta < math.exp(-1.0)


@dataclass(frozen=True)
class StabilityFit:
    records: tuple
    c_hat: float
    sigma_hat: float
    fit_r2: float

    def to_csv(self) -> str:
        lines = ["label,v_norm_neg,eta,loglog_x,loglog_y"]
        for r in self.records:
            if r.eta > 0 and r.eta != 1.0:
                lx = math.log(abs(math.log(r.eta)))
            else:
                lx = float("nan")
            ly = math.log(r.v_norm_neg) if r.v_norm_neg > 0 else float("nan")
            lines.append(f"{r.v_id},{r.v_norm_neg:.17g},{r.eta:.17g},{lx:.17g},{ly:.17g}")
        return "\n".join(lines) + "\n"


def mode_family(omega: RegionMask, count: int = 20) -> list[Field]:
    """Tapered sine modes on the hull [a, b] of omega, k = 1..count.

    v_k(x) = sin(k pi t) sin(pi t)^2 with t = (x - a)/(b - a). The taper
    keeps v_k smooth across the boundary of omega.
    """
    grid = omega.grid
    x = grid.x
    a, b = x[omega.member].min() - grid.h, x[omega.member].max() + grid.h
    t = (x - a) / (b - a)
    envelope = np.sin(np.pi * t) ** 2 * omega.member
    return [Field(grid, np.sin(k * np.pi * t) * envelope) for k in range(1, count + 1)]


def _record(p: DirichletProblem, W: RegionMask, v: Field, label: str) -> StabilityRecord:
    nrm = v.l2_norm()
    if nrm == 0:
        raise ValueError(f"family member {label} vanishes")
    v = v * (1.0 / nrm)
    w = solve_dirichlet(p, Field.zeros(p.grid), v).u
    eta = dual_norm_on(frac_laplacian(w, p.s), W, p.s)
    return StabilityRecord(label, dual_norm_on(v, p.omega, p.s), eta)


def stability_experiment(p: DirichletProblem, W: RegionMask, family, labels=None) -> StabilityFit:
    """Fit log ||v||_{H^-s} = log c - sigma log|log eta| over the family.

    Each v is normalised in L2(omega) and w solves the equation with source
    v and zero exterior values; eta is the H^-s(W) size of (-Delta)^s w.
    Only records with eta in (1e-14, e^-1) enter the fit.
    """
    family = list(family)
    if labels is None:
        labels = [f"v{k}" for k in range(len(family))]
    if not W.isdisjoint(p.omega):
        raise ValueError("W must be disjoint from omega")
    p.solve_interior(np.zeros(p.interior.size))
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        records = list(pool.map(lambda a: _record(p, W, *a), zip(family, labels)))
    usable = [r for r in records if r.usable]
    if len(usable) < 3:
        raise DegenerateRegressionError(
            f"need at least 3 records with eta in ({ETA_FLOOR}, e^-1), got {len(usable)}"
        )
    X = np.log(np.abs(np.log([r.eta for r in usable])))
    Y = np.log([r.v_norm_neg for r in usable])
    slope, intercept = np.polyfit(X, Y, 1)
    pred = intercept + slope * X
    ss_res = float(np.sum((Y - pred) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return StabilityFit(tuple(records), float(np.exp(intercept)), float(-slope), r2)


@dataclass(frozen=True, eq=False)
class ConditionSeries:
    radii: np.ndarray
    value: np.ndarray
    verdict: str
    provenance: str = "cM, sigmaM supplied by caller"

    def to_csv(self) -> str:
        lines = ["r,value"] + [f"{r:.17g},{v:.17g}" for r, v in zip(self.radii, self.value)]
        return "\n".join(lines) + "\n"


def _verdict(values: np.ndarray) -> str:
    tail = values[len(values) - max(len(values) // 3, 2):]
    if values[-1] >= values[0]:
        return "violated"
    if np.all(np.diff(tail) <= 0) and values[-1] < 0.1 * values[0]:
        return "tending_to_zero"
    return "inconclusive"


def decay_condition_eval(profile: DecayProfile, cM, sigmaM) -> ConditionSeries:
    """Series c_M(r) |log mu(r)|^(-sigma_M(r)) on the profile radii.

    Radii where mu >= 1 are dropped with a warning; mu = 0 contributes 0.
    """
    r = profile.radii
    mu = profile.mu
    c = np.broadcast_to(np.asarray(cM, dtype=float), r.shape)
    sig = np.broadcast_to(np.asarray(sigmaM, dtype=float), r.shape)
    keep = mu < 1.0
    if not keep.all():
        warnings.warn("radii with mu >= 1 were excluded from the series", stacklevel=2)
    r, mu, c, sig = r[keep], mu[keep], c[keep], sig[keep]
    if r.size < 2:
        raise ValueError("need at least two radii with mu < 1")
    values = np.zeros_like(mu)
    pos = mu > 0
    values[pos] = c[pos] * np.abs(np.log(mu[pos])) ** (-sig[pos])
    return ConditionSeries(r, values, _verdict(values))
