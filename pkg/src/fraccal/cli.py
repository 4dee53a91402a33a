"""Batch runner: ``fraccal run cfg.json`` and ``fraccal validate cfg.json``.

Exit codes: 0 success, 2 schema violation or unreadable config, 3 numerical
precondition failure, 4 internal tolerance breach. Every run writes
``manifest.json`` with the sha256 of each file in ``out_dir``; failed runs
also write ``error.json``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import config as C
from .dnmap import ExteriorBasis, adjoint_gap, alessandrini_gap, assemble_dn, raised_cosine
from .geometry import chain_bound, chain_counts
from .kernels import estimate_decay, l2_operator_norm
from .recovery import RecoveryConfig, RecoveryContext, deconvolve, recover_kernel_difference
from .runge import assemble, certify, truncate
from .solver import DirichletProblem, solve_dirichlet
from .stability import decay_condition_eval, mode_family, stability_experiment
from .torus import Field

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 2, 3, 4


class ToleranceBreach(RuntimeError):
    pass


def num(v) -> str:
    return f"{float(v):.17g}"


def to_json(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return num(obj) if math.isfinite(obj) else "null"
    return json.dumps(obj)


def csv_text(header, rows) -> str:
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(v if isinstance(v, str) else num(v) if isinstance(v, float)
                            else str(v) for v in row))
    return "\n".join(out) + "\n"


class Outputs:
    """Collects output texts; written in one pass at the end of a run."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def flush(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _remove_previous(out_dir)
        manifest = []
        for name in sorted(self.files):
            data = self.files[name].encode()
            (out_dir / name).write_bytes(data)
            manifest.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(),
                             "bytes": len(data)})
        (out_dir / "manifest.json").write_text(to_json({"files": manifest}) + "\n")


def _remove_previous(out_dir: Path) -> None:
    # files listed by an earlier manifest are ours to replace
    old = out_dir / "manifest.json"
    try:
        listed = json.loads(old.read_text())["files"]
    except (OSError, ValueError, KeyError, TypeError):
        return
    for entry in listed:
        name = entry.get("file") if isinstance(entry, dict) else None
        if isinstance(name, str) and "/" not in name and name not in ("", ".", ".."):
            (out_dir / name).unlink(missing_ok=True)


# experiment context

class Setup:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.params = cfg.get("params", {})
        self.seed = cfg.get("seed", 0)
        if cfg["experiment"] == "chain":
            return
        self.grid = C.make_grid(cfg)
        self.s = float(cfg["s"])
        self.omega = C.make_mask(self.grid, cfg["omega"])
        self.w1 = C.make_mask(self.grid, cfg["w1"]) if "w1" in cfg else None
        self.w2 = C.make_mask(self.grid, cfg["w2"]) if "w2" in cfg else None
        self.K1 = C.make_kernel(self.grid, cfg["kernel1"], self.omega)
        self.K2 = C.make_kernel(self.grid, cfg["kernel2"], self.omega) if "kernel2" in cfg else None

    def problem(self, K=None) -> DirichletProblem:
        return DirichletProblem(self.grid, self.s, self.omega, K if K is not None else self.K1)

    def window(self, default="w1"):
        name = self.params.get("window", default)
        W = getattr(self, name)
        if W is None:
            raise ValueError(f"experiment needs region {name}")
        return W

    def rng(self, name: str) -> np.random.Generator:
        return C.stream(self.seed, name)


def _random_field(rng, basis: ExteriorBasis) -> Field:
    return Field(basis.window.grid, basis.matrix @ rng.standard_normal(basis.size))


def exp_solve(st: Setup, out: Outputs) -> dict:
    grid = st.grid
    par = st.params
    lo, hi = st.omega.to_intervals()[0][0], st.omega.to_intervals()[-1][1]
    center = par.get("exterior_center", hi + 0.5 * (grid.L - hi))
    half = par.get("exterior_half_width", 0.25 * (grid.L - hi))
    f_ext = Field(grid, raised_cosine(grid, center, half) * ~st.omega.member)
    src = par.get("source_amplitude", 1.0)
    F = Field(grid, src * raised_cosine(grid, 0.5 * (lo + hi), 0.5 * (hi - lo)) * st.omega.member)
    rep = solve_dirichlet(st.problem(), f_ext, F)
    out.add("solution.csv", csv_text(["x", "u"], zip(grid.x.tolist(), rep.u.values.tolist())))
    summary = {"interior_residual": rep.interior_residual,
               "exterior_mismatch": rep.exterior_mismatch,
               "condition_estimate": rep.condition_estimate}
    out.add("solve.json", to_json(summary) + "\n")
    scale = max(1.0, float(np.abs(F.values).max()), float(np.abs(rep.u.values).max()))
    if rep.interior_residual > 1e-8 * scale or rep.exterior_mismatch != 0.0:
        raise ToleranceBreach(f"solve residual {rep.interior_residual:.3e} exceeds tolerance")
    return summary


def exp_dn(st: Setup, out: Outputs) -> dict:
    size = st.params.get("basis_size", 12)
    p = st.problem()
    b1, b2 = ExteriorBasis.bumps(st.w1, size), ExteriorBasis.bumps(st.w2, size)
    dn = assemble_dn(p, b1, b2)
    gap = adjoint_gap(p, b1, b2)
    scale = max(1.0, float(np.abs(dn.entries).max()))
    out.add("dn_matrix.csv", dn.to_csv())
    meta = {"window_in": dn.basis_in.window.to_intervals(),
            "window_out": dn.basis_out.window.to_intervals(),
            "kernel_builder": st.K1.builder, "adjoint_gap": gap, "scale": scale}
    out.add("dn_meta.json", to_json(meta) + "\n")
    if gap > 1e-8 * scale:
        raise ToleranceBreach(f"adjoint gap {gap:.3e} exceeds 1e-8 * {scale:.3e}")
    return meta


def exp_alessandrini(st: Setup, out: Outputs) -> dict:
    size = st.params.get("basis_size", 12)
    trials = st.params.get("trials", 20)
    p1, p2 = st.problem(st.K1), st.problem(st.K2)
    b1, b2 = ExteriorBasis.bumps(st.w1, size), ExteriorBasis.bumps(st.w2, size)
    rng = st.rng("alessandrini")
    rows, worst = [], 0.0
    ok = True
    for t in range(trials):
        f, g = _random_field(rng, b1), _random_field(rng, b2)
        res = alessandrini_gap(p1, p2, f, g)
        ok &= res.within_contract
        worst = max(worst, res.gap)
        rows.append((t, res.lhs, res.rhs, res.gap))
    out.add("alessandrini.csv", csv_text(["trial", "lhs", "rhs", "gap"], rows))
    summary = {"trials": trials, "max_gap": worst}
    out.add("alessandrini.json", to_json(summary) + "\n")
    if not ok:
        raise ToleranceBreach(f"Alessandrini gap {worst:.3e} outside contract")
    return summary


def exp_runge(st: Setup, out: Outputs) -> dict:
    par = st.params
    W = st.window()
    sys_ = assemble(st.problem(), window=W, basis_size=par.get("basis_size", 12))
    levels = par.get("n_eps_rel", [1e-1, 1e-2, 1e-3, 1e-4])
    trials = par.get("trials", 10)
    rng = st.rng("runge")
    rows, all_ok = [], True
    for t in range(trials):
        vals = np.zeros(st.grid.N)
        vals[st.omega.member] = rng.standard_normal(st.omega.count)
        v = Field(st.grid, vals)
        for rel in levels:
            data = truncate(sys_, v, rel * math.sqrt(sys_.lam[0]))
            cert = certify(sys_, data, v)
            all_ok &= cert.ok
            rows.append((t, float(rel), data.N_eps, data.used_modes, cert.approx_err,
                         cert.f_norm, cert.f_norm_bound, cert.astar_r_norm, cert.astar_bound,
                         cert.dual_bound, str(cert.ok).lower()))
    out.add("spectrum.csv", sys_.spectrum_csv())
    out.add("certificates.csv", csv_text(
        ["trial", "n_eps_rel", "N_eps", "modes", "approx_err", "f_norm", "f_norm_bound",
         "astar_r_norm", "astar_bound", "dual_bound", "ok"], rows))
    summary = {"rank": sys_.rank, "basis_size": sys_.basis.size, "thinned": list(sys_.thinned),
               "all_certified": bool(all_ok)}
    out.add("runge.json", to_json(summary) + "\n")
    if not all_ok:
        raise ToleranceBreach("a truncation certificate failed")
    return summary


def exp_stability(st: Setup, out: Outputs) -> dict:
    W = st.window()
    family = mode_family(st.omega, st.params.get("family_size", 20))
    fit = stability_experiment(st.problem(), W, family)
    out.add("stability.csv", fit.to_csv())
    etas = [r.eta for r in fit.records if r.eta > 0]
    summary = {"c_hat": fit.c_hat, "sigma_hat": fit.sigma_hat, "fit_r2": fit.fit_r2,
               "eta_decades": math.log10(max(etas) / min(etas)) if etas else 0.0}
    out.add("stability.json", to_json(summary) + "\n")
    return summary


def exp_condition(st: Setup, out: Outputs) -> dict:
    par = st.params
    rd = par.get("radii", {"start": 0.0, "stop": st.grid.L / 2, "num": 21})
    radii = np.linspace(rd["start"], rd["stop"], rd["num"])
    hs, _ = estimate_decay(st.K1, st.omega, radii)
    series = decay_condition_eval(hs, par.get("c_M", 1.0), par.get("sigma_M", 1.0))
    out.add("decay_profile.csv", hs.to_csv())
    out.add("condition.csv", series.to_csv())
    summary = {"verdict": series.verdict, "provenance": series.provenance}
    out.add("condition.json", to_json(summary) + "\n")
    return summary


def exp_recover(st: Setup, out: Outputs) -> dict:
    par = st.params
    rcfg = RecoveryConfig(
        st.omega, st.w1, st.w2, s=st.s,
        basis_size=par.get("basis_size", 12),
        n_eps_schedule=tuple(par.get("n_eps_schedule", (1e-3, 1e-5, 1e-7))),
        delta=par.get("delta", 0.75),
        tol=par.get("tol", 0.05),
    )
    ctx = RecoveryContext.build(st.K1, st.K2, rcfg)
    rep = recover_kernel_difference(st.K1, st.K2, rcfg, ctx)
    n = rep.estimated.shape[0]
    rows = [(a, b, float(rep.estimated[a, b]), float(rep.truth[a, b]),
             float(rep.per_entry_err[a, b])) for a in range(n) for b in range(n)]
    out.add("pairings.csv", csv_text(["v1", "v2", "estimated", "truth", "abs_err"], rows))
    out.add("stages.csv", csv_text(["stage", "n_eps_rel", "frobenius_rel_err"],
                                   [(k, float(e), float(r)) for k, (e, r) in
                                    enumerate(zip(rcfg.n_eps_schedule, rep.stage_errors))]))
    summary = {"frobenius_rel_err": rep.frobenius_rel_err, "stage_errors": rep.stage_errors,
               "scale": rep.scale, "decomposition": rep.decomposition,
               "runge_residuals": rep.runge_residuals,
               "kernel_norms": [l2_operator_norm(st.K1), l2_operator_norm(st.K2)]}
    out.add("recovery.json", to_json(summary) + "\n")
    if par.get("deconvolve", False):
        D = deconvolve(rep, rcfg)
        idx = st.omega.nodes
        out.add("kernel_difference.csv", csv_text(
            ["i", "j", "estimated", "truth"],
            [(int(i), int(j), float(D[i, j]), float(st.K1.K[i, j] - st.K2.K[i, j]))
             for i in idx for j in idx]))
    limit = par.get("max_rel_err", 0.1)
    if rep.frobenius_rel_err > limit:
        raise ToleranceBreach(f"frobenius_rel_err {rep.frobenius_rel_err:.4g} exceeds {limit}")
    return summary


def exp_chain(st: Setup, out: Outputs) -> dict:
    par = st.params
    args = (par["r_W"], par["x_W"], par["r_Omega"], par["x_Omega"], par["h"])
    rep = chain_counts(*args, c_ns=par.get("c_ns", 1.0), c_scale=par.get("c_scale", 1.0),
                       n_omega=par.get("n_omega", 1))
    summary = dict(asdict(rep), total=rep.total, bound=chain_bound(*args))
    out.add("chain.json", to_json(summary) + "\n")
    if rep.total > summary["bound"]:
        raise ToleranceBreach(f"chain total {rep.total} exceeds bound {summary['bound']}")
    return summary


EXPERIMENTS = {
    "solve": exp_solve,
    "dn": exp_dn,
    "alessandrini": exp_alessandrini,
    "runge": exp_runge,
    "stability": exp_stability,
    "condition": exp_condition,
    "recover": exp_recover,
    "chain": exp_chain,
}

NUMERIC_ERRORS = (ValueError, ArithmeticError, LinAlgError, RuntimeError)


def _load(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _fail(out_dir: Path | None, code: int, kind: str, message: str, violations=()) -> int:
    err = {"status": "error", "exit_code": code, "kind": kind, "message": message,
           "violations": list(violations)}
    print(to_json(err), file=sys.stderr)
    if out_dir is not None:
        out = Outputs()
        out.add("error.json", to_json(err) + "\n")
        out.flush(out_dir)
    return code


def run(config_path: str) -> int:
    try:
        cfg = _load(config_path)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(None, EXIT_SCHEMA, "unreadable_config", str(exc))
    out_dir = None
    if isinstance(cfg, dict) and isinstance(cfg.get("out_dir"), str) and cfg["out_dir"]:
        out_dir = Path(cfg["out_dir"])
    errs = C.violations(cfg)
    if errs:
        return _fail(out_dir, EXIT_SCHEMA, "schema_violation", "configuration is invalid", errs)
    out = Outputs()
    try:
        st = Setup(cfg)
        summary = EXPERIMENTS[cfg["experiment"]](st, out)
    except ToleranceBreach as exc:
        out.add("error.json", to_json({"status": "error", "exit_code": EXIT_TOLERANCE,
                                       "kind": "tolerance_breach", "message": str(exc),
                                       "violations": []}) + "\n")
        out.flush(out_dir)
        print(str(exc), file=sys.stderr)
        return EXIT_TOLERANCE
    except NUMERIC_ERRORS as exc:
        return _fail(out_dir, EXIT_NUMERIC, type(exc).__name__, str(exc))
    out.add("config.json", to_json(cfg) + "\n")
    out.flush(out_dir)
    print(to_json({"status": "ok", "experiment": cfg["experiment"], "summary": summary}))
    return EXIT_OK


def validate(config_path: str) -> int:
    try:
        cfg = _load(config_path)
    except (OSError, json.JSONDecodeError) as exc:
        print(to_json({"valid": False, "violations": [f"unreadable config: {exc}"]}))
        return EXIT_SCHEMA
    errs = C.violations(cfg)
    print(to_json({"valid": not errs, "violations": errs}))
    return EXIT_OK if not errs else EXIT_SCHEMA


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fraccal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "execute the configured experiment"),
                           ("validate", "check a configuration without computing")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config")
    args = parser.parse_args(argv)
    return run(args.config) if args.command == "run" else validate(args.config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
