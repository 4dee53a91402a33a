import hashlib
import json

import pytest

from fraccal.cli import main, to_json
from fraccal.config import stream, violations

KERNEL = {"builder": "prescribed_decay", "amplitude": 0.5, "rate": 1.0, "quadratic_rate": 1.0}


def base(tmp_path, experiment, N=128, **extra):
    cfg = {
        "experiment": experiment,
        "grid": {"L": 10.0, "N": N},
        "s": 0.5,
        "omega": [{"lo": -1.0, "hi": 1.0}],
        "w1": [{"lo": 3.0, "hi": 6.0}],
        "w2": [{"lo": -6.0, "hi": -3.0}],
        "kernel1": dict(KERNEL),
        "seed": 11,
        "out_dir": str(tmp_path / "out"),
    }
    cfg.update(extra)
    return cfg


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def manifest_ok(out_dir):
    man = json.loads((out_dir / "manifest.json").read_text())
    names = {e["file"] for e in man["files"]}
    on_disk = {p.name for p in out_dir.iterdir()} - {"manifest.json"}
    assert names == on_disk
    for e in man["files"]:
        assert hashlib.sha256((out_dir / e["file"]).read_bytes()).hexdigest() == e["sha256"]
    return names


@pytest.mark.parametrize("experiment,expected", [
    ("solve", {"solution.csv", "solve.json"}),
    ("dn", {"dn_matrix.csv", "dn_meta.json"}),
    ("runge", {"spectrum.csv", "certificates.csv", "runge.json"}),
    ("stability", {"stability.csv", "stability.json"}),
    ("condition", {"decay_profile.csv", "condition.csv", "condition.json"}),
])
def test_experiments_write_manifested_outputs(tmp_path, experiment, expected):
    cfg = base(tmp_path, experiment)
    assert main(["run", write(tmp_path, cfg)]) == 0
    names = manifest_ok(tmp_path / "out")
    assert expected | {"config.json"} == names


def test_alessandrini_identical_kernels(tmp_path):
    cfg = base(tmp_path, "alessandrini", kernel2=dict(KERNEL))
    assert main(["run", write(tmp_path, cfg)]) == 0
    rows = (tmp_path / "out" / "alessandrini.csv").read_text().splitlines()
    assert rows[0] == "trial,lhs,rhs,gap" and len(rows) == 21
    assert all(float(r.split(",")[3]) <= 1e-10 for r in rows[1:])


def test_chain_experiment(tmp_path):
    cfg = {"experiment": "chain", "out_dir": str(tmp_path / "out"),
           "params": {"r_W": 0.1, "x_W": 4.5, "r_Omega": 1, "x_Omega": 0, "h": 0.01}}
    assert main(["run", write(tmp_path, cfg)]) == 0
    rep = json.loads((tmp_path / "out" / "chain.json").read_text())
    assert (rep["N_vert"], rep["N1"], rep["N3"]) == (22, 23, 44)
    assert rep["total"] <= rep["bound"]


def test_recover_reference_config(tmp_path):
    k1 = dict(KERNEL, bump={"width": 0.7, "amplitude": 0.5})
    cfg = base(tmp_path, "recover", N=512, kernel1=k1, kernel2=dict(KERNEL),
               params={"deconvolve": True})
    assert main(["run", write(tmp_path, cfg)]) == 0
    rep = json.loads((tmp_path / "out" / "recovery.json").read_text())
    assert rep["frobenius_rel_err"] <= 0.1
    assert "kernel_difference.csv" in manifest_ok(tmp_path / "out")


def test_reruns_are_byte_identical(tmp_path):
    cfg = base(tmp_path, "alessandrini", kernel2=dict(KERNEL, rate=2.0))
    path = write(tmp_path, cfg)
    assert main(["run", path]) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    assert main(["run", path]) == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    assert first == second


def test_seed_changes_random_draws(tmp_path):
    cfg = base(tmp_path, "runge")
    assert main(["run", write(tmp_path, cfg)]) == 0
    a = (tmp_path / "out" / "certificates.csv").read_text()
    cfg["seed"] = 12
    assert main(["run", write(tmp_path, cfg)]) == 0
    assert a != (tmp_path / "out" / "certificates.csv").read_text()


def test_named_streams_are_reproducible():
    a = stream(5, "runge").standard_normal(4)
    assert (a == stream(5, "runge").standard_normal(4)).all()
    assert not (a == stream(5, "alessandrini").standard_normal(4)).all()


def test_validate_reports_violations(tmp_path, capsys):
    cfg = base(tmp_path, "recover", kernel2=dict(KERNEL), params={"delta": 0.4})
    cfg["grid"]["N"] = 100
    assert main(["validate", write(tmp_path, cfg)]) == 2
    report = json.loads(capsys.readouterr().out)
    assert not report["valid"]
    assert any("delta must lie in (1/2,1)" in v for v in report["violations"])
    assert any("power of two" in v for v in report["violations"])


def test_validate_overlap_and_unknown_keys(tmp_path):
    cfg = base(tmp_path, "dn", w1=[{"lo": 0.5, "hi": 4.0}])
    cfg["colour"] = "blue"
    errs = violations(cfg)
    assert any("overlap" in e for e in errs)
    assert any("colour" in e for e in errs)


def test_validate_valid_and_unreadable(tmp_path):
    assert main(["validate", write(tmp_path, base(tmp_path, "dn"))]) == 0
    assert main(["validate", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["validate", str(tmp_path / "broken.json")]) == 2


def test_chain_needs_no_grid_but_other_experiments_do(tmp_path):
    cfg = base(tmp_path, "dn")
    del cfg["grid"]
    assert any("grid" in e for e in violations(cfg))
    chain = {"experiment": "chain", "out_dir": "x", "params": {"r_W": 3.0, "x_W": 1, "r_Omega": 1, "x_Omega": 0, "h": 0.01}}
    assert violations(chain) == ["params/r_W: r_W must lie in (0,2]"]


def test_schema_failure_exit_code_and_error_file(tmp_path):
    cfg = base(tmp_path, "dn", s=1.5)
    assert main(["run", write(tmp_path, cfg)]) == 2
    err = json.loads((tmp_path / "out" / "error.json").read_text())
    assert err["exit_code"] == 2 and err["kind"] == "schema_violation"
    manifest_ok(tmp_path / "out")


def test_numerical_precondition_exit_code(tmp_path):
    cfg = base(tmp_path, "stability", params={"family_size": 2})
    assert main(["run", write(tmp_path, cfg)]) == 3
    err = json.loads((tmp_path / "out" / "error.json").read_text())
    assert err["kind"] == "DegenerateRegressionError"


def test_tolerance_breach_exit_code(tmp_path):
    k1 = dict(KERNEL, bump={"width": 0.7, "amplitude": 0.5})
    cfg = base(tmp_path, "recover", kernel1=k1, kernel2=dict(KERNEL), params={"max_rel_err": 1e-9})
    assert main(["run", write(tmp_path, cfg)]) == 4
    names = manifest_ok(tmp_path / "out")
    assert {"error.json", "recovery.json"} <= names


def test_stale_outputs_are_replaced(tmp_path):
    cfg = base(tmp_path, "dn")
    assert main(["run", write(tmp_path, cfg)]) == 0
    cfg["s"] = 2.0
    assert main(["run", write(tmp_path, cfg)]) == 2
    assert manifest_ok(tmp_path / "out") == {"error.json"}


def test_json_writer_uses_17_digits():
    assert to_json({"a": 0.1, "b": [1, True, None], "c": float("nan")}) == \
        '{"a": 0.10000000000000001, "b": [1, true, null], "c": null}'
