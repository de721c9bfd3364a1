"""Experiment runner: dispatch, determinism, exit codes, schemas."""

import json
from pathlib import Path

import pytest

from wkblab.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main


def write_cfg(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


DIRAC_CFG = """
[experiment]
name = dirac-sharpness
seed = 7

[dirac]
d = 4
n_max = 8
ell_max = 2
"""

MOMENTS_CFG = """
[experiment]
name = jacobi-moments
seed = 3

[moments]
sets = 1 2 4 0 ; 2 2 2 1
n = 16 32 64 128 256 512
"""


def test_list_command(capsys):
    assert main(["list"]) == EXIT_PASS
    out = capsys.readouterr().out
    for name in ("hj-validate", "dispersion-wave", "dirac-sharpness"):
        assert name in out


def test_validate_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, DIRAC_CFG)
    assert main(["validate-config", "--config", cfg]) == EXIT_PASS
    bad = write_cfg(tmp_path, "[experiment]\nname = bogus\n", "bad.ini")
    assert main(["validate-config", "--config", bad]) == EXIT_USAGE
    assert main(["validate-config", "--config", str(tmp_path / "missing.ini")]) == EXIT_USAGE


def test_dirac_sharpness_run_and_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, DIRAC_CFG)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_PASS
    payload = json.loads((out / "dirac-sharpness.json").read_text())
    assert payload["passed"] is True
    names = {c["name"] for c in payload["criteria"]}
    assert "sharpness_equality" in names
    # equality 5/6 = 5/6 reported
    eq = next(c for c in payload["criteria"] if c["name"] == "sharpness_equality")
    assert eq["value"] == "5/6" and eq["target"] == "5/6"
    # every criterion carries a source tag
    assert all(c["source"] for c in payload["criteria"])
    csv = (out / "dirac-sharpness.csv").read_text().splitlines()
    assert csv[0] == "d,n,ell,q,value"


def test_byte_identical_reruns(tmp_path):
    cfg = write_cfg(tmp_path, MOMENTS_CFG)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["run", "--config", cfg, "--out", str(out1)]) == EXIT_PASS
    assert main(["run", "--config", cfg, "--out", str(out2)]) == EXIT_PASS
    for fname in ("jacobi-moments.json", "jacobi-moments.csv"):
        assert (out1 / fname).read_bytes() == (out2 / fname).read_bytes()


def test_unknown_experiment_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, "[experiment]\nname = bogus\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_json_reports_failures_with_nonzero_exit(tmp_path):
    # an unreachable tolerance on a moments set forces a clean criteria failure
    cfg = write_cfg(
        tmp_path,
        """
[experiment]
name = jacobi-moments

[moments]
sets = 1 2 4 0
n = 4 5 6 7
""",
    )
    code = main(["run", "--config", cfg, "--out", str(tmp_path / "o")])
    payload = json.loads((tmp_path / "o" / "jacobi-moments.json").read_text())
    assert code == (EXIT_PASS if payload["passed"] else EXIT_FAIL)


def test_hj_validate_flat_exact(tmp_path):
    cfg = write_cfg(
        tmp_path,
        """
[experiment]
name = hj-validate

[chart]
kind = flat
dim = 1

[mass]
m = 1.0

[hj]
h = 1.0 0.25 0.0625
""",
    )
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_PASS
    payload = json.loads((out / "hj-validate.json").read_text())
    crits = {c["name"]: c for c in payload["criteria"]}
    assert crits["flat_phase_sup_error"]["pass"] is True
    assert crits["remainder_exact"]["value"] == "exact"
    assert crits["flat_phase_sup_error"]["source"].startswith("sec1.2")
