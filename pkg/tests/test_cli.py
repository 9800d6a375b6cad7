import io
import json
import subprocess
import sys

import numpy as np
import pytest

from sa_lab.cli import (
    DEFAULTS,
    cmd_bounds,
    cmd_fit,
    cmd_run,
    cmd_verify,
    log_grid,
    main,
    read_config,
    read_mse_csv,
)
from sa_lab.core import DomainError


def _cfg(tmp_path, **kw):
    cfg = dict(DEFAULTS)
    cfg.update(system="khalil", k_max=2000, n_reps=8, csv=str(tmp_path / "mse.csv"),
               summary=str(tmp_path / "summary.json"))
    cfg.update(kw)
    return cfg


def test_run_writes_csv_and_summary(tmp_path):
    summary = cmd_run(_cfg(tmp_path))
    raw = (tmp_path / "mse.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "k,mse,stderr,bound"
    assert lines[1].startswith("0,")
    k, mse, se = read_mse_csv(tmp_path / "mse.csv")
    assert k[-1] == 2000 and np.all(mse > 0) and np.all(se >= 0)
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc == json.loads(json.dumps(summary))
    assert doc["spec_version"] == 1 and doc["regime"] == "SmoothSubexp"
    assert doc["config"]["projection"] is True
    assert {"slope", "r_squared"} <= set(doc["rate_fit"])


def test_noise_free_single_replication_has_zero_stderr(tmp_path):
    cmd_run(_cfg(tmp_path, sigma=0.0, n_reps=1))
    _, _, se = read_mse_csv(tmp_path / "mse.csv")
    assert np.all(se == 0.0)


def test_summary_replays_bit_identically(tmp_path):
    cmd_run(_cfg(tmp_path, system="selector", k_max=3000, n_reps=5, base_seed=11))
    first = (tmp_path / "mse.csv").read_bytes()
    again = tmp_path / "again.csv"
    rc = main(["run", "--config", str(tmp_path / "summary.json"), "--csv", str(again),
               "--summary", str(tmp_path / "s2.json")])
    assert rc == 0
    assert again.read_bytes() == first


@pytest.mark.parametrize("name", ["selector", "khalil", "artstein"])
def test_verify_systems_pass(name, tmp_path, capsys):
    rep = cmd_verify(name, n=300)
    assert rep["passed"], {k: v for k, v in rep["checks"].items() if not v.get("passed", True)}
    out = tmp_path / "v.json"
    assert main(["verify", "--system", name, "--samples", "200", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["system"] == name


def test_log_grid_starts_at_zero():
    g = log_grid(10**5, 30)
    assert g[0] == 0 and g[1] == 1 and g[-1] == 10**5
    assert np.all(np.diff(g) > 0)


def test_bounds_table_constant_step_tail(tmp_path):
    buf = io.StringIO()
    cmd_bounds(_cfg(tmp_path, system="selector", xi=0.0, alpha=0.01, K=1.0, k_max=10**7), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("# ")
    consts = json.loads(lines[0][2:])
    assert consts["regime"] == "NonsmoothExp"
    assert lines[1] == "k,bound"
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
    assert rows[0, 0] == 0
    # with xi = 0 the bound flattens to its ball
    assert rows[-1, 1] == pytest.approx(rows[-2, 1], rel=1e-6)


def test_bounds_artstein_finite(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bounds", "--system", "artstein", "--k-max", "100000", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    vals = np.array([float(ln.split(",")[1]) for ln in lines[2:]])
    assert np.all(np.isfinite(vals)) and np.all(vals > 0)
    assert json.loads(lines[0][2:])["preconditions_violated"] == []


def test_fit_subcommand(tmp_path, capsys):
    k = np.arange(0, 1001)
    with open(tmp_path / "c.csv", "w") as fh:
        fh.write("k,mse,stderr,bound\n")
        for kk in k:
            fh.write(f"{kk},{5.0 / (kk + 1.0)},0,\n")
    rep = cmd_fit(tmp_path / "c.csv", 0.1, "SmoothExp", 1.0)
    assert rep["rate_fit"]["slope"] == pytest.approx(-1.0, abs=0.01)
    assert rep["theoretical_exponent"] == -1.0
    assert main(["fit", str(tmp_path / "c.csv")]) == 0
    assert '"slope"' in capsys.readouterr().out


def test_config_file_parsing(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nsystem = artstein\nalpha = 0.05\nx0 = 1, 2\nprojection = off\n\nn_reps = 3\n")
    cfg = read_config(f)
    assert cfg == {"system": "artstein", "alpha": 0.05, "x0": [1.0, 2.0], "projection": False, "n_reps": 3}
    f.write_text("bogus = 1\n")
    with pytest.raises(DomainError):
        read_config(f)
    f.write_text("alpha 1\n")
    with pytest.raises(DomainError):
        read_config(f)


def test_flags_override_config(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("system = selector\nk_max = 500\nn_reps = 2\n")
    csv = tmp_path / "m.csv"
    rc = main(["run", "--config", str(f), "--k-max", "300", "--csv", str(csv),
               "--summary", str(tmp_path / "s.json")])
    assert rc == 0
    assert json.loads((tmp_path / "s.json").read_text())["config"]["k_max"] == 300
    assert read_mse_csv(csv)[0][-1] == 300


def test_errors_exit_one(tmp_path, capsys):
    assert main(["run", "--system", "khalil", "--xi", "1.5", "--csv", str(tmp_path / "x.csv"),
                 "--summary", str(tmp_path / "x.json")]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["fit", str(tmp_path / "missing.csv")]) == 1


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "sa_lab.cli", "verify", "--system", "khalil",
                          "--samples", "100"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["passed"] is True
