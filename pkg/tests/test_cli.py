import json
import os
import subprocess
import sys

import pytest

from expanderlab.cli import main
from expanderlab.config import RunConfig, load_config, parse_config_text


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("EXPANDERLAB_OUT", str(tmp_path))
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_config_parsing(tmp_path):
    assert parse_config_text("# c\nn = 3\nstep=5e-4  # half\n") == {"n": 3, "step": 5e-4}
    with pytest.raises(ValueError):
        parse_config_text("bogus = 1")
    with pytest.raises(ValueError):
        parse_config_text("n 3")
    p = tmp_path / "c.cfg"
    p.write_text("n = 3\nthreads = 2\n")
    cfg = load_config(str(p), n=None, threads=4)
    assert cfg.n == 3 and cfg.threads == 4
    with pytest.raises(ValueError):
        RunConfig(n=1)
    assert RunConfig().updated(seed=5, n=None).seed == 5


def test_solve_by_r0(capsys, outdir):
    code, out, _ = run(capsys, "solve", "--r0", "1.0")
    assert code == 0
    d = json.loads(out)
    (s,) = d["solutions"]
    assert s["certified"] and abs(s["delta"] - 2.317268822920899) < 1e-9
    assert os.path.exists(s["file"]) and os.path.dirname(s["file"]) == str(outdir)


def test_out_flag_beats_environment(capsys, outdir, tmp_path_factory):
    other = tmp_path_factory.mktemp("other")
    code, out, _ = run(capsys, "solve", "--r0", "1.0", "--out", str(other))
    assert code == 0 and json.loads(out)["solutions"][0]["file"].startswith(str(other))


def test_solve_no_solutions_and_fold(capsys, outdir, dstar):
    code, out, _ = run(capsys, "solve", "--delta", "1.0")
    assert code == 3 and json.loads(out)["solutions"] == []
    code, _, err = run(capsys, "solve", "--delta", repr(dstar.delta_star))
    assert code == 4 and "FoldProximity" in err


def test_usage_errors(capsys, outdir):
    with pytest.raises(SystemExit) as ei:
        main(["solve", "--r0", "-1"])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        main(["solve"])
    assert ei.value.code == 2
    capsys.readouterr()
    code, _, err = run(capsys, "spectrum", "--in", str(outdir / "missing.json"))
    assert code == 2 and "cannot read" in err


def test_spectrum_and_eigen_plot(capsys, outdir):
    run(capsys, "solve", "--r0", "2.1010028323981484")
    code, out, _ = run(capsys, "spectrum", "--in", str(outdir / "expander_0.json"), "--branch", "large")
    d = json.loads(out)
    assert code == 0 and d["index"] == 0 and d["nullity"] == 0 and d["branch"] == "large"
    svg = outdir / "eig.svg"
    code, _, _ = run(capsys, "plot", "--kind", "eigen", "--in", str(outdir / "spectrum.json"), "--svg", str(svg))
    assert code == 0 and svg.read_text().lstrip().startswith("<?xml")


def test_spectrum_index_incomplete(capsys, outdir):
    run(capsys, "solve", "--r0", "0.2325906080487699")
    code, _, err = run(capsys, "spectrum", "--in", str(outdir / "expander_0.json"), "--modes", "-1")
    assert code == 4 and "IndexIncomplete" in err


def test_torus_guard_and_force(capsys, outdir):
    run(capsys, "solve", "--r0", "0.2325906080487699")
    exp = str(outdir / "expander_0.json")
    code, _, err = run(capsys, "torus", "--expander", exp)
    assert code == 4 and "PreconditionError" in err
    code, out, _ = run(capsys, "torus", "--expander", exp, "--force", "--t-steps", "10")
    d = json.loads(out)
    assert code == 3 and d["avoidance"]["precondition_ok"] is False
    assert d["Rminus"] < 2 < d["Rplus"]


def test_audit_forms(capsys, outdir):
    code, out, _ = run(capsys, "audit", "--suite", "forms", "--samples", "4", "--r0", "1.0")
    recs = json.loads(out)
    assert code == 0 and {r["inequality"] for r in recs} == {"symmetry_plain", "symmetry_vweighted"}
    assert (outdir / "audit_forms.json").exists()
    with pytest.warns(UserWarning):
        code, _, _ = run(capsys, "audit", "--suite", "forms", "--samples", "0")
    assert code == 0


def test_sweep_and_plots_deterministic(capsys, outdir):
    code, out, _ = run(capsys, "sweep", "--r0-grid", "0.3:3:8")
    d = json.loads(out)
    assert code == 0 and d["points"] == 8 and d["failures"] == 0
    svgs = []
    for k in range(2):
        path = outdir / f"delta{k}.svg"
        assert run(capsys, "plot", "--kind", "delta", "--in", d["csv"], "--svg", str(path), "--delta-star", "2.276")[0] == 0
        svgs.append(path.read_bytes())
    assert svgs[0] == svgs[1]
    run(capsys, "solve", "--r0", "1.0")
    path = outdir / "prof.svg"
    assert run(capsys, "plot", "--kind", "profiles", "--in", str(outdir / "expander_0.json"), "--svg", str(path))[0] == 0


def test_degree_grid(capsys, outdir):
    code, out, _ = run(capsys, "degree", "--delta-grid", "1.5,3.0")
    d = json.loads(out)
    assert code == 0 and d["verdict"] == "PASS"
    assert [r["degree"] for r in d["reports"]] == [0, 0]
    assert (outdir / "degree.csv").exists()


def test_solve_is_reproducible(capsys, outdir, tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    run(capsys, "solve", "--r0", "0.7", "--out", str(a))
    run(capsys, "solve", "--r0", "0.7", "--out", str(b))
    assert (a / "expander_0.json").read_bytes() == (b / "expander_0.json").read_bytes()


def test_console_entry_point(tmp_path):
    env = dict(os.environ, EXPANDERLAB_OUT=str(tmp_path))
    p = subprocess.run([sys.executable, "-m", "expanderlab", "solve", "--r0", "1.0"], capture_output=True,
                       text=True, env=env)
    assert p.returncode == 0 and json.loads(p.stdout)["n"] == 2
