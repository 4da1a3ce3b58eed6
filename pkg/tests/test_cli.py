import json
import subprocess
import sys

import pytest

from gibbsgeom.cli import SCHEMAS, main
from gibbsgeom.config import ConfigError, parse_text

STRAUSS = """\
potential.kind = "strauss"
potential.r = 1.0
potential.a = 1.0
model.tau = 0.05
model.beta = 1.0
score.kind = "clique"
score.k = 1
score.s = 1.0
grid.lambdas = [100, 400]
mc.n_reps = 20
mc.seed = 9
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, kind, text, *extra, out="out"):
    cfg = write(tmp_path, text)
    code = main([kind, "--config", cfg, "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


# parsing -----------------------------------------------------------------


def test_parse_values_and_comments():
    raw = parse_text('model.tau = 0.5  # comment\nscore.kind = clique\nrho.grid = [0, 1, "inf"]\n')
    assert raw.values["model.tau"] == 0.5
    assert raw.values["score.kind"] == "clique"
    assert raw.values["rho.grid"][-1] == float("inf")


@pytest.mark.parametrize(
    "text,needle",
    [
        ("potentail.kind = 1\n", "potentail.kind"),
        ("model.tau = -1\n", "model.tau"),
        ("model.tau = 1\nmodel.tau = 2\n", "duplicate"),
        ("just words\n", "key = value"),
    ],
)
def test_parse_errors_name_the_key_and_line(text, needle):
    with pytest.raises(ConfigError) as exc:
        parse_text(text, "x.cfg")
    assert needle in str(exc.value) and "x.cfg:" in str(exc.value)


# exit codes -----------------------------------------------------------------


def test_unknown_key_exits_2(tmp_path, capsys):
    code, _ = run(tmp_path, "sample", "potentail.kind = \"strauss\"\n")
    assert code == 2
    assert "potentail" in capsys.readouterr().err


def test_margin_abort(tmp_path, capsys):
    text = 'potential.kind = "hardcore"\npotential.r = 1\nmodel.tau = 0.1\nmodel.beta = 1\n'
    code, out = run(tmp_path, "sample", text)
    assert code == 2
    assert "1.25664" in capsys.readouterr().err
    assert not out.exists()


def test_margin_override_runs(tmp_path):
    text = 'potential.kind = "hardcore"\npotential.r = 1\nmodel.tau = 0.1\nmodel.beta = 1\ngrid.lambdas = [25]\nmc.n_reps = 2\n'
    code, out = run(tmp_path, "sample", text, "--allow-near-critical")
    assert code == 0
    assert json.loads((out / "summary.json").read_text())["near_critical"] is True


def test_missing_config_exits_4(tmp_path):
    assert main(["sample", "--config", str(tmp_path / "nope.cfg")]) == 4


def test_unwritable_out_exits_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = write(tmp_path, STRAUSS.replace("mc.n_reps = 20", "mc.n_reps = 2"))
    assert main(["sample", "--config", cfg, "--out", str(blocker / "sub")]) == 4


def test_bad_seed_exits_2(tmp_path):
    code, _ = run(tmp_path, "sample", STRAUSS, "--seed", "-3")
    assert code == 2


def test_sampler_failure_exits_3(tmp_path):
    code, out = run(tmp_path, "variance-scan", STRAUSS + "sampler.max_clan_points = 1\n")
    assert code == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "partial" and "ClanOverflow" in summary["error"]


def test_clt_scan_needs_100_reps(tmp_path):
    code, _ = run(tmp_path, "clt-scan", STRAUSS)
    assert code == 2


# outputs ----------------------------------------------------------------------


def test_variance_scan_schema_and_echo(tmp_path, capsys):
    code, out = run(tmp_path, "variance-scan", STRAUSS)
    assert code == 0
    err = capsys.readouterr().err
    assert "admissibility margin" in err and "rho rule" in err
    lines = (out / "variance_scan.csv").read_text().splitlines()
    assert lines[0] == "lambda,n_reps,mean,var,var_se,var_over_lambda,d_k,mismatch"
    assert len(lines) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 9 and summary["status"] == "ok"
    assert set(summary) >= {"versions", "admissibility_margin", "rho_rule", "wall_clock_seconds", "config"}


def test_seed_and_out_from_environment(tmp_path, monkeypatch):
    cfg = write(tmp_path, STRAUSS)
    monkeypatch.setenv("GIBBSGEOM_SEED", "123")
    monkeypatch.setenv("GIBBSGEOM_OUT", str(tmp_path / "envout"))
    assert main(["variance-scan", "--config", cfg]) == 0
    assert json.loads((tmp_path / "envout" / "summary.json").read_text())["seed"] == 123
    # the flag wins over the environment
    assert main(["variance-scan", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "flag")]) == 0
    assert json.loads((tmp_path / "flag" / "summary.json").read_text())["seed"] == 5


def test_byte_identical_reruns_and_threads(tmp_path):
    _, a = run(tmp_path, "variance-scan", STRAUSS, out="a")
    _, b = run(tmp_path, "variance-scan", STRAUSS, out="b")
    _, c = run(tmp_path, "variance-scan", STRAUSS, "--threads", "2", out="c")
    csv_a = (a / "variance_scan.csv").read_bytes()
    assert csv_a == (b / "variance_scan.csv").read_bytes() == (c / "variance_scan.csv").read_bytes()


@pytest.mark.parametrize(
    "kind,extra,files",
    [
        ("sample", "", ["sample.csv"]),
        ("mismatch", "", ["mismatch.csv"]),
        ("tails", 'tails.mode = "clan_diameter"\n', ["tails.csv"]),
        ("probe", "probe.r = 4\nprobe.n_outer = 3\nprobe.n_inner = 3\n", ["probe.csv"]),
    ],
)
def test_other_kinds_write_their_tables(tmp_path, kind, extra, files):
    code, out = run(tmp_path, kind, STRAUSS.replace("mc.n_reps = 20", "mc.n_reps = 40") + extra)
    assert code == 0
    for f in files:
        header = (out / f).read_text().splitlines()[0]
        if kind.replace("-", "_") + ".csv" == f and kind in SCHEMAS:
            assert header == ",".join(SCHEMAS[kind])


def test_sigma2_kind(tmp_path):
    text = 'potential.kind = "strauss"\npotential.r = 1\nmodel.tau = 0.5\nmodel.beta = 0\nscore.kind = "constant"\nquadrature.n = 20\nquadrature.nodes = 4\n'
    code, out = run(tmp_path, "sigma2", text)
    assert code == 0
    lines = (out / "sigma2.csv").read_text().splitlines()
    assert lines[0] == ",".join(SCHEMAS["sigma2"])
    assert lines[1].split(",")[2] == "1.0"


def test_oracle_check_kind(tmp_path):
    code, out = run(tmp_path, "oracle-check", "oracle.n_sets = 10\n")
    assert code == 0
    rows = (out / "oracle_check.csv").read_text().splitlines()
    assert rows[0] == "suite,cases,passed,failed"
    assert all(r.endswith(",0") for r in rows[1:])


def test_console_script_entry_point(tmp_path):
    cfg = write(tmp_path, "oracle.n_sets = 2\n")
    proc = subprocess.run(
        [sys.executable, "-m", "gibbsgeom.cli", "oracle-check", "--config", cfg, "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
