import json
import subprocess
import sys

import pytest

from latticespread.cli import main, parse_number, parse_polarization


def _err_record(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[0]), err


def test_parse_helpers():
    assert parse_number("0.3pi") == pytest.approx(0.3 * 3.141592653589793)
    assert parse_number("-pi") == pytest.approx(-3.141592653589793)
    assert parse_number("2.5") == 2.5
    assert parse_polarization("1,1,0") == pytest.approx((2**-0.5, 2**-0.5, 0))


def test_list_prints_registry(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("fig2a\t") and len(out) == 17


def test_run_scenario_bundle(tmp_path, capsys):
    assert main(["run", "--scenario", "fig2a", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "fig2a" / "manifest.json").is_file()
    assert capsys.readouterr().out == ""


def test_run_is_byte_identical_with_one_thread(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--scenario", "fig2a", "--threads", "1", "--out", str(tmp_path / d)]) == 0
    for rel in ("manifest.json", "classification.json", "snapshots/t_4.csv"):
        assert (tmp_path / "a/fig2a" / rel).read_bytes() == (tmp_path / "b/fig2a" / rel).read_bytes()


def test_dispersion_derivs_csv(tmp_path):
    out = tmp_path / "d.csv"
    rc = main(["dispersion", "--model", "powerlaw", "--alpha", "3", "--grid", "4096", "--derivs",
               "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "kx,ky,re_omega,im_omega,d1,d2,subradiant" and len(lines) == 4097


def test_verify_nogo(tmp_path):
    rep = tmp_path / "r.json"
    assert main(["verify", "--suite", "nogo", "--grid", "1024", "--grid-2d", "128",
                 "--out", str(rep)]) == 0
    assert json.loads(rep.read_text())["pass"]


@pytest.mark.parametrize("cmd", [
    ["run", "--scenario", "fig2c"],
    ["simulate", "--model", "freespace", "--k-a", "0.3pi", "--times", "1,2,3"],
    ["dispersion", "--model", "waveguide", "--k-a", "1.0"],
    ["hessian", "--model", "powerlaw", "--alpha", "2"],
    ["spa", "--model", "powerlaw", "--alpha", "3", "--times", "10"],
    ["verify"],
    ["list"],
])
def test_dry_run_prints_config_only(cmd, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(cmd + ["--dry-run"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["threads"] == 1
    assert list(tmp_path.iterdir()) == []


def test_flag_overrides_config(tmp_path, capsys):
    assert main(["run", "--scenario", "fig2c", "--alpha", "2.5", "--times", "1,2,3", "--dry-run"]) == 0
    cfg = json.loads(capsys.readouterr().out)["config"]
    assert cfg["model"]["alpha"] == 2.5 and cfg["times"] == [1.0, 2.0, 3.0]


def test_threads_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("LATTICESPREAD_THREADS", "3")
    assert main(["verify", "--dry-run"]) == 0
    assert json.loads(capsys.readouterr().out)["threads"] == 3
    monkeypatch.setenv("LATTICESPREAD_THREADS", "zero")
    assert main(["verify", "--dry-run"]) == 1


@pytest.mark.parametrize("argv,needle", [
    (["run", "--scenario", "fig2a", "--config", "x.json"], "--scenario fig2a vs --config x.json"),
    (["run", "--scenario", "fig3a_wg", "--model", "powerlaw", "--alpha", "2"], "--model powerlaw vs --scenario fig3a_wg"),
    (["run", "--scenario", "nope"], "unknown scenario"),
    (["run"], "no model given"),
    (["dispersion", "--model", "powerlaw"], "needs --alpha"),
    (["dispersion", "--model", "powerlaw", "--alpha", "2", "--k-a", "1"], "do not apply"),
    (["simulate", "--model", "powerlaw", "--alpha", "2", "--n", "5", "--nx", "5", "--times", "1"], "--n vs --nx/--ny"),
    (["frobnicate"], "invalid choice"),
    (["run", "--config", "missing.json"], "not found"),
])
def test_usage_errors_exit_one(argv, needle, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    rec, lines = _err_record(capsys)
    assert rec["code"] == 1 and rec["kind"] == "usage"
    assert needle in rec["message"]
    assert len(lines) == 2


def test_runtime_error_exits_two(tmp_path, capsys):
    assert main(["simulate", "--model", "powerlaw", "--alpha", "2", "--n", "21", "--times", "1,2,3",
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--model", "powerlaw", "--alpha", "2", "--n", "31", "--times", "4",
                 "--out", str(tmp_path / "b")]) == 0
    files = [str(tmp_path / "a/t_1.csv"), str(tmp_path / "a/t_2.csv"), str(tmp_path / "b/t_4.csv")]
    capsys.readouterr()
    assert main(["classify", *files, "--out", str(tmp_path / "c.json")]) == 2
    rec, _ = _err_record(capsys)
    assert rec["code"] == 2 and rec["kind"] == "runtime" and "inconsistent" in rec["message"]


def test_config_file_round_trip(tmp_path, capsys):
    assert main(["run", "--scenario", "fig2a", "--dry-run"]) == 0
    cfg = json.loads(capsys.readouterr().out)["config"]
    cfg["name"] = "custom"
    cfg["geometry"]["counts"] = [101, 1]
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o/custom/manifest.json").is_file()
    cfg["bogus"] = 1
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "c.json")]) == 1


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "latticespread.cli", "list"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0 and "fig2a" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "latticespread.cli", "run", "--bogus"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 1 and proc.stdout == ""
