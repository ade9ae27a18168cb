import json
import math
import subprocess
import sys

import pytest
import yaml

from rbclab import cli
from rbclab.config import config_from_dict, load_config, parse_angle, save_config
from rbclab.core import PhaseValue
from rbclab.exceptions import ConfigError, SchemeModeError


def write_cfg(path, **kw):
    d = {"L": [8], "p": [0.5], "n_traj": 20}
    d.update(kw)
    path.write_text(yaml.safe_dump(d))
    return path


# -- config -----------------------------------------------------------------------------


@pytest.mark.parametrize("text, k", [("pi/4", 1), ("3pi/4", 3), ("0", 0), ("pi", 4),
                                     ("-pi/4", 7), ("2*pi/8", 1)])
def test_parse_angle(text, k):
    assert parse_angle(text) == PhaseValue(k)


def test_parse_angle_radians_and_garbage():
    assert parse_angle(math.pi / 2) == PhaseValue(2)
    assert not parse_angle(0.3).exact
    with pytest.raises(ConfigError):
        parse_angle("tau/3")


def test_minimal_config_defaults(tmp_path):
    cfg = load_config(write_cfg(tmp_path / "c.yaml"))
    par = cfg.params(8, 0.5)
    assert par.t_max == 16
    assert par.scheme.kind == "fixed" and par.scheme.theta == PhaseValue(1)
    assert par.mode == "parity"
    res = cfg.resolved()
    assert res["mode"] == "parity" and res["t_max"] == {"8": 16}


def test_mode_auto_falls_back_to_full():
    cfg = config_from_dict({"L": [8], "p": [0.5], "scheme": {"kind": "random"}})
    assert cfg.params(8, 0.5).mode == "full"
    assert cfg.params(8, 0.5).measure.value == "nullity"


def test_parity_with_random_rejected():
    with pytest.raises(SchemeModeError):
        config_from_dict({"L": [8], "p": [0.5], "mode": "parity", "scheme": {"kind": "random"}})


@pytest.mark.parametrize("bad", [
    {"L": [8], "p": [0.5], "colour": 1},
    {"L": [], "p": [0.5]},
    {"p": [0.5]},
    {"L": [8], "p": [0.5], "scheme": {"kind": "dilute", "q": "1/L^2"}},
    {"L": [8], "p": [0.5], "scheme": {"kind": "fixed", "rate": 2}},
    {"L": [8], "p": [0.5], "observables": ["magic_squared"]},
    {"L": [8], "p": [1.5]},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_round_trip(tmp_path):
    cfg = config_from_dict({"L": [8, 16], "p": [0.25, 0.5], "dim": 1, "boundary": "open",
                            "scheme": {"kind": "dilute", "theta": "pi/4", "q": "2/N"},
                            "observables": ["magic_total", {"name": "mutual_magic_half",
                                                            "times": [2, 4]}],
                            "n_traj": 7, "master_seed": 3})
    save_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again == cfg
    assert again.params(16, 0.25).scheme.q == pytest.approx(2 / 16)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.yaml")


# -- commands ------------------------------------------------------------------------------


def test_run_writes_manifest_and_csv(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", output=str(tmp_path / "out"))
    assert cli.main(["run", str(cfg)]) == cli.EXIT_OK
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["master_seed"] == 0 and man["config"]["mode"] == "parity"
    assert {"command", "rbclab_version", "timestamp"} <= set(man)
    assert (tmp_path / "out" / "results.csv").exists()
    assert "magic_density" in capsys.readouterr().out


def test_run_jsonl(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", output=str(tmp_path / "out"), n_traj=5)
    assert cli.main(["run", str(cfg), "--jsonl"]) == 0
    lines = (tmp_path / "out" / "L8_p0.500000.jsonl").read_text().splitlines()
    assert len(lines) == 5
    assert "values" in json.loads(lines[0])


def test_sweep_resume_identical(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", L=[8, 12], p=[0.2, 0.5, 0.8],
                    output=str(tmp_path / "out"))
    assert cli.main(["sweep", str(cfg)]) == 0
    first = (tmp_path / "out" / "results.csv").read_text()
    cells = sorted((tmp_path / "out" / "cells").iterdir())
    assert len(cells) == 6
    # simulate an interrupted sweep: two cells lost
    cells[1].unlink()
    cells[4].unlink()
    stamp = cells[0].stat().st_mtime_ns
    assert cli.main(["sweep", str(cfg)]) == 0
    assert (tmp_path / "out" / "results.csv").read_text() == first
    assert cells[0].stat().st_mtime_ns == stamp


def test_cli_overrides(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", output=str(tmp_path / "out"))
    assert cli.main(["sweep", str(cfg), "--L", "6", "--p", "1.0", "--n-traj", "3"]) == 0
    text = (tmp_path / "out" / "results.csv").read_text()
    assert "\n6,1.0,magic_density,nan,1.0,0.0,3" in text


def test_sweep_with_fig3_axes(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", L=[16, 32], p=[round(0.1 * i, 1) for i in range(11)],
                    n_traj=10, output=str(tmp_path / "out"))
    assert cli.main(["sweep", str(cfg)]) == 0
    from rbclab.analysis import SweepDataset
    ds = SweepDataset.from_csv(tmp_path / "out" / "results.csv")
    assert len(ds.select("magic_density")) == 22
    assert len(ds.select("mutual_magic_half")) == 22
    assert ds.select("magic_density", L=32, p=1.0)[0]["mean"] == 1.0


def test_exit_codes(tmp_path):
    bad_mode = write_cfg(tmp_path / "m.yaml", mode="parity", scheme={"kind": "random"})
    assert cli.main(["run", str(bad_mode)]) == cli.EXIT_MODE
    unknown = write_cfg(tmp_path / "u.yaml", colour="red")
    assert cli.main(["run", str(unknown)]) == cli.EXIT_CONFIG
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == cli.EXIT_MISSING
    assert cli.main(["collapse", str(tmp_path / "missing.csv")]) == cli.EXIT_MISSING
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == cli.EXIT_USAGE
    codes = {cli.EXIT_OK, cli.EXIT_INTERNAL, cli.EXIT_USAGE, cli.EXIT_CONFIG,
             cli.EXIT_MODE, cli.EXIT_MISSING, cli.EXIT_VALIDATION, cli.EXIT_ANALYSIS}
    assert len(codes) == 8


def test_fit_and_collapse_errors(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", L=[8], p=[0.5], output=str(tmp_path / "out"))
    assert cli.main(["sweep", str(cfg)]) == 0
    csv = str(tmp_path / "out" / "results.csv")
    assert cli.main(["collapse", csv, "--observable", "magic_density"]) == cli.EXIT_ANALYSIS
    assert cli.main(["fit", csv, "--kind", "log", "--observable", "nope"]) == cli.EXIT_ANALYSIS


def test_fit_command_on_profile(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", L=[64], p=[0.5], n_traj=50,
                    observables=["mutual_magic_profile"], output=str(tmp_path / "out"))
    assert cli.main(["sweep", str(cfg)]) == 0
    capsys.readouterr()
    csv = str(tmp_path / "out" / "results.csv")
    assert cli.main(["fit", csv, "--kind", "log", "--observable", "mutual_magic_profile"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0.1 < out["slope"] < 0.5


def test_dynamics(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", L=[16], p=[0.5], observables=["mutual_magic_half"],
                    output=str(tmp_path / "out"))
    assert cli.main(["dynamics", str(cfg), "--stride", "8"]) == 0
    text = (tmp_path / "out" / "results.csv").read_text()
    assert text.count("mutual_magic_half") == 5  # t = 0, 8, 16, 24, 32


def test_validate_command(tmp_path, capsys):
    rep = tmp_path / "v.json"
    assert cli.main(["validate", "--sites", "6", "--seeds", "100", "--report", str(rep)]) == 0
    summary = json.loads(rep.read_text())
    assert summary["passed"] and summary["failed_seeds"] == 0 and summary["seeds"] == 100
    assert cli.main(["validate", "--sites", "9", "--dim", "2", "--p", "0.75",
                     "--scheme", "random", "--seeds", "3", "--steps", "6"]) == 0
    assert cli.main(["validate", "--sites", "8", "--dim", "2", "--seeds", "1"]) == cli.EXIT_CONFIG


def test_recipe_fig5_small(tmp_path, capsys):
    assert cli.main(["recipe", "fig5", "--scale", "0.25", "--n-traj", "40",
                     "--output", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "fig5_report.json").read_text())
    assert {"p_c", "nu", "quality"} <= set(rep["collapse"])
    assert 0.3 <= rep["collapse"]["p_c"] <= 0.7
    assert (tmp_path / "fig5" / "manifest.json").exists()


@pytest.mark.parametrize("fig", [f"fig{i}" for i in range(3, 10)])
def test_recipe_presets_resolve(fig):
    for d in cli.recipe_configs(fig, 0.25, 5):
        config_from_dict(d)
    full = cli.recipe_configs(fig, 4.0)
    biggest = max(max(d["L"]) for d in full)
    assert biggest in (128, 512, 2048, 256, 1024)


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "rbclab.cli", "--version"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()


def test_time_average_key(tmp_path):
    cfg = config_from_dict({"L": [8], "p": [0.5], "time_average": True})
    assert cfg.params(8, 0.5).time_average
    save_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml").time_average


def test_fit_bootstrap_flag(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", L=[64], p=[0.5], n_traj=50,
                    observables=["mutual_magic_profile"], output=str(tmp_path / "out"))
    assert cli.main(["sweep", str(cfg)]) == 0
    capsys.readouterr()
    csv = str(tmp_path / "out" / "results.csv")
    assert cli.main(["fit", csv, "--kind", "log", "--observable", "mutual_magic_profile",
                     "--bootstrap", "50"]) == 0
    assert json.loads(capsys.readouterr().out)["slope_err"] > 0
