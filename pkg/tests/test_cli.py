import csv
import json

import numpy as np
import pytest
import yaml

from macrodimer import potential
from macrodimer.cli import main
from macrodimer.config import ConfigError, RunConfig

SMALL = {
    "potential": {"step_um": 0.02},
    "eit": {"n_z": 5, "n_rho": 4, "z_max_um": 4.0, "rho_max_um": 4.0},
    "sweep": {"alpha_min": 0.04, "alpha_max": 0.12, "alpha_step": 0.04, "series_points": 11},
    "drag": {"t_final_us": 2.0},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


@pytest.fixture(autouse=True)
def _pinned_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


def _run(*args):
    return main([str(a) for a in args])


# -- configuration ---------------------------------------------------------------

def test_unknown_key_named():
    with pytest.raises(ConfigError, match="'drag.speed'"):
        RunConfig.from_dict({"drag": {"speed": 1}})
    with pytest.raises(ConfigError, match="'nonsense'"):
        RunConfig.from_dict({"nonsense": 1})


def test_missing_impurity_key_named():
    with pytest.raises(ConfigError, match="position_um"):
        RunConfig.from_dict({"scene": {"impurities": [{"kind": "molecule"}]}})
    with pytest.raises(ConfigError, match="n_impurities"):
        RunConfig.from_dict({"scene": {"random": {"min_separation_um": 10}}})


def test_config_hash_stable():
    a = RunConfig.from_dict({"drag": {"t_final_us": 5.0}})
    b = RunConfig.from_dict({"drag": {"t_final_us": 5.0}})
    assert a.hash == b.hash != RunConfig.from_dict({}).hash


def test_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("drag: [unclosed")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_sweep_alphas_inclusive():
    np.testing.assert_allclose(RunConfig.from_dict({}).sweep_alphas(),
                               np.round(np.arange(0.02, 0.2001, 0.01), 12))


# -- exit codes ---------------------------------------------------------------------

def test_no_command_is_usage_error():
    assert main([]) == 2


def test_unknown_command_rejected():
    with pytest.raises(SystemExit) as exc:
        main(["teleport"])
    assert exc.value.code != 0


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("drag: {speed: 1}\n")
    assert _run("drag", "--config", p, "--out", tmp_path / "o") == 3
    assert "drag.speed" in capsys.readouterr().err


def test_physics_error_exit_code(tmp_path, capsys):
    assert _run("units", "1", "mK", "pN", "--out", tmp_path) == 4
    assert "error[physics]" in capsys.readouterr().err


def test_print_default_config(capsys):
    assert main(["--print-default-config"]) == 0
    assert yaml.safe_load(capsys.readouterr().out)["drag"]["alpha_hghz_per_um"] == 0.08


# -- commands -------------------------------------------------------------------------

EXPECTED = {
    "scales": ["scales.csv"],
    "potential": ["potential_curves.csv", "well.json", "potential.png"],
    "chi-map": ["chi_map.csv", "chi_map.png", "chi_map_axes.json"],
    "pop-map": ["pop_map.csv", "pop_map.png", "pop_map_axes.json"],
    "drag": ["trajectory.csv", "drag_summary.json", "drag.png"],
    "sweep": ["sweep.csv", "sweep_series.csv", "sweep_summary.json", "sweep.png"],
    "image": ["frame_before.pgm", "frame_after.pgm", "gprime_before.csv", "scene.json",
              "frames.png"],
    "classify": ["spots.json", "classified.png", "scene.json"],
}


@pytest.mark.parametrize("command", sorted(EXPECTED))
def test_command_writes_outputs(tmp_path, small_config, command):
    out = tmp_path / command
    assert _run(command, "--config", small_config, "--out", out) == 0
    for name in EXPECTED[command] + ["manifest.json"]:
        assert (out / name).stat().st_size > 0, name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == command
    assert manifest["config_hash"] == RunConfig.load(small_config).hash
    assert set(EXPECTED[command]) <= set(manifest["files"])


@pytest.mark.parametrize("command", ["drag", "image", "chi-map"])
def test_reruns_are_byte_identical(tmp_path, small_config, command):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert _run(command, "--config", small_config, "--out", out, "--seed", 42) == 0
    names = sorted(p.name for p in outs[0].iterdir() if p.suffix in (".csv", ".json", ".pgm"))
    assert names
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_different_seed_changes_image(tmp_path, small_config):
    for s in (1, 2):
        _run("image", "--config", small_config, "--out", tmp_path / str(s), "--seed", s)
    a = (tmp_path / "1" / "frame_before.pgm").read_bytes()
    assert a != (tmp_path / "2" / "frame_before.pgm").read_bytes()


def test_potential_output_matches_library(tmp_path, small_config):
    out = tmp_path / "pot"
    _run("potential", "--config", small_config, "--out", out)
    rc = RunConfig.load(small_config)
    cfg = rc.physical()
    surface = potential.bo_surface(cfg, rc.r_grid(cfg))
    well = potential.find_well(surface, cfg)
    saved = json.loads((out / "well.json").read_text())["well"]
    assert saved["r_p_um"] == pytest.approx(well.r_p, rel=1e-12)
    with open(out / "potential_curves.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == len(surface.r_grid) + 1
    assert len(rows[0]) == surface.n_branches + 1


def test_sweep_outputs(tmp_path, small_config):
    out = tmp_path / "sw"
    _run("sweep", "--config", small_config, "--out", out)
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["alpha_hGHz_per_um"]) for r in rows] == [0.04, 0.08, 0.12]
    summary = json.loads((out / "sweep_summary.json").read_text())
    assert summary["threshold_hGHz_per_um"] == pytest.approx(0.12)


def test_units_command(tmp_path):
    assert _run("units", "100", "h*MHz", "mK", "--out", tmp_path) == 0
    res = json.loads((tmp_path / "units.json").read_text())
    assert res["result"] == pytest.approx(4.8, rel=0.02)


def test_json_table_format(tmp_path, small_config):
    assert _run("drag", "--config", small_config, "--out", tmp_path, "--format", "json") == 0
    data = json.loads((tmp_path / "trajectory.json").read_text())
    assert data["columns"][0] == "t_us" and len(data["rows"]) > 10


def test_out_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MACRODIMER_OUT", str(tmp_path))
    assert main(["units", "1", "h*GHz/um", "pN"]) == 0
    assert (tmp_path / "units" / "units.json").exists()
