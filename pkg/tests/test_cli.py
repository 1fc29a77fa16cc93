"""Command-line interface: subcommands, outputs, and exit codes."""

import json

import pytest

from extlab.cli import main


def _write_ini(path, body):
    path.write_text("[experiment]\n" + body)
    return str(path)


@pytest.fixture()
def out_dir(tmp_path):
    return tmp_path / "out"


def test_run_subcommand_writes_reports(tmp_path, out_dir, capsys):
    ini = _write_ini(tmp_path / "run.ini",
                     "kind = spherical-means\n"
                     "measure = point\n"
                     "radii = 8 16 32 64\n"
                     f"out_dir = {out_dir}\n")
    assert main(["sphmeans", "--config", ini]) == 0
    stdout = capsys.readouterr().out
    assert "VACUOUS" in stdout
    for suffix in (".json", ".csv", ".png"):
        path = out_dir / f"spherical-means{suffix}"
        assert path.stat().st_size > 0
    payload = json.loads((out_dir / "spherical-means.json").read_text())
    assert payload["config"]["measure"] == "point"
    assert payload["verdicts"] == {"decay-bound": "VACUOUS"}


def test_run_subcommand_failing_run_exits_one(tmp_path, out_dir):
    ini = _write_ini(tmp_path / "fail.ini",
                     "radii = 16 32 64\n"
                     "freq_limit = 1\n"
                     f"out_dir = {out_dir}\n")
    assert main(["expsum", "--config", ini]) == 1
    assert (out_dir / "expsum-sharpness.json").stat().st_size > 0


def test_configuration_errors_exit_two(tmp_path, capsys):
    bad_radii = _write_ini(tmp_path / "bad.ini", "radii = 16 48\n")
    assert main(["expsum", "--config", bad_radii]) == 2
    assert "dyadic" in capsys.readouterr().err
    unknown = _write_ini(tmp_path / "unknown.ini", "wibble = 3\n")
    assert main(["partition", "--config", unknown]) == 2
    assert "unknown configuration keys" in capsys.readouterr().err
    assert main(["partition", "--config",
                 str(tmp_path / "missing.ini")]) == 2
    assert "could not read" in capsys.readouterr().err
    coarse = _write_ini(tmp_path / "coarse.ini",
                        "radii = 16 32 64\nlevel = 2\n")
    assert main(["expsum", "--config", coarse]) == 2
    assert "too coarse" in capsys.readouterr().err


def test_seed_and_out_dir_overrides(tmp_path, out_dir):
    ini = _write_ini(tmp_path / "seeded.ini",
                     "kind = partition-demo\n"
                     "degree = 1\n"
                     "label = part\n"
                     f"out_dir = {tmp_path / 'ignored'}\n")
    assert main(["partition", "--config", ini, "--seed", "7",
                 "--out-dir", str(out_dir)]) == 0
    payload = json.loads((out_dir / "part.json").read_text())
    assert payload["config"]["seed"] == 7
    assert payload["config"]["out_dir"] == str(out_dir)
    assert not (tmp_path / "ignored").exists()


def test_csv_flag_selects_outputs(tmp_path, out_dir):
    ini = _write_ini(tmp_path / "csvonly.ini",
                     "kind = partition-demo\n"
                     "degree = 1\n"
                     f"out_dir = {out_dir}\n")
    assert main(["partition", "--config", ini, "--csv"]) == 0
    assert (out_dir / "partition-demo.csv").exists()
    assert not (out_dir / "partition-demo.json").exists()
    assert (out_dir / "partition-demo.png").exists()


def test_reruns_are_byte_identical(tmp_path, out_dir):
    ini = _write_ini(tmp_path / "det.ini",
                     "kind = spherical-means\n"
                     "measure = point\n"
                     "radii = 8 16 32 64\n"
                     f"out_dir = {out_dir}\n")
    assert main(["sphmeans", "--config", ini]) == 0
    first_json = (out_dir / "spherical-means.json").read_bytes()
    first_csv = (out_dir / "spherical-means.csv").read_bytes()
    assert main(["sphmeans", "--config", ini]) == 0
    assert (out_dir / "spherical-means.json").read_bytes() == first_json
    assert (out_dir / "spherical-means.csv").read_bytes() == first_csv


def test_surface_inspection(tmp_path, out_dir, capsys):
    ini = _write_ini(tmp_path / "surf.ini",
                     "kind = partition-demo\n"
                     "resolution = 32\n"
                     f"out_dir = {out_dir}\n")
    assert main(["surface", "--config", ini]) == 0
    stdout = capsys.readouterr().out
    payload = json.loads(stdout[:stdout.index("wrote")])
    assert payload["n_nodes"] == 3332
    assert payload["covers"][0]["n_caps"] == 448
    assert (out_dir / "surface.json").exists()
    assert (out_dir / "surface.csv").exists()


def test_measure_and_weights_inspection(tmp_path, out_dir, capsys):
    ini = _write_ini(tmp_path / "m.ini",
                     "kind = spherical-means\n"
                     "measure = cantor\n"
                     "level = 3\n"
                     f"out_dir = {out_dir}\n")
    assert main(["measure", "--config", ini]) == 0
    payload = json.loads((out_dir / "measure.json").read_text())
    assert payload["measurements"][0]["n_atoms"] == 8 ** 3
    assert payload["measurements"][0]["total_mass"] == pytest.approx(1.0)
    capsys.readouterr()
    ini2 = _write_ini(tmp_path / "w.ini",
                      "kind = weighted-scaling\n"
                      "weight = omega1\n"
                      f"out_dir = {out_dir}\n")
    assert main(["weights", "--config", ini2]) == 0
    payload = json.loads((out_dir / "weights.json").read_text())
    assert payload["measurements"][0]["A_alpha"] > 0.0


def test_ext_inspection(tmp_path, out_dir, capsys):
    ini = _write_ini(tmp_path / "e.ini",
                     "kind = weighted-scaling\n"
                     "radii = 4\n"
                     f"out_dir = {out_dir}\n")
    assert main(["ext", "--config", ini]) == 0
    payload = json.loads((out_dir / "ext.json").read_text())
    row = payload["measurements"][0]
    assert row["grid_points"] == 9 ** 3
    assert row["max_abs"] > 0.0 and row["f_l2"] > 0.0


def test_no_config_uses_defaults(tmp_path, out_dir, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["partition", "--out-dir", str(out_dir)]) == 0
    payload = json.loads((out_dir / "partition-demo.json").read_text())
    assert payload["config"]["degree"] == 4
    assert payload["passed"] is True
