"""Experiment drivers: configs, records, verdicts, and the five runs."""

import json

import numpy as np
import pytest

from extlab.geometry import build_surface, cap_cover
from extlab.lab import (ExperimentConfig, FAIL, PASS, VACUOUS,
                        lambda_class_draw, render_figure,
                        run_expsum_sharpness, run_experiment,
                        run_partition_demo, run_spherical_means,
                        run_wavepacket_demo, run_weighted_scaling,
                        write_outputs)

# Frozen values measured from the deterministic drivers.
EXPSUM_FULL_SLOPE = 4.522539675622352
EXPSUM_LOWER_SLOPE = 4.531303578791411
PREDICTED_EXPSUM_SLOPE = 4.5          # 2p - alpha at p = 3, alpha = 3/2
WEIGHTED_A_ALPHA_R16 = 12.796875      # scanned A_3/2(omega1), R_max = 16
GROWTH_LIMIT = 0.35
RATE_ALPHA2_Q2 = -0.625               # -alpha/4 - 1/8 at alpha = 2
RATE_ALPHA2_Q3 = -7.0 / 11.0          # -alpha/p at alpha = 2, p = 22/7

CONFIG_FIELDS = ("kind", "alpha", "radii", "surface", "resolution",
                 "weight", "measure", "level", "p", "q", "K", "delta",
                 "b", "gamma", "variant", "draws", "degree", "freq_limit",
                 "seed", "out_dir", "label")


@pytest.fixture(scope="module")
def expsum_record():
    config = ExperimentConfig(kind="expsum-sharpness", alpha=1.5,
                              radii=(16.0, 32.0, 64.0), level=6)
    return config, run_expsum_sharpness(config)


@pytest.fixture(scope="module")
def weighted_record():
    config = ExperimentConfig(kind="weighted-scaling", alpha=1.5,
                              weight="omega1", radii=(4.0, 8.0, 16.0),
                              draws=2, seed=3)
    return config, run_weighted_scaling(config)


@pytest.fixture(scope="module")
def sphmeans_record():
    config = ExperimentConfig(kind="spherical-means", alpha=1.5,
                              radii=(8.0, 16.0, 32.0, 64.0), level=6)
    return config, run_spherical_means(config)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_defaults_and_echo():
    config = ExperimentConfig(kind="partition-demo")
    echoed = config.to_dict()
    assert tuple(echoed) == CONFIG_FIELDS
    assert echoed["radii"] == [4.0, 8.0, 16.0]
    assert echoed["p"] is None and echoed["b"] is None
    assert echoed["variant"] == "A"


def test_config_validation_errors():
    with pytest.raises(ValueError, match="unknown experiment kind"):
        ExperimentConfig(kind="frobnicate")
    with pytest.raises(ValueError, match="dyadic ladder"):
        ExperimentConfig(kind="partition-demo", radii=(16.0, 48.0))
    with pytest.raises(ValueError, match="alpha"):
        ExperimentConfig(kind="partition-demo", alpha=1.2)
    with pytest.raises(ValueError, match="delta"):
        ExperimentConfig(kind="partition-demo", delta=0.3)
    with pytest.raises(ValueError, match="variant"):
        ExperimentConfig(kind="partition-demo", variant="B")
    with pytest.raises(ValueError, match="draws"):
        ExperimentConfig(kind="partition-demo", draws=0)
    with pytest.raises(ValueError, match="unknown configuration keys"):
        ExperimentConfig.from_mapping({"kind": "partition-demo",
                                       "wibble": "3"})
    with pytest.raises(ValueError, match="needs a 'kind'"):
        ExperimentConfig.from_mapping({"alpha": "1.5"})


def test_config_ini_roundtrip(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[experiment]\n"
                    "kind = spherical-means\n"
                    "alpha = 2.0\n"
                    "radii = 8, 16, 32\n"
                    "level = 4\n"
                    "p = none\n"
                    "b = 1.5\n"
                    "seed = 9\n"
                    "label = demo\n")
    config = ExperimentConfig.from_ini(str(path))
    assert config.kind == "spherical-means"
    assert config.alpha == 2.0
    assert config.radii == (8.0, 16.0, 32.0)
    assert config.p is None and config.b == 1.5
    assert config.seed == 9 and config.label == "demo"


def test_config_ini_default_kind_and_errors(tmp_path):
    path = tmp_path / "bare.ini"
    path.write_text("[experiment]\nlevel = 4\n")
    config = ExperimentConfig.from_ini(str(path),
                                       default_kind="expsum-sharpness")
    assert config.kind == "expsum-sharpness"
    with pytest.raises(ValueError, match="could not read"):
        ExperimentConfig.from_ini(str(tmp_path / "missing.ini"))
    nosec = tmp_path / "nosec.ini"
    nosec.write_text("[other]\nlevel = 4\n")
    with pytest.raises(ValueError, match="experiment"):
        ExperimentConfig.from_ini(str(nosec))


def test_config_hash_tracks_every_field():
    base = ExperimentConfig(kind="partition-demo")
    assert base.config_hash == ExperimentConfig(kind="partition-demo"
                                                ).config_hash
    assert base.config_hash != base.replace(seed=1).config_hash
    assert base.config_hash != base.replace(label="x").config_hash


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------

def test_record_reproducible_bytes(expsum_record):
    config, record = expsum_record
    again = run_expsum_sharpness(config)
    assert record.to_json() == again.to_json()
    assert record.csv_lines() == again.csv_lines()


def test_record_echoes_config_and_hides_wall_clock(expsum_record):
    config, record = expsum_record
    payload = json.loads(record.to_json())
    assert payload["config"] == config.to_dict()
    assert "wall_clock" not in record.to_json()
    assert record.wall_clock > 0.0
    assert payload["config_hash"] == config.config_hash


def test_record_csv_layout(expsum_record):
    config, record = expsum_record
    lines = record.csv_lines()
    assert lines[0] == f"# config-hash={config.config_hash}"
    assert lines[1] == "R,n_freqs,full,near_atoms,lower"
    assert len(lines) == 2 + len(config.radii)
    cells = lines[2].split(",")
    assert float(cells[2]) == record.measurements[0]["full"]


def test_run_experiment_dispatch():
    config = ExperimentConfig(kind="partition-demo", degree=1, seed=11)
    assert run_experiment(config).to_dict() == \
        run_partition_demo(config).to_dict()


# ---------------------------------------------------------------------------
# expsum-sharpness
# ---------------------------------------------------------------------------

def test_expsum_slopes_in_window(expsum_record):
    _, record = expsum_record
    assert record.verdicts == {"full-slope": PASS, "lower-slope": PASS}
    assert record.predicted["slope"] == PREDICTED_EXPSUM_SLOPE
    assert record.fits["full"]["slope"] == \
        pytest.approx(EXPSUM_FULL_SLOPE, abs=1e-9)
    assert record.fits["lower"]["slope"] == \
        pytest.approx(EXPSUM_LOWER_SLOPE, abs=1e-9)
    row = record.measurements[0]
    assert row["R"] == 16.0 and row["n_freqs"] == 797
    assert 0.0 < row["lower"] <= row["full"]


def test_expsum_level_too_coarse():
    config = ExperimentConfig(kind="expsum-sharpness",
                              radii=(16.0, 32.0, 64.0), level=2)
    with pytest.raises(ValueError, match="too coarse"):
        run_expsum_sharpness(config)


def test_expsum_degenerate_single_frequency():
    config = ExperimentConfig(kind="expsum-sharpness",
                              radii=(16.0, 32.0, 64.0), freq_limit=1)
    record = run_expsum_sharpness(config)
    assert [r["full"] for r in record.measurements] == [1.0, 1.0, 1.0]
    assert abs(record.fits["full"]["slope"]) <= 1e-12
    assert record.verdicts["full-slope"] == FAIL
    assert any("constant" in note for note in record.notes)
    assert not record.passed


# ---------------------------------------------------------------------------
# weighted-scaling
# ---------------------------------------------------------------------------

def test_weighted_scaling_growth_window(weighted_record):
    config, record = weighted_record
    assert record.verdicts == {"growth": PASS}
    assert record.predicted["p"] == 3.0
    assert record.predicted["A_alpha"] == WEIGHTED_A_ALPHA_R16
    assert record.predicted["allowed_growth"] == GROWTH_LIMIT
    for name, fit in record.fits.items():
        assert fit["slope"] <= GROWTH_LIMIT, name
    assert len(record.measurements) == len(config.radii) * config.draws


def test_weighted_scaling_zero_weight():
    config = ExperimentConfig(kind="weighted-scaling", weight="zero",
                              radii=(4.0, 8.0, 16.0), draws=1)
    record = run_weighted_scaling(config)
    assert record.verdicts == {"growth": VACUOUS}
    assert record.passed
    assert record.fits == {}
    assert any("vanish" in note for note in record.notes)
    assert all(r["value"] == 0.0 for r in record.measurements)


def test_weighted_scaling_script_variant_allowance():
    config = ExperimentConfig(kind="weighted-scaling", alpha=2.0,
                              weight="omega2", radii=(4.0, 8.0, 16.0),
                              draws=1, variant="script_A")
    record = run_weighted_scaling(config)
    assert record.predicted["allowed_growth"] == \
        pytest.approx(GROWTH_LIMIT + 0.125)
    assert record.verdicts["growth"] == PASS


def test_lambda_class_draw_clamped(paraboloid32):
    rng = np.random.default_rng(5)
    f = lambda_class_draw(paraboloid32, rng, b=1.0, R_max=16.0)
    cover = cap_cover(paraboloid32, "tau", 4.0)
    target = 16.0 ** -1.0
    w = paraboloid32.quad_weights
    for cap in cover.caps:
        idx = cap.node_indices
        sq_mass = float(np.sum(w[idx] * np.abs(f.values[idx]) ** 2))
        assert sq_mass <= target * (1.0 + 1e-9)
    same = lambda_class_draw(paraboloid32, np.random.default_rng(5),
                             b=1.0, R_max=16.0)
    assert np.array_equal(f.values, same.values)
    with pytest.raises(ValueError, match="R_max"):
        lambda_class_draw(paraboloid32, rng, b=1.0)


def test_lambda_class_draw_vanishes_at_rim(paraboloid32):
    f = lambda_class_draw(paraboloid32, np.random.default_rng(0))
    rr = np.einsum("ij,ij->i", paraboloid32.params, paraboloid32.params)
    rim = rr > 0.98
    assert rim.any()
    assert np.abs(f.values[rim]).max() < 1e-10 * np.abs(f.values).max()


# ---------------------------------------------------------------------------
# spherical-means
# ---------------------------------------------------------------------------

def test_sphmeans_cantor_within_envelope(sphmeans_record):
    _, record = sphmeans_record
    assert record.verdicts == {"decay-bound": PASS}
    rows = record.measurements
    assert rows[0]["measured"] == pytest.approx(rows[0]["envelope"],
                                                rel=1e-12)
    for row in rows:
        assert row["measured"] <= row["envelope"] * (1.0 + 1e-9)
    assert record.predicted["rate"] == -0.5
    assert record.fits["measured"]["slope"] < -0.05


def test_sphmeans_point_mass_vacuous():
    config = ExperimentConfig(kind="spherical-means", measure="point",
                              radii=(8.0, 16.0, 32.0, 64.0))
    record = run_spherical_means(config)
    assert record.verdicts == {"decay-bound": VACUOUS}
    assert record.passed
    assert any("I_alpha" in note for note in record.notes)
    assert record.predicted["I_alpha"] > 1e4


def test_sphmeans_rate_selection():
    base = ExperimentConfig(kind="spherical-means", alpha=2.0,
                            radii=(8.0, 16.0, 32.0), level=4)
    assert run_spherical_means(base).predicted["rate"] == RATE_ALPHA2_Q2
    other = run_spherical_means(base.replace(q=3.0))
    assert other.predicted["rate"] == pytest.approx(RATE_ALPHA2_Q3)
    assert other.predicted["p"] == pytest.approx(22.0 / 7.0)


# ---------------------------------------------------------------------------
# partition-demo and wavepacket-demo
# ---------------------------------------------------------------------------

def test_partition_demo_degree_four():
    record = run_partition_demo(ExperimentConfig(kind="partition-demo",
                                                 degree=4, seed=11))
    assert record.passed
    counters = {r["counter"]: r for r in record.measurements}
    assert counters["cell-count"]["bound"] == 256.0
    assert counters["max-line-crossings"]["value"] <= 5.0
    assert counters["max-tube-cells"]["value"] <= 5.0
    assert counters["cell-mass-ratio"]["value"] <= 2.0
    assert counters["single-cap-broad-max"]["value"] == 0.0


def test_partition_demo_degree_one():
    record = run_partition_demo(ExperimentConfig(kind="partition-demo",
                                                 degree=1, seed=11))
    assert record.passed
    counters = {r["counter"]: r["value"] for r in record.measurements}
    assert counters["cell-count"] == 2.0
    assert counters["cell-mass-ratio"] == pytest.approx(1.0, abs=1e-9)
    assert counters["max-line-crossings"] <= 2.0


def test_wavepacket_demo_counters():
    record = run_wavepacket_demo(ExperimentConfig(kind="wavepacket-demo",
                                                  radii=(16.0, 32.0, 64.0),
                                                  delta=0.1, seed=5))
    assert record.passed
    counters = {r["counter"]: r for r in record.measurements}
    assert counters["reconstruction-residual-rel"]["value"] <= 1e-6
    assert counters["frame-ratio"]["value"] <= 1.05 * 1.5
    assert counters["off-tube-decay"]["value"] <= 64.0 ** -2.0
    assert counters["packet-count"]["bound"] is None
    assert record.predicted["decay_barrier"] == 64.0 ** -2.0


def test_wavepacket_demo_rejects_tiny_R():
    config = ExperimentConfig(kind="wavepacket-demo", radii=(4.0, 8.0))
    with pytest.raises(ValueError, match="at least 16"):
        run_wavepacket_demo(config)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_write_outputs_and_figure(tmp_path, expsum_record):
    config, record = expsum_record
    paths = write_outputs(record, str(tmp_path))
    assert [p.rsplit("/", 1)[1] for p in paths] == \
        ["expsum-sharpness.json", "expsum-sharpness.csv"]
    payload = json.loads(open(paths[0]).read())
    assert payload["passed"] is True
    first = open(paths[1]).readline().strip()
    assert first == f"# config-hash={config.config_hash}"
    figure = render_figure(record, str(tmp_path / "expsum.png"))
    assert (tmp_path / "expsum.png").stat().st_size > 1000


def test_write_outputs_label_stem(tmp_path):
    record = run_partition_demo(ExperimentConfig(kind="partition-demo",
                                                 degree=1, label="demo"))
    paths = write_outputs(record, str(tmp_path))
    assert [p.rsplit("/", 1)[1] for p in paths] == ["demo.json", "demo.csv"]
    figure = render_figure(record, str(tmp_path / "demo.png"))
    assert (tmp_path / "demo.png").stat().st_size > 1000
