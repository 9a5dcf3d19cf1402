"""End-to-end exercises of the command-line interface.

Every command runs through click's test runner against tiny synthetic
scenes, checking produced files, determinism, echo text, and the exit-code
contract (2 usage, 3 data/shape, 4 numeric).
"""

import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from hsidehaze.ablation import ABLATION_COLUMNS, SENSITIVITY_METRICS
from hsidehaze.cli import main
from hsidehaze.container import read_checkpoint, read_cube, write_cube
from hsidehaze.cube import HsiCube
from hsidehaze.metrics import MetricReport, evaluate
from hsidehaze.model import GATE_INIT, forward, params_from_entries
from hsidehaze.simdata import cirrus_pattern, fixture_wavelengths, smooth_mixture_cube

BANDS = 4
SIDE = 6
WAVELENGTHS = fixture_wavelengths(BANDS, 420.0, 1000.0)

# Narrow widths keep CLI-level trainings near-instant.
SMALL_MODEL = {
    "enc_width": 8,
    "feature_channels": 4,
    "dec_widths": [8, 8],
    "sse_mode": "none",
}


def _text(result):
    """stdout plus stderr regardless of how the click version splits them."""
    text = result.output
    try:
        text += result.stderr
    except ValueError:
        pass
    return text


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def data_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-inputs")
    clean_dir = root / "clean"
    cirrus_dir = root / "cirrus"
    clean_dir.mkdir()
    cirrus_dir.mkdir()
    for seed in (0, 1):
        cube = smooth_mixture_cube(SIDE, SIDE, BANDS, seed=seed)
        write_cube(clean_dir / f"scene{seed}.hsif", cube, wavelengths=WAVELENGTHS.centers)
    for seed in (0, 1, 2):
        patch = cirrus_pattern(SIDE, SIDE, seed=seed)
        write_cube(cirrus_dir / f"cirrus{seed}.hsif", HsiCube(data=patch.values[np.newaxis]))
    return clean_dir, cirrus_dir


def _synthesize(runner, data_dirs, out_dir, seed=0):
    clean_dir, cirrus_dir = data_dirs
    return runner.invoke(main, [
        "synth",
        "--clean", str(clean_dir),
        "--cirrus", str(cirrus_dir),
        "--seed", str(seed),
        "--out", str(out_dir),
    ])


@pytest.fixture(scope="module")
def synth_dir(runner, data_dirs, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-synth") / "data"
    result = _synthesize(runner, data_dirs, out)
    assert result.exit_code == 0, _text(result)
    return out


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli-config") / "small.json"
    path.write_text(json.dumps({"model": SMALL_MODEL}))
    return path


@pytest.fixture(scope="module")
def trained(runner, synth_dir, config_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-train")
    ckpt = out / "model.ckpt"
    history = out / "history.csv"
    result = runner.invoke(main, [
        "train",
        "--data", str(synth_dir / "manifest.csv"),
        "--config", str(config_path),
        "--out", str(ckpt),
        "--history", str(history),
        "--max-epochs", "2",
        "--seed", "0",
        "--quiet",
    ])
    assert result.exit_code == 0, _text(result)
    return {"ckpt": ckpt, "history": history, "output": result.output}


@pytest.fixture(scope="module")
def hazy_path(synth_dir):
    return sorted((synth_dir / "pairs").glob("*_hazy.hsif"))[0]


@pytest.fixture(scope="module")
def dehazed(runner, trained, hazy_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-dehaze")
    cube_path = out / "dehazed.hsif"
    timing_path = out / "timing.json"
    result = runner.invoke(main, [
        "dehaze",
        "--in", str(hazy_path),
        "--ckpt", str(trained["ckpt"]),
        "--out", str(cube_path),
        "--timing", str(timing_path),
    ])
    assert result.exit_code == 0, _text(result)
    return {"cube": cube_path, "timing": timing_path, "output": result.output}


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_every_combination(runner, synth_dir):
    # 2 cleans x 3 patches x 6 default alphas.
    with open(synth_dir / "manifest.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 36
    assert rows[0] == ["pair_id", "clean_path", "hazy_path", "alpha", "pattern_id", "split"]
    splits = [row[5] for row in rows[1:]]
    # 18 patterns split 0.8/0.1/0.1 -> 16/1/1, times two clean scenes.
    assert splits.count("train") == 32
    assert splits.count("val") == 2
    assert splits.count("test") == 2
    assert len(list((synth_dir / "pairs").glob("*.hsif"))) == 72


def test_synth_echo_reports_counts(runner, data_dirs, tmp_path):
    result = _synthesize(runner, data_dirs, tmp_path / "data")
    assert result.exit_code == 0
    assert "wrote 36 pairs" in result.output
    assert "(train 32, val 2, test 2)" in result.output


def test_synth_same_seed_reproduces_bytes(runner, data_dirs, synth_dir, tmp_path):
    result = _synthesize(runner, data_dirs, tmp_path / "again")
    assert result.exit_code == 0
    first = (synth_dir / "manifest.csv").read_bytes()
    second = (tmp_path / "again" / "manifest.csv").read_bytes()
    assert first == second
    name = sorted(p.name for p in (synth_dir / "pairs").glob("*.hsif"))[0]
    assert (synth_dir / "pairs" / name).read_bytes() == (
        tmp_path / "again" / "pairs" / name
    ).read_bytes()


def test_synth_rejects_alpha_outside_range(runner, data_dirs, tmp_path):
    clean_dir, cirrus_dir = data_dirs
    result = runner.invoke(main, [
        "synth", "--clean", str(clean_dir), "--cirrus", str(cirrus_dir),
        "--alphas", "0,0.5", "--out", str(tmp_path / "bad"),
    ])
    assert result.exit_code == 2
    assert "alpha" in _text(result)


def test_synth_rejects_unparseable_alphas(runner, data_dirs, tmp_path):
    clean_dir, cirrus_dir = data_dirs
    result = runner.invoke(main, [
        "synth", "--clean", str(clean_dir), "--cirrus", str(cirrus_dir),
        "--alphas", "half", "--out", str(tmp_path / "bad"),
    ])
    assert result.exit_code == 2
    assert "could not parse" in _text(result)


def test_synth_requires_a_wavelength_table(runner, data_dirs, tmp_path):
    _, cirrus_dir = data_dirs
    bare = tmp_path / "bare"
    bare.mkdir()
    write_cube(bare / "scene.hsif", smooth_mixture_cube(SIDE, SIDE, BANDS, seed=0))
    result = runner.invoke(main, [
        "synth", "--clean", str(bare), "--cirrus", str(cirrus_dir),
        "--out", str(tmp_path / "out"),
    ])
    assert result.exit_code == 3
    assert "wavelength" in _text(result)


def test_synth_rejects_empty_clean_dir(runner, data_dirs, tmp_path):
    _, cirrus_dir = data_dirs
    empty = tmp_path / "empty"
    empty.mkdir()
    result = runner.invoke(main, [
        "synth", "--clean", str(empty), "--cirrus", str(cirrus_dir),
        "--out", str(tmp_path / "out"),
    ])
    assert result.exit_code == 2
    assert "no .hsif files" in _text(result)


def test_synth_rejects_multiband_cirrus(runner, data_dirs, tmp_path):
    clean_dir, _ = data_dirs
    result = runner.invoke(main, [
        "synth", "--clean", str(clean_dir), "--cirrus", str(clean_dir),
        "--out", str(tmp_path / "out"),
    ])
    assert result.exit_code == 3
    assert "single-band" in _text(result)


# ---------------------------------------------------------------------------
# train


def test_train_checkpoint_restores_a_working_model(trained, hazy_path):
    params = params_from_entries(read_checkpoint(trained["ckpt"]))
    assert params.config.bands == BANDS
    assert params.config.enc_width == SMALL_MODEL["enc_width"]
    assert params.config.sse_mode == "none"
    hazy, _ = read_cube(hazy_path)
    out = forward(params, hazy)
    assert out.data.shape == hazy.data.shape
    assert np.isfinite(out.data).all()


def test_train_history_has_one_row_per_epoch(trained):
    with open(trained["history"], newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "lr", "train_rmrae", "train_sparsity", "train_total", "val_rmrae"]
    assert len(rows) == 1 + 2
    assert [row[0] for row in rows[1:]] == ["0", "1"]
    assert all(float(row[1]) == pytest.approx(3e-4) for row in rows[1:])


def test_train_echo_names_checkpoint_and_best_epoch(trained):
    assert "saved" in trained["output"]
    assert "best epoch" in trained["output"]


def test_train_zero_epochs_saves_initial_params(runner, synth_dir, config_path, tmp_path):
    ckpt = tmp_path / "init.ckpt"
    result = runner.invoke(main, [
        "train", "--data", str(synth_dir / "manifest.csv"),
        "--config", str(config_path),
        "--out", str(ckpt), "--max-epochs", "0", "--quiet",
    ])
    assert result.exit_code == 0, _text(result)
    params = params_from_entries(read_checkpoint(ckpt))
    assert np.all(params.band_gate == np.float32(GATE_INIT))
    assert np.all(params.fuse.bias == 0.0)
    with open(tmp_path / "init.history.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1


def test_train_rejects_unknown_config_section(runner, synth_dir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"optimizer": {"lr": 1}}))
    result = runner.invoke(main, [
        "train", "--data", str(synth_dir / "manifest.csv"),
        "--config", str(bad), "--out", str(tmp_path / "x.ckpt"),
    ])
    assert result.exit_code == 2
    assert "unknown config sections" in _text(result)


def test_train_rejects_unknown_model_key(runner, synth_dir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"head_count": 2}}))
    result = runner.invoke(main, [
        "train", "--data", str(synth_dir / "manifest.csv"),
        "--config", str(bad), "--out", str(tmp_path / "x.ckpt"),
    ])
    assert result.exit_code == 2
    assert "bad model config" in _text(result)


def test_train_rejects_malformed_config_json(runner, synth_dir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    result = runner.invoke(main, [
        "train", "--data", str(synth_dir / "manifest.csv"),
        "--config", str(bad), "--out", str(tmp_path / "x.ckpt"),
    ])
    assert result.exit_code == 3
    assert "not valid JSON" in _text(result)


def test_train_default_history_sits_beside_checkpoint(runner, synth_dir, config_path, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    result = runner.invoke(main, [
        "train", "--data", str(synth_dir / "manifest.csv"),
        "--config", str(config_path),
        "--out", str(ckpt), "--max-epochs", "0", "--quiet",
    ])
    assert result.exit_code == 0, _text(result)
    assert (tmp_path / "m.history.csv").exists()


# ---------------------------------------------------------------------------
# dehaze


def test_dehaze_preserves_header_and_wavelengths(dehazed, hazy_path):
    hazy, wl_in = read_cube(hazy_path)
    out, wl_out = read_cube(dehazed["cube"])
    assert out.data.shape == hazy.data.shape
    assert np.array_equal(wl_in, wl_out)


def test_dehaze_matches_library_forward(dehazed, trained, hazy_path):
    params = params_from_entries(read_checkpoint(trained["ckpt"]))
    hazy, _ = read_cube(hazy_path)
    expected = forward(params, hazy)
    out, _ = read_cube(dehazed["cube"])
    assert np.array_equal(out.data, expected.data)


def test_dehaze_timing_sidecar_holds_seconds(dehazed):
    sidecar = json.loads(dehazed["timing"].read_text())
    assert set(sidecar) == {"inference_seconds"}
    assert sidecar["inference_seconds"] > 0.0
    assert "dehazed" in dehazed["output"]


def test_dehaze_is_deterministic(runner, trained, hazy_path, dehazed, tmp_path):
    again = tmp_path / "again.hsif"
    result = runner.invoke(main, [
        "dehaze", "--in", str(hazy_path), "--ckpt", str(trained["ckpt"]),
        "--out", str(again),
    ])
    assert result.exit_code == 0, _text(result)
    assert again.read_bytes() == dehazed["cube"].read_bytes()


def test_dehaze_composite_png(runner, trained, hazy_path, tmp_path):
    png = tmp_path / "view.png"
    result = runner.invoke(main, [
        "dehaze", "--in", str(hazy_path), "--ckpt", str(trained["ckpt"]),
        "--out", str(tmp_path / "d.hsif"),
        "--composite", str(png), "--rgb", "4,3,1",
    ])
    assert result.exit_code == 0, _text(result)
    with Image.open(png) as image:
        assert image.mode == "RGB"
        assert image.size == (SIDE, SIDE)


def test_dehaze_default_rgb_needs_enough_bands(runner, trained, hazy_path, tmp_path):
    # The default composite bands (19, 9, 2) exceed a 4-band cube.
    result = runner.invoke(main, [
        "dehaze", "--in", str(hazy_path), "--ckpt", str(trained["ckpt"]),
        "--out", str(tmp_path / "d.hsif"), "--composite", str(tmp_path / "v.png"),
    ])
    assert result.exit_code == 2
    assert "out of range" in _text(result)


def test_dehaze_rejects_wrong_rgb_count(runner, trained, hazy_path, tmp_path):
    result = runner.invoke(main, [
        "dehaze", "--in", str(hazy_path), "--ckpt", str(trained["ckpt"]),
        "--out", str(tmp_path / "d.hsif"),
        "--composite", str(tmp_path / "v.png"), "--rgb", "2,1",
    ])
    assert result.exit_code == 2
    assert "exactly three bands" in _text(result)


def test_dehaze_rejects_zero_band_index(runner, trained, hazy_path, tmp_path):
    result = runner.invoke(main, [
        "dehaze", "--in", str(hazy_path), "--ckpt", str(trained["ckpt"]),
        "--out", str(tmp_path / "d.hsif"),
        "--composite", str(tmp_path / "v.png"), "--rgb", "0,1,2",
    ])
    assert result.exit_code == 2
    assert "1-based" in _text(result)


def test_dehaze_rejects_band_count_mismatch(runner, trained, data_dirs, tmp_path):
    _, cirrus_dir = data_dirs
    single_band = sorted(cirrus_dir.glob("*.hsif"))[0]
    result = runner.invoke(main, [
        "dehaze", "--in", str(single_band), "--ckpt", str(trained["ckpt"]),
        "--out", str(tmp_path / "d.hsif"),
    ])
    assert result.exit_code == 3


# ---------------------------------------------------------------------------
# eval


def _parse_report(output):
    values = {}
    for line in output.strip().splitlines():
        key, _, raw = line.partition("=")
        values[key] = raw
    return values


def test_eval_identical_inputs_hit_sentinels(runner, hazy_path):
    result = runner.invoke(main, [
        "eval", "--ref", str(hazy_path), "--est", str(hazy_path),
    ])
    assert result.exit_code == 0, _text(result)
    values = _parse_report(result.output)
    assert values["psnr"] == "inf"
    assert values["uiqi"] == "1"
    assert values["sam"] == "0"
    assert values["ssim"] == "1"
    assert values["mrae"] == "0"
    assert values["rmrae"] == "0"
    assert values["n_skipped_windows"] == "0"


def test_eval_matches_library_evaluate(runner, dehazed, synth_dir, hazy_path):
    clean_path = str(hazy_path).replace("_hazy.hsif", "_clean.hsif")
    result = runner.invoke(main, [
        "eval", "--ref", clean_path, "--est", str(dehazed["cube"]),
    ])
    assert result.exit_code == 0, _text(result)
    values = _parse_report(result.output)
    clean, _ = read_cube(clean_path)
    est, _ = read_cube(dehazed["cube"])
    report = evaluate(clean, est, SIDE, SIDE)
    for key in ("psnr", "uiqi", "sam", "ssim", "mrae", "rmrae"):
        assert float(values[key]) == pytest.approx(getattr(report, key), rel=1e-8)
    assert int(values["n_skipped_windows"]) == report.n_skipped_windows


def test_eval_csv_appends_header_once(runner, hazy_path, tmp_path):
    csv_path = tmp_path / "scores.csv"
    for _ in range(2):
        result = runner.invoke(main, [
            "eval", "--ref", str(hazy_path), "--est", str(hazy_path),
            "--csv", str(csv_path),
        ])
        assert result.exit_code == 0, _text(result)
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == MetricReport.csv_header()
    assert lines[1] == lines[2]


def test_eval_echoes_timing_sidecar(runner, dehazed, hazy_path):
    result = runner.invoke(main, [
        "eval", "--ref", str(hazy_path), "--est", str(dehazed["cube"]),
        "--timing", str(dehazed["timing"]),
    ])
    assert result.exit_code == 0, _text(result)
    sidecar = json.loads(dehazed["timing"].read_text())
    expected = f"time_seconds={sidecar['inference_seconds']:.6g}"
    assert expected in result.output.splitlines()


def test_eval_rejects_shape_mismatch(runner, hazy_path, data_dirs):
    _, cirrus_dir = data_dirs
    single_band = sorted(cirrus_dir.glob("*.hsif"))[0]
    result = runner.invoke(main, [
        "eval", "--ref", str(hazy_path), "--est", str(single_band),
    ])
    assert result.exit_code == 3
    assert "shape" in _text(result)


def test_eval_window_overrides_are_honored(runner, hazy_path):
    result = runner.invoke(main, [
        "eval", "--ref", str(hazy_path), "--est", str(hazy_path),
        "--uiqi-window", "3", "--ssim-window", "3",
    ])
    assert result.exit_code == 0, _text(result)
    result_too_big = runner.invoke(main, [
        "eval", "--ref", str(hazy_path), "--est", str(hazy_path),
        "--uiqi-window", str(SIDE + 1),
    ])
    assert result_too_big.exit_code == 3


# ---------------------------------------------------------------------------
# ablate


def test_ablate_rejects_unknown_variant_before_training(runner, synth_dir, tmp_path):
    result = runner.invoke(main, [
        "ablate", "--data", str(synth_dir / "manifest.csv"),
        "--variants", "full,bogus", "--out", str(tmp_path / "a.csv"),
    ])
    assert result.exit_code == 2
    assert "unknown variant" in _text(result)
    assert not (tmp_path / "a.csv").exists()


def test_ablate_rejects_model_config_section(runner, synth_dir, config_path, tmp_path):
    result = runner.invoke(main, [
        "ablate", "--data", str(synth_dir / "manifest.csv"),
        "--variants", "abs+sr", "--config", str(config_path),
        "--max-epochs", "1", "--out", str(tmp_path / "a.csv"),
    ])
    assert result.exit_code == 2
    assert "drop the model section" in _text(result)


def test_ablate_writes_one_row_per_variant(runner, synth_dir, tmp_path):
    out_csv = tmp_path / "ablation.csv"
    result = runner.invoke(main, [
        "ablate", "--data", str(synth_dir / "manifest.csv"),
        "--variants", "abs+sr,rmrae-only",
        "--max-epochs", "1", "--seed", "0", "--out", str(out_csv),
    ])
    assert result.exit_code == 0, _text(result)
    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(ABLATION_COLUMNS)
    assert len(rows) == 3
    assert [row[0] for row in rows[1:]] == ["abs+sr", "rmrae-only"]
    by_name = {row[0]: dict(zip(rows[0], row)) for row in rows[1:]}
    assert by_name["abs+sr"]["sse"] == "none"
    assert by_name["abs+sr"]["sparsity"] == "on"
    assert by_name["rmrae-only"]["sparsity"] == "off"
    assert by_name["rmrae-only"]["sse"] == "both"
    for row in by_name.values():
        assert row["epochs"] == "1"
        assert float(row["rmrae"]) > 0.0
    assert "variant abs+sr: val rmrae" in result.output


# ---------------------------------------------------------------------------
# sensitivity


def _run_sensitivity(runner, synth_dir, trained, data_dirs, out_csv, trials, seed=3):
    _, cirrus_dir = data_dirs
    return runner.invoke(main, [
        "sensitivity", "--data", str(synth_dir / "manifest.csv"),
        "--ckpt", str(trained["ckpt"]), "--cirrus", str(cirrus_dir),
        "--trials", str(trials), "--seed", str(seed),
        "--out", str(out_csv),
    ])


def test_sensitivity_csv_layout(runner, synth_dir, trained, data_dirs, tmp_path):
    out_csv = tmp_path / "sens.csv"
    result = _run_sensitivity(runner, synth_dir, trained, data_dirs, out_csv, trials=2)
    assert result.exit_code == 0, _text(result)
    assert "2 trials over 2 scenes" in result.output
    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["trial", "alpha"] + list(SENSITIVITY_METRICS)
    assert len(rows) == 1 + 2 + 2
    assert [row[0] for row in rows[1:]] == ["0", "1", "mean", "std"]
    alphas = [float(row[1]) for row in rows[1:3]]
    assert all(0.5 <= a <= 1.0 for a in alphas)
    mean_alpha = float(rows[3][1])
    assert mean_alpha == pytest.approx(sum(alphas) / 2, rel=1e-6)


def test_sensitivity_fixed_seed_reproduces_bytes(runner, synth_dir, trained, data_dirs, tmp_path):
    first = tmp_path / "a.csv"
    second = tmp_path / "b.csv"
    for out_csv in (first, second):
        result = _run_sensitivity(runner, synth_dir, trained, data_dirs, out_csv, trials=2)
        assert result.exit_code == 0, _text(result)
    assert first.read_bytes() == second.read_bytes()


def test_sensitivity_single_trial_has_zero_std(runner, synth_dir, trained, data_dirs, tmp_path):
    out_csv = tmp_path / "one.csv"
    result = _run_sensitivity(runner, synth_dir, trained, data_dirs, out_csv, trials=1)
    assert result.exit_code == 0, _text(result)
    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    std_row = rows[-1]
    assert std_row[0] == "std"
    assert all(cell == "0" for cell in std_row[1:])
    mean_row = rows[-2]
    trial_row = rows[1]
    assert mean_row[1:] == trial_row[1:]


def test_sensitivity_rejects_zero_trials(runner, synth_dir, trained, data_dirs, tmp_path):
    result = _run_sensitivity(
        runner, synth_dir, trained, data_dirs, tmp_path / "x.csv", trials=0
    )
    assert result.exit_code == 2
    assert "positive" in _text(result)
