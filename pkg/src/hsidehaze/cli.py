"""Command-line interface.

Subcommands cover the full pipeline: synthesize paired data, train, dehaze,
evaluate, run the ablation grid, and probe sensitivity to random haze
levels. Failures map to stable exit codes: 2 for usage/parameter mistakes,
3 for malformed data or unsatisfiable shapes, 4 for numeric divergence.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import ablation as abl
from .container import read_checkpoint, read_cube, write_checkpoint, write_cube
from .cube import AUGMENT_OPS, rgb_composite
from .dataset import generate_pairs, load_dataset, write_dataset
from .errors import DehazeError, FormatError, ParameterError
from .hazesim import CirrusPatch
from .metrics import MetricReport, evaluate
from .model import ModelConfig, forward, params_from_entries, params_to_entries
from .training import TrainConfig, train_loop

DEFAULT_ALPHAS = "0.5,0.6,0.7,0.8,0.9,1"
DEFAULT_AUGMENT = ",".join(AUGMENT_OPS)
DEFAULT_RGB = "19,9,2"


def _fail(exc: DehazeError):
    click.echo(f"error: {exc}", err=True)
    sys.exit(getattr(exc, "exit_code", 3))


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DehazeError as exc:
            _fail(exc)

    return wrapper


def _parse_floats(text: str, what: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ParameterError(f"could not parse {what} list {text!r}") from None


def _parse_ints(text: str, what: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ParameterError(f"could not parse {what} list {text!r}") from None


def _load_cubes(directory, what: str):
    paths = sorted(Path(directory).glob("*.hsif"))
    if not paths:
        raise ParameterError(f"no .hsif files found in {what} directory {directory}")
    return [read_cube(p) for p in paths]


def _load_patches(directory):
    patches = []
    for cube, _ in _load_cubes(directory, "cirrus"):
        if cube.bands != 1:
            raise FormatError(
                f"cirrus files must be single-band cubes, got {cube.bands} bands"
            )
        patches.append(CirrusPatch(values=cube.data[0]))
    return patches


@click.group()
def main():
    """Hyperspectral dehazing toolkit."""


@main.command("synth")
@click.option("--clean", "clean_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--cirrus", "cirrus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--alphas", default=DEFAULT_ALPHAS, show_default=True, help="Haze densities.")
@click.option("--gamma", default=3.0, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--augment", default=DEFAULT_AUGMENT, show_default=True,
              help="Augmentation ops drawn per pair.")
@click.option("--split", "split_text", default="0.8,0.1,0.1", show_default=True,
              help="Train/val/test fractions over haze patterns.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_guarded
def cmd_synth(clean_dir, cirrus_dir, alphas, gamma, seed, augment, split_text, out_dir):
    """Synthesize hazy/clean pairs from clean cubes and cirrus patches."""
    cleans = _load_cubes(clean_dir, "clean")
    wavelengths = None
    for _, wl in cleans:
        if wl is not None:
            from .cube import WavelengthTable

            wavelengths = WavelengthTable.from_centers(wl.astype(np.float64))
            break
    if wavelengths is None:
        raise FormatError("no clean cube carries a wavelength table; synthesis needs one")
    dataset = generate_pairs(
        [cube for cube, _ in cleans],
        _load_patches(cirrus_dir),
        wavelengths,
        _parse_floats(alphas, "alpha"),
        gamma=gamma,
        augmentations=tuple(tok.strip() for tok in augment.split(",") if tok.strip()),
        seed=seed,
        split_fractions=tuple(_parse_floats(split_text, "split")),
    )
    manifest = write_dataset(dataset, out_dir)
    counts = dataset.counts
    click.echo(
        f"wrote {len(dataset.pairs)} pairs to {manifest} "
        f"(train {counts['train']}, val {counts['val']}, test {counts['test']})"
    )


def _read_config_file(path):
    if path is None:
        return {}, {}
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"config file {path} must hold a JSON object")
    train_section = raw.pop("train", {})
    model_section = raw.pop("model", {})
    if raw:
        raise ParameterError(f"unknown config sections: {sorted(raw)}")
    return train_section, model_section


@main.command("train")
@click.option("--data", "manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "ckpt_path", required=True, type=click.Path(dir_okay=False))
@click.option("--history", "history_path", type=click.Path(dir_okay=False),
              help="History CSV path (default: alongside the checkpoint).")
@click.option("--max-epochs", type=int, default=None, help="Override the epoch budget.")
@click.option("--seed", type=int, default=None, help="Override the training seed.")
@click.option("--quiet", is_flag=True, help="Suppress per-epoch lines.")
@_guarded
def cmd_train(manifest, config_path, ckpt_path, history_path, max_epochs, seed, quiet):
    """Train on a synthesized dataset and write the best checkpoint."""
    dataset = load_dataset(manifest)
    train_section, model_section = _read_config_file(config_path)
    if max_epochs is not None:
        train_section["max_epochs"] = max_epochs
    if seed is not None:
        train_section["seed"] = seed
    config = TrainConfig.from_dict(train_section)
    bands = dataset.pairs[0].clean.bands
    try:
        model_config = ModelConfig(bands=bands, **model_section)
    except TypeError as exc:
        raise ParameterError(f"bad model config: {exc}") from exc

    def report(stats):
        if not quiet:
            click.echo(
                f"epoch {stats.epoch:4d}  lr {stats.lr:.3e}  "
                f"train {stats.train_total:.6f}  val {stats.val_rmrae:.6f}"
            )

    result = train_loop(dataset, config, model_config=model_config, progress=report)
    write_checkpoint(ckpt_path, params_to_entries(result.params))
    if history_path is None:
        history_path = str(Path(ckpt_path).with_suffix(".history.csv"))
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ("epoch", "lr", "train_rmrae", "train_sparsity", "train_total", "val_rmrae")
        )
        for s in result.history:
            writer.writerow((
                s.epoch, f"{s.lr:.9g}", f"{s.train_rmrae:.9g}", f"{s.train_sparsity:.9g}",
                f"{s.train_total:.9g}", f"{s.val_rmrae:.9g}",
            ))
    click.echo(
        f"saved {ckpt_path} (best epoch {result.best_epoch}, "
        f"val rmrae {result.best_val_rmrae:.6g}); history at {history_path}"
    )


@main.command("dehaze")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--composite", "composite_path", type=click.Path(dir_okay=False),
              help="Write a false-color PNG of the result.")
@click.option("--rgb", "rgb_text", default=DEFAULT_RGB, show_default=True,
              help="1-based band indices for the composite.")
@click.option("--timing", "timing_path", type=click.Path(dir_okay=False),
              help="Write a JSON sidecar with the inference wall-clock time.")
@_guarded
def cmd_dehaze(in_path, ckpt_path, out_path, composite_path, rgb_text, timing_path):
    """Run the network on one cube."""
    params = params_from_entries(read_checkpoint(ckpt_path))
    hazy, wavelengths = read_cube(in_path)
    started = time.perf_counter()
    dehazed = forward(params, hazy)
    elapsed = time.perf_counter() - started
    write_cube(out_path, dehazed, wavelengths=wavelengths)
    if composite_path is not None:
        bands = _parse_ints(rgb_text, "rgb band")
        if len(bands) != 3:
            raise ParameterError(f"--rgb needs exactly three bands, got {rgb_text!r}")
        for b in bands:
            if b < 1:
                raise ParameterError(f"--rgb bands are 1-based, got {b}")
        image = rgb_composite(dehazed, bands[0] - 1, bands[1] - 1, bands[2] - 1)
        Image.fromarray(image, mode="RGB").save(composite_path)
    if timing_path is not None:
        with open(timing_path, "w") as fh:
            json.dump({"inference_seconds": elapsed}, fh)
            fh.write("\n")
    click.echo(f"dehazed {in_path} -> {out_path} in {elapsed:.3f}s")


@main.command("eval")
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--est", "est_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--uiqi-window", type=int, default=None,
              help="Override (default: 64 clamped to the image extent).")
@click.option("--ssim-window", type=int, default=None,
              help="Override (default: 11 clamped to the image extent).")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False),
              help="Append the report as one CSV row (header written when new).")
@click.option("--timing", "timing_path", type=click.Path(exists=True, dir_okay=False),
              help="Timing sidecar from dehaze; echoed as time_seconds.")
@_guarded
def cmd_eval(ref_path, est_path, uiqi_window, ssim_window, csv_path, timing_path):
    """Score an estimate against its reference."""
    reference, _ = read_cube(ref_path)
    estimate, _ = read_cube(est_path)
    auto_uiqi, auto_ssim = abl.default_windows(reference.height, reference.width)
    report = evaluate(
        reference, estimate, uiqi_window or auto_uiqi, ssim_window or auto_ssim
    )
    for line in report.to_lines():
        click.echo(line)
    if timing_path is not None:
        with open(timing_path) as fh:
            sidecar = json.load(fh)
        click.echo(f"time_seconds={sidecar['inference_seconds']:.6g}")
    if csv_path is not None:
        path = Path(csv_path)
        fresh = not path.exists() or path.stat().st_size == 0
        with open(path, "a", newline="") as fh:
            if fresh:
                fh.write(MetricReport.csv_header() + "\n")
            fh.write(report.to_csv_row() + "\n")


@main.command("ablate")
@click.option("--data", "manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--variants", default=",".join(abl.DEFAULT_VARIANTS), show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--max-epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_csv", required=True, type=click.Path(dir_okay=False))
@_guarded
def cmd_ablate(manifest, variants, config_path, max_epochs, seed, out_csv):
    """Train and score architecture/loss variants under identical seeds."""
    names = [tok.strip() for tok in variants.split(",") if tok.strip()]
    for name in names:
        abl.resolve_variant(name)
    dataset = load_dataset(manifest)
    train_section, model_section = _read_config_file(config_path)
    if model_section:
        raise ParameterError("ablation derives model configs from variants; drop the model section")
    if max_epochs is not None:
        train_section["max_epochs"] = max_epochs
    if seed is not None:
        train_section["seed"] = seed
    config = TrainConfig.from_dict(train_section)

    def report(result):
        click.echo(
            f"variant {result.name}: val rmrae {result.val_rmrae:.6g}, "
            f"psnr {result.psnr:.4g}, sam {result.sam:.4g}"
        )

    results = abl.run_ablation(dataset, names, config, progress=report)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(abl.ABLATION_COLUMNS)
        writer.writerows(abl.ablation_csv_rows(results))
    click.echo(f"wrote {out_csv}")


@main.command("sensitivity")
@click.option("--data", "manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--cirrus", "cirrus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--trials", default=10, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--gamma", default=3.0, show_default=True, type=float)
@click.option("--out", "out_csv", required=True, type=click.Path(dir_okay=False))
@_guarded
def cmd_sensitivity(manifest, ckpt_path, cirrus_dir, trials, seed, gamma, out_csv):
    """Dehaze test-split scenes under random haze densities in [0.5, 1]."""
    dataset = load_dataset(manifest)
    test_pairs = dataset.split("test")
    if not test_pairs:
        raise ParameterError("sensitivity needs a non-empty test split")
    seen = set()
    cleans = []
    for pair in test_pairs:
        digest = pair.clean.data.tobytes()
        if digest not in seen:
            seen.add(digest)
            cleans.append(pair.clean)
    params = params_from_entries(read_checkpoint(ckpt_path))
    patches = _load_patches(cirrus_dir)
    rows, mean, std = abl.run_sensitivity(
        cleans, patches, dataset.wavelengths, params, trials, seed=seed, gamma=gamma
    )
    columns = ("trial", "alpha") + abl.SENSITIVITY_METRICS
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [row["trial"]] + [f"{row[key]:.9g}" for key in columns[1:]]
            )
        writer.writerow(["mean"] + [f"{mean[key]:.9g}" for key in columns[1:]])
        writer.writerow(["std"] + [f"{std[key]:.9g}" for key in columns[1:]])
    click.echo(f"wrote {out_csv} ({trials} trials over {len(cleans)} scenes)")


if __name__ == "__main__":
    main()
