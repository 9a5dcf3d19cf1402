"""Component-ablation grid and the random-haze sensitivity harness.

Each ablation variant is a named architecture/loss configuration trained
under identical seeds and data, then scored on the test split, so rows are
directly comparable. The sensitivity harness draws random haze densities,
synthesizes fresh hazy scenes over held-out cleans, and reports per-trial
metrics with their mean and standard deviation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube import HsiCube
from .dataset import HazeDataset
from .errors import ParameterError
from .hazesim import (
    band_transmission,
    compose_haze,
    estimate_atmospheric_light,
    reference_transmission,
)
from .metrics import evaluate
from .model import ModelConfig, forward
from .training import TrainConfig, train_loop

# name -> (model config overrides, include_sparsity)
VARIANTS = {
    "full": ({}, True),
    "abs+sr": ({"sse_mode": "none"}, True),
    "sr+sse": ({"abs_enabled": False}, True),
    "abs+sr+spe": ({"sse_mode": "spectral"}, True),
    "abs+sr+spa": ({"sse_mode": "spatial"}, True),
    "rmrae-only": ({}, False),
    "no-concat": ({"concat_mode": "none"}, True),
    "concat-selected": ({"concat_mode": "selected"}, True),
}

DEFAULT_VARIANTS = tuple(VARIANTS)


@dataclass(frozen=True)
class VariantResult:
    """Training outcome and test-split metric means for one variant."""

    name: str
    abs_enabled: bool
    sse_mode: str
    concat_mode: str
    include_sparsity: bool
    epochs_run: int
    best_epoch: int
    val_rmrae: float
    psnr: float
    uiqi: float
    sam: float
    ssim: float
    mrae: float
    rmrae: float


def resolve_variant(name: str):
    """Map a variant name to (model overrides, include_sparsity)."""
    try:
        return VARIANTS[name]
    except KeyError:
        raise ParameterError(
            f"unknown variant {name!r}; known variants: {', '.join(VARIANTS)}"
        ) from None


def _mean_test_metrics(params, pairs, uiqi_window, ssim_window):
    sums = dict.fromkeys(("psnr", "uiqi", "sam", "ssim", "mrae", "rmrae"), 0.0)
    for pair in pairs:
        dehazed = forward(params, pair.hazy)
        report = evaluate(pair.clean, dehazed, uiqi_window, ssim_window)
        for key in sums:
            sums[key] += getattr(report, key)
    return {key: value / len(pairs) for key, value in sums.items()}


def default_windows(height: int, width: int):
    """Window sizes clamped to the cube extent (desk-scale override)."""
    return min(64, height, width), min(11, height, width)


def run_ablation(dataset: HazeDataset, variant_names, train_config: TrainConfig,
                 uiqi_window: int | None = None, ssim_window: int | None = None,
                 progress=None) -> list:
    """Train and score each named variant under identical seeds and data."""
    test_pairs = dataset.split("test")
    if not test_pairs:
        raise ParameterError("ablation needs a non-empty test split")
    sample = test_pairs[0].clean
    auto_uiqi, auto_ssim = default_windows(sample.height, sample.width)
    uiqi_window = uiqi_window or auto_uiqi
    ssim_window = ssim_window or auto_ssim
    bands = sample.bands
    results = []
    for name in variant_names:
        overrides, include_sparsity = resolve_variant(name)
        model_config = ModelConfig(bands=bands, **overrides)
        config = TrainConfig(
            **{**train_config.to_dict(), "include_sparsity": include_sparsity}
        )
        outcome = train_loop(dataset, config, model_config=model_config)
        scores = _mean_test_metrics(outcome.params, test_pairs, uiqi_window, ssim_window)
        result = VariantResult(
            name=name,
            abs_enabled=model_config.abs_enabled,
            sse_mode=model_config.sse_mode,
            concat_mode=model_config.concat_mode,
            include_sparsity=include_sparsity,
            epochs_run=len(outcome.history),
            best_epoch=outcome.best_epoch,
            val_rmrae=outcome.best_val_rmrae,
            **scores,
        )
        results.append(result)
        if progress is not None:
            progress(result)
    return results


ABLATION_COLUMNS = (
    "variant", "abs", "sse", "concat", "sparsity", "epochs", "best_epoch",
    "val_rmrae", "psnr", "uiqi", "sam", "ssim", "mrae", "rmrae",
)


def ablation_csv_rows(results) -> list:
    """Rows (lists of strings) for the ablation CSV, header excluded."""
    rows = []
    for r in results:
        rows.append([
            r.name,
            "on" if r.abs_enabled else "off",
            r.sse_mode,
            r.concat_mode,
            "on" if r.include_sparsity else "off",
            str(r.epochs_run),
            str(r.best_epoch),
            f"{r.val_rmrae:.9g}",
            f"{r.psnr:.9g}",
            f"{r.uiqi:.9g}",
            f"{r.sam:.9g}",
            f"{r.ssim:.9g}",
            f"{r.mrae:.9g}",
            f"{r.rmrae:.9g}",
        ])
    return rows


# ---------------------------------------------------------------------------
# sensitivity under random haze levels

SENSITIVITY_METRICS = ("psnr", "uiqi", "sam", "ssim", "mrae", "rmrae")


def run_sensitivity(clean_cubes, patches, wavelengths, params, n_trials: int,
                    seed: int = 0, gamma: float = 3.0, alpha_range=(0.5, 1.0),
                    uiqi_window: int | None = None, ssim_window: int | None = None):
    """Dehaze freshly synthesized scenes at random haze densities.

    Per trial, one density is drawn uniformly from ``alpha_range`` and one
    patch is chosen; every clean cube is hazed, dehazed, and scored, and
    the trial records metric means over the cubes. Returns
    ``(rows, mean, std)`` where rows are dicts and the summary dicts cover
    alpha plus every metric (population std, so one trial gives zeros).
    """
    clean_cubes = list(clean_cubes)
    patches = list(patches)
    if n_trials < 1:
        raise ParameterError(f"n_trials must be positive, got {n_trials}")
    if not clean_cubes or not patches:
        raise ParameterError("sensitivity needs at least one clean cube and one patch")
    lo, hi = float(alpha_range[0]), float(alpha_range[1])
    if not 0.0 < lo <= hi <= 1.0:
        raise ParameterError(f"alpha_range must satisfy 0 < lo <= hi <= 1, got {alpha_range}")
    sample = clean_cubes[0]
    auto_uiqi, auto_ssim = default_windows(sample.height, sample.width)
    uiqi_window = uiqi_window or auto_uiqi
    ssim_window = ssim_window or auto_ssim
    rows = []
    for trial in range(n_trials):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(13, trial))
        )
        alpha = float(rng.uniform(lo, hi))
        patch = patches[int(rng.integers(len(patches)))]
        sums = dict.fromkeys(SENSITIVITY_METRICS, 0.0)
        for clean in clean_cubes:
            t1 = reference_transmission(patch, alpha)
            stack = band_transmission(t1, wavelengths, gamma, alpha)
            light = estimate_atmospheric_light(clean)
            hazy = compose_haze(clean, stack, light)
            dehazed = forward(params, hazy)
            report = evaluate(clean, dehazed, uiqi_window, ssim_window)
            for key in sums:
                sums[key] += getattr(report, key)
        row = {"trial": trial, "alpha": alpha}
        for key in SENSITIVITY_METRICS:
            row[key] = sums[key] / len(clean_cubes)
        rows.append(row)
    summary_keys = ("alpha",) + SENSITIVITY_METRICS
    mean = {}
    std = {}
    for key in summary_keys:
        values = np.array([row[key] for row in rows], dtype=np.float64)
        mean[key] = float(values.mean())
        std[key] = float(values.std())
    return rows, mean, std
