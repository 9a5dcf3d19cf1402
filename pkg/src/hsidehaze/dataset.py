"""Paired clean/hazy datasets: synthesis, splitting, and manifest I/O.

A dataset is a list of pairs, each tying a clean cube to one synthetic haze
realization (a cirrus patch combined with one haze density). Pairs are
assigned to train/val/test by haze pattern, so no pattern ever appears in
two splits. On disk a dataset is a directory of cube files plus a CSV
manifest describing every pair.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_cube, write_cube
from .cube import HsiCube, WavelengthTable, augment
from .errors import DimensionError, FormatError, ParameterError
from .hazesim import (
    CirrusPatch,
    band_transmission,
    compose_haze,
    estimate_atmospheric_light,
    reference_transmission,
)

SPLIT_NAMES = ("train", "val", "test")

MANIFEST_COLUMNS = ("pair_id", "clean_path", "hazy_path", "alpha", "pattern_id", "split")

# Pattern-level split used when synthesizing training data.
DEFAULT_PATTERN_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class HazePair:
    """One clean cube with one synthetic haze realization over it."""

    pair_id: str
    clean: HsiCube
    hazy: HsiCube
    alpha: float
    pattern_id: str
    split: str
    augmentation: str = "identity"

    def __post_init__(self):
        if self.split not in SPLIT_NAMES:
            raise ParameterError(f"unknown split {self.split!r}")
        if self.clean.data.shape != self.hazy.data.shape:
            raise DimensionError(
                f"pair {self.pair_id}: clean shape {self.clean.data.shape} "
                f"!= hazy shape {self.hazy.data.shape}"
            )


@dataclass
class HazeDataset:
    """A collection of haze pairs sharing one wavelength table."""

    pairs: list = field(default_factory=list)
    wavelengths: WavelengthTable | None = None

    def split(self, name: str) -> list:
        if name not in SPLIT_NAMES:
            raise ParameterError(f"unknown split {name!r}")
        return [p for p in self.pairs if p.split == name]

    @property
    def counts(self) -> dict:
        return {name: len(self.split(name)) for name in SPLIT_NAMES}


def split_dataset(items, fractions=(0.90, 0.05, 0.05), seed: int = 0):
    """Shuffle deterministically and partition into train/val/test lists.

    Fractional val/test sizes are floored but forced to at least one item
    whenever their fraction is positive; all remaining items go to train.
    """
    items = list(items)
    n = len(items)
    if n == 0:
        raise ParameterError("cannot split an empty dataset")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ParameterError(f"fractions must be three non-negative values, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions must sum to 1, got {sum(fractions)!r}")
    f_train, f_val, f_test = fractions

    def _count(fraction):
        if fraction == 0.0:
            return 0
        return max(1, int(np.floor(fraction * n)))

    n_val = _count(f_val)
    n_test = _count(f_test)
    n_train = n - n_val - n_test
    if f_train > 0 and n_train < 1:
        raise ParameterError(
            f"{n} items are too few to give every positive fraction at least one item"
        )
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [items[i] for i in order]
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


def generate_pairs(
    clean_cubes,
    patches,
    wavelengths: WavelengthTable,
    alphas,
    gamma: float = 3.0,
    augmentations=("identity",),
    seed: int = 0,
    split_fractions=DEFAULT_PATTERN_FRACTIONS,
) -> HazeDataset:
    """Synthesize every (clean, patch, alpha) combination into a dataset.

    A haze pattern is one (patch, alpha) combination; patterns are split
    train/val/test first and every pair inherits its pattern's split, so
    the same haze realization never leaks across splits. One augmentation
    op is drawn per pair and applied to both the clean cube and the
    transmission maps before composition. Identical arguments always
    produce an identical dataset.
    """
    clean_cubes = list(clean_cubes)
    patches = list(patches)
    alphas = [float(a) for a in alphas]
    augmentations = tuple(augmentations)
    if not clean_cubes or not patches or not alphas:
        raise ParameterError("need at least one clean cube, one patch, and one alpha")
    if not augmentations:
        raise ParameterError("need at least one augmentation op")
    for alpha in alphas:
        if not 0.0 < alpha <= 1.0:
            raise ParameterError(f"haze density alpha={alpha!r} must lie in (0, 1]")
    shape = clean_cubes[0].data.shape
    for cube in clean_cubes:
        if cube.data.shape != shape:
            raise DimensionError(
                f"all clean cubes must share one shape, got {cube.data.shape} and {shape}"
            )
        if cube.bands != wavelengths.bands:
            raise DimensionError(
                f"cube has {cube.bands} bands but wavelength table has {wavelengths.bands}"
            )
    for patch in patches:
        if patch.values.shape != shape[1:]:
            raise DimensionError(
                f"patch shape {patch.values.shape} does not match cube planes {shape[1:]}"
            )

    patterns = [(pi, ai) for pi in range(len(patches)) for ai in range(len(alphas))]
    train_p, val_p, test_p = split_dataset(patterns, split_fractions, seed=seed)
    split_of = {}
    for name, subset in zip(SPLIT_NAMES, (train_p, val_p, test_p)):
        for pat in subset:
            split_of[pat] = name

    stacks = {}
    for pi, patch in enumerate(patches):
        for ai, alpha in enumerate(alphas):
            t1 = reference_transmission(patch, alpha)
            stacks[(pi, ai)] = band_transmission(t1, wavelengths, gamma, alpha)

    pairs = []
    for ci, clean in enumerate(clean_cubes):
        for pi, ai in patterns:
            alpha = alphas[ai]
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(ci, pi, ai))
            )
            op = augmentations[int(rng.integers(len(augmentations)))]
            aug_clean = augment(clean, op)
            stack = stacks[(pi, ai)].transformed(op)
            light = estimate_atmospheric_light(aug_clean)
            hazy = compose_haze(aug_clean, stack, light)
            pattern_id = f"p{pi}-a{alpha:.10g}"
            pairs.append(
                HazePair(
                    pair_id=f"c{ci:03d}_{pattern_id}",
                    clean=aug_clean,
                    hazy=hazy,
                    alpha=alpha,
                    pattern_id=pattern_id,
                    split=split_of[(pi, ai)],
                    augmentation=op,
                )
            )
    return HazeDataset(pairs=pairs, wavelengths=wavelengths)


def write_dataset(dataset: HazeDataset, out_dir) -> Path:
    """Write every pair's cubes plus a manifest CSV; returns the manifest path.

    Rerunning with an identical dataset reproduces the manifest byte for
    byte (rows are ordered, floats use a fixed format, newlines are '\\n').
    """
    out_dir = Path(out_dir)
    pair_dir = out_dir / "pairs"
    pair_dir.mkdir(parents=True, exist_ok=True)
    wl = dataset.wavelengths.centers if dataset.wavelengths is not None else None
    rows = []
    for pair in dataset.pairs:
        clean_rel = f"pairs/{pair.pair_id}_clean.hsif"
        hazy_rel = f"pairs/{pair.pair_id}_hazy.hsif"
        write_cube(out_dir / clean_rel, pair.clean, wavelengths=wl)
        write_cube(out_dir / hazy_rel, pair.hazy, wavelengths=wl)
        rows.append(
            (pair.pair_id, clean_rel, hazy_rel, f"{pair.alpha:.10g}", pair.pattern_id, pair.split)
        )
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)
    return manifest


def load_dataset(manifest_path) -> HazeDataset:
    """Read a manifest CSV and every cube it references."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    with open(manifest_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise FormatError(f"manifest {manifest_path} is empty") from None
        if header != MANIFEST_COLUMNS:
            raise FormatError(
                f"manifest header {header} does not match {MANIFEST_COLUMNS}"
            )
        rows = list(reader)
    if not rows:
        raise FormatError(f"manifest {manifest_path} lists no pairs")
    pairs = []
    wavelengths = None
    for row in rows:
        if len(row) != len(MANIFEST_COLUMNS):
            raise FormatError(f"manifest row has {len(row)} columns: {row!r}")
        pair_id, clean_rel, hazy_rel, alpha_text, pattern_id, split = row
        try:
            alpha = float(alpha_text)
        except ValueError:
            raise FormatError(f"manifest row {pair_id}: bad alpha {alpha_text!r}") from None
        clean, wl = read_cube(base / clean_rel)
        hazy, _ = read_cube(base / hazy_rel)
        if wavelengths is None:
            if wl is None:
                raise FormatError(
                    f"cube {clean_rel} carries no wavelength table; datasets require one"
                )
            wavelengths = WavelengthTable.from_centers(wl.astype(np.float64))
        pairs.append(
            HazePair(
                pair_id=pair_id,
                clean=clean,
                hazy=hazy,
                alpha=alpha,
                pattern_id=pattern_id,
                split=split,
            )
        )
    return HazeDataset(pairs=pairs, wavelengths=wavelengths)
