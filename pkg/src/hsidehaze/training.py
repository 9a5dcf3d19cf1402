"""Losses, optimizer, learning-rate schedule, and the training loop.

The training objective is relative-MRAE against the clean cube plus an
optional L1 sparsity penalty on the visible-range bands of the gated input
(hazy visible bands carry most of the corruption, so the gate is pushed to
suppress them). Optimization is plain Adam with a step-decay schedule and
early stopping on validation relative-MRAE; the best-validation parameters
are what a run returns.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .cube import HsiCube
from .dataset import HazeDataset, split_dataset  # noqa: F401  (re-exported)
from .errors import DimensionError, DomainError, NumericError, ParameterError
from .model import (
    ModelConfig,
    ModelParams,
    backward_arrays,
    first_nonfinite_stage,
    forward_arrays,
    init_params,
)

__all__ = [
    "LossReport", "rmrae", "mrae", "sparsity_loss", "total_loss",
    "TrainConfig", "lr_schedule", "AdamState", "init_adam", "adam_step",
    "loss_and_gradients", "EpochStats", "TrainResult", "train_loop",
    "split_dataset",
]


def _paired_arrays(target, estimate):
    t = target.data if isinstance(target, HsiCube) else np.asarray(target)
    e = estimate.data if isinstance(estimate, HsiCube) else np.asarray(estimate)
    if t.shape != e.shape:
        raise DimensionError(f"target shape {t.shape} != estimate shape {e.shape}")
    return t, e


@dataclass(frozen=True)
class LossReport:
    """One loss evaluation, split into its two terms."""

    rmrae: float
    sparsity: float

    @property
    def total(self) -> float:
        return self.rmrae + self.sparsity


def rmrae(target, estimate) -> float:
    """Relative mean absolute error with a +1 shifted denominator,
    mean(|t - e| / (t + 1)); defined for any non-negative target."""
    t, e = _paired_arrays(target, estimate)
    if t.min() < 0:
        raise DomainError(f"rmrae target must be non-negative, min is {t.min():g}")
    return float(np.mean(np.abs(t - e) / (t + 1.0)))


def mrae(target, estimate) -> float:
    """Mean relative absolute error mean(|t - e| / t); target must be
    strictly positive."""
    t, e = _paired_arrays(target, estimate)
    if t.min() <= 0:
        raise DomainError(
            f"mrae target must be strictly positive, min is {t.min():g}"
        )
    return float(np.mean(np.abs(t - e) / t))


def sparsity_loss(selected, visible_count: int, normalize: bool = True) -> float:
    """L1 norm of the visible-range slab of the gated cube.

    ``visible_count`` leading bands count as visible. With ``normalize``
    the sum is divided by the slab's element count so the penalty is
    scale-comparable with the mean-based data term.
    """
    s = selected.data if isinstance(selected, HsiCube) else np.asarray(selected)
    if not 1 <= visible_count <= s.shape[0]:
        raise ParameterError(
            f"visible_count {visible_count} out of range [1, {s.shape[0]}]"
        )
    slab = s[:visible_count]
    value = float(np.abs(slab).sum())
    return value / slab.size if normalize else value


def total_loss(target, estimate, selected, visible_count: int,
               include_sparsity: bool = True, normalize: bool = True) -> LossReport:
    """Data term plus (optionally) the visible-band sparsity term."""
    data_term = rmrae(target, estimate)
    spars = (
        sparsity_loss(selected, visible_count, normalize) if include_sparsity else 0.0
    )
    return LossReport(rmrae=data_term, sparsity=spars)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """First/second moment estimates per parameter plus the step count."""

    step: int
    m: dict
    v: dict
    lr: float


def init_adam(params: ModelParams, lr: float) -> AdamState:
    named = params.named()
    return AdamState(
        step=0,
        m={k: np.zeros_like(a) for k, a in named.items()},
        v={k: np.zeros_like(a) for k, a in named.items()},
        lr=lr,
    )


def adam_step(params: ModelParams, grads: dict, state: AdamState,
              lr: float | None = None, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One Adam update, applied in place to the parameter tensors.

    Zero gradients leave parameters bit-identical. Non-finite gradients
    abort with the offending parameter named.
    """
    if lr is None:
        lr = state.lr
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr!r}")
    state.step += 1
    state.lr = lr
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, arr in params.named().items():
        g = grads.get(name)
        if g is None:
            raise ParameterError(f"gradient missing for parameter {name!r}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        arr -= lr * update
    return params, state


# ---------------------------------------------------------------------------
# schedule and config

@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters with the published defaults."""

    initial_lr: float = 3e-4
    decay_factor: float = 0.6
    decay_every: int = 30
    max_epochs: int = 300
    patience: int = 20
    min_improvement: float = 1e-5
    batch_size: int = 4
    seed: int = 0
    include_sparsity: bool = True
    normalize_sparsity: bool = True
    visible_count: int | None = None

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ParameterError(f"initial_lr must be positive, got {self.initial_lr!r}")
        if not 0.0 < self.decay_factor < 1.0:
            raise ParameterError(f"decay_factor must lie in (0, 1), got {self.decay_factor!r}")
        for name in ("decay_every", "patience", "batch_size"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.max_epochs < 0:
            raise ParameterError(f"max_epochs must be non-negative, got {self.max_epochs}")
        if self.min_improvement < 0:
            raise ParameterError(
                f"min_improvement must be non-negative, got {self.min_improvement!r}"
            )
        if self.visible_count is not None and self.visible_count < 1:
            raise ParameterError(f"visible_count must be positive, got {self.visible_count}")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ParameterError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Step decay: the initial rate scaled by decay_factor every
    decay_every epochs."""
    if epoch < 0:
        raise ParameterError(f"epoch must be non-negative, got {epoch}")
    return config.initial_lr * config.decay_factor ** (epoch // config.decay_every)


# ---------------------------------------------------------------------------
# loss + gradients for one sample

def loss_and_gradients(params: ModelParams, hazy: np.ndarray, clean: np.ndarray,
                       visible_count: int, include_sparsity: bool = True,
                       normalize: bool = True):
    """Forward, loss, and exact parameter gradients for one pair.

    Returns ``(LossReport, grads)``. A non-finite loss raises
    :class:`NumericError` naming the first forward stage that produced
    non-finite values.
    """
    if clean.min() < 0:
        raise DomainError("clean target must be non-negative")
    yhat, cache = forward_arrays(params, hazy)
    n = clean.size
    diff = yhat - clean
    denom = clean + 1.0
    data_term = float(np.mean(np.abs(diff) / denom))
    d_yhat = np.sign(diff) / (denom * n)
    d_selected = None
    spars = 0.0
    if include_sparsity:
        ys = cache["ys"]
        slab = ys[:visible_count]
        scale = slab.size if normalize else 1.0
        spars = float(np.abs(slab).sum()) / scale
        d_selected = np.zeros_like(ys)
        d_selected[:visible_count] = np.sign(slab) / scale
    report = LossReport(rmrae=data_term, sparsity=spars)
    if not np.isfinite(report.total):
        stage = first_nonfinite_stage(cache) or "loss"
        raise NumericError(f"non-finite loss (first bad stage: {stage})")
    grads, _ = backward_arrays(params, cache, d_yhat, d_selected)
    return report, grads


# ---------------------------------------------------------------------------
# training loop

@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_rmrae: float
    train_sparsity: float
    train_total: float
    val_rmrae: float


@dataclass
class TrainResult:
    params: ModelParams
    best_epoch: int
    best_val_rmrae: float
    history: list = field(default_factory=list)
    stopped_early: bool = False


def _accumulate(total: dict | None, grads: dict) -> dict:
    if total is None:
        return {k: g.copy() for k, g in grads.items()}
    for k, g in grads.items():
        total[k] += g
    return total


def train_loop(dataset: HazeDataset, config: TrainConfig,
               model_config: ModelConfig | None = None,
               initial_params: ModelParams | None = None,
               progress=None) -> TrainResult:
    """Train on the dataset's train split, validate on its val split.

    Identical inputs give identical histories: shuffling derives from the
    config seed alone. The best-validation parameters are returned; with
    ``max_epochs=0`` the initial parameters come back untouched. Numeric
    divergence aborts with the epoch and batch index in the message.
    ``progress``, if given, is called with each :class:`EpochStats`.
    """
    train_pairs = dataset.split("train")
    val_pairs = dataset.split("val")
    if not train_pairs or not val_pairs:
        raise ParameterError(
            f"training needs non-empty train and val splits, got "
            f"{len(train_pairs)} train / {len(val_pairs)} val"
        )
    bands = train_pairs[0].clean.bands
    if config.visible_count is not None:
        visible = config.visible_count
    elif dataset.wavelengths is not None:
        visible = dataset.wavelengths.visible_count
    else:
        raise ParameterError(
            "visible_count is not set and the dataset carries no wavelength table"
        )
    if visible > bands:
        raise ParameterError(f"visible_count {visible} exceeds band count {bands}")
    if model_config is None:
        model_config = ModelConfig(bands=bands)
    if model_config.bands != bands:
        raise DimensionError(
            f"model expects {model_config.bands} bands but data has {bands}"
        )
    if initial_params is None:
        params = init_params(model_config, seed=config.seed)
    else:
        params = initial_params.copy()
    dtype = params.fuse.weight.dtype
    train_data = [
        (p.hazy.data.astype(dtype), p.clean.data.astype(dtype)) for p in train_pairs
    ]
    val_data = [
        (p.hazy.data.astype(dtype), p.clean.data.astype(dtype)) for p in val_pairs
    ]

    state = init_adam(params, config.initial_lr)
    best_params = params.copy()
    best_val = float("inf")
    best_epoch = -1
    bad_epochs = 0
    history: list = []
    stopped_early = False
    n_train = len(train_data)

    for epoch in range(config.max_epochs):
        lr = lr_schedule(epoch, config)
        order = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(11, epoch))
        ).permutation(n_train)
        sum_rmrae = 0.0
        sum_sparsity = 0.0
        for bi in range(0, n_train, config.batch_size):
            batch = order[bi : bi + config.batch_size]
            grad_sum = None
            for idx in batch:
                hazy_arr, clean_arr = train_data[idx]
                try:
                    report, grads = loss_and_gradients(
                        params, hazy_arr, clean_arr, visible,
                        include_sparsity=config.include_sparsity,
                        normalize=config.normalize_sparsity,
                    )
                except NumericError as exc:
                    raise NumericError(
                        f"training diverged at epoch {epoch}, "
                        f"batch {bi // config.batch_size}: {exc}"
                    ) from exc
                sum_rmrae += report.rmrae
                sum_sparsity += report.sparsity
                grad_sum = _accumulate(grad_sum, grads)
            inv = 1.0 / len(batch)
            for g in grad_sum.values():
                g *= inv
            adam_step(params, grad_sum, state, lr)
        val_sum = 0.0
        for hazy_arr, clean_arr in val_data:
            yhat, _ = forward_arrays(params, hazy_arr)
            val_sum += float(np.mean(np.abs(clean_arr - yhat) / (clean_arr + 1.0)))
        val_rmrae = val_sum / len(val_data)
        stats = EpochStats(
            epoch=epoch,
            lr=lr,
            train_rmrae=sum_rmrae / n_train,
            train_sparsity=sum_sparsity / n_train,
            train_total=(sum_rmrae + sum_sparsity) / n_train,
            val_rmrae=val_rmrae,
        )
        history.append(stats)
        if progress is not None:
            progress(stats)
        if not np.isfinite(val_rmrae):
            raise NumericError(f"validation loss diverged at epoch {epoch}")
        improved = best_val - val_rmrae > config.min_improvement
        if val_rmrae < best_val:
            best_val = val_rmrae
            best_epoch = epoch
            best_params = params.copy()
        bad_epochs = 0 if improved else bad_epochs + 1
        if bad_epochs >= config.patience:
            stopped_early = True
            break
    return TrainResult(
        params=best_params,
        best_epoch=best_epoch,
        best_val_rmrae=best_val,
        history=history,
        stopped_early=stopped_early,
    )
