"""Training loop, loss, and evaluation metrics.

Optimization happens in normalized flow space (per-location division by the
train-split maximum); RMSE/MAE are reported in raw units after denormalizing
predictions. ``avg_normalized`` computes the cross-dataset aggregate: each
method's metric divided by the per-dataset minimum, averaged over datasets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, FiniteError, Tensor
from .context import replicate_and_merge
from .fusion import Pipeline


class MetricError(ValueError):
    pass


class TrainDivergedError(RuntimeError):
    """Loss went non-finite; carries where and how hard."""

    def __init__(self, epoch: int, batch: int, max_abs_grad: float):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (max |grad| {max_abs_grad:.3e})"
        )
        self.epoch = epoch
        self.batch = batch
        self.max_abs_grad = max_abs_grad


# -- normalization -------------------------------------------------------------


@dataclass(frozen=True)
class FlowNormalizer:
    """Per-location scale from the train split; dead locations scale by 1."""

    scale: np.ndarray  # (N,)

    @classmethod
    def fit(cls, values: np.ndarray, train_range: tuple[int, int]) -> "FlowNormalizer":
        lo, hi = train_range
        peak = np.asarray(values[lo:hi]).max(axis=0)
        return cls(np.where(peak > 0, peak, 1.0))

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) / self.scale

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.scale


# -- sample arrays ---------------------------------------------------------------


@dataclass
class SplitData:
    """Batch-ready arrays for one chronological split.

    Context is stored unreplicated (temporal windows per sample, one spatial
    matrix) and merged per batch to keep memory linear in S.
    """

    flow: np.ndarray        # (S, P, N, 1) normalized
    target: np.ndarray      # (S, N, 1) normalized
    target_raw: np.ndarray  # (S, N, 1) raw units
    temporal: np.ndarray    # (S, P, Et)
    spatial: np.ndarray     # (N, Es)

    @property
    def n_samples(self) -> int:
        return self.flow.shape[0]

    @property
    def context_width(self) -> int:
        return self.temporal.shape[-1] + self.spatial.shape[-1]

    def batch(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        flow = self.flow[idx]
        context = replicate_and_merge(self.temporal[idx], self.spatial) if self.context_width else None
        return flow, context, self.target[idx]


def build_split_data(raw_flow: np.ndarray, normalizer: FlowNormalizer,
                     temporal_values: np.ndarray, spatial_values: np.ndarray,
                     samples) -> SplitData:
    """Gather window/target arrays for a list of samples against full series."""
    norm = normalizer.normalize(raw_flow)
    inputs = np.stack([s.input_indices for s in samples])
    targets = np.array([s.target_index for s in samples])
    return SplitData(
        flow=norm[inputs][..., None],
        target=norm[targets][..., None],
        target_raw=np.asarray(raw_flow)[targets][..., None],
        temporal=np.asarray(temporal_values, dtype=np.float64)[inputs],
        spatial=np.asarray(spatial_values, dtype=np.float64),
    )


# -- loss and metrics -------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all entries (normalized space)."""
    if pred.shape != target.shape:
        raise ad.ShapeError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return ad.reduce_mean(diff * diff)


def rmse(y: np.ndarray, y_hat: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size == 0 or y.shape != y_hat.shape:
        raise MetricError(f"rmse needs matching non-empty inputs, got {y.shape} and {y_hat.shape}")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def mae(y: np.ndarray, y_hat: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size == 0 or y.shape != y_hat.shape:
        raise MetricError(f"mae needs matching non-empty inputs, got {y.shape} and {y_hat.shape}")
    return float(np.mean(np.abs(y - y_hat)))


def avg_normalized(matrix: np.ndarray) -> np.ndarray:
    """Per-method mean over datasets of value / column minimum.

    ``matrix`` is methods x datasets with strictly positive entries; the
    result is >= 1, hitting 1 only for a method that attains every column
    minimum.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise MetricError(f"need a non-empty methods x datasets matrix, got shape {m.shape}")
    if np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise MetricError("metric entries must be positive and finite")
    return (m / m.min(axis=0, keepdims=True)).mean(axis=1)


# -- training ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise MetricError(f"epochs, batch size and patience must be positive: {self}")
        if self.lr < 0:
            raise MetricError(f"learning rate must be non-negative, got {self.lr}")


@dataclass
class TrainResult:
    loss_history: list[float] = field(default_factory=list)
    val_rmse_history: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_rmse: float = float("inf")
    epochs_run: int = 0
    seconds: float = 0.0


def predict(pipeline: Pipeline, data: SplitData, props, batch_size: int = 256) -> np.ndarray:
    """Forward the whole split without building graphs; normalized output (S, N, 1)."""
    outputs = []
    with ad.no_grad():
        for lo in range(0, data.n_samples, batch_size):
            idx = np.arange(lo, min(lo + batch_size, data.n_samples))
            flow, context, _ = data.batch(idx)
            outputs.append(pipeline.forward(flow, context, props).data)
    return np.concatenate(outputs, axis=0)


def evaluate(pipeline: Pipeline, data: SplitData, props,
             normalizer: FlowNormalizer) -> tuple[float, float]:
    """Denormalized (RMSE, MAE) of the pipeline on one split."""
    pred = normalizer.denormalize(predict(pipeline, data, props)[..., 0])[..., None]
    return rmse(data.target_raw, pred), mae(data.target_raw, pred)


def train(pipeline: Pipeline, train_data: SplitData, val_data: SplitData, props,
          config: TrainConfig, normalizer: FlowNormalizer) -> TrainResult:
    """Mini-batch optimization with early stopping on validation RMSE.

    Returns the parameters of the best validation epoch (restored in place)
    and the per-epoch histories. Deterministic for a fixed config seed.
    """
    if train_data.n_samples < 1 or val_data.n_samples < 1:
        raise MetricError("training needs at least one train and one validation sample")
    params = pipeline.parameters()
    optimizer = AdamState.for_params(params, lr=config.lr)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    result = TrainResult()
    best_params: list[np.ndarray] | None = None
    stale = 0
    started = time.perf_counter()

    for epoch in range(config.epochs):
        order = rng.permutation(train_data.n_samples)
        squared_error = 0.0
        for batch_no, lo in enumerate(range(0, train_data.n_samples, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            flow, context, target = train_data.batch(idx)
            ad.zero_grads(params)
            try:
                loss = mse_loss(pipeline.forward(flow, context, props), Tensor(target))
                loss.backward()
            except FiniteError:
                worst = max((float(np.max(np.abs(ad.grad_or_zero(p)))) for p in params), default=0.0)
                raise TrainDivergedError(epoch, batch_no, worst) from None
            squared_error += float(loss.data) * len(idx)
            ad.adam_step(optimizer, params, [ad.grad_or_zero(p) for p in params])
        result.loss_history.append(squared_error / train_data.n_samples)

        val_rmse, _ = evaluate(pipeline, val_data, props, normalizer)
        result.val_rmse_history.append(val_rmse)
        result.epochs_run = epoch + 1
        if val_rmse < result.best_val_rmse:
            result.best_val_rmse = val_rmse
            result.best_epoch = epoch
            best_params = [p.data.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    if best_params is not None:
        for p, data in zip(params, best_params):
            p.data = data
    result.seconds = time.perf_counter() - started
    return result
