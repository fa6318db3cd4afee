"""Spatiotemporal backbone: windowing and the graph-recurrent encoder.

Inputs are windows of P = closeness + daily + weekly lagged observations
(defaults 6/7/4). Each branch unrolls one graph-gated recurrent cell per
spatial graph; per-graph terminal states are aggregated, branch embeddings
concatenated, and a dense projection yields the N x D1 embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datasets import FlowSeries
from .layers import Dense, GraphGRUCell, _drop_axis


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    """Lagged-step counts per branch: recent steps, same slot on prior days,
    same slot on prior weeks."""

    closeness: int = 6
    daily: int = 7
    weekly: int = 4

    def __post_init__(self):
        counts = (self.closeness, self.daily, self.weekly)
        if any(c < 0 for c in counts) or sum(counts) == 0:
            raise WindowError(f"window counts must be non-negative with at least one branch, got {counts}")

    @property
    def p(self) -> int:
        return self.closeness + self.daily + self.weekly

    def branch_slices(self) -> list[tuple[str, slice]]:
        """Ordered (branch, window-axis slice) pairs for non-empty branches."""
        out = []
        offset = 0
        for name, count in (("closeness", self.closeness), ("daily", self.daily), ("weekly", self.weekly)):
            if count:
                out.append((name, slice(offset, offset + count)))
            offset += count
        return out

    def lag_offsets(self, interval_minutes: int) -> np.ndarray:
        """Offsets (negative) of each window step relative to the target index."""
        spd = 1440 // interval_minutes
        spw = 7 * spd
        offsets: list[int] = []
        offsets += [-k for k in range(self.closeness, 0, -1)]
        offsets += [-k * spd for k in range(self.daily, 0, -1)]
        offsets += [-k * spw for k in range(self.weekly, 0, -1)]
        return np.array(offsets, dtype=np.int64)

    def first_valid_target(self, interval_minutes: int) -> int:
        """Smallest target index whose deepest lag is still inside the series."""
        return int(-self.lag_offsets(interval_minutes).min())


@dataclass(frozen=True)
class Sample:
    """One training example: window-step indices plus the target interval index."""

    input_indices: np.ndarray  # (P,)
    target_index: int


def window_samples(series: FlowSeries, spec: WindowSpec,
                   target_range: tuple[int, int]) -> tuple[list[Sample], int]:
    """Build samples for every target index in ``target_range``.

    Targets whose history would reach before the series start are skipped and
    counted; a range yielding no samples at all is an error.
    """
    lo, hi = target_range
    if not (0 <= lo < hi <= series.n_intervals):
        raise WindowError(f"target range {target_range} outside series of length {series.n_intervals}")
    offsets = spec.lag_offsets(series.interval_minutes)
    first_valid = spec.first_valid_target(series.interval_minutes)
    samples = []
    skipped = 0
    for t in range(lo, hi):
        if t < first_valid:
            skipped += 1
            continue
        samples.append(Sample(t + offsets, t))
    if not samples:
        raise WindowError(
            f"target range {target_range} produced no samples "
            f"(first index with full history is {first_valid})"
        )
    return samples, skipped


def sample_matrix(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into (S, P) input-index and (S,) target-index arrays."""
    inputs = np.stack([s.input_indices for s in samples])
    targets = np.array([s.target_index for s in samples], dtype=np.int64)
    return inputs, targets


class Backbone:
    """Graph-recurrent encoder over closeness/daily/weekly branches.

    One recurrent cell per (branch, graph); per-graph terminal hidden states
    are averaged (or combined with learned weights), branch embeddings are
    concatenated and projected to the hidden width.
    """

    def __init__(self, in_dim: int, hidden: int, n_graphs: int, window: WindowSpec,
                 rng: np.random.Generator, aggregation: str = "mean"):
        if n_graphs < 1:
            raise ValueError("backbone needs at least one graph")
        if aggregation not in ("mean", "weighted"):
            raise ValueError(f"aggregation must be mean or weighted, got {aggregation!r}")
        self.in_dim = in_dim
        self.hidden = hidden
        self.n_graphs = n_graphs
        self.window = window
        self.aggregation = aggregation
        self.cells: dict[str, list[GraphGRUCell]] = {
            name: [GraphGRUCell(in_dim, hidden, rng) for _ in range(n_graphs)]
            for name, _ in window.branch_slices()
        }
        self.graph_weights = (
            Tensor(np.full(n_graphs, 1.0 / n_graphs), requires_grad=True)
            if aggregation == "weighted" else None
        )
        self.projection = Dense(len(self.cells) * hidden, hidden, rng)

    def forward(self, inputs: Tensor, props: list[Tensor]) -> Tensor:
        """Encode windows (..., P, N, in_dim) into embeddings (..., N, hidden)."""
        if not props:
            raise ValueError("backbone forward needs at least one propagation matrix")
        if len(props) != self.n_graphs:
            raise ad.ShapeError(f"got {len(props)} graphs for a {self.n_graphs}-graph backbone")
        shape = inputs.shape
        if len(shape) < 3 or shape[-3] != self.window.p or shape[-1] != self.in_dim:
            raise ad.ShapeError(
                f"expected inputs (..., {self.window.p}, N, {self.in_dim}), got {shape}"
            )
        p_axis = len(shape) - 3
        n = shape[-2]
        state_shape = (*shape[:-3], n, self.hidden)
        branch_embeddings = []
        for name, block in self.window.branch_slices():
            window = ad.slice_axis(inputs, p_axis, block.start, block.stop)
            terminals = []
            for cell, prop in zip(self.cells[name], props):
                # input-side work for the whole branch window in one shot
                pre = cell.input_preactivations(window, prop)
                hidden = Tensor(np.zeros(state_shape))
                for t in range(block.stop - block.start):
                    step_pre = [
                        _drop_axis(ad.slice_axis(p, p_axis, t, t + 1), p_axis) for p in pre
                    ]
                    hidden = cell.step_preactivated(hidden, *step_pre, prop)
                terminals.append(hidden)
            branch_embeddings.append(self._aggregate(terminals))
        return self.projection(ad.concat(branch_embeddings, axis=-1))

    def _aggregate(self, terminals: list[Tensor]) -> Tensor:
        if len(terminals) == 1 and self.graph_weights is None:
            return terminals[0]
        if self.graph_weights is None:
            total = terminals[0]
            for t in terminals[1:]:
                total = total + t
            return total / len(terminals)
        weights = ad.split(self.graph_weights, [1] * self.n_graphs, axis=0)
        total = weights[0] * terminals[0]
        for w, t in zip(weights[1:], terminals[1:]):
            total = total + w * t
        return total

    def parameters(self) -> list[Tensor]:
        params = []
        for cells in self.cells.values():
            for cell in cells:
                params.extend(cell.parameters())
        if self.graph_weights is not None:
            params.append(self.graph_weights)
        params.extend(self.projection.parameters())
        return params
