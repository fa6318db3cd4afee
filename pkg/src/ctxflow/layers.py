"""Learnable layers shared by the backbone and the fusion techniques.

Weights are float64, initialized uniformly on +/- 1/sqrt(fan_in) from a
caller-supplied generator; biases start at zero (the context LSTM therefore
has a zero forget bias).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "sigmoid": ad.sigmoid}


class Dense:
    """Affine map on the trailing axis, with an optional activation."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 activation: str | None = None):
        if activation is not None and activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = Tensor(ad.uniform_init(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.weight) + self.bias
        if self.activation:
            out = _ACTIVATIONS[self.activation](out)
        return out

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class GraphGRUCell:
    """Gated recurrent unit whose input and hidden linear maps see
    graph-propagated values (x -> A_hat x, h -> A_hat h) first.

    With the identity propagation matrix this is a plain GRU.
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden

        def w(rows, cols, fan):
            return Tensor(ad.uniform_init(rng, (rows, cols), fan), requires_grad=True)

        self.w_xz, self.w_hz = w(in_dim, hidden, in_dim), w(hidden, hidden, hidden)
        self.w_xr, self.w_hr = w(in_dim, hidden, in_dim), w(hidden, hidden, hidden)
        self.w_xc, self.w_hc = w(in_dim, hidden, in_dim), w(hidden, hidden, hidden)
        self.b_z = Tensor(np.zeros(hidden), requires_grad=True)
        self.b_r = Tensor(np.zeros(hidden), requires_grad=True)
        self.b_c = Tensor(np.zeros(hidden), requires_grad=True)

    def input_preactivations(self, x: Tensor, prop: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Propagate inputs and apply the input-side maps for all steps at once.

        x is (..., N, Din) for one step or (..., P, N, Din) for a window; the
        propagation contracts the N axis either way.
        """
        xs = ad.matmul(prop, x)
        return (ad.matmul(xs, self.w_xz) + self.b_z,
                ad.matmul(xs, self.w_xr) + self.b_r,
                ad.matmul(xs, self.w_xc) + self.b_c)

    def step_preactivated(self, hidden: Tensor, pre_z: Tensor, pre_r: Tensor,
                          pre_c: Tensor, prop: Tensor) -> Tensor:
        hs = ad.matmul(prop, hidden)
        z = ad.sigmoid(pre_z + ad.matmul(hs, self.w_hz))
        r = ad.sigmoid(pre_r + ad.matmul(hs, self.w_hr))
        candidate = ad.tanh(pre_c + ad.matmul(r * hs, self.w_hc))
        return (1.0 - z) * hidden + z * candidate

    def gates(self, hidden: Tensor, x: Tensor, prop: Tensor) -> tuple[Tensor, Tensor]:
        """Update and reset gate activations (both in (0, 1))."""
        pre_z, pre_r, _ = self.input_preactivations(x, prop)
        hs = ad.matmul(prop, hidden)
        z = ad.sigmoid(pre_z + ad.matmul(hs, self.w_hz))
        r = ad.sigmoid(pre_r + ad.matmul(hs, self.w_hr))
        return z, r

    def step(self, hidden: Tensor, x: Tensor, prop: Tensor) -> Tensor:
        """One recurrent update: hidden (..., N, H), x (..., N, Din), prop (N, N)."""
        pre_z, pre_r, pre_c = self.input_preactivations(x, prop)
        return self.step_preactivated(hidden, pre_z, pre_r, pre_c, prop)

    def parameters(self) -> list[Tensor]:
        return [self.w_xz, self.w_hz, self.w_xr, self.w_hr, self.w_xc, self.w_hc,
                self.b_z, self.b_r, self.b_c]


class ContextLSTM:
    """LSTM over the window axis, weights shared across locations.

    Gate blocks are ordered input, forget, candidate, output.
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden
        self.w_x = Tensor(ad.uniform_init(rng, (in_dim, 4 * hidden), in_dim), requires_grad=True)
        self.w_h = Tensor(ad.uniform_init(rng, (hidden, 4 * hidden), hidden), requires_grad=True)
        self.bias = Tensor(np.zeros(4 * hidden), requires_grad=True)

    def step(self, hidden: Tensor, cell: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
        pre = ad.matmul(x, self.w_x) + ad.matmul(hidden, self.w_h) + self.bias
        h = self.hidden
        i_gate, f_gate, g_cand, o_gate = ad.split(pre, [h, h, h, h], axis=-1)
        i_gate = ad.sigmoid(i_gate)
        f_gate = ad.sigmoid(f_gate)
        g_cand = ad.tanh(g_cand)
        o_gate = ad.sigmoid(o_gate)
        cell_next = f_gate * cell + i_gate * g_cand
        return o_gate * ad.tanh(cell_next), cell_next

    def run(self, sequence: Tensor) -> Tensor:
        """Unroll over axis -3 of (..., P, N, F); returns the final hidden (..., N, H)."""
        shape = sequence.shape
        if len(shape) < 3:
            raise ad.ShapeError(f"context LSTM expects (..., P, N, F), got {shape}")
        steps = shape[-3]
        state_shape = (*shape[:-3], shape[-2], self.hidden)
        hidden = Tensor(np.zeros(state_shape))
        cell = Tensor(np.zeros(state_shape))
        for t in range(steps):
            x_t = ad.slice_axis(sequence, len(shape) - 3, t, t + 1)
            x_t = _drop_axis(x_t, len(shape) - 3)
            hidden, cell = self.step(hidden, cell, x_t)
        return hidden

    def parameters(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.bias]


def _drop_axis(t: Tensor, axis: int) -> Tensor:
    """Remove a size-1 axis."""
    shape = t.shape
    if shape[axis] != 1:
        raise ad.ShapeError(f"cannot drop axis {axis} of size {shape[axis]}")
    return ad.reshape(t, shape[:axis] + shape[axis + 1:])
