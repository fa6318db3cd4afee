"""Context fusion techniques.

Two early techniques fuse context with the raw flow window before the
backbone (EarlyConcat, EarlyAdd). Twelve late techniques pair a context
representation (Raw / Emb / MultiEmb / LSTM) with a fusion op (Concat /
Add / Gating) applied to the backbone embedding. ``NoContext`` runs the
backbone and output head alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Backbone, WindowSpec
from .context import ContextManifest
from .layers import ContextLSTM, Dense, _drop_axis

REPRESENTATIONS = ("Raw", "Emb", "MultiEmb", "LSTM")
FUSIONS = ("Concat", "Add", "Gating")
LATE_TECHNIQUES = tuple(f"{r}-{f}" for r in REPRESENTATIONS for f in FUSIONS)
EARLY_TECHNIQUES = ("EarlyConcat", "EarlyAdd")
TECHNIQUES = EARLY_TECHNIQUES + LATE_TECHNIQUES
ALL_TECHNIQUES = ("NoContext",) + TECHNIQUES

DEFAULT_FAMILY_DIMS = (("weather", 8), ("holiday", 1), ("temporal_position", 8), ("pois", 8))


class TechniqueError(ValueError):
    pass


@dataclass(frozen=True)
class FusionSpec:
    """A technique name plus its representation/fusion widths.

    Defaults: single embedding 16; per-family embeddings 8-1-8-8 for
    weather/holiday/temporal position/POIs; context LSTM hidden 16. The
    early-joint width defaults to D + Et + Es and the Add fusion width to
    the backbone hidden size.
    """

    technique: str
    embed_dim: int = 16
    family_dims: tuple[tuple[str, int], ...] = DEFAULT_FAMILY_DIMS
    lstm_hidden: int = 16
    early_width: int | None = None
    add_width: int | None = None
    outer_sigmoid: bool = True

    def __post_init__(self):
        if self.technique not in ALL_TECHNIQUES:
            raise TechniqueError(
                f"unknown technique {self.technique!r}; expected one of {', '.join(ALL_TECHNIQUES)}"
            )
        dims = (self.embed_dim, self.lstm_hidden, *(w for _, w in self.family_dims))
        if any(d <= 0 for d in dims):
            raise TechniqueError(f"representation widths must be positive, got {dims}")

    def family_dim(self, family: str) -> int:
        for name, width in self.family_dims:
            if name == family:
                return width
        raise TechniqueError(f"no embedding width configured for family {family!r}")


# -- fusion operations ---------------------------------------------------------


def early_concat(context: Tensor, flow: Tensor) -> Tensor:
    """Stack context and flow features along the last axis of (..., P, N, .)."""
    if context.shape[:-1] != flow.shape[:-1]:
        raise ad.ShapeError(
            f"early concat: leading dims differ, context {context.shape} vs flow {flow.shape}"
        )
    return ad.concat([context, flow], axis=-1)


def early_add(context: Tensor, flow: Tensor, w_context: Tensor, w_flow: Tensor,
              bias: Tensor) -> Tensor:
    """Project context and flow to a shared width and add: E W_e + X W_st + b."""
    if context.shape[:-1] != flow.shape[:-1]:
        raise ad.ShapeError(
            f"early add: leading dims differ, context {context.shape} vs flow {flow.shape}"
        )
    return ad.matmul(context, w_context) + ad.matmul(flow, w_flow) + bias


def repr_raw(context_window: Tensor) -> Tensor:
    """The most recent context step of (..., P, N, F), unchanged."""
    p_axis = len(context_window.shape) - 3
    steps = context_window.shape[p_axis]
    return _drop_axis(ad.slice_axis(context_window, p_axis, steps - 1, steps), p_axis)


def fuse_concat(x_emb: Tensor, e_emb: Tensor) -> Tensor:
    if x_emb.shape[:-1] != e_emb.shape[:-1]:
        raise ad.ShapeError(f"fuse concat: row shapes differ, {x_emb.shape} vs {e_emb.shape}")
    return ad.concat([x_emb, e_emb], axis=-1)


def fuse_add(x_emb: Tensor, e_emb: Tensor, w_flow: Tensor, w_context: Tensor,
             bias: Tensor) -> Tensor:
    return ad.matmul(x_emb, w_flow) + ad.matmul(e_emb, w_context) + bias


def fuse_gating(x_emb: Tensor, e_emb: Tensor, w_gate: Tensor, bias: Tensor,
                outer_sigmoid: bool = True) -> Tensor:
    """Gate the embedding with context: sigmoid(sigmoid(E W_g + b) * X)."""
    gate = ad.sigmoid(ad.matmul(e_emb, w_gate) + bias)
    gated = gate * x_emb
    return ad.sigmoid(gated) if outer_sigmoid else gated


# -- pipeline -------------------------------------------------------------------


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Pipeline:
    """An executable technique: backbone, optional context path, output head.

    Parameters are created in a fixed order from one seeded generator, so a
    (spec, manifest, seed) triple always yields bit-identical weights.
    """

    def __init__(self, spec: FusionSpec | str, manifest: ContextManifest,
                 window: WindowSpec = WindowSpec(), hidden: int = 64, n_graphs: int = 1,
                 seed: int = 0, flow_dim: int = 1, aggregation: str = "mean"):
        if isinstance(spec, str):
            spec = FusionSpec(spec)
        self.spec = spec
        self.manifest = manifest
        self.window = window
        self.hidden = hidden
        self.flow_dim = flow_dim
        self.context_width = manifest.et + manifest.es
        rng = np.random.default_rng(np.random.SeedSequence(seed))

        technique = spec.technique
        self.repr_dense: Dense | None = None
        self.family_denses: list[tuple[str, slice, Dense]] = []
        self.context_lstm: ContextLSTM | None = None
        self.early_w_context: Tensor | None = None
        self.early_w_flow: Tensor | None = None
        self.early_bias: Tensor | None = None
        self.fuse_w_flow: Tensor | None = None
        self.fuse_w_context: Tensor | None = None
        self.fuse_bias: Tensor | None = None
        self.gate_weight: Tensor | None = None
        self.gate_bias: Tensor | None = None

        if technique == "NoContext":
            backbone_in = flow_dim
        elif technique == "EarlyConcat":
            backbone_in = flow_dim + self.context_width
        elif technique == "EarlyAdd":
            width = spec.early_width or (flow_dim + self.context_width)
            backbone_in = width
        else:
            backbone_in = flow_dim
        self.backbone = Backbone(backbone_in, hidden, n_graphs, window, rng, aggregation)

        if technique == "EarlyAdd":
            width = spec.early_width or (flow_dim + self.context_width)
            self.early_w_context = Tensor(
                ad.uniform_init(rng, (self.context_width, width), self.context_width),
                requires_grad=True)
            self.early_w_flow = Tensor(
                ad.uniform_init(rng, (flow_dim, width), flow_dim), requires_grad=True)
            self.early_bias = Tensor(np.zeros(width), requires_grad=True)

        head_in = hidden
        if technique in LATE_TECHNIQUES:
            representation, fusion = technique.split("-")
            d4 = self._build_representation(representation, rng)
            head_in = self._build_fusion(fusion, d4, rng)
        self.head = Dense(head_in, flow_dim, rng)

    # -- construction helpers --

    def _build_representation(self, representation: str, rng) -> int:
        if representation == "Raw":
            return self.context_width
        if representation == "Emb":
            self.repr_dense = Dense(self.context_width, self.spec.embed_dim, rng, activation="relu")
            return self.spec.embed_dim
        if representation == "MultiEmb":
            for family, block in self.manifest.family_slices():
                width = self.spec.family_dim(family)
                dense = Dense(block.stop - block.start, width, rng, activation="relu")
                self.family_denses.append((family, block, dense))
            return sum(d.weight.shape[1] for _, _, d in self.family_denses)
        if representation == "LSTM":
            self.context_lstm = ContextLSTM(self.context_width, self.spec.lstm_hidden, rng)
            return self.spec.lstm_hidden
        raise TechniqueError(f"unknown representation {representation!r}")

    def _build_fusion(self, fusion: str, d4: int, rng) -> int:
        if fusion == "Concat":
            return self.hidden + d4
        if fusion == "Add":
            d5 = self.spec.add_width or self.hidden
            self.fuse_w_flow = Tensor(ad.uniform_init(rng, (self.hidden, d5), self.hidden),
                                      requires_grad=True)
            self.fuse_w_context = Tensor(ad.uniform_init(rng, (d4, d5), d4), requires_grad=True)
            self.fuse_bias = Tensor(np.zeros(d5), requires_grad=True)
            return d5
        if fusion == "Gating":
            self.gate_weight = Tensor(ad.uniform_init(rng, (d4, self.hidden), d4),
                                      requires_grad=True)
            self.gate_bias = Tensor(np.zeros(self.hidden), requires_grad=True)
            return self.hidden
        raise TechniqueError(f"unknown fusion {fusion!r}")

    # -- execution --

    def represent(self, context_window: Tensor) -> Tensor:
        """Context representation stage: (..., P, N, F) -> (..., N, D4)."""
        representation = self.spec.technique.split("-")[0]
        if representation == "Raw":
            return repr_raw(context_window)
        if representation == "Emb":
            return self.repr_dense(repr_raw(context_window))
        if representation == "MultiEmb":
            last = repr_raw(context_window)
            if not self.family_denses:
                lead = last.shape[:-1]
                return Tensor(np.zeros((*lead, 0)))
            blocks = [
                dense(ad.slice_axis(last, -1, block.start, block.stop))
                for _, block, dense in self.family_denses
            ]
            return ad.concat(blocks, axis=-1)
        if representation == "LSTM":
            return self.context_lstm.run(context_window)
        raise TechniqueError(f"{self.spec.technique} has no representation stage")

    def fuse(self, x_emb: Tensor, e_emb: Tensor) -> Tensor:
        fusion = self.spec.technique.split("-")[1]
        if fusion == "Concat":
            return fuse_concat(x_emb, e_emb)
        if fusion == "Add":
            return fuse_add(x_emb, e_emb, self.fuse_w_flow, self.fuse_w_context, self.fuse_bias)
        return fuse_gating(x_emb, e_emb, self.gate_weight, self.gate_bias,
                           self.spec.outer_sigmoid)

    def embed(self, flow_window, context_window, props) -> Tensor:
        """Pre-head embedding for (..., P, N, D) windows."""
        flow = _as_tensor(flow_window)
        props = [_as_tensor(p) for p in props]
        technique = self.spec.technique
        if technique == "NoContext":
            return self.backbone.forward(flow, props)
        if context_window is None:
            raise TechniqueError(f"{technique} requires a context window")
        context = _as_tensor(context_window)
        if context.shape[-1] != self.context_width:
            raise ad.ShapeError(
                f"context width {context.shape[-1]} != manifest width {self.context_width}"
            )
        if technique == "EarlyConcat":
            return self.backbone.forward(early_concat(context, flow), props)
        if technique == "EarlyAdd":
            fused = early_add(context, flow, self.early_w_context, self.early_w_flow,
                              self.early_bias)
            return self.backbone.forward(fused, props)
        x_emb = self.backbone.forward(flow, props)
        return self.fuse(x_emb, self.represent(context))

    def forward(self, flow_window, context_window, props) -> Tensor:
        """Predict next-interval flow (..., N, flow_dim) in normalized space."""
        return self.head(self.embed(flow_window, context_window, props))

    def parameters(self) -> list[Tensor]:
        params = list(self.backbone.parameters())
        for t in (self.early_w_context, self.early_w_flow, self.early_bias):
            if t is not None:
                params.append(t)
        if self.repr_dense is not None:
            params.extend(self.repr_dense.parameters())
        for _, _, dense in self.family_denses:
            params.extend(dense.parameters())
        if self.context_lstm is not None:
            params.extend(self.context_lstm.parameters())
        for t in (self.fuse_w_flow, self.fuse_w_context, self.fuse_bias,
                  self.gate_weight, self.gate_bias):
            if t is not None:
                params.append(t)
        params.extend(self.head.parameters())
        return params

    def context_parameters(self) -> list[Tensor]:
        """Parameters on the context path (for ablations that zero it out)."""
        params = []
        for t in (self.early_w_context, self.early_bias):
            if t is not None:
                params.append(t)
        if self.repr_dense is not None:
            params.extend(self.repr_dense.parameters())
        for _, _, dense in self.family_denses:
            params.extend(dense.parameters())
        if self.context_lstm is not None:
            params.extend(self.context_lstm.parameters())
        for t in (self.fuse_w_context, self.gate_bias):
            if t is not None:
                params.append(t)
        return params


def assemble_technique(spec: FusionSpec | str, manifest: ContextManifest,
                       window: WindowSpec = WindowSpec(), hidden: int = 64,
                       n_graphs: int = 1, seed: int = 0, flow_dim: int = 1,
                       aggregation: str = "mean") -> Pipeline:
    """Resolve a technique name (exactly the 14 published names plus
    ``NoContext``) into an executable pipeline."""
    return Pipeline(spec, manifest, window, hidden, n_graphs, seed, flow_dim, aggregation)
