"""Context-aware crowd flow forecasting benchmark.

A graph-recurrent forecasting backbone, fourteen context fusion techniques
(two early-joint, twelve late-fusion), the data pipeline that feeds them,
and a config-driven benchmark harness with normalized cross-dataset metrics.
"""

from .autodiff import Tensor
from .backbone import WindowSpec
from .bench import ExperimentConfig, parse_config, run_grid
from .datasets import EffectConfig, FlowSeries, LocationSet, synth_generate
from .fusion import ALL_TECHNIQUES, FusionSpec, Pipeline, assemble_technique
from .training import TrainConfig, avg_normalized, mae, rmse

__all__ = [
    "ALL_TECHNIQUES",
    "EffectConfig",
    "ExperimentConfig",
    "FlowSeries",
    "FusionSpec",
    "LocationSet",
    "Pipeline",
    "Tensor",
    "TrainConfig",
    "WindowSpec",
    "assemble_technique",
    "avg_normalized",
    "mae",
    "parse_config",
    "rmse",
    "run_grid",
    "synth_generate",
]

__version__ = "0.1.0"
