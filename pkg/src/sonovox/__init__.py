"""sonovox: spatiotemporal network engine for ultrasound-video-to-spectrum regression.

A numpy/scipy library with hand-written gradients: 3D/2D convolution,
max pooling, dense, dropout, LSTM (with optional peephole connections),
bidirectional LSTM and convolutional LSTM layers; declarative model specs
with shape inference and parameter counting; Adam/SGD training with
early stopping; a preprocessing pipeline for raw ultrasound scanline
recordings; and a synthetic data generator for end-to-end verification.
The ``sonovox`` console command exposes dataset synthesis, training,
evaluation, a layer-combination grid sweep, model inspection and a
finite-difference gradient checker.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    FormatError,
    GeometryError,
    MetricError,
    ShapeError,
    SonovoxError,
)
from .geometry import ConvGeometry
from .kernels import (
    activation,
    activation_deriv,
    conv2d_backward,
    conv2d_forward,
    conv3d_backward,
    conv3d_forward,
    conv3d_oracle,
    maxpool3d,
    sigmoid,
)
from .layers import dense_forward, dropout
from .metrics import Metrics, compute_metrics, mse_loss, r2_score
from .models import (
    ARCHITECTURES,
    GRID_COMBOS,
    LayerSpec,
    Model,
    ModelSpec,
    build_architecture,
    build_combo,
    count_params,
    infer_shapes,
    parse_model_config,
)
from .recurrent import (
    ConvLstmParams,
    LstmParams,
    bidirectional_lstm,
    convlstm_forward,
    convlstm_step,
    lstm_forward,
    lstm_step,
)
from .rng import derive_rng, seeded_rng
from .synth import SynthConfig, gen_synthetic
from .train import TrainConfig, evaluate, fit

__all__ = [
    "ARCHITECTURES",
    "ConfigError",
    "ConvGeometry",
    "ConvLstmParams",
    "DataError",
    "DivergenceError",
    "FormatError",
    "GeometryError",
    "GRID_COMBOS",
    "LayerSpec",
    "LstmParams",
    "Metrics",
    "MetricError",
    "Model",
    "ModelSpec",
    "ShapeError",
    "SonovoxError",
    "SynthConfig",
    "TrainConfig",
    "__version__",
    "activation",
    "activation_deriv",
    "bidirectional_lstm",
    "build_architecture",
    "build_combo",
    "compute_metrics",
    "conv2d_backward",
    "conv2d_forward",
    "conv3d_backward",
    "conv3d_forward",
    "conv3d_oracle",
    "convlstm_forward",
    "convlstm_step",
    "count_params",
    "dense_forward",
    "derive_rng",
    "dropout",
    "evaluate",
    "fit",
    "gen_synthetic",
    "infer_shapes",
    "lstm_forward",
    "lstm_step",
    "maxpool3d",
    "mse_loss",
    "parse_model_config",
    "r2_score",
    "seeded_rng",
    "sigmoid",
]
