"""bitfault: bit-flip fault attacks on quantized neural networks.

Quantizes small victims into two's-complement bit planes, then runs a
gradient-guided progressive search for the handful of stored bits whose
flips collapse accuracy to chance, alongside random-flip and float32
exponent-flip baselines.
"""

from .attack import (
    AttackConfig,
    AttackTrace,
    BitFlip,
    FlipRecord,
    NoEffectiveFlipError,
    TracePoint,
    cross_layer_select,
    hamming_distance,
    in_layer_search,
    model_bit_hash,
    pbs_iteration,
    run_attack,
    run_attack_on_sample,
)
from .baselines import (
    BaselineConfig,
    float_exponent_flip,
    layer_restricted_attack,
    random_quantized_flips,
)
from .bits import (
    BitAddress,
    bfa_flip,
    bit_coefficients,
    bit_gradients,
    decode,
    encode,
    hamming_codes,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    AttackSample,
    Dataset,
    DatasetFormatError,
    draw_attack_sample,
    load_dataset,
    load_idx,
    save_dataset,
    synthetic_glyphs,
)
from .nn import (
    Conv2d,
    Flatten,
    FullyConnected,
    MaxPool,
    ModeError,
    ModelGraph,
    ReLU,
    ShapeError,
    backward,
    cross_entropy,
    evaluate,
    forward,
    predict,
)
from .quantize import (
    QuantizationError,
    QuantizedLayer,
    compute_step,
    dequantize,
    quantize_layer,
    quantize_model,
    ste_backward,
)
from .training import TrainConfig, TrainingDiverged, desk_cnn, small_mlp, train_victim

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackSample",
    "AttackTrace",
    "BaselineConfig",
    "BitAddress",
    "BitFlip",
    "CheckpointError",
    "Conv2d",
    "Dataset",
    "DatasetFormatError",
    "FlipRecord",
    "Flatten",
    "FullyConnected",
    "MaxPool",
    "ModeError",
    "ModelGraph",
    "NoEffectiveFlipError",
    "QuantizationError",
    "QuantizedLayer",
    "ReLU",
    "ShapeError",
    "TracePoint",
    "TrainConfig",
    "TrainingDiverged",
    "backward",
    "bfa_flip",
    "bit_coefficients",
    "bit_gradients",
    "compute_step",
    "cross_entropy",
    "cross_layer_select",
    "decode",
    "dequantize",
    "desk_cnn",
    "draw_attack_sample",
    "encode",
    "evaluate",
    "float_exponent_flip",
    "forward",
    "hamming_codes",
    "hamming_distance",
    "in_layer_search",
    "layer_restricted_attack",
    "load_checkpoint",
    "load_dataset",
    "load_idx",
    "model_bit_hash",
    "pbs_iteration",
    "predict",
    "quantize_layer",
    "quantize_model",
    "random_quantized_flips",
    "run_attack",
    "run_attack_on_sample",
    "save_checkpoint",
    "save_dataset",
    "small_mlp",
    "ste_backward",
    "synthetic_glyphs",
    "train_victim",
]
