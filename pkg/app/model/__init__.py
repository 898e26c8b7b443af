from .model import (
    ArchConfig,
    GaussianLatent,
    ModelParams,
    decode,
    encode,
    init_params,
    predict_severity,
    regress,
    sample_latent,
)
from .ordinal import (
    NUM_BITS,
    NUM_CLASSES,
    OrdinalLabel,
    OrdinalPrediction,
    encode_labels,
    expected_severity,
    ordinal_encode,
)

__all__ = [
    "ArchConfig",
    "GaussianLatent",
    "ModelParams",
    "OrdinalLabel",
    "OrdinalPrediction",
    "NUM_BITS",
    "NUM_CLASSES",
    "decode",
    "encode",
    "encode_labels",
    "expected_severity",
    "init_params",
    "ordinal_encode",
    "predict_severity",
    "regress",
    "sample_latent",
]
