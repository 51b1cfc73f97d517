"""Binary autoencoder hashing trained with auxiliary coordinates."""

from bahash.data import (
    BinaryCodeMatrix,
    DataError,
    DatasetSplit,
    FeatureMatrix,
    load_features,
    normalize,
    pack_codes,
    split_dataset,
    unpack_codes,
)
from bahash.autoencoder import (
    LinearDecoder,
    LinearEncoder,
    SvmConfig,
    decode,
    encode,
    f_step,
    h_step,
)
from bahash.trainer import (
    PenaltySchedule,
    TrainConfig,
    TrainReport,
    evaluate_penalty,
    init_codes,
    train,
)

__all__ = [
    "BinaryCodeMatrix",
    "DataError",
    "DatasetSplit",
    "FeatureMatrix",
    "LinearDecoder",
    "LinearEncoder",
    "PenaltySchedule",
    "SvmConfig",
    "TrainConfig",
    "TrainReport",
    "decode",
    "encode",
    "evaluate_penalty",
    "f_step",
    "h_step",
    "init_codes",
    "load_features",
    "normalize",
    "pack_codes",
    "split_dataset",
    "train",
    "unpack_codes",
]

__version__ = "0.1.0"
