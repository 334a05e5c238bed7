"""Patch-wise auto-encoder pipeline for unsupervised visual anomaly detection.

Training: normal images are augmented with synthetic defects and encoded into
a spatial grid of feature vectors; each vector reconstructs its own image
patch through a shared pointwise decoder. Scoring: a test image's feature
vectors are compared to a memory bank of normal vectors; the per-patch
nearest-neighbor distances form the anomaly map and their maximum the image
score.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config, save_run_config
from .decoder import (
    DecoderConfig,
    PatchDecoder,
    PatchSet,
    build_decoder,
    decode,
    default_decoder_config,
    reassemble,
    segment,
)
from .defects import (
    AugmentationConfig,
    AugmentedSample,
    DefectSpec,
    apply_defect,
    augment_image,
    sample_defect_spec,
)
from .encoder import Encoder, EncoderConfig, FeatureMap, build_encoder, config_digest, encode
from .errors import (
    ConfigError,
    DataError,
    EvaluationError,
    InputError,
    NumericalError,
    PatchAEError,
    WeightsUnavailableError,
)
from .evaluation import EvalReport, LabeledScore, auroc, evaluate_class
from .loss import LossConfig, hybrid_patch_loss, patch_ae_loss, patch_norm
from .memory_bank import (
    MemoryBank,
    ScoreMap,
    coreset_subsample,
    load_bank,
    nn_distance,
    nn_distances,
    save_bank,
    score_image,
)
from .toy_data import ToySpec, generate
from .training import TrainConfig, TrainResult, extract_normal_bank, train

__version__ = "0.1.0"
