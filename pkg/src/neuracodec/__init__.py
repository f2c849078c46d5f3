"""Keyed random-network image encryption toolkit.

Images are encrypted by a fixed, non-trained network whose parameters
are derived deterministically from a 32-byte master key, so the same
key reproduces the same encryption anywhere.  Two schemes are provided
(token-matrix output with per-image patch shuffling, and image output
with the spatial layout hidden by a random position embedding), plus
evaluation harnesses: a collision matching attack, leakage metrics and
a linear-probe utility experiment.
"""

from .attacks import (
    CollisionSignature,
    MatchReport,
    cost_matrix,
    encrypted_signature,
    hungarian_assign,
    leakage_metrics,
    leakage_report,
    match_plain_encrypted,
    match_samples,
    pairwise_collision_matrix,
    plain_signature,
    signature_cost,
)
from .dataset_io import (
    DatasetManifest,
    SampleEntry,
    encrypt_dataset,
    export_png,
    load_encrypted_dataset,
    load_image,
    load_tensor,
    save_tensor,
)
from .encoder import (
    SCHEME_IMAGE,
    SCHEME_TOKENS,
    EncoderConfig,
    EncoderWeights,
    EncryptedSample,
    build_weights,
    encrypt,
    encrypt_with_weights,
    extract_patches,
    forward_tokens,
    identity_weights,
    reassemble_patches,
    shuffle_patches,
)
from .errors import (
    ConfigError,
    DatasetError,
    KeyFormatError,
    NeuracodecError,
    TensorFileError,
)
from .keying import (
    MasterKey,
    keystream,
    parse_key,
    read_key_file,
    sample_gaussian,
    sample_permutation,
    sample_uniform,
    write_key_file,
)

__version__ = "0.1.0"

# The estimator layer pulls in scikit-learn, which costs over a second of
# import time; load it only when someone actually asks for those names.
_LAZY_ATTRS = {
    "RandomNetworkEncoder": "neuracodec.estimators",
    "SoftmaxProbe": "neuracodec.estimators",
    "evaluate": "neuracodec.probe",
    "generate_toy_dataset": "neuracodec.probe",
    "train_probe": "neuracodec.probe",
    "utility_experiment": "neuracodec.probe",
}


def __getattr__(name):
    module = _LAZY_ATTRS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    import importlib

    return getattr(importlib.import_module(module), name)
