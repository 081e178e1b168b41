from .graph import GraphError, KeypointGraph, rest_pose, synthetic_graph
from .preprocess import WindowSet, preprocess_cp, resample_linear, trunk_normalize
from .storage import (
    DataFormatError,
    DatasetManifest,
    ManifestEntry,
    decode_sequence,
    encode_sequence,
    file_digest,
    load_dataset,
    load_manifest,
    read_sequence,
    save_dataset,
    write_sequence,
)
from .streams import STREAMS, FeatureStreams, SequenceError, SkeletonSequence, derive_streams
from .synthetic import SyntheticConfig, class_active_sets, generate_synthetic_dataset, ground_truth_ranking


def stack_inputs(sequences, graph):
    """``[N, 4, C, T, V]`` float64 model input and ``[N]`` labels for whole sequences."""
    import numpy as np

    x = np.stack([derive_streams(s, graph).stacked() for s in sequences]) if sequences else None
    y = np.array([s.label for s in sequences], dtype=np.int64)
    return x, y
