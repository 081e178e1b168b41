from .adjacency import NormalizedAdjacency, normalize_adjacency, normalize_partition, partition_adjacency
from .layers import AttentionLayer, GraphConvLayer, TcnLayer, graph_conv_forward
from .network import BRANCHES, KINDS, CaptureRecord, GcnModel, LayerError, ModelConfig, backward_to_layer
from .train import TrainConfig, TrainingDiverged, TrainResult, accuracy, train
from .weights import (
    WeightFormatError,
    decode_weights,
    encode_weights,
    load_model,
    load_weights,
    save_model,
    save_weights,
)
