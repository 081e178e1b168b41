"""Multi-branch spatial-temporal GCN with activation capture and a hand-derived reverse pass.

Four input branches (one per stream J, V, B, A) run GraphConv -> TCN ->
Attention blocks; their outputs are concatenated on the channel axis and fed
to the main branch, then averaged over (T, V) and classified.

Capturable layers are named ``<branch>.<block>.<kind>`` with ``branch`` in
``J V B A main`` and ``kind`` in ``input`` (rectified graph-conv output),
``tcn`` (rectified temporal-conv output) and ``att`` (gated output).
``<branch>.<kind>`` aliases the branch's last block and ``pool`` is the
classifier input.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data.graph import KeypointGraph
from ..data.streams import STREAMS, FeatureStreams
from .adjacency import NormalizedAdjacency, normalize_adjacency
from .layers import (
    AttentionLayer,
    GraphConvLayer,
    TcnLayer,
    attention_backward,
    attention_forward,
    gcn_backward,
    gcn_forward,
    tcn_backward,
    tcn_forward,
)

BRANCHES = STREAMS + ("main",)
KINDS = ("input", "tcn", "att")


class LayerError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass
class ModelConfig:
    in_channels: int = 2
    num_classes: int = 3
    branch_channels: list = field(default_factory=lambda: [4])
    main_channels: list = field(default_factory=lambda: [8])
    temporal_kernel: int = 3
    partition_strategy: str = "spatial"
    branch_attention: str = "joint"
    main_attention: str = "joint"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        cfg = cls(**known)
        cfg.branch_channels = [int(c) for c in cfg.branch_channels]
        cfg.main_channels = [int(c) for c in cfg.main_channels]
        return cfg


@dataclass
class Block:
    gcn: GraphConvLayer
    tcn: TcnLayer
    att: AttentionLayer


@dataclass
class CaptureRecord:
    layer_id: str
    activations: np.ndarray  # [K, T', V]
    gradients: np.ndarray | None = None
    class_index: int | None = None

    def __post_init__(self):
        if self.gradients is not None and self.gradients.shape != self.activations.shape:
            raise ValueError("activation and gradient shapes differ")


class GcnModel:
    def __init__(self, config: ModelConfig, graph: KeypointGraph, branches: dict, main: list,
                 classifier_weight: np.ndarray, classifier_bias: np.ndarray):
        self.config = config
        self.graph = graph
        self.adjacency: NormalizedAdjacency = normalize_adjacency(graph, config.partition_strategy)
        self.branches = branches
        self.main = main
        self.classifier_weight = classifier_weight
        self.classifier_bias = classifier_bias
        fused = sum(branches[s][-1].gcn.out_channels for s in STREAMS)
        if main[0].gcn.weights.shape[2] != fused:
            raise ValueError("main branch input channels must equal 4 x branch output channels")
        if classifier_weight.shape != (config.num_classes, main[-1].gcn.out_channels):
            raise ValueError("classifier shape inconsistent with num_classes")

    # -- construction -------------------------------------------------------

    @classmethod
    def initialize(cls, config: ModelConfig, graph: KeypointGraph, seed: int = 1234) -> "GcnModel":
        rng = np.random.default_rng(seed)
        P = normalize_adjacency(graph, config.partition_strategy).num_partitions
        V = graph.num_keypoints
        K = config.temporal_kernel

        def block(c_in, c_out, mode):
            return Block(
                GraphConvLayer(rng.normal(0, np.sqrt(2.0 / (c_in * P)), (P, c_out, c_in)), np.ones((P, V))),
                TcnLayer(rng.normal(0, np.sqrt(2.0 / (c_out * K)), (c_out, c_out, K)), np.zeros(c_out)),
                AttentionLayer(mode, rng.normal(0, 1.0 / np.sqrt(c_out), c_out), np.zeros(1)),
            )

        branches = {}
        for s in STREAMS:
            c_in, blocks = config.in_channels, []
            for c_out in config.branch_channels:
                blocks.append(block(c_in, c_out, config.branch_attention))
                c_in = c_out
            branches[s] = blocks
        c_in, main = 4 * config.branch_channels[-1], []
        for c_out in config.main_channels:
            main.append(block(c_in, c_out, config.main_attention))
            c_in = c_out
        W = rng.normal(0, 1.0 / np.sqrt(c_in), (config.num_classes, c_in))
        return cls(config, graph, branches, main, W, np.zeros(config.num_classes))

    def copy(self) -> "GcnModel":
        return copy.deepcopy(self)

    def blocks(self):
        for s in STREAMS:
            for i, b in enumerate(self.branches[s]):
                yield f"{s}.{i}", b
        for i, b in enumerate(self.main):
            yield f"main.{i}", b

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, b in self.blocks():
            out += [
                (f"{name}.gcn.weight", b.gcn.weights),
                (f"{name}.gcn.edge_importance", b.gcn.edge_importance),
                (f"{name}.tcn.kernel", b.tcn.kernel),
                (f"{name}.tcn.bias", b.tcn.bias),
                (f"{name}.att.projection", b.att.projection),
                (f"{name}.att.bias", b.att.bias),
            ]
        out += [("classifier.weight", self.classifier_weight), ("classifier.bias", self.classifier_bias)]
        return out

    def graph_conv_layers(self) -> dict[str, GraphConvLayer]:
        return {f"{name}.gcn": b.gcn for name, b in self.blocks()}

    def astype(self, dtype) -> "GcnModel":
        m = self.copy()
        for name, b in m.blocks():
            b.gcn.weights = b.gcn.weights.astype(dtype)
            b.gcn.edge_importance = b.gcn.edge_importance.astype(dtype)
            b.tcn.kernel = b.tcn.kernel.astype(dtype)
            b.tcn.bias = b.tcn.bias.astype(dtype)
            b.att.projection = b.att.projection.astype(dtype)
            b.att.bias = b.att.bias.astype(dtype)
        m.classifier_weight = m.classifier_weight.astype(dtype)
        m.classifier_bias = m.classifier_bias.astype(dtype)
        m.adjacency = NormalizedAdjacency(
            m.adjacency.partitions.astype(dtype), m.adjacency.raw, m.adjacency.strategy
        )
        return m

    @property
    def dtype(self):
        return self.classifier_weight.dtype

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    # -- layer ids -----------------------------------------------------------

    def layer_ids(self) -> list[str]:
        ids = []
        for name, _ in self.blocks():
            ids += [f"{name}.{k}" for k in KINDS]
        return ids + ["pool"]

    def resolve_layer(self, layer_id: str) -> str:
        if layer_id == "pool" or layer_id in self.layer_ids():
            return layer_id
        parts = layer_id.split(".")
        if len(parts) == 2 and parts[0] in BRANCHES and parts[1] in KINDS:
            depth = len(self.main) if parts[0] == "main" else len(self.branches[parts[0]])
            return f"{parts[0]}.{depth - 1}.{parts[1]}"
        raise LayerError(f"unknown layer id {layer_id!r}; choose from {self.layer_ids()}")

    # -- forward / backward --------------------------------------------------

    def _as_batch(self, x):
        if isinstance(x, FeatureStreams):
            x = x.stacked()
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 4
        if single:
            x = x[None]
        if x.ndim != 5 or x.shape[1] != 4:
            raise ValueError(f"expected input [N, 4, C, T, V], got {x.shape}")
        if x.shape[2] != self.config.in_channels or x.shape[4] != self.graph.num_keypoints:
            raise ValueError(
                f"input {x.shape[1:]} does not match model (C={self.config.in_channels}, "
                f"V={self.graph.num_keypoints})"
            )
        return x, single

    # internal tensors are [C, T, N, V]; public ones are [N, C, T, V]

    def _run_block(self, b: Block, x, name, cache, overrides):
        adj = self.adjacency.partitions
        g, xa = gcn_forward(x, b.gcn, adj)
        h = np.maximum(g, 0)
        h = overrides.get(f"{name}.input", h)
        u, hp = tcn_forward(h, b.tcn)
        r = np.maximum(u, 0)
        r = overrides.get(f"{name}.tcn", r)
        a, gate, pooled = attention_forward(r, b.att)
        a = overrides.get(f"{name}.att", a)
        if cache is not None:
            cache[name] = dict(x_shape=x.shape, xa=xa, g=g, h=h, hp=hp, u=u, r=r,
                               gate=gate, pooled=pooled, a=a)
        return a

    def _forward(self, x, cache=None, overrides=None):
        overrides = overrides or {}
        outs = []
        for s_idx, s in enumerate(STREAMS):
            h = np.ascontiguousarray(x[:, s_idx].transpose(1, 2, 0, 3))
            for i, b in enumerate(self.branches[s]):
                h = self._run_block(b, h, f"{s}.{i}", cache, overrides)
            outs.append(h)
        h = np.concatenate(outs, axis=0)
        for i, b in enumerate(self.main):
            h = self._run_block(b, h, f"main.{i}", cache, overrides)
        pool = h.mean(axis=(1, 3))  # [K, N]
        pool = overrides.get("pool", pool)
        if cache is not None:
            cache["pool"] = pool
            cache["main_out_shape"] = h.shape
        return (self.classifier_weight @ pool).T + self.classifier_bias

    def logits(self, x, chunk: int = 64) -> np.ndarray:
        """Batched logits ``[N, num_classes]`` (or ``[num_classes]`` for one sample)."""
        x, single = self._as_batch(x)
        parts = [self._forward(x[i:i + chunk]) for i in range(0, len(x), chunk)]
        out = np.concatenate(parts) if parts else np.zeros((0, self.num_classes), self.dtype)
        return out[0] if single else out

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)

    def _internal_override(self, lid, v, single):
        v = np.asarray(v, dtype=self.dtype)
        if single:
            v = v[None]
        if lid == "pool":
            return np.ascontiguousarray(v.reshape(v.shape[0], -1).T)
        return np.ascontiguousarray(v.transpose(1, 2, 0, 3))

    def forward(self, x, capture=(), overrides=None):
        """Logits plus ``CaptureRecord`` activations for each requested layer.

        With one ``[4, C, T, V]`` sample the records hold ``[K, T, V]`` tensors;
        with a batch they hold ``[N, K, T, V]``. ``overrides`` maps layer ids to
        replacement activations (same layout) injected during the pass.
        """
        ids = [self.resolve_layer(l) for l in capture]
        x, single = self._as_batch(x)
        ov = {}
        for k, v in (overrides or {}).items():
            lid = self.resolve_layer(k)
            ov[lid] = self._internal_override(lid, v, single)
        cache = {} if ids else None
        logits = self._forward(x, cache, ov)
        records = []
        for lid, orig in zip(ids, capture):
            act = self._cached_activation(cache, lid)
            records.append(CaptureRecord(orig, act[0] if single else act))
        return (logits[0] if single else logits), records

    @staticmethod
    def _public(t):
        if t.ndim == 2:  # pool [K, N]
            return np.ascontiguousarray(t.T[:, :, None, None])
        return np.ascontiguousarray(t.transpose(2, 0, 1, 3))

    def _cached_activation(self, cache, lid):
        if lid == "pool":
            return self._public(cache["pool"])
        name, kind = lid.rsplit(".", 1)
        return self._public(cache[name][{"input": "h", "tcn": "r", "att": "a"}[kind]])

    def _backward(self, cache, dlogits, want_params=True, stop_at=None):
        """Reverse pass from ``dlogits [N, classes]``.

        Returns ``(activation_grads, param_grads)``; ``activation_grads`` maps
        every visited layer id to the internal-layout gradient of
        ``sum(dlogits * logits)`` with respect to that activation. Without
        parameter gradients, traversal stops at ``stop_at``.
        """
        acts, grads = {}, {}
        pool = cache["pool"]
        if want_params:
            grads["classifier.weight"] = dlogits.T @ pool.T
            grads["classifier.bias"] = dlogits.sum(axis=0)
        dpool = (dlogits @ self.classifier_weight).T  # [K, N]
        acts["pool"] = dpool
        if stop_at == "pool" and not want_params:
            return acts, grads
        K, T, N, V = cache["main_out_shape"]
        dh = np.broadcast_to(dpool[None, :, :, None].transpose(1, 0, 2, 3) / (T * V), (K, T, N, V)).copy()
        dh = self._block_backward_chain([(f"main.{i}", b) for i, b in enumerate(self.main)], cache, dh,
                                        acts, grads, want_params, stop_at)
        if dh is None:
            return acts, grads
        split = np.cumsum([self.branches[s][-1].gcn.out_channels for s in STREAMS])[:-1]
        for s, d in zip(STREAMS, np.split(dh, split, axis=0)):
            if not want_params and stop_at is not None and not stop_at.startswith(s + "."):
                continue
            self._block_backward_chain([(f"{s}.{i}", b) for i, b in enumerate(self.branches[s])], cache, d,
                                       acts, grads, want_params, stop_at)
        return acts, grads

    def _block_backward_chain(self, blocks, cache, d, acts, grads, want_params, stop_at):
        adj = self.adjacency.partitions
        for idx in range(len(blocks) - 1, -1, -1):
            name, b = blocks[idx]
            c = cache[name]
            acts[f"{name}.att"] = d
            if stop_at == f"{name}.att" and not want_params:
                return None
            dr, dq, dbeta = attention_backward(d, c["r"], c["gate"], c["pooled"], b.att)
            acts[f"{name}.tcn"] = dr
            if stop_at == f"{name}.tcn" and not want_params:
                return None
            du = dr * (c["u"] > 0)
            dh, dK, db = tcn_backward(du, c["hp"], b.tcn)
            acts[f"{name}.input"] = dh
            if stop_at == f"{name}.input" and not want_params:
                return None
            dg = dh * (c["g"] > 0)
            last = idx == 0 and not name.startswith("main")
            dx, dW, dE = gcn_backward(dg, c["x_shape"], c["xa"], b.gcn, adj, need_input=not last)
            if want_params:
                grads.update({
                    f"{name}.gcn.weight": dW, f"{name}.gcn.edge_importance": dE,
                    f"{name}.tcn.kernel": dK, f"{name}.tcn.bias": db,
                    f"{name}.att.projection": dq, f"{name}.att.bias": dbeta,
                })
            d = dx
        return d

    def loss_and_grads(self, x, labels):
        """Mean softmax cross-entropy, its parameter gradients, and the logits."""
        cache = {}
        logits = self._forward(np.asarray(x, dtype=self.dtype), cache)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        N = len(labels)
        loss = -logp[np.arange(N), labels].mean()
        dlog = np.exp(logp)
        dlog[np.arange(N), labels] -= 1.0
        dlog /= N
        _, grads = self._backward(cache, dlog, want_params=True)
        return loss, grads, logits

    def gradients_at(self, x, classes, layer_ids):
        """Activations and ``d logit_c / d activation`` for a batch.

        ``classes`` is one class index per sample (or a scalar). Returns
        ``{layer_id: (activations, gradients)}`` with ``[N, K, T, V]`` arrays.
        """
        ids = [self.resolve_layer(l) for l in layer_ids]
        x, _ = self._as_batch(x)
        classes = np.broadcast_to(np.asarray(classes), (len(x),))
        if np.any(classes < 0) or np.any(classes >= self.num_classes):
            raise ValueError("class index out of range")
        cache = {}
        self._forward(x, cache)
        seed = np.zeros((len(x), self.num_classes), dtype=self.dtype)
        seed[np.arange(len(x)), classes] = 1.0
        stop = ids[0] if len(set(ids)) == 1 else None
        acts, _ = self._backward(cache, seed, want_params=False, stop_at=stop)
        return {orig: (self._cached_activation(cache, lid), self._public(acts[lid]))
                for orig, lid in zip(layer_ids, ids)}


def backward_to_layer(model: GcnModel, streams, class_index: int, layer_id: str) -> CaptureRecord:
    """Capture record with activations and ``d logit_c / d A`` for one sample."""
    if not 0 <= class_index < model.num_classes:
        raise ValueError(f"class {class_index} outside [0, {model.num_classes})")
    model.resolve_layer(layer_id)
    x = streams.stacked() if isinstance(streams, FeatureStreams) else np.asarray(streams)
    (act, grad), = model.gradients_at(x[None], [class_index], [layer_id]).values()
    return CaptureRecord(layer_id, act[0], grad[0], class_index)
