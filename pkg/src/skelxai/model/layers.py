"""Layer parameters and their hand-derived forward / backward kernels.

Kernels work on ``[C, T, N, V]`` batches: every channel mix is one matrix
product over ``T*N*V`` columns and temporal shifts are contiguous views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GraphConvLayer:
    weights: np.ndarray  # [P, C_out, C_in]
    edge_importance: np.ndarray  # [P, V], diagonal of E_j

    @property
    def out_channels(self) -> int:
        return self.weights.shape[1]


@dataclass
class TcnLayer:
    kernel: np.ndarray  # [C_out, C_in, K_t]
    bias: np.ndarray  # [C_out]

    def __post_init__(self):
        if self.kernel.shape[2] % 2 != 1:
            raise ValueError("temporal kernel width must be odd")


@dataclass
class AttentionLayer:
    mode: str  # "joint" or "frame"
    projection: np.ndarray  # [C], channel weights applied to the pooled map
    bias: np.ndarray  # shape (1,)

    def __post_init__(self):
        if self.mode not in ("joint", "frame"):
            raise ValueError(f"attention mode must be joint or frame, got {self.mode!r}")


def _check_gcn(shape, layer: GraphConvLayer, adj):
    C, _, _, V = shape
    P = layer.weights.shape[0]
    if adj.shape != (P, V, V) or layer.edge_importance.shape != (P, V) or layer.weights.shape[2] != C:
        raise ValueError(
            f"graph conv shape mismatch: input channels {C}, keypoints {V}, weights "
            f"{layer.weights.shape}, adjacency {adj.shape}, edge importance {layer.edge_importance.shape}"
        )


def gcn_forward(x, layer: GraphConvLayer, adj):
    """Partitioned graph convolution on ``[C, T, N, V]``; returns ``(out, xa)``.

    Each normalized partition has its destination columns scaled by the edge
    importance. ``xa[j] = x @ A_j`` (shape ``[P, C, T, N, V]``) is kept for the
    edge-importance gradient.
    """
    _check_gcn(x.shape, layer, adj)
    C, T, N, V = x.shape
    P, O, _ = layer.weights.shape
    a_cat = adj.transpose(1, 0, 2).reshape(V, P * V)
    xa = (x.reshape(-1, V) @ a_cat).reshape(C, T, N, P, V).transpose(3, 0, 1, 2, 4)
    z = xa * layer.edge_importance[:, None, None, None, :]
    w_cat = layer.weights.transpose(1, 0, 2).reshape(O, P * C)
    out = w_cat @ z.reshape(P * C, -1)
    return out.reshape(O, T, N, V), xa


def gcn_backward(dout, x_shape, xa, layer: GraphConvLayer, adj, need_input=True):
    C, T, N, V = x_shape
    P, O, _ = layer.weights.shape
    d2 = dout.reshape(O, -1)
    e = layer.edge_importance[:, None, None, None, :]
    w_cat = layer.weights.transpose(1, 0, 2).reshape(O, P * C)
    z = (xa * e).reshape(P * C, -1)
    dW = (d2 @ z.T).reshape(O, P, C).transpose(1, 0, 2).copy()
    dz = (w_cat.T @ d2).reshape(P, C, T, N, V)
    dE = (dz * xa).reshape(P, -1, V).sum(axis=1)
    if not need_input:
        return None, dW, dE
    a_cat_t = adj.transpose(0, 2, 1).reshape(P * V, V)  # rows (j, w), columns u
    dze = (dz * e).transpose(1, 2, 3, 0, 4).reshape(-1, P * V)
    dx = (dze @ a_cat_t).reshape(C, T, N, V)
    return dx, dW, dE


def graph_conv_forward(f_in, layer: GraphConvLayer, adj) -> np.ndarray:
    """Single-sample graph convolution: ``[C_in, T, V] -> [C_out, T, V]``."""
    f_in = np.asarray(f_in)
    if f_in.ndim != 3:
        raise ValueError(f"expected [C, T, V], got {f_in.shape}")
    adj = getattr(adj, "partitions", adj)
    out, _ = gcn_forward(f_in[:, :, None, :], layer, adj)
    return out[:, :, 0, :]


def tcn_forward(h, layer: TcnLayer):
    """Temporal convolution with symmetric zero padding; returns ``(out, padded_input)``."""
    C, T, N, V = h.shape
    O, Ci, K = layer.kernel.shape
    if Ci != C:
        raise ValueError(f"TCN expects {Ci} input channels, got {C}")
    pad = K // 2
    hp = np.zeros((C, T + 2 * pad, N, V), dtype=h.dtype)
    hp[:, pad:pad + T] = h
    out = np.empty((O, T * N * V), dtype=h.dtype)
    out[:] = layer.bias[:, None]
    for k in range(K):
        out += layer.kernel[:, :, k] @ hp[:, k:k + T].reshape(C, -1)
    return out.reshape(O, T, N, V), hp


def tcn_backward(du, hp, layer: TcnLayer, need_input=True):
    O, T, N, V = du.shape
    _, C, K = layer.kernel.shape
    pad = K // 2
    d2 = du.reshape(O, -1)
    dK = np.empty_like(layer.kernel)
    for k in range(K):
        dK[:, :, k] = d2 @ hp[:, k:k + T].reshape(C, -1).T
    db = d2.sum(axis=1)
    if not need_input:
        return None, dK, db
    dhp = np.zeros_like(hp)
    for k in range(K):
        dhp[:, k:k + T] += (layer.kernel[:, :, k].T @ d2).reshape(C, T, N, V)
    return dhp[:, pad:pad + T], dK, db


def attention_forward(r, layer: AttentionLayer):
    """Sigmoid gate per keypoint (joint) or per frame (frame); returns ``(out, gate, pooled)``."""
    C = r.shape[0]
    joint = layer.mode == "joint"
    pooled = r.mean(axis=1 if joint else 3)  # [C, N, V] or [C, T, N]
    s = (layer.projection @ pooled.reshape(C, -1)).reshape(pooled.shape[1:]) + layer.bias[0]
    gate = sigmoid(s)
    g = gate[None, None, :, :] if joint else gate[None, :, :, None]
    return r * g, gate, pooled


def attention_backward(da, r, gate, pooled, layer: AttentionLayer):
    C, T, N, V = r.shape
    joint = layer.mode == "joint"
    g = gate[None, None, :, :] if joint else gate[None, :, :, None]
    ds = (da * r).sum(axis=(0, 1) if joint else (0, 3)) * gate * (1.0 - gate)
    dq = pooled.reshape(C, -1) @ ds.ravel()
    dm = layer.projection[:, None, None] * ds[None]
    dr = da * g + (dm[:, None, :, :] / T if joint else dm[:, :, :, None] / V)
    return dr, dq, np.array([ds.sum()])
