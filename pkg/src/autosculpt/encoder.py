"""Graph encoder: rounds of edge-aware dynamic attention over the DNN
graph, mean pooling, and a projection to the fixed 256-dim embedding.

Per round and per directed edge (k <- j):
    score = a . leaky_relu(W_s h_k + W_t h_j + W_e e_kj)
    alpha = softmax of scores over k's incident edges
    h'_k  = act(sum_j alpha_kj * (W h_j))

Neighborhoods are undirected multisets: every stored edge contributes
both directions, parallel edges contribute twice, and there are no self
loops or bias terms. Scores are max-subtracted per neighborhood before
exponentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import EDGE_DIM, NODE_DIM, DnnGraph
from .tensor import Tensor


@dataclass
class EncoderConfig:
    node_dim: int = NODE_DIM
    edge_dim: int = EDGE_DIM
    hidden: int = 64
    out_dim: int = 256
    rounds: int = 2
    leaky_slope: float = 0.2
    activation: str = "elu"  # elu | relu | tanh


@dataclass
class RoundParams:
    Ws: Tensor
    Wt: Tensor
    We: Tensor
    att: Tensor
    W: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.Ws, self.Wt, self.We, self.att, self.W]


@dataclass
class EncoderParams:
    rounds: list[RoundParams]
    proj: Tensor
    config: EncoderConfig = field(default_factory=EncoderConfig)

    def parameters(self) -> list[Tensor]:
        out = []
        for r in self.rounds:
            out.extend(r.tensors())
        out.append(self.proj)
        return out

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for i, r in enumerate(self.rounds):
            for name in ("Ws", "Wt", "We", "att", "W"):
                out[f"encoder.r{i}.{name}"] = getattr(r, name).data
        out["encoder.proj"] = self.proj.data
        return out


def init_encoder_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), +) init for every matrix and the attention
    vector, drawn in a fixed order from one generator."""
    rng = np.random.default_rng(seed)

    def mat(fan_in: int, fan_out: int) -> Tensor:
        s = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-s, s, size=(fan_in, fan_out)),
                      requires_grad=True)

    rounds = []
    d_in = config.node_dim
    for _ in range(config.rounds):
        rounds.append(RoundParams(
            Ws=mat(d_in, config.hidden),
            Wt=mat(d_in, config.hidden),
            We=mat(config.edge_dim, config.hidden),
            att=mat(config.hidden, 1),
            W=mat(d_in, config.hidden),
        ))
        d_in = config.hidden
    return EncoderParams(rounds, mat(config.hidden, config.out_dim), config)


_ACTS = {"elu": T.elu, "relu": T.relu, "tanh": T.tanh}


def _segment_softmax(scores: Tensor, centers: np.ndarray, n_nodes: int) -> Tensor:
    """Softmax of edge scores within each center node's neighborhood.
    The per-segment max is subtracted as a constant (shift invariance
    keeps the gradient exact)."""
    seg_max = np.full(n_nodes, -np.inf)
    np.maximum.at(seg_max, centers, scores.data)
    shifted = T.sub(scores, Tensor(seg_max[centers]))
    e = T.exp(shifted)
    denom = T.segment_sum(e, centers, n_nodes)
    return T.div(e, T.gather(denom, centers))


def attention_scores(h: Tensor, efeat: Tensor, centers: np.ndarray,
                     nbrs: np.ndarray, p: RoundParams, slope: float) -> Tensor:
    hs = T.gather(T.matmul(h, p.Ws), centers)
    ht = T.gather(T.matmul(h, p.Wt), nbrs)
    he = T.matmul(efeat, p.We)
    z = T.leaky_relu(T.add(T.add(hs, ht), he), slope)
    return T.reshape(T.matmul(z, p.att), (centers.shape[0],))


def gat_round(h: Tensor, efeat: Tensor, centers: np.ndarray, nbrs: np.ndarray,
              n_nodes: int, p: RoundParams, config: EncoderConfig) -> Tensor:
    scores = attention_scores(h, efeat, centers, nbrs, p, config.leaky_slope)
    alpha = _segment_softmax(scores, centers, n_nodes)
    messages = T.scale_rows(T.gather(T.matmul(h, p.W), nbrs), alpha)
    return _ACTS[config.activation](T.segment_sum(messages, centers, n_nodes))


def pool_graph(h: Tensor) -> Tensor:
    """Mean over nodes."""
    return T.mean(h, axis=0)


def encode(graph: DnnGraph, params: EncoderParams) -> Tensor:
    """Graph to fixed-size embedding g."""
    cfg = params.config
    centers, nbrs, efeat_np = graph.directed_arrays()
    h = Tensor(graph.node_features())
    if h.shape[1] != cfg.node_dim:
        raise ValueError(f"graph node features {h.shape} do not match encoder "
                         f"node_dim {cfg.node_dim}")
    efeat = Tensor(efeat_np)
    for p in params.rounds:
        h = gat_round(h, efeat, centers, nbrs, graph.node_count, p, cfg)
    return T.matmul(pool_graph(h), params.proj)


def attention_coefficients(graph: DnnGraph, params: EncoderParams,
                           node_index: int, round_index: int = 0):
    """Attention weights over one node's neighborhood in a given round
    (computed on that round's input features). Returns (alpha, neighbor
    node indices). Diagnostic surface; errors on isolated nodes."""
    cfg = params.config
    centers, nbrs, efeat_np = graph.directed_arrays()
    if not (0 <= node_index < graph.node_count):
        raise ValueError(f"node index {node_index} outside graph of "
                         f"{graph.node_count} nodes")
    h = Tensor(graph.node_features())
    efeat = Tensor(efeat_np)
    for p in params.rounds[:round_index]:
        h = gat_round(h, efeat, centers, nbrs, graph.node_count, p, cfg)
    p = params.rounds[round_index]
    scores = attention_scores(h, efeat, centers, nbrs, p, cfg.leaky_slope)
    alpha = _segment_softmax(scores, centers, graph.node_count)
    sel = centers == node_index
    if not sel.any():
        raise ValueError(f"node {node_index} has no incident edges")
    return alpha.data[sel], nbrs[sel]
