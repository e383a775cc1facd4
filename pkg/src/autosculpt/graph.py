"""Network-to-graph construction.

A model becomes a graph whose nodes are feature maps (shared between
adjacent layers) and weight units (one per conv filter, one per matrix).
Edges run input -> weight (E_i, carrying the assigned pattern as its
feature) and weight -> output (E_o, random features persisted per search
run). Residual groups add one input -> output edge per skip. Changing the
assignment therefore moves E_i features only; topology and all other
features stay fixed for a given (model, seed).

Feature dimensions are fixed at 32 for nodes and edges. Node features are
weight statistics (per-position mean-absolute value and standard
deviation over channels / tile classes), max-norm scaled; boundary nodes
draw uniform(-1, 1) features from the run seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import patterns as pat

NODE_DIM = 32
EDGE_DIM = 32


@dataclass
class GraphNode:
    id: str
    role: str  # input | kernel | output
    layer: int
    feat: np.ndarray


@dataclass
class GraphEdge:
    src: int
    dst: int
    role: str  # ei | eo | residual
    feat: np.ndarray


@dataclass
class DnnGraph:
    nodes: list[GraphNode]
    edges: list[GraphEdge]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def node_features(self) -> np.ndarray:
        return np.stack([n.feat for n in self.nodes])

    def directed_arrays(self):
        """(centers, neighbors, edge features) with every stored edge
        expanded into both directions; cached per graph."""
        if "dir" not in self._cache:
            e = len(self.edges)
            edge_dim = self.edges[0].feat.size if e else EDGE_DIM
            centers = np.empty(2 * e, dtype=np.intp)
            nbrs = np.empty(2 * e, dtype=np.intp)
            feats = np.empty((2 * e, edge_dim))
            for i, edge in enumerate(self.edges):
                centers[2 * i], nbrs[2 * i] = edge.dst, edge.src
                centers[2 * i + 1], nbrs[2 * i + 1] = edge.src, edge.dst
                feats[2 * i] = feats[2 * i + 1] = edge.feat
            self._cache["dir"] = (centers, nbrs, feats)
        return self._cache["dir"]


def _pad_to(vec: np.ndarray, dim: int) -> np.ndarray:
    if vec.size >= dim:
        return vec[:dim].astype(np.float64)
    out = np.zeros(dim)
    out[:vec.size] = vec
    return out


def embed_node_features(weight: np.ndarray, tile_shape: tuple,
                        dim: int = NODE_DIM) -> np.ndarray:
    """Statistics feature of one weight unit, padded/truncated to dim.

    [c, k, k] conv filters: per-kernel-position mean |w| and std over
    channels. [R, C] matrices: the same statistics per (i % p, j % q) tile
    class. The result is scaled by its max absolute value.
    """
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim == 3:
        means = np.abs(w).mean(axis=0).ravel()
        stds = w.std(axis=0).ravel()
    elif w.ndim == 2:
        p, q = tile_shape
        means = np.zeros(p * q)
        stds = np.zeros(p * q)
        rows = np.arange(w.shape[0]) % p
        cols = np.arange(w.shape[1]) % q
        for a in range(p):
            for b in range(q):
                cell = w[np.ix_(rows == a, cols == b)]
                if cell.size:
                    means[a * q + b] = np.abs(cell).mean()
                    stds[a * q + b] = cell.std()
    else:
        raise ValueError(f"cannot embed weight of shape {w.shape}")
    vec = _pad_to(np.concatenate([means, stds]), dim)
    mx = np.abs(vec).max()
    return vec / mx if mx > 0 else vec


def embed_edge_features(pattern: pat.Pattern) -> np.ndarray:
    """Flattened pattern mask, zero-padded to 32. Injective over any valid
    library since masks share one shape."""
    if pattern.mask.size > EDGE_DIM:
        raise ValueError(f"pattern {pattern.shape} exceeds edge feature "
                         f"dimension {EDGE_DIM}")
    return _pad_to(pattern.mask.astype(np.float64).ravel(), EDGE_DIM)


def _pattern_for(assignment, library, op_id: str, wname: str, prunable: bool,
                 filter_idx: int | None = None) -> pat.Pattern:
    if not prunable or assignment is None:
        return library[0]
    idx = assignment.entries[op_id][wname]
    if isinstance(idx, list):
        return library[idx[filter_idx if filter_idx is not None else 0]]
    return library[idx]


def build_cnn_graph(model, assignment, library: pat.PatternLibrary,
                    seed: int, node_dim: int = NODE_DIM) -> DnnGraph:
    """Conv stack to graph: one boundary node per feature map (shared by
    adjacent layers), one kernel node per filter."""
    convs = [op for op in model.operators if op.kind == "conv2d"]
    if model.arch() != "cnn" or not convs:
        raise ValueError("build_cnn_graph: model is not CNN-kind")
    rng = np.random.default_rng(seed)
    m = len(convs)
    # Draw order is frozen: boundary features, then E_o features layer by
    # layer / filter by filter, then residual edge features.
    boundary_feats = [rng.uniform(-1.0, 1.0, node_dim) for _ in range(m + 1)]
    eo_feats = [[rng.uniform(-1.0, 1.0, EDGE_DIM)
                 for _ in range(op.params["out_channels"])] for op in convs]
    groups = model.residual_groups()
    group_ids = [g for g in groups if any(op.residual_group == g for op in convs)]
    res_feats = {g: rng.uniform(-1.0, 1.0, EDGE_DIM) for g in group_ids}

    nodes = [GraphNode("fmap0", "input", 0, boundary_feats[0])]
    edges: list[GraphEdge] = []
    fmap_index = {0: 0}
    layer_of_op: dict[str, int] = {}
    for l, op in enumerate(convs):
        layer_of_op[op.id] = l
        w = model.weights[op.id]["weight"].data
        in_node = fmap_index[l]
        out_node_feat = boundary_feats[l + 1]
        kernel_start = len(nodes)
        for f in range(w.shape[0]):
            feat = embed_node_features(w[f], library.kernel_shape, node_dim)
            nodes.append(GraphNode(f"k{l}_{f}", "kernel", l, feat))
        out_index = len(nodes)
        nodes.append(GraphNode(f"fmap{l + 1}", "output", l, out_node_feat))
        fmap_index[l + 1] = out_index
        for f in range(w.shape[0]):
            pattern = _pattern_for(assignment, library, op.id, "weight",
                                   op.prunable, f)
            edges.append(GraphEdge(in_node, kernel_start + f, "ei",
                                   embed_edge_features(pattern)))
            edges.append(GraphEdge(kernel_start + f, out_index, "eo",
                                   eo_feats[l][f]))
    for g in group_ids:
        members = [oid for oid in groups[g] if oid in layer_of_op]
        src = fmap_index[layer_of_op[members[0]] + 1]
        dst = fmap_index[layer_of_op[members[-1]] + 1]
        edges.append(GraphEdge(src, dst, "residual", res_feats[g]))
    return DnnGraph(nodes, edges)


def build_transformer_graph(model, assignment, library: pat.PatternLibrary,
                            seed: int, node_dim: int = NODE_DIM) -> DnnGraph:
    """Encoder blocks to graph: per block, weight nodes Wq/Wk/Wv/W1/W2
    hang between a shared input boundary node and the block output node;
    the two skip connections appear as two residual edges."""
    blocks = []
    ops = model.operators
    for i, op in enumerate(ops):
        if op.kind == "attention":
            if i + 1 >= len(ops) or ops[i + 1].kind != "mlp_block":
                raise ValueError(f"operator {op.id}: attention without a "
                                 "following mlp_block")
            blocks.append((op, ops[i + 1]))
    if not blocks:
        raise ValueError("build_transformer_graph: model has no encoder blocks")
    rng = np.random.default_rng(seed)
    nb = len(blocks)
    boundary_feats = [rng.uniform(-1.0, 1.0, node_dim) for _ in range(nb + 1)]
    eo_feats = [[rng.uniform(-1.0, 1.0, EDGE_DIM) for _ in range(5)]
                for _ in range(nb)]
    res_feats = [[rng.uniform(-1.0, 1.0, EDGE_DIM) for _ in range(2)]
                 for _ in range(nb)]

    nodes = [GraphNode("io0", "input", 0, boundary_feats[0])]
    edges: list[GraphEdge] = []
    in_node = 0
    for b, (attn, mlp) in enumerate(blocks):
        units = [(attn, "Wq"), (attn, "Wk"), (attn, "Wv"),
                 (mlp, "W1"), (mlp, "W2")]
        unit_start = len(nodes)
        for op, wname in units:
            w = model.weights[op.id][wname].data
            nodes.append(GraphNode(f"{op.id}.{wname}", "kernel", b,
                                   embed_node_features(w, library.kernel_shape,
                                                       node_dim)))
        out_index = len(nodes)
        nodes.append(GraphNode(f"io{b + 1}", "output", b, boundary_feats[b + 1]))
        for u, (op, wname) in enumerate(units):
            pattern = _pattern_for(assignment, library, op.id, wname, op.prunable)
            edges.append(GraphEdge(in_node, unit_start + u, "ei",
                                   embed_edge_features(pattern)))
            edges.append(GraphEdge(unit_start + u, out_index, "eo",
                                   eo_feats[b][u]))
        edges.append(GraphEdge(in_node, out_index, "residual", res_feats[b][0]))
        edges.append(GraphEdge(in_node, out_index, "residual", res_feats[b][1]))
        in_node = out_index
    return DnnGraph(nodes, edges)


def build_graph(model, assignment, library: pat.PatternLibrary,
                seed: int, node_dim: int = NODE_DIM) -> DnnGraph:
    if model.arch() == "cnn":
        return build_cnn_graph(model, assignment, library, seed, node_dim)
    return build_transformer_graph(model, assignment, library, seed, node_dim)


def dump_graph(graph: DnnGraph, base_path) -> None:
    """Debug dump: <base>.edges lists `src dst role`, <base>.feats lists
    node then edge feature vectors."""
    base = str(base_path)
    with open(base + ".edges", "w", encoding="utf-8") as fh:
        for e in graph.edges:
            fh.write(f"{e.src} {e.dst} {e.role}\n")
    with open(base + ".feats", "w", encoding="utf-8") as fh:
        for n in graph.nodes:
            fh.write("node " + n.id + " " +
                     " ".join(f"{v:.17g}" for v in n.feat) + "\n")
        for e in graph.edges:
            fh.write(f"edge {e.src} {e.dst} " +
                     " ".join(f"{v:.17g}" for v in e.feat) + "\n")
