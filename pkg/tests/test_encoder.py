"""Encoder: attention coefficients, message rounds, pooling, embedding."""

import math

import numpy as np
import pytest

from autosculpt import tensor as T
from autosculpt.demo import demo_cnn
from autosculpt.encoder import (EncoderConfig, EncoderParams, RoundParams,
                                _segment_softmax, attention_coefficients,
                                encode, gat_round, init_encoder_params,
                                pool_graph)
from autosculpt.graph import DnnGraph, GraphEdge, GraphNode, build_graph
from autosculpt.patterns import all_ones_assignment, default_library
from autosculpt.tensor import Tensor

from oracles import fd_check


def toy_graph(n_nodes, edge_list, node_dim, edge_dim, seed=0,
              node_feats=None, edge_feats=None):
    rng = np.random.default_rng(seed)
    nodes = [GraphNode(f"n{i}", "kernel", 0,
                       node_feats[i] if node_feats is not None
                       else rng.uniform(-1, 1, node_dim))
             for i in range(n_nodes)]
    edges = [GraphEdge(s, d, "ei",
                       edge_feats[j] if edge_feats is not None
                       else rng.uniform(-1, 1, edge_dim))
             for j, (s, d) in enumerate(edge_list)]
    return DnnGraph(nodes, edges)


def demo_graph(seed=0):
    model = demo_cnn(seed=seed)
    lib = default_library(6)
    return build_graph(model, all_ones_assignment(model, lib), lib, seed=seed)


class TestSegmentSoftmax:
    def test_closed_form(self):
        alpha = _segment_softmax(Tensor([1.0, 0.0]), np.array([0, 0]), 1)
        assert alpha.data == pytest.approx([0.7311, 0.2689], abs=1e-4)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        scores = Tensor(rng.normal(size=40) * 5)
        centers = rng.integers(0, 7, size=40)
        alpha = _segment_softmax(scores, centers, 7)
        sums = np.zeros(7)
        np.add.at(sums, centers, alpha.data)
        present = np.unique(centers)
        assert np.abs(sums[present] - 1.0).max() < 1e-12


class TestAttentionCoefficients:
    def test_identical_neighbors_split_evenly(self):
        nd, ed = 6, 5
        h = np.random.default_rng(2).uniform(-1, 1, nd)
        e = np.random.default_rng(3).uniform(-1, 1, ed)
        g = toy_graph(3, [(1, 0), (2, 0)], nd, ed,
                      node_feats=[np.zeros(nd), h, h], edge_feats=[e, e])
        params = init_encoder_params(
            EncoderConfig(node_dim=nd, edge_dim=ed, hidden=4, out_dim=3), seed=4)
        alpha, nbrs = attention_coefficients(g, params, node_index=0)
        assert sorted(nbrs.tolist()) == [1, 2]
        assert alpha == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_single_neighbor_gets_everything(self):
        g = toy_graph(2, [(1, 0)], 6, 5, seed=5)
        params = init_encoder_params(
            EncoderConfig(node_dim=6, edge_dim=5, hidden=4, out_dim=3), seed=6)
        alpha, nbrs = attention_coefficients(g, params, node_index=0)
        assert nbrs.tolist() == [1]
        assert alpha == pytest.approx([1.0], abs=0)

    def test_isolated_node_errors(self):
        g = toy_graph(3, [(1, 2)], 6, 5, seed=7)
        params = init_encoder_params(
            EncoderConfig(node_dim=6, edge_dim=5, hidden=4, out_dim=3), seed=8)
        with pytest.raises(ValueError, match="no incident edges"):
            attention_coefficients(g, params, node_index=0)
        with pytest.raises(ValueError, match="outside graph"):
            attention_coefficients(g, params, node_index=9)

    def test_rows_sum_to_one_on_demo_graph(self):
        g = demo_graph()
        params = init_encoder_params(EncoderConfig(), seed=9)
        for r in range(2):
            for k in range(g.node_count):
                alpha, _ = attention_coefficients(g, params, k, round_index=r)
                assert abs(alpha.sum() - 1.0) < 1e-12


class TestGatRound:
    def test_uniform_features_give_sigma_Wh(self):
        nd, ed, hid = 5, 4, 6
        h = np.random.default_rng(10).uniform(-1, 1, nd)
        e = np.random.default_rng(11).uniform(-1, 1, ed)
        g = toy_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)], nd, ed,
                      node_feats=[h] * 4, edge_feats=[e] * 4)
        cfg = EncoderConfig(node_dim=nd, edge_dim=ed, hidden=hid, out_dim=3)
        params = init_encoder_params(cfg, seed=12)
        centers, nbrs, ef = g.directed_arrays()
        out = gat_round(Tensor(g.node_features()), Tensor(ef), centers, nbrs,
                        4, params.rounds[0], cfg)
        expect = T.elu(T.matmul(Tensor(h), params.rounds[0].W)).data
        for k in range(4):
            assert np.allclose(out.data[k], expect, atol=1e-12)

    def test_zero_value_matrix_gives_sigma_zero(self):
        g = toy_graph(3, [(0, 1), (1, 2)], 5, 4, seed=13)
        cfg = EncoderConfig(node_dim=5, edge_dim=4, hidden=6, out_dim=3)
        params = init_encoder_params(cfg, seed=14)
        params.rounds[0].W.data[:] = 0.0
        centers, nbrs, ef = g.directed_arrays()
        out = gat_round(Tensor(g.node_features()), Tensor(ef), centers, nbrs,
                        3, params.rounds[0], cfg)
        assert np.all(out.data == 0.0)

    def test_gradients_match_finite_differences(self):
        nd, ed, hid = 4, 3, 5
        g = toy_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)],
                      nd, ed, seed=15)
        cfg = EncoderConfig(node_dim=nd, edge_dim=ed, hidden=hid, out_dim=6,
                            rounds=2)
        params = init_encoder_params(cfg, seed=16)
        proj = np.random.default_rng(17).normal(size=6)

        T.backward(T.tsum(T.mul(encode(g, params), Tensor(proj))))
        for t in params.parameters():
            analytic = t.grad.copy()

            def fn(a, t=t):
                old = t.data
                t.data = a.copy()
                try:
                    with T.no_grad():
                        return float(T.tsum(T.mul(encode(g, params),
                                                  Tensor(proj))).data)
                finally:
                    t.data = old

            fd_check(fn, t.data.copy(), analytic)


class TestPooling:
    def test_identity_on_constant_features(self):
        h = np.array([1.5, -2.0, 0.25])
        out = pool_graph(Tensor(np.stack([h, h, h])))
        assert np.allclose(out.data, h, atol=1e-15)

    def test_two_node_mean(self):
        out = pool_graph(Tensor([[1.0, 3.0], [3.0, 1.0]]))
        assert np.array_equal(out.data, [2.0, 2.0])

    def test_matches_compensated_sum_oracle(self):
        rng = np.random.default_rng(18)
        h = rng.normal(size=(13, 8)) * 100
        out = pool_graph(Tensor(h)).data
        expect = np.array([math.fsum(h[:, j]) / 13 for j in range(8)])
        assert np.allclose(out, expect, atol=1e-12)


class TestEncode:
    def test_embedding_dimension_is_256(self):
        params = init_encoder_params(EncoderConfig(), seed=20)
        for seed in (0, 1):
            g = demo_graph(seed=seed)
            assert encode(g, params).shape == (256,)

    def test_deterministic(self):
        g = demo_graph()
        params = init_encoder_params(EncoderConfig(), seed=21)
        a = encode(g, params).data
        b = encode(g, params).data
        assert a.tobytes() == b.tobytes()

    def test_permutation_invariance(self):
        g = demo_graph()
        params = init_encoder_params(EncoderConfig(), seed=22)
        base = encode(g, params).data
        rng = np.random.default_rng(23)
        perm = rng.permutation(g.node_count)
        pos = np.empty_like(perm)
        pos[perm] = np.arange(g.node_count)
        nodes = [g.nodes[i] for i in perm]
        edges = [GraphEdge(int(pos[e.src]), int(pos[e.dst]), e.role, e.feat)
                 for e in g.edges]
        shuffled = DnnGraph(nodes, edges)
        assert np.abs(encode(shuffled, params).data - base).max() < 1e-10

    def test_node_dim_mismatch_rejected(self):
        g = toy_graph(3, [(0, 1), (1, 2)], 16, 32, seed=24)
        params = init_encoder_params(EncoderConfig(), seed=25)
        with pytest.raises(ValueError, match="node_dim"):
            encode(g, params)

    def test_init_is_seeded(self):
        a = init_encoder_params(EncoderConfig(), seed=30)
        b = init_encoder_params(EncoderConfig(), seed=30)
        c = init_encoder_params(EncoderConfig(), seed=31)
        for x, y in zip(a.parameters(), b.parameters()):
            assert x.data.tobytes() == y.data.tobytes()
        assert any(x.data.tobytes() != y.data.tobytes()
                   for x, y in zip(a.parameters(), c.parameters()))
