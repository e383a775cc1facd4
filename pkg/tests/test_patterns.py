"""Pattern library, sampling, mask realization, and the pruner."""

import json

import numpy as np
import pytest

from autosculpt import patterns as P
from autosculpt.demo import demo_cnn, demo_transformer
from autosculpt.patterns import (Pattern, PatternAssignment, PatternLibrary,
                                 all_ones_assignment, apply_pruning,
                                 default_library, drawn_indices, load_library,
                                 masks_for, realize_mask, recompute_log_prob,
                                 sample_assignment, save_library)


class TestLibrary:
    def test_n2_is_structured_mode(self):
        lib = default_library(2)
        assert len(lib) == 2
        assert np.all(lib[0].mask == 1)
        assert np.all(lib[1].mask == 0)

    def test_n6_distinct_first_two_fixed(self):
        lib = default_library(6)
        assert len(lib) == 6
        assert all(p.shape == (3, 3) for p in lib)
        keys = {p.key() for p in lib}
        assert len(keys) == 6
        assert np.all(lib[0].mask == 1) and np.all(lib[1].mask == 0)

    def test_n11_rejected(self):
        with pytest.raises(ValueError, match="2..10"):
            default_library(11)
        with pytest.raises(ValueError, match="2..10"):
            default_library(1)

    def test_index_order_rules_enforced(self):
        ones, zeros = np.ones((3, 3)), np.zeros((3, 3))
        with pytest.raises(ValueError, match="index 0"):
            PatternLibrary([Pattern(zeros), Pattern(ones)])
        with pytest.raises(ValueError, match="duplicate"):
            PatternLibrary([Pattern(ones), Pattern(zeros), Pattern(zeros)])

    def test_pattern_validation(self):
        with pytest.raises(ValueError, match="0 or 1"):
            Pattern(np.full((3, 3), 2))
        with pytest.raises(ValueError, match="2-D"):
            Pattern(np.ones(3))

    def test_json_round_trip(self, tmp_path):
        lib = default_library(8)
        path = tmp_path / "lib.json"
        save_library(lib, path)
        back = load_library(path)
        assert len(back) == 8
        for a, b in zip(lib, back):
            assert a == b

    def test_load_rejects_duplicates_and_garbage(self, tmp_path):
        path = tmp_path / "bad.json"
        ones = np.ones((3, 3), int).tolist()
        zeros = np.zeros((3, 3), int).tolist()
        path.write_text(json.dumps({"version": 1, "kernel": [3, 3],
                                    "patterns": [ones, zeros, zeros]}))
        with pytest.raises(P.FormatError, match="duplicate"):
            load_library(path)
        path.write_text("{not json")
        with pytest.raises(P.FormatError, match="invalid JSON"):
            load_library(path)
        path.write_text(json.dumps({"version": 99, "kernel": [3, 3],
                                    "patterns": [ones, zeros]}))
        with pytest.raises(P.FormatError, match="version"):
            load_library(path)


class TestSampling:
    def test_one_hot_gives_all_zero_indices_and_logp_zero(self):
        model = demo_cnn()
        lib = default_library(4)
        f = np.array([1.0, 0.0, 0.0, 0.0])
        asn, logp = sample_assignment(f, model, lib, np.random.default_rng(0))
        for per_weight in asn.entries.values():
            assert all(v == 0 for v in per_weight.values())
        assert logp == 0.0

    def test_residual_group_members_share_indices(self):
        model = demo_cnn()
        lib = default_library(6)
        rng = np.random.default_rng(3)
        f = np.full(6, 1 / 6)
        for _ in range(100):
            asn, _ = sample_assignment(f, model, lib, rng)
            assert asn.entries["conv2"]["weight"] == asn.entries["conv3"]["weight"]

    def test_golden_trace_seed42_uniform4(self):
        # Frozen from the documented draw rule: one rng.random() per unit
        # in model order, right-bisect of the cumulative distribution.
        # Units of the demo CNN: conv1, then the conv2/conv3 group.
        model = demo_cnn()
        lib = default_library(4)
        asn, _ = sample_assignment(np.full(4, 0.25), model, lib,
                                   np.random.default_rng(42))
        assert asn.entries == {"conv1": {"weight": 3},
                               "conv2": {"weight": 1},
                               "conv3": {"weight": 1}}

    def test_distribution_validation(self):
        model = demo_cnn()
        lib = default_library(4)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="does not match"):
            sample_assignment(np.full(3, 1 / 3), model, lib, rng)
        with pytest.raises(ValueError, match="probability vector"):
            sample_assignment(np.array([0.9, 0.2, -0.05, -0.05]), model, lib, rng)

    def test_log_prob_recomputable(self):
        model = demo_transformer()
        lib = default_library(6)
        rng = np.random.default_rng(9)
        f = np.random.default_rng(4).dirichlet(np.ones(6))
        for _ in range(20):
            asn, logp = sample_assignment(f, model, lib, rng)
            assert recompute_log_prob(f, asn, model) == pytest.approx(logp, abs=1e-10)

    def test_empirical_frequencies_track_dist(self):
        model = demo_cnn()
        lib = default_library(4)
        f = np.array([0.1, 0.2, 0.3, 0.4])
        rng = np.random.default_rng(11)
        counts = np.zeros(4)
        n = 4000
        for _ in range(n):
            asn, _ = sample_assignment(f, model, lib, rng)
            for idx in drawn_indices(asn, model):
                counts[idx] += 1
        freq = counts / counts.sum()
        assert np.abs(freq - f).max() < 0.03

    def test_per_kernel_mode(self):
        model = demo_cnn()
        lib = default_library(4)
        rng = np.random.default_rng(5)
        asn, logp = sample_assignment(np.full(4, 0.25), model, lib, rng,
                                      per_kernel=True)
        assert isinstance(asn.entries["conv1"]["weight"], list)
        assert len(asn.entries["conv1"]["weight"]) == 8
        assert asn.entries["conv2"]["weight"] == asn.entries["conv3"]["weight"]
        assert len(asn.entries["conv2"]["weight"]) == 16
        # 8 + 16 counted draws at probability 1/4 each
        assert logp == pytest.approx(24 * np.log(0.25))
        masks = masks_for(model, asn)
        assert masks["conv1"]["weight"].shape == (8, 1, 3, 3)

    def test_model_without_prunable_ops_rejected(self):
        model = demo_cnn()
        for op in model.operators:
            op.prunable = False
        with pytest.raises(ValueError, match="no prunable operators"):
            sample_assignment(np.full(4, 0.25), model, default_library(4),
                              np.random.default_rng(0))


class TestRealizeMask:
    def test_all_ones_on_conv_weight(self):
        lib = default_library(2)
        m = realize_mask(lib[0], (4, 2, 3, 3))
        assert m.shape == (4, 2, 3, 3)
        assert np.all(m == 1.0)

    def test_tiling_2x2_identity_checkerboard(self):
        pat = Pattern([[1, 0], [0, 1]])
        m = realize_mask(pat, (4, 4))
        expect = np.array([[1, 0, 1, 0],
                           [0, 1, 0, 1],
                           [1, 0, 1, 0],
                           [0, 1, 0, 1]], dtype=float)
        assert np.array_equal(m, expect)
        assert P.mask_keep_fraction(m) == 0.5

    def test_center_only_keep_fraction(self):
        center = np.zeros((3, 3), int)
        center[1, 1] = 1
        m = realize_mask(Pattern(center), (5, 2, 3, 3))
        assert P.mask_keep_fraction(m) == pytest.approx(1 / 9)

    def test_non_divisible_tiling_counts_realized_entries(self):
        pat = Pattern([[1, 0], [0, 1]])  # on 3x3: rows 0,1,0 x cols 0,1,0
        m = realize_mask(pat, (3, 3))
        assert np.array_equal(m, [[1, 0, 1], [0, 1, 0], [1, 0, 1]])
        assert P.mask_keep_fraction(m) == pytest.approx(5 / 9)

    def test_shape_mismatch_rejected(self):
        pat = Pattern(np.ones((3, 3)))
        with pytest.raises(ValueError, match="does not match"):
            realize_mask(pat, (4, 2, 5, 5))
        with pytest.raises(ValueError, match="weight shape"):
            realize_mask(pat, (4,))


class TestApplyPruning:
    def test_all_ones_identity(self):
        model = demo_cnn(seed=1)
        lib = default_library(4)
        pruned = apply_pruning(model, all_ones_assignment(model, lib))
        for op in model.operators:
            for name, w in model.weights[op.id].items():
                assert w.data.tobytes() == pruned.weights[op.id][name].data.tobytes()

    def test_all_zeros_zeroes_prunable_weights(self):
        for model in (demo_cnn(seed=2), demo_transformer(seed=2)):
            lib = default_library(4)
            entries = {op.id: {w: 1 for w in P.WEIGHT_NAMES[op.kind]}
                       for op in model.operators if op.prunable}
            pruned = apply_pruning(model, PatternAssignment(entries, lib))
            for op in model.operators:
                for name, w in pruned.weights[op.id].items():
                    if op.prunable:
                        assert np.all(w.data == 0.0)
                    else:
                        assert np.array_equal(w.data, model.weights[op.id][name].data)

    def test_original_model_untouched(self):
        model = demo_cnn(seed=3)
        lib = default_library(4)
        before = model.weights["conv1"]["weight"].data.copy()
        entries = {op.id: {w: 1 for w in P.WEIGHT_NAMES[op.kind]}
                   for op in model.operators if op.prunable}
        apply_pruning(model, PatternAssignment(entries, lib))
        assert np.array_equal(model.weights["conv1"]["weight"].data, before)

    def test_assignment_must_cover_prunable_ops(self):
        model = demo_cnn()
        lib = default_library(4)
        asn = PatternAssignment({"conv1": {"weight": 0}}, lib)
        with pytest.raises(ValueError, match="does not cover"):
            masks_for(model, asn)

    def test_index_out_of_range_rejected(self):
        lib = default_library(4)
        with pytest.raises(ValueError, match="outside library"):
            PatternAssignment({"conv1": {"weight": 4}}, lib)
