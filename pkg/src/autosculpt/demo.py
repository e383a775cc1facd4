"""Built-in desk-scale demo models.

Weight init is uniform(-s, s) with s = 1/sqrt(fan_in), fan_in being
in_channels*k^2 for convs and the input dimension for matrices.
"""

from __future__ import annotations

import numpy as np

from .modelir import ModelIR, OperatorSpec, weight_shapes
from .tensor import Tensor


def _init_weights(ops, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    weights: dict[str, dict[str, Tensor]] = {}
    for op in ops:
        weights[op.id] = {}
        for name, shape in weight_shapes(op).items():
            if op.kind == "conv2d":
                fan_in = shape[1] * shape[2] * shape[3]
            else:
                fan_in = shape[0]
            s = 1.0 / np.sqrt(fan_in)
            weights[op.id][name] = Tensor(rng.uniform(-s, s, size=shape),
                                          requires_grad=True)
    return weights


def demo_cnn(seed: int = 0, classes: int = 4, image_size: int = 16,
             channels: int = 1) -> ModelIR:
    """3-conv CNN, channels 8/16/16; conv2 downsamples by 2 and forms a
    residual group with conv3 (out3 = relu(conv3(h2) + h2)); linear head."""
    half = image_size // 2
    ops = [
        OperatorSpec("conv1", "conv2d", {"out_channels": 8, "in_channels": channels,
                                         "kernel": 3, "stride": 1, "padding": 1}),
        OperatorSpec("conv2", "conv2d", {"out_channels": 16, "in_channels": 8,
                                         "kernel": 3, "stride": 2, "padding": 1},
                     residual_group="g1"),
        OperatorSpec("conv3", "conv2d", {"out_channels": 16, "in_channels": 16,
                                         "kernel": 3, "stride": 1, "padding": 1},
                     residual_group="g1"),
        OperatorSpec("head", "linear", {"d_in": 16 * half * half, "d_out": classes},
                     prunable=False),
    ]
    return ModelIR(ops, _init_weights(ops, seed),
                   (channels, image_size, image_size), classes)


def demo_transformer(seed: int = 0, classes: int = 4, image_size: int = 16,
                     channels: int = 1) -> ModelIR:
    """2-encoder transformer: d=32, d_k=16, T=(image_size/4)^2 tokens from a
    non-prunable 4x4 patch-embedding conv; mean-pooled linear head."""
    tokens = (image_size // 4) ** 2
    d, dk, hidden = 32, 16, 64
    ops = [
        OperatorSpec("patch", "conv2d", {"out_channels": d, "in_channels": channels,
                                         "kernel": 4, "stride": 4, "padding": 0},
                     prunable=False),
    ]
    for b in range(2):
        ops.append(OperatorSpec(f"attn{b}", "attention",
                                {"tokens": tokens, "d_model": d, "d_k": dk}))
        ops.append(OperatorSpec(f"mlp{b}", "mlp_block",
                                {"tokens": tokens, "d_in": dk, "hidden": hidden,
                                 "d_out": d}))
    ops.append(OperatorSpec("head", "linear", {"d_in": d, "d_out": classes},
                            prunable=False))
    return ModelIR(ops, _init_weights(ops, seed),
                   (channels, image_size, image_size), classes)
