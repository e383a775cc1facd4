"""Independent reference implementations used as test oracles.

Everything here is written straight from the definitions (quadruple
loops, central differences, shape arithmetic) and deliberately shares no
code with the package under test.
"""

from __future__ import annotations

import numpy as np


def conv2d_naive(x: np.ndarray, w: np.ndarray, stride: int = 1,
                 padding: int = 0) -> np.ndarray:
    """Direct cross-correlation. Per output cell the accumulator adds one
    product per (channel, kernel row, kernel col) in that exact order,
    including products against explicit zero padding."""
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    xp = np.zeros((n, c, hp, wp))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ik in range(k):
                            for jk in range(k):
                                acc += xp[ni, ci, i * stride + ik,
                                          j * stride + jk] * w[fi, ci, ik, jk]
                    out[ni, fi, i, j] = acc
    return out


def fd_gradient(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued fn at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = fn(x)
        flat[i] = keep - step
        lo = fn(x)
        flat[i] = keep
        gf[i] = (hi - lo) / (2 * step)
    return g


def fd_check(fn, x: np.ndarray, analytic: np.ndarray, step: float = 1e-5,
             rel_tol: float = 1e-4) -> None:
    """Assert max relative error of analytic vs central differences."""
    num = fd_gradient(fn, x, step)
    scale = np.maximum(np.abs(num), np.abs(analytic))
    err = np.abs(num - analytic) / np.maximum(scale, 1.0)
    worst = float(err.max()) if err.size else 0.0
    assert worst <= rel_tol, f"gradient mismatch: max rel err {worst:.3e}"


def conv_out_hw(h: int, w: int, k: int, stride: int, padding: int) -> tuple:
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    return ho, wo


def count_macs_oracle(model, keep_fractions: dict | None = None):
    """Multiplication count from operator shapes alone.

    Walks the topology, counts one MAC per scalar multiply each operator
    performs on one sample, and (optionally) scales each weight-driven
    term by a supplied keep fraction: {op_id: {weight_name: Fraction}}.
    The attention score term is driven by both Wq and Wk (product of
    fractions); the mixing term by Wv.
    """
    from fractions import Fraction
    kf = keep_fractions or {}

    def frac(op_id, wname):
        return kf.get(op_id, {}).get(wname, Fraction(1))

    dense = 0
    eff = Fraction(0)
    if not any(op.kind == "attention" for op in model.operators):
        c, h, w = model.input_shape
        for op in model.operators:
            p = op.params
            if op.kind == "conv2d":
                ho, wo = conv_out_hw(h, w, p["kernel"], p["stride"], p["padding"])
                m = p["out_channels"] * p["in_channels"] * p["kernel"] * p["kernel"] * ho * wo
                dense += m
                eff += m * frac(op.id, "weight")
                c, h, w = p["out_channels"], ho, wo
            else:
                m = p["d_in"] * p["d_out"]
                dense += m
                eff += m * frac(op.id, "weight")
        return dense, eff
    for op in model.operators:
        p = op.params
        if op.kind == "conv2d":
            _, h, w = model.input_shape
            ho, wo = conv_out_hw(h, w, p["kernel"], p["stride"], p["padding"])
            m = p["out_channels"] * p["in_channels"] * p["kernel"] * p["kernel"] * ho * wo
            dense += m
            eff += m * frac(op.id, "weight")
        elif op.kind == "attention":
            t, d, dk = p["tokens"], p["d_model"], p["d_k"]
            for wname in ("Wq", "Wk", "Wv"):
                dense += t * d * dk
                eff += t * d * dk * frac(op.id, wname)
            dense += t * t * dk
            eff += t * t * dk * frac(op.id, "Wq") * frac(op.id, "Wk")
            dense += t * t * dk
            eff += t * t * dk * frac(op.id, "Wv")
        elif op.kind == "mlp_block":
            t = p["tokens"]
            dense += t * p["d_in"] * p["hidden"]
            eff += t * p["d_in"] * p["hidden"] * frac(op.id, "W1")
            dense += t * p["hidden"] * p["d_out"]
            eff += t * p["hidden"] * p["d_out"] * frac(op.id, "W2")
        else:
            m = p["d_in"] * p["d_out"]
            dense += m
            eff += m * frac(op.id, "weight")
    return dense, eff


def tile_keep_fraction(mask2d: np.ndarray, shape: tuple):
    """Realized keep fraction of a pattern tiled onto a weight shape."""
    from fractions import Fraction
    p, q = mask2d.shape
    if len(shape) == 4:
        kept = int(mask2d.sum()) * shape[0] * shape[1]
        return Fraction(kept, int(np.prod(shape)))
    rows = np.arange(shape[0]) % p
    cols = np.arange(shape[1]) % q
    kept = int(mask2d[np.ix_(rows, cols)].sum())
    return Fraction(kept, shape[0] * shape[1])
