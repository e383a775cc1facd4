"""Model intermediate representation: operator specs, weights, masked
forward, exact MAC accounting, evaluation, and SGD training.

Supported operator kinds (all bias-free):

- conv2d      params {out_channels, in_channels, kernel, stride, padding}
- linear      params {d_in, d_out}, applied once per sample
- attention   params {tokens, d_model, d_k}; weights Wq/Wk/Wv of [d, d_k]
- mlp_block   params {tokens, d_in, hidden, d_out}; weights W1/W2

A model is CNN-kind (conv2d layers then one linear head) or
Transformer-kind (a patch-embedding conv, attention/mlp_block pairs, and a
linear head over mean-pooled tokens). Residual wiring comes from operator
`residual_group` tags: within a group, the first member's post-activation
output is added to the last member's pre-activation output (CNN), and all
members share one pattern index during pruning.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import patterns as pat
from . import tensor as T
from .optim import SGD
from .tensor import Tensor, no_grad

KINDS = ("conv2d", "linear", "attention", "mlp_block")
TOPOLOGY_FORMAT_VERSION = 1
WEIGHTS_MAGIC = b"ASCP"
WEIGHTS_FORMAT_VERSION = 1

REQUIRED_PARAMS = {
    "conv2d": ("out_channels", "in_channels", "kernel", "stride", "padding"),
    "linear": ("d_in", "d_out"),
    "attention": ("tokens", "d_model", "d_k"),
    "mlp_block": ("tokens", "d_in", "hidden", "d_out"),
}


class FormatError(pat.FormatError):
    pass


@dataclass
class OperatorSpec:
    id: str
    kind: str
    params: dict
    residual_group: str | None = None
    prunable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"operator {self.id}: unknown kind {self.kind!r}")
        missing = [k for k in REQUIRED_PARAMS[self.kind] if k not in self.params]
        if missing:
            raise ValueError(f"operator {self.id}: missing params {missing}")
        for k in REQUIRED_PARAMS[self.kind]:
            v = self.params[k]
            if not isinstance(v, int) or v < 0 or (v == 0 and k != "padding"):
                raise ValueError(f"operator {self.id}: param {k}={v!r} must be a "
                                 "positive integer (padding may be zero)")


def weight_shapes(op: OperatorSpec) -> dict[str, tuple]:
    p = op.params
    if op.kind == "conv2d":
        return {"weight": (p["out_channels"], p["in_channels"],
                           p["kernel"], p["kernel"])}
    if op.kind == "linear":
        return {"weight": (p["d_in"], p["d_out"])}
    if op.kind == "attention":
        s = (p["d_model"], p["d_k"])
        return {"Wq": s, "Wk": s, "Wv": s}
    return {"W1": (p["d_in"], p["hidden"]), "W2": (p["hidden"], p["d_out"])}


class ModelIR:
    """Ordered operators plus their weight tensors."""

    def __init__(self, operators: list[OperatorSpec], weights: dict,
                 input_shape: tuple, class_count: int):
        ids = [op.id for op in operators]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate operator ids")
        if class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {class_count}")
        self.operators = list(operators)
        self.weights: dict[str, dict[str, Tensor]] = weights
        self.input_shape = tuple(int(s) for s in input_shape)
        self.class_count = int(class_count)
        self._validate()

    def _validate(self) -> None:
        for op in self.operators:
            expect = weight_shapes(op)
            have = self.weights.get(op.id)
            if have is None or set(have) != set(expect):
                raise ValueError(f"operator {op.id}: weights {sorted(have or ())} "
                                 f"do not match expected {sorted(expect)}")
            for name, shape in expect.items():
                got = have[name].shape
                if got != shape:
                    raise ValueError(f"operator {op.id}.{name}: weight shape {got} "
                                     f"does not match params {shape}")
        # Residual groups: conv members must share the kernel spatial shape
        # (they share one pattern), and groups need >= 2 members.
        groups: dict[str, list[OperatorSpec]] = {}
        for op in self.operators:
            if op.residual_group is not None:
                groups.setdefault(op.residual_group, []).append(op)
        for gid, members in groups.items():
            if len(members) < 2:
                raise ValueError(f"residual group {gid!r} needs >= 2 members")
            kinds = {op.kind for op in members}
            if kinds == {"conv2d"}:
                ks = {op.params["kernel"] for op in members}
                if len(ks) > 1:
                    raise ValueError(f"residual group {gid!r} mixes kernel sizes {sorted(ks)}")
            else:
                raise ValueError(f"residual group {gid!r}: only conv2d members "
                                 "are supported")

    def arch(self) -> str:
        return "transformer" if any(op.kind == "attention" for op in self.operators) \
            else "cnn"

    def prunable_operators(self) -> list[OperatorSpec]:
        return [op for op in self.operators if op.prunable]

    def residual_groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for op in self.operators:
            if op.residual_group is not None:
                out.setdefault(op.residual_group, []).append(op.id)
        return out

    def parameters(self) -> list[Tensor]:
        out = []
        for op in self.operators:
            for name in pat.WEIGHT_NAMES[op.kind]:
                out.append(self.weights[op.id][name])
        return out

    def named_weights(self) -> dict[str, np.ndarray]:
        out = {}
        for op in self.operators:
            for name in pat.WEIGHT_NAMES[op.kind]:
                out[f"{op.id}.{name}"] = self.weights[op.id][name].data
        return out

    def clone(self) -> "ModelIR":
        ops = [OperatorSpec(op.id, op.kind, dict(op.params), op.residual_group,
                            op.prunable) for op in self.operators]
        ws = {oid: {n: Tensor(t.data.copy(), requires_grad=True)
                    for n, t in per.items()}
              for oid, per in self.weights.items()}
        return ModelIR(ops, ws, self.input_shape, self.class_count)


# ---------------------------------------------------------------------------
# forward


def _masked(w: Tensor, masks, op_id: str, name: str) -> Tensor:
    if masks is None or op_id not in masks:
        return w
    return T.mul(w, Tensor(masks[op_id][name]))


def _conv_stack_forward(model: ModelIR, x: Tensor, masks) -> Tensor:
    group_skip: dict[str, Tensor] = {}
    group_members = model.residual_groups()
    h = x
    for op in model.operators:
        if op.kind == "conv2d":
            w = _masked(model.weights[op.id]["weight"], masks, op.id, "weight")
            raw = T.conv2d(h, w, stride=op.params["stride"],
                           padding=op.params["padding"])
            gid = op.residual_group
            if gid is not None and op.id == group_members[gid][-1]:
                raw = T.add(raw, group_skip[gid])
            h = T.relu(raw)
            if gid is not None and op.id == group_members[gid][0]:
                group_skip[gid] = h
        elif op.kind == "linear":
            w = _masked(model.weights[op.id]["weight"], masks, op.id, "weight")
            n = h.shape[0]
            h = T.matmul(T.reshape(h, (n, -1)), w)
        else:
            raise ValueError(f"operator {op.id}: kind {op.kind} not valid in a "
                             "conv stack")
    return h


def _attention_forward(op: OperatorSpec, x: Tensor, w: dict[str, Tensor]) -> Tensor:
    # x: [N, T, d]. Projections land in d_k space; the skip wraps the
    # mixing step only (S = V + A V), keeping every term inside d_k.
    d_k = op.params["d_k"]
    q = T.matmul(x, w["Wq"])
    k = T.matmul(x, w["Wk"])
    v = T.matmul(x, w["Wv"])
    scores = T.mul(T.matmul(q, T.swap_last2(k)), 1.0 / np.sqrt(d_k))
    attn = T.softmax(scores, axis=-1)
    return T.add(v, T.matmul(attn, v))


def _transformer_forward(model: ModelIR, x: Tensor, masks) -> Tensor:
    ops = model.operators
    i = 0
    h = x
    tokens = None
    while i < len(ops):
        op = ops[i]
        if op.kind == "conv2d":
            w = _masked(model.weights[op.id]["weight"], masks, op.id, "weight")
            fm = T.conv2d(h, w, stride=op.params["stride"],
                          padding=op.params["padding"])
            n, d = fm.shape[0], fm.shape[1]
            tokens = T.swap_last2(T.reshape(fm, (n, d, -1)))  # [N, T, d]
            i += 1
        elif op.kind == "attention":
            mlp = ops[i + 1] if i + 1 < len(ops) else None
            if mlp is None or mlp.kind != "mlp_block":
                raise ValueError(f"operator {op.id}: attention must be followed "
                                 "by an mlp_block")
            aw = {n: _masked(model.weights[op.id][n], masks, op.id, n)
                  for n in ("Wq", "Wk", "Wv")}
            s = _attention_forward(op, tokens, aw)
            w1 = _masked(model.weights[mlp.id]["W1"], masks, mlp.id, "W1")
            w2 = _masked(model.weights[mlp.id]["W2"], masks, mlp.id, "W2")
            m = T.matmul(T.relu(T.matmul(s, w1)), w2)
            tokens = T.add(tokens, m)
            i += 2
        elif op.kind == "linear":
            w = _masked(model.weights[op.id]["weight"], masks, op.id, "weight")
            pooled = T.mean(tokens, axis=1)
            h = T.matmul(pooled, w)
            i += 1
        else:
            raise ValueError(f"operator {op.id}: kind {op.kind} not valid here")
    return h


def forward(model: ModelIR, batch, assignment: pat.PatternAssignment | None = None) -> Tensor:
    """Logits for a batch, optionally under a pattern assignment (masked
    weights). Masking multiplies weights by the realized 0/1 mask, which is
    bit-identical to physically zeroing them."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim != 4:
        raise ValueError(f"batch must be [N, C, H, W], got shape {x.shape}")
    if x.shape[1:] != model.input_shape:
        raise ValueError(f"batch sample shape {x.shape[1:]} does not match "
                         f"model input {model.input_shape}")
    masks = pat.masks_for(model, assignment) if assignment is not None else None
    if model.arch() == "cnn":
        logits = _conv_stack_forward(model, x, masks)
    else:
        logits = _transformer_forward(model, x, masks)
    return logits


# ---------------------------------------------------------------------------
# MAC accounting


def activation_shapes(model: ModelIR) -> dict[str, tuple]:
    """Output spatial/token shape per operator id, from the input shape."""
    shapes: dict[str, tuple] = {}
    if model.arch() == "cnn":
        c, h, w = model.input_shape
        for op in model.operators:
            if op.kind == "conv2d":
                p, s, k = op.params["padding"], op.params["stride"], op.params["kernel"]
                h = (h + 2 * p - k) // s + 1
                w = (w + 2 * p - k) // s + 1
                if h < 1 or w < 1:
                    raise ValueError(f"operator {op.id}: output collapses to "
                                     f"{(h, w)}")
                c = op.params["out_channels"]
                shapes[op.id] = (c, h, w)
            elif op.kind == "linear":
                shapes[op.id] = (op.params["d_out"],)
        return shapes
    for op in model.operators:
        if op.kind == "conv2d":
            c, h, w = model.input_shape
            p, s, k = op.params["padding"], op.params["stride"], op.params["kernel"]
            ho = (h + 2 * p - k) // s + 1
            wo = (w + 2 * p - k) // s + 1
            shapes[op.id] = (op.params["out_channels"], ho, wo)
        elif op.kind in ("attention", "mlp_block"):
            shapes[op.id] = (op.params["tokens"],
                             op.params.get("d_out", op.params.get("d_k")))
        else:
            shapes[op.id] = (op.params["d_out"],)
    return shapes


def _dense_terms(model: ModelIR, shapes: dict) -> dict[str, list[tuple]]:
    """Per operator: (weight names driving the term, dense MACs) tuples.

    Multiply counts per sample: conv n*c*k^2*H'*W'; linear in*out;
    attention 3 projections T*d*d_k plus scores T^2*d_k (driven by Wq and
    Wk) plus mixing T^2*d_k (driven by Wv); mlp T*(d_in*h) + T*(h*d_out).
    """
    terms: dict[str, list[tuple]] = {}
    for op in model.operators:
        p = op.params
        if op.kind == "conv2d":
            c, ho, wo = shapes[op.id][-3], shapes[op.id][-2], shapes[op.id][-1]
            macs = p["out_channels"] * p["in_channels"] * p["kernel"] ** 2 * ho * wo
            terms[op.id] = [(("weight",), macs)]
        elif op.kind == "linear":
            terms[op.id] = [(("weight",), p["d_in"] * p["d_out"])]
        elif op.kind == "attention":
            t, d, dk = p["tokens"], p["d_model"], p["d_k"]
            proj = t * d * dk
            terms[op.id] = [(("Wq",), proj), (("Wk",), proj), (("Wv",), proj),
                            (("Wq", "Wk"), t * t * dk), (("Wv",), t * t * dk)]
        else:
            t = p["tokens"]
            terms[op.id] = [(("W1",), t * p["d_in"] * p["hidden"]),
                            (("W2",), t * p["hidden"] * p["d_out"])]
    return terms


@dataclass
class FlopsReport:
    dense_macs: int
    effective_macs: float
    flops_reduction: float
    per_operator: dict[str, dict] = field(default_factory=dict)


def count_flops(model: ModelIR, assignment: pat.PatternAssignment | None = None) -> FlopsReport:
    """Dense and effective multiply counts per sample.

    Each MAC term scales by the realized keep fraction of the weight(s)
    that drive it; a term driven by two weights (attention scores) scales
    by the product of their fractions. Arithmetic is exact (rational)
    until the final float conversion.
    """
    shapes = activation_shapes(model)
    terms = _dense_terms(model, shapes)
    fracs: dict[str, dict[str, Fraction]] = {}
    if assignment is not None:
        for op_id, per_weight in pat.masks_for(model, assignment).items():
            fracs[op_id] = {n: pat.mask_keep_fraction(m) for n, m in per_weight.items()}

    dense_total = 0
    eff_total = Fraction(0)
    per_op: dict[str, dict] = {}
    for op in model.operators:
        dense = sum(m for _, m in terms[op.id])
        eff = Fraction(0)
        for wnames, macs in terms[op.id]:
            scale = Fraction(1)
            for w in wnames:
                scale *= fracs.get(op.id, {}).get(w, Fraction(1))
            eff += macs * scale
        dense_total += dense
        eff_total += eff
        per_op[op.id] = {"dense_macs": dense, "effective_macs": float(eff),
                         "keep_fractions": {w: float(f) for w, f in
                                            fracs.get(op.id, {}).items()}}
    reduction = float(1 - eff_total / dense_total) if dense_total else 0.0
    return FlopsReport(dense_macs=dense_total, effective_macs=float(eff_total),
                       flops_reduction=reduction, per_operator=per_op)


# ---------------------------------------------------------------------------
# evaluation / training


def evaluate_accuracy(model: ModelIR, split, assignment=None,
                      batch_size: int = 64) -> float:
    """Top-1 accuracy over a split, batched, tape-free."""
    n = len(split.labels)
    if n == 0:
        raise ValueError("evaluate_accuracy: empty split")
    hits = 0
    with no_grad():
        for start in range(0, n, batch_size):
            xb = split.images[start:start + batch_size]
            yb = split.labels[start:start + batch_size]
            logits = forward(model, xb, assignment)
            hits += int((logits.data.argmax(axis=1) == yb).sum())
    return hits / n


def check_constraints(flops_reduction: float, accuracy: float,
                      flops_target: float, acc_floor: float) -> bool:
    """Both metrics at or above their targets."""
    for name, v in (("flops_reduction", flops_reduction), ("accuracy", accuracy)):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"check_constraints: {name}={v} outside [0, 1]")
    return flops_reduction >= flops_target and accuracy >= acc_floor


@dataclass
class FineTuneSchedule:
    lr: float = 3e-2
    momentum: float = 0.9
    weight_decay: float = 4e-5
    decay_factor: float = 0.1
    milestones: tuple = ()
    epochs: int = 20
    batch_size: int = 32
    shuffle_seed: int = 0


def fine_tune(model: ModelIR, assignment: pat.PatternAssignment | None,
              train_split, schedule: FineTuneSchedule) -> ModelIR:
    """SGD training with gradients masked to the surviving weight entries.

    Masks are frozen for the whole run; zeroed entries receive neither
    gradient nor weight decay, so they stay exactly zero. With
    assignment=None this is plain dense training. Mutates `model` in place
    and returns it.
    """
    if schedule.epochs == 0:
        return model
    if len(train_split.labels) == 0:
        raise ValueError("fine_tune: empty training split")
    masks = pat.masks_for(model, assignment) if assignment is not None else {}
    # Zero masked entries up front (idempotent after apply_pruning) so the
    # weight-decay term cannot move them off zero.
    for op_id, per_weight in masks.items():
        for name, m in per_weight.items():
            w = model.weights[op_id][name]
            w.data = w.data * m
    params = model.parameters()
    grad_masks: list[np.ndarray | None] = []
    for op in model.operators:
        for name in pat.WEIGHT_NAMES[op.kind]:
            grad_masks.append(masks.get(op.id, {}).get(name))
    opt = SGD(params, lr=schedule.lr, momentum=schedule.momentum,
              weight_decay=schedule.weight_decay)
    rng = np.random.default_rng(schedule.shuffle_seed)
    n = len(train_split.labels)
    for epoch in range(schedule.epochs):
        passed = sum(1 for m in schedule.milestones if epoch >= m)
        opt.lr = schedule.lr * schedule.decay_factor ** passed
        order = rng.permutation(n)
        for start in range(0, n, schedule.batch_size):
            sel = order[start:start + schedule.batch_size]
            logits = forward(model, train_split.images[sel], assignment)
            loss = T.cross_entropy(logits, train_split.labels[sel])
            T.backward(loss)
            for p, gm in zip(params, grad_masks):
                if gm is not None and p.grad is not None:
                    p.grad *= gm
            opt.step()
            opt.zero_grad()
    return model


# ---------------------------------------------------------------------------
# serialization


def write_weights(path, named: dict[str, np.ndarray]) -> None:
    """Binary container: magic, u32 version, then per tensor (sorted by
    name): u32 name length, name bytes, u32 ndim, u32 dims, little-endian
    float64 payload."""
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", WEIGHTS_FORMAT_VERSION))
        for name in sorted(named):
            arr = np.asarray(named[name], dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def read_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"weight file {path}: bad magic {blob[:4]!r}")
    off = 4

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"weight file {path}: truncated at byte {off}")
        out = blob[off:off + n]
        off += n
        return out

    (version,) = struct.unpack("<I", take(4))
    if version != WEIGHTS_FORMAT_VERSION:
        raise FormatError(f"weight file {path}: unsupported version {version}")
    named: dict[str, np.ndarray] = {}
    while off < len(blob):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(dims)) if ndim else 1
        payload = take(8 * count)
        named[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return named


def save_model(model: ModelIR, base_path) -> None:
    """Writes <base>.json (topology) and <base>.weights (binary)."""
    doc = {
        "version": TOPOLOGY_FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "operators": [
            {k: v for k, v in (("id", op.id), ("kind", op.kind),
                               ("params", op.params),
                               ("residual_group", op.residual_group),
                               ("prunable", op.prunable))
             if not (k == "residual_group" and v is None)}
            for op in model.operators
        ],
    }
    base = str(base_path)
    with open(base + ".json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    write_weights(base + ".weights", model.named_weights())


def load_model(base_path) -> ModelIR:
    base = str(base_path)
    try:
        with open(base + ".json", "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"topology {base}.json: invalid JSON ({e})") from e
    if not isinstance(doc, dict) or doc.get("version") != TOPOLOGY_FORMAT_VERSION:
        raise FormatError(f"topology {base}.json: missing or unsupported version")
    for fieldname in ("input_shape", "class_count", "operators"):
        if fieldname not in doc:
            raise FormatError(f"topology {base}.json: missing field {fieldname!r}")
    try:
        ops = [OperatorSpec(o["id"], o["kind"], o["params"],
                            o.get("residual_group"), o.get("prunable", True))
               for o in doc["operators"]]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"topology {base}.json: bad operator entry ({e})") from e
    named = read_weights(base + ".weights")
    weights: dict[str, dict[str, Tensor]] = {}
    for op in ops:
        weights[op.id] = {}
        for wname, shape in weight_shapes(op).items():
            key = f"{op.id}.{wname}"
            if key not in named:
                raise FormatError(f"weight file {base}.weights: missing tensor {key}")
            arr = named[key]
            if arr.shape != shape:
                raise FormatError(f"weight {key}: stored shape {arr.shape} does not "
                                  f"match topology {shape}")
            weights[op.id][wname] = Tensor(arr, requires_grad=True)
    extra = set(named) - {f"{op.id}.{w}" for op in ops for w in weight_shapes(op)}
    if extra:
        raise FormatError(f"weight file {base}.weights: unknown tensors {sorted(extra)}")
    try:
        return ModelIR(ops, weights, tuple(doc["input_shape"]), doc["class_count"])
    except ValueError as e:
        raise FormatError(f"topology {base}.json: {e}") from e
