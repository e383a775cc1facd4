"""Pruning patterns: binary keep-masks, the built-in library, sampling, pruner.

A pattern is a p x q {0,1} mask. Conv kernels take the mask directly
(broadcast over filters and channels); weight matrices are tiled with
mask[i % p][j % q]. Index 0 is always the all-ones (keep everything)
pattern and index 1 the all-zeros pattern.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction

import numpy as np

MAX_PATTERNS = 10
MIN_PATTERNS = 2
LIBRARY_FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when an on-disk artifact fails structural validation."""


class Pattern:
    """Immutable binary keep-mask."""

    __slots__ = ("mask",)

    def __init__(self, mask):
        arr = np.asarray(mask)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"pattern mask must be 2-D and non-empty, got shape {arr.shape}")
        vals = np.unique(arr)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("pattern mask entries must be 0 or 1")
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        arr.setflags(write=False)
        self.mask = arr

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    @property
    def kept(self) -> int:
        return int(self.mask.sum())

    @property
    def keep_fraction(self) -> Fraction:
        return Fraction(self.kept, self.mask.size)

    def key(self) -> bytes:
        return self.mask.tobytes() + bytes(self.mask.shape)

    def __eq__(self, other):
        return isinstance(other, Pattern) and self.shape == other.shape \
            and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Pattern({self.mask.tolist()})"


class PatternLibrary:
    """Ordered, duplicate-free collection of same-shape patterns."""

    def __init__(self, patterns):
        pats = list(patterns)
        if not (MIN_PATTERNS <= len(pats) <= MAX_PATTERNS):
            raise ValueError(f"library must hold {MIN_PATTERNS}..{MAX_PATTERNS} "
                             f"patterns, got {len(pats)}")
        shape = pats[0].shape
        for p in pats:
            if p.shape != shape:
                raise ValueError(f"library patterns must share one shape; "
                                 f"found {p.shape} and {shape}")
        if not np.all(pats[0].mask == 1):
            raise ValueError("library index 0 must be the all-ones pattern")
        if not np.all(pats[1].mask == 0):
            raise ValueError("library index 1 must be the all-zeros pattern")
        seen = set()
        for p in pats:
            k = p.key()
            if k in seen:
                raise ValueError("library contains duplicate patterns")
            seen.add(k)
        self.patterns: list[Pattern] = pats
        self.kernel_shape: tuple = shape

    def __len__(self) -> int:
        return len(self.patterns)

    def __getitem__(self, idx: int) -> Pattern:
        return self.patterns[idx]

    def __iter__(self):
        return iter(self.patterns)


def _catalog(k: int) -> list[np.ndarray]:
    """Hand-shaped k x k masks, ordered; used to fill default libraries."""
    c = k // 2
    cross = np.zeros((k, k), np.uint8)
    cross[c, :] = 1
    cross[:, c] = 1
    corners = np.zeros((k, k), np.uint8)
    corners[0, 0] = corners[0, -1] = corners[-1, 0] = corners[-1, -1] = 1
    row = np.zeros((k, k), np.uint8)
    row[c, :] = 1
    col = np.zeros((k, k), np.uint8)
    col[:, c] = 1
    diag = np.eye(k, dtype=np.uint8)
    anti = np.fliplr(np.eye(k, dtype=np.uint8))
    ring = np.ones((k, k), np.uint8)
    if k > 2:
        ring[1:-1, 1:-1] = 0
    center = np.zeros((k, k), np.uint8)
    center[c, c] = 1
    return [cross, corners, row, col, diag, anti, ring, center]


def default_library(count: int = 6, kernel: int = 3) -> PatternLibrary:
    """Built-in library: all-ones, all-zeros, then shaped masks in a fixed
    order. count=2 degenerates to structured keep-or-drop pruning."""
    if not (MIN_PATTERNS <= count <= MAX_PATTERNS):
        raise ValueError(f"pattern count must be {MIN_PATTERNS}..{MAX_PATTERNS}, "
                         f"got {count}")
    masks = [np.ones((kernel, kernel), np.uint8), np.zeros((kernel, kernel), np.uint8)]
    seen = {m.tobytes() for m in masks}
    for m in _catalog(kernel):
        if len(masks) == count:
            break
        if m.tobytes() in seen:
            continue
        seen.add(m.tobytes())
        masks.append(m)
    if len(masks) < count:
        raise ValueError(f"built-in catalog cannot provide {count} distinct "
                         f"{kernel}x{kernel} patterns")
    return PatternLibrary([Pattern(m) for m in masks])


def save_library(library: PatternLibrary, path) -> None:
    doc = {
        "version": LIBRARY_FORMAT_VERSION,
        "kernel": list(library.kernel_shape),
        "patterns": [p.mask.tolist() for p in library],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_library(path) -> PatternLibrary:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"pattern library {path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict) or doc.get("version") != LIBRARY_FORMAT_VERSION:
        raise FormatError(f"pattern library {path}: missing or unsupported version")
    kernel = doc.get("kernel")
    pats = doc.get("patterns")
    if not isinstance(kernel, list) or len(kernel) != 2 or not isinstance(pats, list):
        raise FormatError(f"pattern library {path}: malformed kernel/patterns fields")
    try:
        lib = PatternLibrary([Pattern(p) for p in pats])
    except ValueError as e:
        raise FormatError(f"pattern library {path}: {e}") from e
    if list(lib.kernel_shape) != kernel:
        raise FormatError(f"pattern library {path}: kernel field {kernel} does not "
                          f"match pattern shape {lib.kernel_shape}")
    return lib


# ---------------------------------------------------------------------------
# assignments

# Canonical weight-name order per operator kind; sampling, log-prob
# recomputation, and graph construction all iterate in this order.
WEIGHT_NAMES = {
    "conv2d": ("weight",),
    "linear": ("weight",),
    "attention": ("Wq", "Wk", "Wv"),
    "mlp_block": ("W1", "W2"),
}


class PatternAssignment:
    """Pattern index per prunable operator weight.

    entries: {op_id: {weight_name: int | list[int]}} where a list means
    per-filter indices for a conv operator. The owning library rides along
    so downstream consumers can realize masks.
    """

    def __init__(self, entries: dict, library: PatternLibrary):
        n = len(library)
        for op_id, per_weight in entries.items():
            for wname, idx in per_weight.items():
                vals = idx if isinstance(idx, list) else [idx]
                for v in vals:
                    if not isinstance(v, int) or not (0 <= v < n):
                        raise ValueError(f"assignment {op_id}.{wname}: pattern index "
                                         f"{v} outside library of size {n}")
        self.entries = entries
        self.library = library

    def index_for(self, op_id: str, weight_name: str):
        return self.entries[op_id][weight_name]

    def digest(self) -> str:
        blob = json.dumps(self.entries, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "version": 1,
            "kernel": list(self.library.kernel_shape),
            "entries": self.entries,
        }

    @classmethod
    def from_json(cls, doc: dict, library: PatternLibrary) -> "PatternAssignment":
        if not isinstance(doc, dict) or "entries" not in doc:
            raise FormatError("assignment document missing entries field")
        if list(library.kernel_shape) != doc.get("kernel"):
            raise FormatError(f"assignment kernel {doc.get('kernel')} does not match "
                              f"library {library.kernel_shape}")
        return cls(doc["entries"], library)


def assignment_units(model) -> list[tuple[str, str]]:
    """Ordered (op_id, weight_name) pairs that take an independent draw.

    Residual-group members after the first are excluded: they copy the
    first member's indices and contribute no extra probability mass.
    """
    units = []
    seen_groups: set[str] = set()
    for op in model.operators:
        if not op.prunable:
            continue
        if op.residual_group is not None:
            if op.residual_group in seen_groups:
                continue
            seen_groups.add(op.residual_group)
        for wname in WEIGHT_NAMES[op.kind]:
            units.append((op.id, wname))
    return units


def _filter_count(model, op_id: str) -> int:
    return model.weights[op_id][WEIGHT_NAMES["conv2d"][0]].shape[0]


def sample_assignment(dist, model, library: PatternLibrary,
                      rng: np.random.Generator, per_kernel: bool = False):
    """Draw one assignment from the categorical `dist` over the library.

    Draw procedure (frozen; golden traces depend on it): one u = rng.random()
    per unit in `assignment_units` order, index = right-bisect of the
    cumulative distribution, clipped to len(library)-1. In per-kernel mode a
    conv unit draws one index per filter from the same distribution.
    Returns (assignment, total log-probability of the counted draws).
    """
    f = np.asarray(dist, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] != len(library):
        raise ValueError(f"distribution length {f.shape} does not match "
                         f"library size {len(library)}")
    if abs(f.sum() - 1.0) > 1e-9 or f.min() < 0:
        raise ValueError("distribution must be a probability vector")
    units = assignment_units(model)
    if not units:
        raise ValueError("model has no prunable operators")
    cum = np.cumsum(f)
    n = len(library)

    def draw() -> int:
        u = rng.random()
        return int(min(np.searchsorted(cum, u, side="right"), n - 1))

    op_kind = {op.id: op.kind for op in model.operators}
    drawn: dict[str, dict] = {}
    logp = 0.0
    for op_id, wname in units:
        if per_kernel and op_kind[op_id] == "conv2d":
            idxs = [draw() for _ in range(_filter_count(model, op_id))]
            logp += float(np.log(f[idxs]).sum())
            drawn.setdefault(op_id, {})[wname] = idxs
        else:
            idx = draw()
            logp += float(np.log(f[idx]))
            drawn.setdefault(op_id, {})[wname] = idx

    entries = _propagate_groups(model, drawn)
    return PatternAssignment(entries, library), logp


def _propagate_groups(model, drawn: dict) -> dict:
    """Copy each residual group's first-member indices onto the rest."""
    entries: dict[str, dict] = {}
    group_source: dict[str, dict] = {}
    for op in model.operators:
        if not op.prunable:
            continue
        if op.residual_group is not None:
            if op.residual_group not in group_source:
                group_source[op.residual_group] = drawn[op.id]
            src = group_source[op.residual_group]
            entries[op.id] = {w: (list(v) if isinstance(v, list) else v)
                              for w, v in src.items()}
        else:
            entries[op.id] = drawn[op.id]
    return entries


def all_ones_assignment(model, library: PatternLibrary) -> PatternAssignment:
    """Keep-everything assignment: index 0 on every prunable weight."""
    entries: dict[str, dict] = {}
    for op in model.operators:
        if not op.prunable:
            continue
        entries[op.id] = {w: 0 for w in WEIGHT_NAMES[op.kind]}
    return PatternAssignment(entries, library)


def drawn_indices(assignment: PatternAssignment, model) -> np.ndarray:
    """Flat pattern indices in draw order (counted units only)."""
    out: list[int] = []
    for op_id, wname in assignment_units(model):
        idx = assignment.entries[op_id][wname]
        out.extend(idx if isinstance(idx, list) else [idx])
    return np.asarray(out, dtype=np.intp)


def recompute_log_prob(dist, assignment: PatternAssignment, model) -> float:
    """Log-probability of `assignment` under `dist`; matches the value
    returned by sample_assignment for the same draw."""
    f = np.asarray(dist, dtype=np.float64)
    return float(np.log(f[drawn_indices(assignment, model)]).sum())


# ---------------------------------------------------------------------------
# mask realization and pruning


def realize_mask(pattern: Pattern, weight_shape: tuple) -> np.ndarray:
    """Expand a pattern onto a weight shape as a float64 0/1 mask.

    Conv weights [F, C, k, k] require the pattern shape to equal (k, k) and
    broadcast it over filters and channels; matrices [R, C] tile with
    mask[i % p][j % q].
    """
    shape = tuple(weight_shape)
    p, q = pattern.shape
    if len(shape) == 4:
        if (p, q) != shape[2:]:
            raise ValueError(f"pattern shape {pattern.shape} does not match "
                             f"kernel of weight {shape}")
        return np.broadcast_to(pattern.mask.astype(np.float64), shape).copy()
    if len(shape) == 2:
        rows = np.arange(shape[0]) % p
        cols = np.arange(shape[1]) % q
        return pattern.mask.astype(np.float64)[np.ix_(rows, cols)].copy()
    raise ValueError(f"cannot realize a pattern on weight shape {shape}")


def realize_conv_mask_per_filter(library: PatternLibrary, idxs: list[int],
                                 weight_shape: tuple) -> np.ndarray:
    shape = tuple(weight_shape)
    if len(shape) != 4 or len(idxs) != shape[0]:
        raise ValueError(f"per-filter indices ({len(idxs)}) do not match "
                         f"weight shape {shape}")
    out = np.empty(shape, dtype=np.float64)
    for fi, idx in enumerate(idxs):
        pat = library[idx]
        if pat.shape != shape[2:]:
            raise ValueError(f"pattern shape {pat.shape} does not match "
                             f"kernel of weight {shape}")
        out[fi] = pat.mask.astype(np.float64)
    return out


def masks_for(model, assignment: PatternAssignment) -> dict[str, dict[str, np.ndarray]]:
    """Realized float64 masks per prunable operator weight."""
    lib = assignment.library
    masks: dict[str, dict[str, np.ndarray]] = {}
    for op in model.operators:
        if not op.prunable:
            continue
        per_weight = assignment.entries.get(op.id)
        if per_weight is None:
            raise ValueError(f"assignment does not cover prunable operator {op.id}")
        masks[op.id] = {}
        for wname in WEIGHT_NAMES[op.kind]:
            if wname not in per_weight:
                raise ValueError(f"assignment missing weight {op.id}.{wname}")
            idx = per_weight[wname]
            shape = model.weights[op.id][wname].shape
            if isinstance(idx, list):
                masks[op.id][wname] = realize_conv_mask_per_filter(lib, idx, shape)
            else:
                masks[op.id][wname] = realize_mask(lib[idx], shape)
    return masks


def mask_keep_fraction(mask: np.ndarray) -> Fraction:
    """Kept entries over total entries of a realized mask (exact)."""
    return Fraction(int(np.count_nonzero(mask)), int(mask.size))


def apply_pruning(model, assignment: PatternAssignment):
    """Return a copy of `model` with masked weight entries zeroed in place.

    Masked forward on the original and plain forward on the result agree
    bit-for-bit, since both multiply by the same realized 0/1 mask.
    """
    masks = masks_for(model, assignment)
    pruned = model.clone()
    for op_id, per_weight in masks.items():
        for wname, m in per_weight.items():
            w = pruned.weights[op_id][wname]
            w.data = w.data * m
    return pruned
