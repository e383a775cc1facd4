"""Report emission: merge a run directory's artifacts into one canonical
report.json, cross-checking the stored FLOPs figures against a fresh
recount on the saved pruned model.

report.json is byte-stable for a fixed run (sorted keys, repr floats);
wall-clock timings live in timing.txt precisely so they cannot break
that stability.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

from .config import RunConfig, load_config, parse_kv
from .modelir import count_flops, load_model
from .patterns import PatternAssignment, load_library

REPORT_VERSION = 1


@dataclass
class Report:
    dense_macs: int
    effective_macs: float
    flops_reduction: float
    acc_dense: float
    acc_pruned: float
    acc_finetuned: float
    delta_acc: float
    episodes_run: int
    constraints_met: bool
    assignment: dict
    config: dict

    def validate(self) -> None:
        if abs(self.delta_acc - (self.acc_finetuned - self.acc_dense)) > 1e-12:
            raise ValueError("delta_acc inconsistent with accuracies")
        for name in ("acc_dense", "acc_pruned", "acc_finetuned"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def _require(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing {what}: {path}")
    return path


def read_metrics(run_dir: str) -> dict:
    with open(_require(os.path.join(run_dir, "metrics.json"),
                       "run metrics")) as fh:
        return json.load(fh)


def write_metrics(run_dir: str, updates: dict) -> dict:
    """Merge stage results into metrics.json (created on first write)."""
    path = os.path.join(run_dir, "metrics.json")
    current = {}
    if os.path.exists(path):
        with open(path) as fh:
            current = json.load(fh)
    current.update(updates)
    with open(path, "w") as fh:
        json.dump(current, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return current


def load_run_config(run_dir: str) -> RunConfig:
    path = _require(os.path.join(run_dir, "config.txt"), "config echo")
    return load_config(path)


def emit_report(run_dir: str) -> Report:
    """Build, cross-check, and write <run_dir>/report.json."""
    cfg = load_run_config(run_dir)
    metrics = read_metrics(run_dir)
    for key in ("acc_dense", "acc_pruned", "acc_finetuned", "episodes_run",
                "constraints_met"):
        if key not in metrics:
            raise ValueError(f"metrics.json missing {key!r}; run all stages "
                             "before report")

    library = load_library(_require(os.path.join(run_dir, "library.json"),
                                    "pattern library"))
    with open(_require(os.path.join(run_dir, "assignment.json"),
                       "assignment")) as fh:
        assignment = PatternAssignment.from_json(json.load(fh), library)
    pruned_base = os.path.join(run_dir, "pruned")
    _require(pruned_base + ".json", "pruned model")
    pruned = load_model(pruned_base)

    flops = count_flops(pruned, assignment)
    stored_fr = metrics.get("flops_reduction")
    if stored_fr is not None and stored_fr != flops.flops_reduction:
        raise ValueError(f"stored flops_reduction {stored_fr} does not match "
                         f"recount {flops.flops_reduction}")

    report = Report(
        dense_macs=flops.dense_macs,
        effective_macs=flops.effective_macs,
        flops_reduction=flops.flops_reduction,
        acc_dense=metrics["acc_dense"],
        acc_pruned=metrics["acc_pruned"],
        acc_finetuned=metrics["acc_finetuned"],
        delta_acc=metrics["acc_finetuned"] - metrics["acc_dense"],
        episodes_run=metrics["episodes_run"],
        constraints_met=metrics["constraints_met"],
        assignment=assignment.to_json(),
        config=cfg.to_dict(),
    )
    report.validate()
    payload = {"version": REPORT_VERSION, **asdict(report)}
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def write_sweep_tsv(run_dir: str, axis: str, rows: list[dict]) -> str:
    """Plot-ready TSV, one row per axis value, sorted by x."""
    if not rows:
        raise ValueError("sweep produced no rows")
    path = os.path.join(run_dir, "sweep.tsv")
    cols = [axis, "flops_reduction", "acc_finetuned", "constraints_met"]
    lines = ["\t".join(cols)]
    for row in sorted(rows, key=lambda r: r[axis]):
        lines.append("\t".join(
            ("true" if row[c] else "false") if isinstance(row[c], bool)
            else repr(row[c]) if isinstance(row[c], float) else str(row[c])
            for c in cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
