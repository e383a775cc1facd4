"""Command-line pipeline: train, prune, finetune, eval, report, sweep.

Each writing command touches only the --out directory. Failures print a
single `error: ...` line to stderr and exit 1.

Run-directory layout (all produced under --out):
    config.txt        resolved configuration echo
    dense.json/.weights       trained dense model
    library.json      pattern library used for the search
    assignment.json   chosen pattern assignment
    pruned.json/.weights      pruned model (masked weights zeroed)
    finetuned.json/.weights   fine-tuned pruned model
    search_log.ndjson one JSON record per search inner step
    metrics.json      accumulated stage metrics
    report.json       canonical merged report (byte-stable)
    timing.txt        wall-clock seconds per stage (not byte-stable)
    sweep.tsv         sweep data rows
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

from .agent import ConstraintSet, SearchConfig, run_search
from .config import RunConfig, config_echo, load_config
from .datasets import DatasetBundle, load_cifar10, synth_dataset
from .demo import demo_cnn, demo_transformer
from .encoder import EncoderConfig
from .modelir import (FineTuneSchedule, count_flops, evaluate_accuracy,
                      fine_tune, load_model, save_model)
from .patterns import (PatternAssignment, default_library, load_library,
                       save_library)
from .report import emit_report, write_metrics, write_sweep_tsv


def _load_dataset(cfg: RunConfig) -> DatasetBundle:
    if cfg.dataset == "synth":
        return synth_dataset(seed=cfg.data_seed, samples=cfg.samples,
                             classes=cfg.classes, image_size=cfg.image_size,
                             sigma=cfg.sigma, channels=cfg.channels)
    return load_cifar10(cfg.data_dir, val_seed=cfg.data_seed)


def _build_model(cfg: RunConfig):
    if cfg.model == "demo_cnn":
        return demo_cnn(seed=cfg.model_seed, classes=cfg.classes,
                        image_size=cfg.image_size, channels=cfg.channels)
    if cfg.model == "demo_transformer":
        return demo_transformer(seed=cfg.model_seed, classes=cfg.classes,
                                image_size=cfg.image_size,
                                channels=cfg.channels)
    return load_model(cfg.model)


def _load_library(cfg: RunConfig):
    if cfg.library_path:
        return load_library(cfg.library_path)
    return default_library(cfg.patterns)


def _schedule(cfg: RunConfig, epochs: int) -> FineTuneSchedule:
    return FineTuneSchedule(lr=cfg.ft_lr, momentum=cfg.ft_momentum,
                            weight_decay=cfg.ft_weight_decay,
                            decay_factor=cfg.ft_decay,
                            milestones=cfg.ft_milestones, epochs=epochs,
                            batch_size=cfg.ft_batch, shuffle_seed=cfg.seed)


def _search_config(cfg: RunConfig) -> SearchConfig:
    return SearchConfig(episodes=cfg.episodes, tau=cfg.tau, gamma=cfg.gamma,
                        clip_epsilon=cfg.clip_epsilon,
                        buffer_size=cfg.buffer_size,
                        update_iters=cfg.update_iters,
                        actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr,
                        alpha_mode=cfg.alpha_mode,
                        alpha_start=cfg.alpha_start, alpha_end=cfg.alpha_end,
                        alpha_episodes=cfg.alpha_episodes,
                        per_kernel=cfg.per_kernel)


def _out_dir(cfg: RunConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _write_config(cfg: RunConfig) -> None:
    with open(os.path.join(cfg.out_dir, "config.txt"), "w") as fh:
        fh.write(config_echo(cfg))


def _record_timing(cfg: RunConfig, stage: str, seconds: float) -> None:
    with open(os.path.join(cfg.out_dir, "timing.txt"), "a") as fh:
        fh.write(f"{stage}\t{seconds:.3f}\n")


def _dense_base(cfg: RunConfig) -> str:
    return os.path.join(cfg.out_dir, "dense")


def cmd_train(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    _write_config(cfg)
    data = _load_dataset(cfg)
    model = _build_model(cfg)
    t0 = time.perf_counter()
    fine_tune(model, None, data.train, _schedule(cfg, cfg.train_epochs))
    _record_timing(cfg, "train", time.perf_counter() - t0)
    save_model(model, _dense_base(cfg))
    acc_val = evaluate_accuracy(model, data.val)
    acc_test = evaluate_accuracy(model, data.test)
    write_metrics(out, {"acc_dense": acc_val, "acc_dense_test": acc_test})
    print(f"trained {cfg.model}: val acc {acc_val:.4f}, "
          f"test acc {acc_test:.4f} -> {_dense_base(cfg)}")


def cmd_prune(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    _write_config(cfg)
    data = _load_dataset(cfg)
    model = load_model(_dense_base(cfg))
    library = _load_library(cfg)
    save_library(library, os.path.join(out, "library.json"))
    acc_dense = evaluate_accuracy(model, data.val)
    floor = cfg.acc_floor if cfg.acc_floor >= 0 else \
        max(0.0, acc_dense - cfg.acc_drop)
    constraints = ConstraintSet(cfg.flops_target, floor, cfg.max_inner_steps)
    t0 = time.perf_counter()
    result = run_search(model, library, constraints, _search_config(cfg),
                        cfg.seed, data.val)
    _record_timing(cfg, "prune", time.perf_counter() - t0)
    with open(os.path.join(out, "search_log.ndjson"), "w") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(os.path.join(out, "assignment.json"), "w") as fh:
        json.dump(result.assignment.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_model(result.model, os.path.join(out, "pruned"))
    acc_test = evaluate_accuracy(result.model, data.test)
    write_metrics(out, {
        "acc_dense": acc_dense,
        "acc_pruned": result.accuracy,
        "acc_pruned_test": acc_test,
        "flops_reduction": result.flops_reduction,
        "constraints_met": result.constraints_met,
        "acc_floor": floor,
        "episodes_run": cfg.episodes,
        "search_steps": len(result.log),
        "best_reward": result.reward,
    })
    print(f"search done: flops_reduction {result.flops_reduction:.4f}, "
          f"val acc {result.accuracy:.4f}, constraints_met "
          f"{str(result.constraints_met).lower()}")


def cmd_finetune(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    data = _load_dataset(cfg)
    model = load_model(os.path.join(out, "pruned"))
    library = load_library(os.path.join(out, "library.json"))
    with open(os.path.join(out, "assignment.json")) as fh:
        assignment = PatternAssignment.from_json(json.load(fh), library)
    t0 = time.perf_counter()
    fine_tune(model, assignment, data.train, _schedule(cfg, cfg.ft_epochs))
    _record_timing(cfg, "finetune", time.perf_counter() - t0)
    save_model(model, os.path.join(out, "finetuned"))
    acc_val = evaluate_accuracy(model, data.val)
    acc_test = evaluate_accuracy(model, data.test)
    write_metrics(out, {"acc_finetuned": acc_val,
                        "acc_finetuned_test": acc_test})
    print(f"fine-tuned: val acc {acc_val:.4f}, test acc {acc_test:.4f}")


def cmd_eval(cfg: RunConfig, weights: str, assignment_path: str) -> None:
    model = load_model(weights)
    assignment = None
    if assignment_path:
        library_path = os.path.join(os.path.dirname(assignment_path),
                                    "library.json")
        library = load_library(library_path)
        with open(assignment_path) as fh:
            assignment = PatternAssignment.from_json(json.load(fh), library)
    data = _load_dataset(cfg)
    flops = count_flops(model, assignment)
    print(f"val_accuracy = {evaluate_accuracy(model, data.val, assignment)!r}")
    print(f"test_accuracy = {evaluate_accuracy(model, data.test, assignment)!r}")
    print(f"dense_macs = {flops.dense_macs}")
    print(f"effective_macs = {flops.effective_macs!r}")
    print(f"flops_reduction = {flops.flops_reduction!r}")


def cmd_report(cfg: RunConfig) -> None:
    report = emit_report(cfg.out_dir)
    print(f"report written: {os.path.join(cfg.out_dir, 'report.json')} "
          f"(flops_reduction {report.flops_reduction:.4f}, "
          f"delta_acc {report.delta_acc:+.4f})")


SWEEP_AXES = ("patterns", "node_dim", "flops_target")


def _sweep_value(axis: str, raw: str):
    try:
        return float(raw) if axis == "flops_target" else int(raw)
    except ValueError:
        raise ValueError(f"sweep value {raw!r} invalid for axis {axis}") \
            from None


def cmd_sweep(cfg: RunConfig, axis: str, values: str) -> None:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; pick from "
                         f"{', '.join(SWEEP_AXES)}")
    parsed = [_sweep_value(axis, v) for v in values.split(",") if v.strip()]
    if not parsed:
        raise ValueError("sweep needs at least one value")
    out = _out_dir(cfg)
    _write_config(cfg)
    data = _load_dataset(cfg)
    dense_base = _dense_base(cfg)
    if not os.path.exists(dense_base + ".json"):
        model = _build_model(cfg)
        fine_tune(model, None, data.train, _schedule(cfg, cfg.train_epochs))
        save_model(model, dense_base)
    rows = []
    t0 = time.perf_counter()
    for value in parsed:
        model = load_model(dense_base)
        run_cfg = dataclasses.replace(cfg)
        encoder_cfg = EncoderConfig()
        if axis == "patterns":
            run_cfg.patterns = value
        elif axis == "flops_target":
            run_cfg.flops_target = value
        else:
            encoder_cfg = EncoderConfig(node_dim=value)
        library = default_library(run_cfg.patterns)
        acc_dense = evaluate_accuracy(model, data.val)
        floor = run_cfg.acc_floor if run_cfg.acc_floor >= 0 else \
            max(0.0, acc_dense - run_cfg.acc_drop)
        constraints = ConstraintSet(run_cfg.flops_target, floor,
                                    run_cfg.max_inner_steps)
        result = run_search(model, library, constraints,
                            _search_config(run_cfg), run_cfg.seed, data.val,
                            encoder_config=encoder_cfg)
        fine_tune(result.model, result.assignment, data.train,
                  _schedule(run_cfg, run_cfg.ft_epochs))
        acc_ft = evaluate_accuracy(result.model, data.val,
                                   result.assignment)
        rows.append({axis: value,
                     "flops_reduction": result.flops_reduction,
                     "acc_finetuned": acc_ft,
                     "constraints_met": result.constraints_met})
    _record_timing(cfg, "sweep", time.perf_counter() - t0)
    path = write_sweep_tsv(out, axis, rows)
    print(f"sweep written: {path} ({len(rows)} rows)")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="autosculpt",
        description="pattern-based pruning pipeline: train a dense demo "
                    "model, search pattern assignments, fine-tune, report")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", default=None, help="key=value file")
        sp.add_argument("--out", required=out_required,
                        help="run output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--model", default=None,
                        help="demo_cnn | demo_transformer | saved base path")
        sp.add_argument("--patterns", default=None,
                        help="library size N or a library JSON path")
        sp.add_argument("--flops-target", type=float, default=None)
        sp.add_argument("--acc-floor", type=float, default=None)
        sp.add_argument("--episodes", type=int, default=None)

    for name in ("train", "prune", "finetune"):
        common(sub.add_parser(name))
    ev = sub.add_parser("eval")
    common(ev, out_required=False)
    ev.add_argument("--weights", required=True,
                    help="saved model base path (no extension)")
    ev.add_argument("--assignment", default=None,
                    help="assignment.json path (library.json must sit "
                         "beside it)")
    rep = sub.add_parser("report")
    common(rep)
    sw = sub.add_parser("sweep")
    common(sw)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True,
                    help="comma-separated axis values")
    return p


def _config_from_args(args) -> RunConfig:
    overrides: dict = {}
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    for flag, key in (("seed", "seed"), ("model", "model"),
                      ("flops_target", "flops_target"),
                      ("acc_floor", "acc_floor"), ("episodes", "episodes")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    pats = getattr(args, "patterns", None)
    if pats is not None:
        if pats.isdigit():
            overrides["patterns"] = int(pats)
        else:
            overrides["library_path"] = pats
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "prune":
            cmd_prune(cfg)
        elif args.command == "finetune":
            cmd_finetune(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.weights, args.assignment or "")
        elif args.command == "report":
            cmd_report(cfg)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.axis, args.values)
    except Exception as e:  # single-line machine-parsable failure contract
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
