"""Experiment runner: every study is a subcommand with seeded runs,
flat-file config, and published-reference delta reporting.

Subcommands: prepare-data, eval-ensemble, id-ablation, trajectory,
train-dynamics, profile. ``--config`` points at a flat JSON object whose
keys match option names; command-line flags override config values, which
override built-in defaults. ``TRMLAB_DATA_ROOT`` supplies the default data
root. Exit codes: 0 success, 1 module error (typed diagnostic), 2 config
validation failure (offending field named).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import ablations, augmentation, ensemble, metrics, model, profiling, reports
from . import serialization, training
from .arc_data import ArcDataError, Dataset, build_vocabulary, load_dataset

DEFAULT_K = 1000
DEFAULT_STEPS = 4
DEFAULT_DEPTHS = "1,2,3,4,6"
DEFAULT_TRAIN_STEPS = 2500


class ValidationFailure(Exception):
    """Bad or missing configuration; names the offending field."""


def _data_root(args) -> Path:
    root = args.data_root or os.environ.get("TRMLAB_DATA_ROOT")
    if not root:
        raise ValidationFailure("data_root: not set (flag or TRMLAB_DATA_ROOT)")
    return Path(root)


def _require_dir(value, field: str) -> Path:
    if not value:
        raise ValidationFailure(f"{field}: required")
    path = Path(value)
    if not path.is_dir():
        raise ValidationFailure(f"{field}: directory does not exist: {path}")
    return path


def _require_file(value, field: str) -> Path:
    if not value:
        raise ValidationFailure(f"{field}: required")
    path = Path(value)
    if not path.is_file():
        raise ValidationFailure(f"{field}: file does not exist: {path}")
    return path


def _out_dir(args) -> Path:
    if not args.out:
        raise ValidationFailure("out: required")
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_eval_setup(args):
    tasks_dir = _require_dir(args.tasks, "tasks")
    weights = _require_file(args.weights, "weights")
    dataset = load_dataset(tasks_dir, "eval")
    if not dataset.tasks:
        raise ValidationFailure(f"tasks: {tasks_dir} holds no task documents")
    params = serialization.load_params(weights)
    vocab = build_vocabulary([dataset])
    top_token = max(vocab.entries.values(), default=0)
    if top_token >= params.cfg.id_vocab_size:
        raise ValidationFailure(
            f"tasks: vocabulary needs {top_token + 1} id tokens but the weights "
            f"embed only {params.cfg.id_vocab_size}"
        )
    return dataset, params, vocab


def _resolved_config(args, fields) -> dict:
    return {f: getattr(args, f) for f in fields}


def _int_list(text: str, field: str) -> list:
    try:
        return [int(part) for part in str(text).split(",") if part != ""]
    except ValueError as exc:
        raise ValidationFailure(f"{field}: not a comma-separated integer list: {text!r}") from exc


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def cmd_prepare_data(args) -> int:
    tasks_dir = _require_dir(args.tasks, "tasks")
    root = _data_root(args)
    dataset = load_dataset(tasks_dir, args.split_label)
    levels = _int_list(args.aug, "aug")
    for n in levels:
        expanded = augmentation.expand_dataset(dataset, n, args.seed)
        target = root / f"arc-aug-{n}"
        augmentation.write_dataset_dir(
            expanded, target, {"n_per_pair": n, "seed": args.seed, "source": str(tasks_dir)}
        )
        print(f"wrote {target} ({len(expanded.tasks)} tasks)")
    return 0


def _eval_report_rows(paper_eval, single_eval):
    return [
        ("Paper mode (official)", paper_eval.mode.k, "Yes", paper_eval.report.percent()),
        ("Single augmentation", 1, "No", single_eval.report.percent()),
    ]


def cmd_eval_ensemble(args) -> int:
    dataset, params, vocab = _load_eval_setup(args)
    out = _out_dir(args)
    # workers is an execution knob, deliberately absent from the embedded
    # config so reports are byte-identical across worker counts
    cfg = _resolved_config(args, ("tasks", "weights", "k", "steps", "seed"))

    paper_mode = ensemble.EvaluationMode.paper(k=args.k, seed=args.seed, steps=args.steps)
    single_mode = ensemble.EvaluationMode.single(seed=args.seed, steps=args.steps)
    paper_eval = ensemble.evaluate_dataset(params, dataset, vocab, paper_mode, workers=args.workers)
    single_eval = ensemble.evaluate_dataset(params, dataset, vocab, single_mode, workers=args.workers)

    (out / "records_paper_mode.jsonl").write_text(paper_eval.records_jsonl())
    (out / "records_single.jsonl").write_text(single_eval.records_jsonl())

    rows = _eval_report_rows(paper_eval, single_eval)
    header = ("Evaluation mode", "Augmentations", "Voting", "Pass@1")
    reports.write_csv(out / "eval_ensemble.csv", header, rows)
    reports.write_json(
        out / "eval_ensemble.json",
        {
            "config": cfg,
            "paper_mode": paper_eval.report.to_dict(),
            "single_canonical": single_eval.report.to_dict(),
        },
    )
    md = "# Test-time ensembling\n\n" + reports.markdown_table(header, rows)
    md += f"\nconfig: `{json.dumps(cfg, sort_keys=True)}`\n"
    (out / "eval_ensemble.md").write_text(md)

    ref = reports.load_reference()["ensemble"]["rows"]
    for line in reports.delta_lines(
        "ensemble contribution",
        [
            ("paper mode", 100 * paper_eval.report.value, ref[0]["pass_at_1_percent"]),
            ("single augmentation", 100 * single_eval.report.value, ref[1]["pass_at_1_percent"]),
        ],
    ):
        print(line)
    print(f"reports written to {out}")
    return 0


_CONDITION_ORDER = ("correct", "blank", "random_mismatch")
_CONDITION_LABELS = {
    "correct": ("Baseline", "Correct IDs"),
    "blank": ("Blank ID", "Fixed blank token"),
    "random_mismatch": ("Randomized IDs", "Random token per task"),
}


def cmd_id_ablation(args) -> int:
    dataset, params, vocab = _load_eval_setup(args)
    out = _out_dir(args)
    conditions = [c.strip() for c in args.conditions.split(",") if c.strip()]
    for c in conditions:
        if c not in _CONDITION_ORDER:
            raise ValidationFailure(f"conditions: unknown condition {c!r}")
    cfg = _resolved_config(
        args, ("tasks", "weights", "k", "steps", "seed", "conditions", "condition_seed")
    )

    mode = ensemble.EvaluationMode.paper(k=args.k, seed=args.seed, steps=args.steps)
    results = {}
    for kind in conditions:
        condition = ablations.IdCondition(kind, seed=args.condition_seed)
        evaluation = ablations.run_id_ablation(
            params, dataset, vocab, mode, condition, workers=args.workers
        )
        results[kind] = evaluation
        (out / f"records_{kind}.jsonl").write_text(evaluation.records_jsonl())

    header = ("Condition", "Puzzle ID input", "Pass@1")
    rows = [
        (_CONDITION_LABELS[k][0], _CONDITION_LABELS[k][1], results[k].report.percent())
        for k in _CONDITION_ORDER
        if k in results
    ]
    reports.write_csv(out / "id_ablation.csv", header, rows)
    reports.write_json(
        out / "id_ablation.json",
        {"config": cfg, "conditions": {k: v.report.to_dict() for k, v in results.items()}},
    )
    md = "# Puzzle identity perturbations\n\n" + reports.markdown_table(header, rows)
    md += f"\nconfig: `{json.dumps(cfg, sort_keys=True)}`\n"
    (out / "id_ablation.md").write_text(md)

    ref_rows = {r["condition"]: r for r in reports.load_reference()["id_ablation"]["rows"]}
    pairs = [
        (
            _CONDITION_LABELS[k][0],
            100 * results[k].report.value,
            ref_rows[_CONDITION_LABELS[k][0]]["pass_at_1_percent"],
        )
        for k in _CONDITION_ORDER
        if k in results
    ]
    for line in reports.delta_lines("puzzle identity ablation", pairs):
        print(line)
    print(f"reports written to {out}")
    return 0


def cmd_trajectory(args) -> int:
    dataset, params, vocab = _load_eval_setup(args)
    out = _out_dir(args)
    depths = _int_list(args.depths, "depths")
    if args.steps not in depths:
        raise ValidationFailure(
            f"depths: must include the training depth {args.steps} (got {depths})"
        )
    cfg = _resolved_config(args, ("tasks", "weights", "k", "steps", "seed", "depths"))

    mode = ensemble.EvaluationMode.paper(k=args.k, seed=args.seed, steps=args.steps)
    report = ablations.run_trajectory(
        params, dataset, vocab, mode, depths=depths, workers=args.workers
    )

    header = ("Recursion step t", "Pass@1", "Relative to final (%)")
    rows = []
    for row in report.rows:
        label = f"{row.depth} (extrapolated)" if row.extrapolated else str(row.depth)
        rows.append((label, row.report.percent(), f"{row.relative_to_final:.1f}"))
    reports.write_csv(out / "trajectory.csv", header, rows)
    reports.write_json(
        out / "trajectory.json",
        {
            "config": cfg,
            "training_depth": report.training_depth,
            "rows": [
                {
                    "depth": r.depth,
                    "extrapolated": r.extrapolated,
                    "pass_at_1": r.report.to_dict(),
                    "relative_to_final_percent": r.relative_to_final,
                }
                for r in report.rows
            ],
        },
    )
    md = "# Recursion trajectory\n\n" + reports.markdown_table(header, rows)
    md += f"\nconfig: `{json.dumps(cfg, sort_keys=True)}`\n"
    (out / "trajectory.md").write_text(md)

    ref_rows = {r["depth"]: r for r in reports.load_reference()["trajectory"]["rows"]}
    pairs = [
        (f"depth {r.depth}", 100 * r.report.value, ref_rows[r.depth]["pass_at_1_percent"])
        for r in report.rows
        if r.depth in ref_rows
    ]
    for line in reports.delta_lines("recursion trajectory", pairs):
        print(line)
    print(f"reports written to {out}")
    return 0


def cmd_train_dynamics(args) -> int:
    root = _data_root(args)
    eval_dir = _require_dir(args.eval_tasks, "eval_tasks")
    out = _out_dir(args)
    regimes = [r.strip() for r in args.regimes.split(",") if r.strip()]
    for regime in regimes:
        if regime not in training.REGIMES:
            raise ValidationFailure(f"regimes: unknown regime {regime!r}")

    eval_dataset = load_dataset(eval_dir, "eval")
    regime_dirs = {}
    for regime in regimes:
        level = 0 if regime == "aug0" else 1000 if args.aug_level is None else args.aug_level
        path = root / f"arc-aug-{level}"
        if regime == "aug1000" and args.aug_level is not None:
            path = root / f"arc-aug-{args.aug_level}"
        if not path.is_dir():
            raise ValidationFailure(
                f"data_root: {path} missing; run prepare-data first"
            )
        regime_dirs[regime] = path

    cfg_fields = (
        "regimes", "train_steps", "batch_size", "learning_rate", "seed", "eval_k",
        "steps", "d_model", "trunk_layers", "eval_tasks",
    )
    cfg = _resolved_config(args, cfg_fields)

    train_rows = []
    eval_rows = []
    summary = {"config": cfg, "regimes": {}}
    for regime in regimes:
        train_dataset, manifest = augmentation.read_dataset_dir(regime_dirs[regime])
        vocab = build_vocabulary([train_dataset, eval_dataset])
        model_cfg = model.ModelConfig(
            d_model=args.d_model,
            trunk_layers=args.trunk_layers,
            id_vocab_size=vocab.size,
            n_cycles=args.steps,
            seed=args.seed,
        )
        train_cfg = training.TrainConfig(
            regime=regime,
            total_steps=args.train_steps,
            batch_size=args.batch_size,
            learning_rate=args.learning_rate,
            seed=args.seed,
            eval_k=args.eval_k,
            log_every=max(1, args.train_steps // 20) if args.train_steps else 1,
        )
        ckpt, log = training.train(train_cfg, model_cfg, train_dataset, vocab)
        (out / f"train_log_{regime}.csv").write_text(log.csv_text())
        training.save_checkpoint(out / f"checkpoint_{regime}.weights", ckpt)

        final_loss = log.rows[-1].loss if log.rows else float("nan")
        train_acc = training.train_exact_match(ckpt.params, train_dataset, vocab)
        p1, pk = training.evaluate_early(
            ckpt, eval_dataset, vocab, eval_k=args.eval_k, steps=args.steps, seed=args.seed
        )
        train_rows.append((regime, f"{final_loss:.4f}", f"{100 * train_acc:.2f}%"))
        eval_rows.append((regime, p1.percent(), pk.percent()))
        summary["regimes"][regime] = {
            "final_train_loss": final_loss,
            "train_exact_match": train_acc,
            "pass_at_1": p1.to_dict(),
            "pass_at_k": pk.to_dict(),
            "manifest": manifest,
        }

    header_train = ("Regime", "Train loss", "Train accuracy")
    header_eval = ("Regime", "Pass@1", f"Pass@{args.eval_k}")
    reports.write_csv(out / "train_metrics.csv", header_train, train_rows)
    reports.write_csv(out / "eval_metrics.csv", header_eval, eval_rows)
    reports.write_json(out / "train_dynamics.json", summary)
    md = "# Training dynamics\n\n"
    md += f"## Training metrics at step {args.train_steps}\n\n"
    md += reports.markdown_table(header_train, train_rows)
    md += f"\n## Evaluation metrics at step {args.train_steps}\n\n"
    md += reports.markdown_table(header_eval, eval_rows)
    md += f"\nconfig: `{json.dumps(cfg, sort_keys=True)}`\n"
    (out / "train_dynamics.md").write_text(md)

    ref = reports.load_reference()
    ref_train = {r["regime"]: r for r in ref["train_metrics"]["rows"]}
    ref_eval = {r["regime"]: r for r in ref["eval_metrics"]["rows"]}
    for regime in regimes:
        data = summary["regimes"][regime]
        print(
            f"{regime}: train loss {data['final_train_loss']:.4f} "
            f"(reference {ref_train[regime]['train_loss']:.4f}), "
            f"eval Pass@1 {data['pass_at_1']['percent']} "
            f"(reference {ref_eval[regime]['pass_at_1_percent']:.2f}%)"
        )
    print("reference values describe the original full-scale run; deltas are expected")
    print(f"reports written to {out}")
    return 0


def cmd_profile(args) -> int:
    dataset, params, _ = _load_eval_setup(args)
    out = _out_dir(args)
    cfg = _resolved_config(
        args, ("tasks", "weights", "batch", "steps", "n_samples", "warmup", "seed")
    )
    report = profiling.profile_inference(
        params,
        dataset,
        steps=args.steps,
        batch=args.batch,
        n_samples=args.n_samples,
        warmup=args.warmup,
        seed=args.seed,
    )
    payload = {"config": cfg, "efficiency": report.to_dict()}
    reports.write_json(out / "profile.json", payload)

    ref = reports.load_reference()["efficiency"]
    header = ("Model", "Peak workspace", "Throughput", "Latency")
    rows = [
        (
            f"this model ({params.count():,} parameters)",
            f"{report.peak_workspace_bytes / 1024**2:.1f} MB",
            f"{report.throughput:.1f} samples/s",
            f"{report.latency_ms:.1f} ms/sample",
        )
    ]
    for r in ref["rows"]:
        rows.append(
            (
                f"reference: {r['model']}",
                f"{r['peak_vram_gb']:.1f} GB VRAM",
                f"{r['throughput_samples_per_s']:.2f} samples/s",
                f"{r['latency_ms_per_sample']:.1f} ms/sample",
            )
        )
    md = "# Efficiency profile\n\n" + reports.markdown_table(header, rows)
    md += (
        "\nreference rows are published figures for other hardware; they are printed "
        "for comparison and never asserted.\n"
    )
    md += f"\nhardware: {report.hardware}\n"
    md += f"\nconfig: `{json.dumps(cfg, sort_keys=True)}`\n"
    (out / "profile.md").write_text(md)

    print(
        f"forward-only: {report.throughput:.1f} samples/s, {report.latency_ms:.2f} ms/sample; "
        f"pipeline: {report.pipeline_throughput:.1f} samples/s"
    )
    print(
        f"reference (original checkpoint on H100): "
        f"{ref['rows'][0]['peak_vram_gb']} GB, "
        f"{ref['rows'][0]['throughput_samples_per_s']} samples/s, "
        f"{ref['rows'][0]['latency_ms_per_sample']} ms/sample"
    )
    print(f"reports written to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_eval_options(sp):
    sp.add_argument("--tasks", help="directory of evaluation task documents")
    sp.add_argument("--weights", help="weight file to evaluate")
    sp.add_argument("--k", type=int, default=DEFAULT_K, help="ensemble size")
    sp.add_argument("--steps", type=int, default=DEFAULT_STEPS, help="recursion depth")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", help="report output directory")


def build_parser() -> tuple:
    parser = argparse.ArgumentParser(
        prog="trmlab",
        description="Desk-scale recursive grid model laboratory",
    )
    parser.add_argument("--version", action="version", version=f"trmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    sp = sub.add_parser("prepare-data", help="build arc-aug-N dataset directories")
    sp.add_argument("--config")
    sp.add_argument("--tasks", help="directory of canonical task documents")
    sp.add_argument("--data-root", dest="data_root")
    sp.add_argument("--aug", default="0,1000", help="comma list of copies per pair")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--split-label", dest="split_label", default="train")
    sp.set_defaults(handler=cmd_prepare_data)
    subparsers["prepare-data"] = sp

    sp = sub.add_parser("eval-ensemble", help="K-sample voting vs single canonical pass")
    sp.add_argument("--config")
    _add_eval_options(sp)
    sp.set_defaults(handler=cmd_eval_ensemble)
    subparsers["eval-ensemble"] = sp

    sp = sub.add_parser("id-ablation", help="puzzle-identity perturbation study")
    sp.add_argument("--config")
    _add_eval_options(sp)
    sp.add_argument(
        "--conditions", default="correct,blank,random_mismatch", help="conditions to run"
    )
    sp.add_argument("--condition-seed", dest="condition_seed", type=int, default=0)
    sp.set_defaults(handler=cmd_id_ablation)
    subparsers["id-ablation"] = sp

    sp = sub.add_parser("trajectory", help="per-depth accuracy from shared traces")
    sp.add_argument("--config")
    _add_eval_options(sp)
    sp.add_argument("--depths", default=DEFAULT_DEPTHS)
    sp.set_defaults(handler=cmd_trajectory)
    subparsers["trajectory"] = sp

    sp = sub.add_parser("train-dynamics", help="train under aug regimes and evaluate early")
    sp.add_argument("--config")
    sp.add_argument("--data-root", dest="data_root")
    sp.add_argument("--eval-tasks", dest="eval_tasks")
    sp.add_argument("--regimes", default="aug0,aug1000")
    sp.add_argument("--aug-level", dest="aug_level", type=int, default=None,
                    help="override the aug1000 regime's copies per pair")
    sp.add_argument("--train-steps", dest="train_steps", type=int, default=DEFAULT_TRAIN_STEPS)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float, default=3e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--eval-k", dest="eval_k", type=int, default=DEFAULT_K)
    sp.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    sp.add_argument("--d-model", dest="d_model", type=int, default=32)
    sp.add_argument("--trunk-layers", dest="trunk_layers", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(handler=cmd_train_dynamics)
    subparsers["train-dynamics"] = sp

    sp = sub.add_parser("profile", help="inference throughput/latency/workspace")
    sp.add_argument("--config")
    sp.add_argument("--tasks")
    sp.add_argument("--weights")
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    sp.add_argument("--n-samples", dest="n_samples", type=int, default=200)
    sp.add_argument("--warmup", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(handler=cmd_profile)
    subparsers["profile"] = sp

    return parser, subparsers


def _config_overrides(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    path = Path(known.config)
    if not path.is_file():
        raise ValidationFailure(f"config: file does not exist: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationFailure(f"config: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationFailure("config: must be a flat JSON object")
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise ValidationFailure(f"config: key {key!r} is not a flat value")
    return data


_KNOWN_DESTS = {
    "config", "tasks", "weights", "k", "steps", "seed", "workers", "out", "data_root",
    "aug", "split_label", "conditions", "condition_seed", "depths", "eval_tasks",
    "regimes", "aug_level", "train_steps", "batch_size", "learning_rate", "eval_k",
    "d_model", "trunk_layers", "batch", "n_samples", "warmup",
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subparsers = build_parser()
    try:
        overrides = _config_overrides(argv)
        for key in overrides:
            if key not in _KNOWN_DESTS:
                raise ValidationFailure(f"config: unknown key {key!r}")
        if overrides:
            # subparsers re-apply their own defaults, so overrides go there
            for sp in subparsers.values():
                sp.set_defaults(**overrides)
        args = parser.parse_args(argv)
        return args.handler(args)
    except ValidationFailure as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (
        ArcDataError,
        augmentation.OutOfCanvas,
        serialization.WeightFormatError,
        model.UnknownIdToken,
        model.NonFiniteGradient,
        training.NonFiniteLoss,
        ensemble.EmptyCandidateSet,
        metrics.ArityMismatch,
        metrics.EmptyDataset,
        metrics.RaggedSamples,
        ValueError,
        FileNotFoundError,
    ) as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
