"""Command-line interface exposing the whole pipeline as subcommands.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
Failures print one machine-readable JSON object on stderr. The env var
KRAST_SEED overrides the configured/flagged seed everywhere.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as dp
from . import pipeline
from .config import SEED_ENV, load_config
from .errors import (ConfigError, CorpusError, DomainError, InputError,
                     KrastError, NumericError, PreprocessError, ShapeError,
                     SplitError, TokenBudgetExceeded)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_ERROR_CODES = (
    (ConfigError, EXIT_CONFIG),
    ((NumericError, DomainError), EXIT_NUMERIC),
    ((CorpusError, TokenBudgetExceeded, PreprocessError, SplitError,
      InputError, ShapeError, FileNotFoundError), EXIT_DATA),
)


def _seed_override(seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}")


def _write_effective(out_dir: str, payload: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.effective.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def cmd_gen_data(args) -> int:
    seed = _seed_override(args.seed)
    dataset = dp.generate_synthetic(
        n_classes=args.classes, n_subjects=args.subjects,
        samples_per_class=args.samples_per_class, seed=seed,
        difficulty=args.difficulty, n_frames=args.raw_frames,
        frame_hw=(args.frame_height, args.frame_width))
    manifest = dp.write_raw_dataset(dataset, args.out)
    _write_effective(args.out, {
        "command": "gen-data", "classes": args.classes, "subjects": args.subjects,
        "samples_per_class": args.samples_per_class, "seed": seed,
        "difficulty": args.difficulty, "raw_frames": args.raw_frames,
        "frame_height": args.frame_height, "frame_width": args.frame_width,
    })
    print(json.dumps({"manifest": manifest,
                      "corpus": os.path.join(args.out, "corpus.json"),
                      "videos": len(dataset.videos)}))
    return 0


def cmd_preprocess(args) -> int:
    manifest = dp.preprocess_manifest(args.manifest, args.frames, args.out,
                                      jobs=args.jobs)
    _write_effective(args.out, {
        "command": "preprocess", "manifest": os.path.abspath(args.manifest),
        "frames": args.frames, "jobs": args.jobs,
    })
    print(json.dumps({"manifest": manifest}))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    _, summary = pipeline.run_training(cfg, args.out)
    from . import figures
    with open(os.path.join(args.out, "log.jsonl")) as f:
        history = [json.loads(line) for line in f if line.strip()]
    if history:
        figures.training_curve(history, os.path.join(args.out, "training.png"))
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    model, cfg, corpus = pipeline.load_checkpoint(args.checkpoint, args.corpus)
    dataset = pipeline.dataset_from_sample_manifest(model, corpus, args.manifest)
    use_temp = args.infer_temperature == "on"
    report = pipeline.evaluate_model(model, dataset,
                                     batch_size=cfg.train.batch_size,
                                     use_temperature=use_temp, jobs=args.jobs)
    out_dir = args.out or os.path.join(args.checkpoint, "eval")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "eval_report.json"), "w") as f:
        json.dump(report.to_json(), f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "confusion.csv"), "w") as f:
        names = [str(c) for c in corpus.class_ids]
        f.write("true\\pred," + ",".join(names) + "\n")
        for i, row in enumerate(report.confusion):
            f.write(names[i] + "," + ",".join(str(int(x)) for x in row) + "\n")
    from . import figures
    figures.confusion_heatmap(report.confusion,
                              os.path.join(out_dir, "confusion.png"),
                              labels=corpus.names)
    _write_effective(out_dir, {
        "command": "eval", "checkpoint": os.path.abspath(args.checkpoint),
        "manifest": os.path.abspath(args.manifest),
        "infer_temperature": use_temp, "jobs": args.jobs,
    })
    print(json.dumps({"top1": report.top1, "macro_f1": report.macro_f1,
                      "weighted_f1": report.weighted_f1,
                      "out": out_dir}))
    return 0


def cmd_analyze_prompts(args) -> int:
    from . import figures
    from .clustering import compare_embeddings, ward_cluster

    model, cfg, corpus = pipeline.load_checkpoint(args.checkpoint, args.corpus)
    after = model.text_features().numpy()
    labels = corpus.names
    out_dir = args.out or os.path.join(args.checkpoint, "analysis")
    os.makedirs(out_dir, exist_ok=True)

    groups = None
    if args.groups:
        with open(args.groups) as f:
            groups = json.load(f)
        if not isinstance(groups, list):
            raise InputError("related-groups file must hold a JSON list of label arrays")

    if args.before:
        before_model, _, _ = pipeline.load_checkpoint(args.before, args.corpus)
        before = before_model.text_features().numpy()
        report = compare_embeddings(before, after, labels,
                                    related_groups=groups,
                                    normalize=args.normalize)
        with open(os.path.join(out_dir, "comparison.json"), "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
        from .clustering import Dendrogram
        dg_b = Dendrogram([tuple(m) for m in report["before"]["merges"]], labels)
        dg_a = Dendrogram([tuple(m) for m in report["after"]["merges"]], labels)
        for tag, dg in (("before", dg_b), ("after", dg_a)):
            dg.save_json(os.path.join(out_dir, f"dendrogram_{tag}.json"))
            dg.save_dot(os.path.join(out_dir, f"dendrogram_{tag}.dot"))
            figures.dendrogram_figure(dg, os.path.join(out_dir, f"dendrogram_{tag}.png"),
                                      f"Class text embeddings ({tag} tuning)")
        print(json.dumps({"out": out_dir, "groups": report["groups"]}))
    else:
        emb = after
        if args.normalize:
            emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        dg = ward_cluster(emb, labels)
        dg.save_json(os.path.join(out_dir, "dendrogram.json"))
        dg.save_dot(os.path.join(out_dir, "dendrogram.dot"))
        figures.dendrogram_figure(dg, os.path.join(out_dir, "dendrogram.png"),
                                  "Class text embeddings")
        print(json.dumps({"out": out_dir, "merges": len(dg.merges)}))
    return 0


def cmd_stats(args) -> int:
    rows = dp.read_manifest(args.manifest)
    _, train_rows, val_rows = dp.split_rows(rows, protocol=args.protocol)
    stats = dp.class_stats(train_rows, val_rows)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "class_stats.json"), "w") as f:
        json.dump(stats, f, indent=2, sort_keys=True)
    from . import figures
    figures.class_count_bars(stats, os.path.join(out_dir, "class_stats.png"))
    print(json.dumps({"out": out_dir, "n_train": stats["n_train"],
                      "n_val": stats["n_val"]}))
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    results = pipeline.run_ablation(cfg, args.axis, args.out)
    from . import figures
    if args.axis == "strategy":
        figures.strategy_bars(results, os.path.join(args.out, "ablation.png"))
    else:
        figures.frames_curve(results, os.path.join(args.out, "ablation.png"))
    print(json.dumps({"axis": args.axis,
                      "rows": [{k: r[k] for k in ("strategy", "frames", "top1")}
                               for r in results]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="krast",
        description="Knowledge-augmented prompt tuning for video action recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset + corpus")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-class", type=int, default=4)
    p.add_argument("--difficulty", type=float, default=0.0)
    p.add_argument("--raw-frames", type=int, default=12)
    p.add_argument("--frame-height", type=int, default=224)
    p.add_argument("--frame-width", type=int, default=224)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("preprocess", help="sample + crop raw videos")
    p.add_argument("--manifest", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="prompt-tune on preprocessed samples")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a sample manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--corpus", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--infer-temperature", choices=("on", "off"), default="on")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-prompts",
                       help="Ward dendrograms over class text embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", default=None)
    p.add_argument("--before", default=None,
                   help="earlier checkpoint for a before/after comparison")
    p.add_argument("--normalize", dest="normalize", action="store_true", default=True)
    p.add_argument("--no-normalize", dest="normalize", action="store_false")
    p.add_argument("--groups", default=None,
                   help="JSON file: list of related class-name groups")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze_prompts)

    p = sub.add_parser("stats", help="per-class sample counts for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", default="etri")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("ablate", help="strategy or frame-count sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", choices=("strategy", "frames"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KrastError as e:
        code = EXIT_DATA
        for types, mapped in _ERROR_CODES:
            if isinstance(e, types):
                code = mapped
                break
        payload = {"error": type(e).__name__, "message": str(e)}
        if isinstance(e, NumericError):
            payload["diagnostics"] = e.diagnostics
        print(json.dumps(payload), file=sys.stderr)
        return code
    except FileNotFoundError as e:
        print(json.dumps({"error": "FileNotFoundError", "message": str(e)}),
              file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
