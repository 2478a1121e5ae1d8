"""End-to-end orchestration: configs to models, datasets, runs, reports."""

from __future__ import annotations

import json
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import data as dp
from . import tensorio
from .config import RunConfig
from .corpus import Corpus, load_corpus
from .errors import ConfigError, InputError
from .metrics import EvalReport, evaluate
from .model import STRATEGIES, PromptTunedClassifier
from .training import Dataset, predict_dataset, train


def build_model(corpus: Corpus, cfg: RunConfig, strategy: Optional[str] = None,
                ) -> PromptTunedClassifier:
    return PromptTunedClassifier(
        corpus,
        strategy or cfg.strategy,
        cfg.text_encoder,
        cfg.vision_encoder,
        cfg.video_prompts,
        cfg.focal,
        seed=cfg.seed,
    )


def datasets_from_videos(model: PromptTunedClassifier, corpus: Corpus,
                         videos: Sequence[dp.RawVideo], frames: int,
                         protocol: str = "etri") -> Tuple[Dataset, Dataset]:
    """Preprocess raw in-memory videos and split them cross-subject.

    Patch tokens are cached eagerly: the patch projection is frozen, so
    caching cannot affect training gradients.
    """
    spec = dp.split_cross_subject({v.subject_id for v in videos}, protocol)
    tokens, labels, subjects = [], [], []
    for v in videos:
        sampled = dp.preprocess_frames(v.frames, v.bboxes, frames)
        tokens.append(model.precompute_tokens(sampled))
        labels.append(corpus.index_of(v.class_id))
        subjects.append(v.subject_id)
    tokens = np.stack(tokens)
    labels = np.asarray(labels, dtype=np.int64)
    subjects = np.asarray(subjects, dtype=np.int64)
    in_train = np.isin(subjects, sorted(spec.train_subject_ids))
    n_cls = len(corpus)
    return (Dataset(tokens[in_train], labels[in_train], subjects[in_train], n_cls),
            Dataset(tokens[~in_train], labels[~in_train], subjects[~in_train], n_cls))


def dataset_from_sample_manifest(model: PromptTunedClassifier, corpus: Corpus,
                                 manifest_path: str) -> Dataset:
    """Load preprocessed sample tensors listed in a manifest."""
    rows = dp.read_manifest(manifest_path)
    if not rows:
        raise InputError(f"{manifest_path}: empty manifest")
    if "bboxes" in rows[0]:
        raise InputError(
            f"{manifest_path}: raw manifest given where preprocessed samples "
            "are required (run the preprocess step first)")
    base = os.path.dirname(os.path.abspath(manifest_path))
    tokens, labels, subjects = [], [], []
    for row in rows:
        frames = tensorio.read_kvt(os.path.join(base, row["tensor_path"]))
        tokens.append(model.precompute_tokens(frames))
        labels.append(corpus.index_of(row["class_id"]))
        subjects.append(row["subject_id"])
    return Dataset(np.stack(tokens), np.asarray(labels, dtype=np.int64),
                   np.asarray(subjects, dtype=np.int64), len(corpus))


def run_training(cfg: RunConfig, out_dir: str) -> Tuple[PromptTunedClassifier, dict]:
    """The `train` subcommand: manifests -> checkpoint + JSONL log."""
    if not cfg.data.corpus or not cfg.data.train_manifest:
        raise ConfigError("config.data needs corpus and train_manifest paths")
    corpus = load_corpus(cfg.data.corpus)
    model = build_model(corpus, cfg)
    train_set = dataset_from_sample_manifest(model, corpus, cfg.data.train_manifest)
    val_set = (dataset_from_sample_manifest(model, corpus, cfg.data.val_manifest)
               if cfg.data.val_manifest else None)
    os.makedirs(out_dir, exist_ok=True)
    cfg.save(os.path.join(out_dir, "config.effective.json"))
    state, history = train(
        model, train_set, val_set, cfg.train, seed=cfg.seed,
        checkpoint_dir=out_dir, log_path=os.path.join(out_dir, "log.jsonl"))
    summary = {
        "steps": state.step,
        "epochs": state.epoch,
        "final_loss": history[-1]["loss"] if history else None,
        "tau": model.tau_value(),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return model, summary


def load_checkpoint(checkpoint_dir: str,
                    corpus_path: Optional[str] = None,
                    ) -> Tuple[PromptTunedClassifier, RunConfig, Corpus]:
    """Rebuild a model from a checkpoint directory and restore its weights."""
    from .config import load_config
    cfg_path = os.path.join(checkpoint_dir, "config.effective.json")
    if not os.path.exists(cfg_path):
        raise ConfigError(f"{checkpoint_dir}: no config.effective.json")
    cfg = load_config(cfg_path)
    corpus = load_corpus(corpus_path or cfg.data.corpus)
    model = build_model(corpus, cfg)
    tensorio.restore_parameters(os.path.join(checkpoint_dir, "weights"),
                                model.all_parameters())
    return model, cfg, corpus


def evaluate_model(model: PromptTunedClassifier, dataset: Dataset,
                   batch_size: int = 8, use_temperature: bool = True,
                   jobs: int = 1) -> EvalReport:
    preds = predict_dataset(model, dataset, batch_size,
                            use_temperature=use_temperature, jobs=jobs)
    return evaluate(preds.tolist(), dataset.labels.tolist(), dataset.n_classes)


ABLATION_STRATEGIES = list(STRATEGIES)


def _train_once(cfg: RunConfig, corpus: Corpus, videos: Sequence[dp.RawVideo],
                strategy: str, frames: int) -> Tuple[str, int, EvalReport]:
    model = build_model(corpus, cfg, strategy=strategy)
    train_set, val_set = datasets_from_videos(model, corpus, videos, frames,
                                              protocol=cfg.split)
    train(model, train_set, val_set, cfg.train, seed=cfg.seed)
    report = evaluate_model(model, val_set, cfg.train.batch_size,
                            use_temperature=cfg.train.infer_temperature,
                            jobs=cfg.train.jobs)
    return strategy, frames, report


def run_ablation(cfg: RunConfig, axis: str, out_dir: str) -> List[dict]:
    """The `ablate` subcommand over a raw manifest.

    axis "strategy": same data, every prompt strategy.
    axis "frames": configured strategy, one run per frame count.
    """
    if axis not in ("strategy", "frames"):
        raise ConfigError(f"axis must be strategy|frames, got {axis!r}")
    if not cfg.data.corpus or not cfg.data.raw_manifest:
        raise ConfigError("config.data needs corpus and raw_manifest paths")
    corpus = load_corpus(cfg.data.corpus)
    rows = dp.read_manifest(cfg.data.raw_manifest)
    if rows and "bboxes" not in rows[0]:
        raise InputError("ablate needs a raw manifest (with bboxes); "
                         "got preprocessed samples")
    base = os.path.dirname(os.path.abspath(cfg.data.raw_manifest))
    videos = []
    for row in rows:
        frames_arr = tensorio.read_kvt(os.path.join(base, row["tensor_path"]))
        videos.append(dp.RawVideo(frames_arr, row["subject_id"], row["class_id"],
                                  np.asarray(row["bboxes"], dtype=np.float32)))

    runs = ([(s, cfg.frames) for s in ABLATION_STRATEGIES] if axis == "strategy"
            else [(cfg.strategy, k) for k in cfg.ablate_frames])
    results = []
    for strategy, frames in runs:
        _, _, report = _train_once(cfg, corpus, videos, strategy, frames)
        results.append({
            "strategy": strategy,
            "frames": frames,
            "top1": report.top1,
            "macro_f1": report.macro_f1,
            "weighted_f1": report.weighted_f1,
            "report": report.to_json(),
        })

    os.makedirs(out_dir, exist_ok=True)
    cfg.save(os.path.join(out_dir, "config.effective.json"))
    with open(os.path.join(out_dir, "ablation.json"), "w") as f:
        json.dump({"axis": axis, "rows": results}, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "ablation.csv"), "w") as f:
        f.write("strategy,frames,top1,macro_f1,weighted_f1\n")
        for r in results:
            f.write(f"{r['strategy']},{r['frames']},{r['top1']:.6f},"
                    f"{r['macro_f1']:.6f},{r['weighted_f1']:.6f}\n")
    return results
