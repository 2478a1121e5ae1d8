"""Focal contrastive objective, Adam, and the prompt-tuning training loop.

Class probabilities are a temperature-scaled softmax over cosine
similarities between the video feature and the per-class text features;
the loss is a multi-class focal loss over those probabilities. Only
non-frozen parameters are ever updated; the temperature lives in log
space so it stays positive.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import tensorio
from .autodiff import GradContext, Parameter, Tensor
from .errors import DomainError, NumericError
from .metrics import evaluate

PROB_FLOOR = 1e-12


@dataclass
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    tau_init: float = 0.01
    tau_trainable: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError("alpha must be > 0")
        if self.gamma < 0:
            raise DomainError("gamma must be >= 0")
        if self.tau_init <= 0:
            raise DomainError("tau_init must be > 0")


def class_probabilities(video_feat, text_feats, tau) -> Tensor:
    """Softmax over similarity scores divided by the temperature.

    video_feat: (d,) or (B, d); text_feats: (N, d); tau: positive scalar
    (float or scalar Tensor). Inputs are expected L2-normalized. Returns
    (N,) or (B, N) probabilities; the softmax subtracts the row max before
    exponentiating.
    """
    if isinstance(tau, (int, float)):
        if tau <= 0:
            raise DomainError(f"temperature must be > 0, got {tau}")
        tau = Tensor(np.asarray(tau, dtype=np.float32))
    elif float(tau.data.reshape(-1)[0]) <= 0:
        raise DomainError(f"temperature must be > 0, got {tau.data}")
    if tau.data.size != 1:
        raise DomainError(f"temperature must be a scalar, got shape {tau.shape}")
    if tau.ndim != 0:
        tau = ad.reshape(tau, ())
    v = video_feat if isinstance(video_feat, Tensor) else Tensor(video_feat)
    t = text_feats if isinstance(text_feats, Tensor) else Tensor(text_feats)
    if t.shape[0] < 2:
        raise DomainError("need at least 2 classes")
    single = v.ndim == 1
    if single:
        v = ad.reshape(v, (1, v.shape[0]))
    sims = ad.matmul(v, ad.transpose(t, (1, 0)))  # (B, N)
    p = ad.softmax(ad.div(sims, tau))
    return ad.reshape(p, (t.shape[0],)) if single else p


def focal_loss(p: Tensor, y_onehot: np.ndarray, config: FocalConfig) -> Tensor:
    """Mean focal loss -alpha * (1 - p_true)^gamma * log(p_true).

    ``p`` is (N,) or (B, N); ``y_onehot`` matches with exactly one 1 per
    row. The true-class probability is clamped at 1e-12 before the log.
    """
    y = np.asarray(y_onehot, dtype=p.dtype)
    if y.shape != p.shape:
        raise DomainError(f"label shape {y.shape} != probability shape {p.shape}")
    p2 = p if p.ndim == 2 else ad.reshape(p, (1, p.shape[0]))
    y2 = y.reshape(p2.shape)
    p_true = ad.sum_(ad.mul(p2, Tensor(y2)), axis=-1)          # (B,)
    modulator = ad.power(ad.sub(1.0, p_true), config.gamma) if config.gamma != 0 \
        else Tensor(np.ones(p2.shape[0], dtype=p.dtype))
    log_p = ad.log(ad.clamp_min(p_true, PROB_FLOOR))
    per_sample = ad.mul(ad.mul(modulator, log_p), -config.alpha)
    return ad.mean(per_sample)


def classify(video_feat, text_feats, tau) -> np.ndarray:
    """Argmax class index per video; ties resolve to the lowest index."""
    p = class_probabilities(video_feat, text_feats, tau)
    return np.argmax(p.data, axis=-1)


class Adam:
    """Adam with bias correction; skips frozen parameters by construction."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if not p.frozen]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = grads.get(p.name)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[p.name] = b1 * self.m[p.name] + (1 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    max_steps: Optional[int] = None
    eval_every: Optional[int] = 25
    early_stop_top1: Optional[float] = None
    infer_temperature: bool = True
    jobs: int = 1


@dataclass
class Dataset:
    """In-memory preprocessed samples: cached patch tokens plus labels."""

    tokens: np.ndarray    # (N, K, tokens_per_frame, d_model) float32
    labels: np.ndarray    # (N,) int class indexes in [0, n_classes)
    subjects: np.ndarray  # (N,) int subject ids
    n_classes: int

    def __len__(self):
        return self.tokens.shape[0]


class TrainState:
    """Step counter, optimizer moments, RNG state; fully serializable."""

    def __init__(self, seed: int):
        self.step = 0
        self.epoch = 0
        self.running_loss = float("nan")
        self.rng = np.random.default_rng(np.random.PCG64(seed))
        self.seed = seed

    def save(self, directory: str, optimizer: Adam) -> None:
        os.makedirs(directory, exist_ok=True)
        blob = {
            "step": self.step,
            "epoch": self.epoch,
            "running_loss": self.running_loss,
            "seed": self.seed,
            "rng_state": _jsonable(self.rng.bit_generator.state),
            "adam_t": optimizer.t,
        }
        with open(os.path.join(directory, "train_state.json"), "w") as f:
            json.dump(blob, f, indent=2, sort_keys=True)
        moments = os.path.join(directory, "optim")
        os.makedirs(moments, exist_ok=True)
        for name, arr in optimizer.m.items():
            tensorio.write_kvt(os.path.join(moments, _fname("m", name)), arr)
        for name, arr in optimizer.v.items():
            tensorio.write_kvt(os.path.join(moments, _fname("v", name)), arr)

    @classmethod
    def load(cls, directory: str, optimizer: Adam) -> "TrainState":
        with open(os.path.join(directory, "train_state.json")) as f:
            blob = json.load(f)
        state = cls(blob["seed"])
        state.step = blob["step"]
        state.epoch = blob["epoch"]
        state.running_loss = blob["running_loss"]
        state.rng.bit_generator.state = _un_jsonable(blob["rng_state"])
        optimizer.t = blob["adam_t"]
        moments = os.path.join(directory, "optim")
        for name in optimizer.m:
            optimizer.m[name] = tensorio.read_kvt(os.path.join(moments, _fname("m", name)))
            optimizer.v[name] = tensorio.read_kvt(os.path.join(moments, _fname("v", name)))
        return state


def _fname(kind: str, name: str) -> str:
    return f"{kind}__{name.replace('/', '__')}.kvt"


def _jsonable(state: dict) -> dict:
    out = {}
    for k, v in state.items():
        if isinstance(v, dict):
            out[k] = _jsonable(v)
        elif isinstance(v, np.ndarray):
            out[k] = {"__ndarray__": v.tolist(), "dtype": str(v.dtype)}
        elif isinstance(v, (np.integer,)):
            out[k] = int(v)
        else:
            out[k] = v
    return out


def _un_jsonable(state):
    if isinstance(state, dict):
        if "__ndarray__" in state:
            return np.asarray(state["__ndarray__"], dtype=state["dtype"])
        return {k: _un_jsonable(v) for k, v in state.items()}
    return state


def train(model, train_set: Dataset, val_set: Optional[Dataset],
          config: TrainConfig, seed: int,
          checkpoint_dir: Optional[str] = None,
          log_path: Optional[str] = None,
          resume_from: Optional[str] = None) -> tuple:
    """Run the prompt-tuning loop.

    Returns (TrainState, history) where history is the list of logged
    rows {step, epoch, loss, val_top1, val_f1, val_wf1, tau}. Checkpoints
    (all parameters + optimizer state) are written after every epoch when
    ``checkpoint_dir`` is given; a NaN/inf loss aborts with a diagnostic
    dump of the offending batch.
    """
    optimizer = Adam(model.trainable_parameters(), lr=config.lr)
    if resume_from:
        tensorio.restore_parameters(os.path.join(resume_from, "weights"),
                                    model.all_parameters())
        state = TrainState.load(resume_from, optimizer)
    else:
        state = TrainState(seed)

    history: List[dict] = []
    log_file = open(log_path, "a") if log_path else None

    def emit(row):
        history.append(row)
        if log_file:
            log_file.write(json.dumps(row) + "\n")
            log_file.flush()

    def checkpoint():
        if checkpoint_dir:
            tensorio.save_parameters(os.path.join(checkpoint_dir, "weights"),
                                     model.all_parameters())
            state.save(checkpoint_dir, optimizer)

    def run_validation():
        preds = predict_dataset(model, val_set, config.batch_size,
                                use_temperature=config.infer_temperature,
                                jobs=config.jobs)
        report = evaluate(preds.tolist(), val_set.labels.tolist(), val_set.n_classes)
        return report

    stop = False
    try:
        for _ in range(config.epochs - state.epoch):
            order = state.rng.permutation(len(train_set))
            epoch_losses = []
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                tokens = train_set.tokens[idx]
                labels = train_set.labels[idx]
                with GradContext() as ctx:
                    loss = model.loss_on_batch(tokens, labels)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise NumericError(
                        f"non-finite loss at step {state.step}",
                        diagnostics={"step": state.step, "epoch": state.epoch,
                                     "batch_indices": idx.tolist(),
                                     "loss": loss_val})
                grads = ctx.backward(loss)
                optimizer.step(grads)
                state.step += 1
                epoch_losses.append(loss_val)
                state.running_loss = float(np.mean(epoch_losses))

                row = {"step": state.step, "epoch": state.epoch, "loss": loss_val,
                       "val_top1": None, "val_f1": None, "val_wf1": None,
                       "tau": model.tau_value()}
                if (val_set is not None and config.eval_every
                        and state.step % config.eval_every == 0):
                    report = run_validation()
                    row["val_top1"] = report.top1
                    row["val_f1"] = report.macro_f1
                    row["val_wf1"] = report.weighted_f1
                    if (config.early_stop_top1 is not None
                            and report.top1 >= config.early_stop_top1):
                        stop = True
                emit(row)
                if config.max_steps is not None and state.step >= config.max_steps:
                    stop = True
                if stop:
                    break
            state.epoch += 1
            checkpoint()
            if stop:
                break
    finally:
        if log_file:
            log_file.close()
    # covers 0-epoch and already-complete resumes, which skip the loop body
    if checkpoint_dir and not os.path.isdir(os.path.join(checkpoint_dir, "weights")):
        checkpoint()
    return state, history


def predict_dataset(model, dataset: Dataset, batch_size: int = 8,
                    use_temperature: bool = True, jobs: int = 1) -> np.ndarray:
    """Predicted class indexes for every sample, in dataset order."""
    spans = [(s, min(s + batch_size, len(dataset)))
             for s in range(0, len(dataset), batch_size)]

    def run(span):
        lo, hi = span
        return model.predict(dataset.tokens[lo:hi], use_temperature=use_temperature)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(run, spans))
    else:
        chunks = [run(s) for s in spans]
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
