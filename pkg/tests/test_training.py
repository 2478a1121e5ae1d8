"""Focal contrastive loss, temperature, optimizer, training loop."""

import json
import math

import numpy as np
import pytest

from krast import autodiff as ad
from krast.autodiff import Parameter, Tensor
from krast.corpus import ClassDescription, Corpus
from krast.encoders import EncoderConfig
from krast.errors import DomainError, NumericError
from krast.model import PromptTunedClassifier
from krast.training import (Adam, Dataset, FocalConfig, TrainConfig,
                            class_probabilities, classify, focal_loss, train)
from krast.video_prompts import VideoPromptConfig

from fdcheck import check_directional, check_op_gradient


# ---------------------------------------------------------------------------
# class probabilities


def test_probabilities_uniform_for_equal_similarities():
    v = np.ones(4) / 2.0
    t = np.tile(v, (5, 1))
    p = class_probabilities(v, t, tau=1.0).data
    assert np.allclose(p, 0.2, atol=1e-7)
    assert abs(p.sum() - 1.0) < 1e-6


def test_probabilities_hand_softmax_value():
    # similarities [1, 0] at tau=1 -> [e/(e+1), 1/(e+1)]
    v = np.array([1.0, 0.0])
    t = np.array([[1.0, 0.0], [0.0, 1.0]])
    p = class_probabilities(v, t, tau=1.0).data
    assert np.allclose(p, [0.73105858, 0.26894142], atol=1e-6)


def test_small_tau_concentrates_probability():
    v = np.array([1.0, 0.0])
    t = np.array([[1.0, 0.0], [np.cos(0.5), np.sin(0.5)]])  # sim gap ~0.12
    p = class_probabilities(v, t, tau=0.01).data
    assert p[0] > 0.999


def test_probabilities_reject_nonpositive_tau():
    v = np.ones(2)
    t = np.eye(2)
    with pytest.raises(DomainError):
        class_probabilities(v, t, tau=0.0)
    with pytest.raises(DomainError):
        class_probabilities(v, t, tau=Tensor(np.asarray(-1.0)))


def test_probabilities_need_two_classes():
    with pytest.raises(DomainError):
        class_probabilities(np.ones(3), np.ones((1, 3)), tau=1.0)


def test_probabilities_stable_for_extreme_logits():
    v = np.array([1.0, 0.0])
    t = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    p = class_probabilities(v, t, tau=1e-4).data
    assert np.isfinite(p).all() and abs(p.sum() - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# focal loss


def test_focal_zero_when_true_probability_one():
    p = Tensor(np.array([1.0, 0.0, 0.0]))
    y = np.array([1.0, 0.0, 0.0])
    out = focal_loss(p, y, FocalConfig())
    assert out.item() == 0.0


def test_focal_reduces_to_cross_entropy():
    rng = np.random.default_rng(0)
    cfg = FocalConfig(alpha=1.0, gamma=0.0)
    for _ in range(1000):
        logits = rng.normal(size=6)
        p = np.exp(logits) / np.exp(logits).sum()
        y = np.zeros(6)
        y[rng.integers(6)] = 1.0
        got = focal_loss(Tensor(p), y, cfg).item()
        want = -math.log(float((p * y).sum()))
        assert abs(got - want) < 1e-12


def test_focal_hand_value():
    # alpha=0.25, gamma=2, p_true=0.5 -> 0.25 * 0.25 * ln 2
    p = Tensor(np.array([0.5, 0.5]))
    y = np.array([1.0, 0.0])
    got = focal_loss(p, y, FocalConfig(alpha=0.25, gamma=2.0)).item()
    assert abs(got - 0.25 * 0.25 * math.log(2.0)) < 1e-6


@pytest.mark.parametrize("p_true", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
def test_focal_down_weighting_ratio(p_true):
    # L(gamma=2, alpha) / L(gamma=0, alpha=1) == alpha * (1 - p_true)^2
    y = np.array([1.0, 0.0])
    p = Tensor(np.array([p_true, 1.0 - p_true]))
    focal = focal_loss(p, y, FocalConfig(alpha=0.25, gamma=2.0)).item()
    ce = focal_loss(p, y, FocalConfig(alpha=1.0, gamma=0.0)).item()
    assert abs(focal / ce - 0.25 * (1.0 - p_true) ** 2) < 1e-9


def test_focal_clamps_zero_probability():
    p = Tensor(np.array([0.0, 1.0]))
    y = np.array([1.0, 0.0])
    out = focal_loss(p, y, FocalConfig())
    assert np.isfinite(out.item())


def test_focal_config_validation():
    with pytest.raises(DomainError):
        FocalConfig(alpha=0.0)
    with pytest.raises(DomainError):
        FocalConfig(gamma=-1.0)
    with pytest.raises(DomainError):
        FocalConfig(tau_init=0.0)


@pytest.mark.parametrize("seed", range(10))
def test_focal_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    y = np.zeros(5)
    y[rng.integers(5)] = 1.0
    t = rng.normal(size=(5, 6))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    cfg = FocalConfig(alpha=0.25, gamma=2.0)

    def loss(params):
        v = ad.l2_normalize(params["v"])
        p = class_probabilities(v, Tensor(t), ad.exp(params["log_tau"]))
        return focal_loss(p, y, cfg)

    check_op_gradient(loss, {"v": rng.normal(size=6),
                             "log_tau": np.asarray([0.0])})


# ---------------------------------------------------------------------------
# classifier


def test_classify_argmax_and_tie_rule():
    t = np.eye(3)
    assert classify(np.array([0.1, 0.8, 0.1]), t, tau=1.0) == 1
    # exact tie between classes 0 and 2 -> lowest index
    assert classify(np.array([0.5, 0.0, 0.5]), t, tau=1.0) == 0


def test_classify_invariant_to_uniform_similarity_rescaling():
    rng = np.random.default_rng(1)
    t = rng.normal(size=(6, 8))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    v = rng.normal(size=8)
    v /= np.linalg.norm(v)
    base = classify(v, t, tau=1.0)
    for tau in (0.01, 0.1, 10.0):
        assert classify(v, t, tau=tau) == base


# ---------------------------------------------------------------------------
# optimizer


def test_adam_skips_frozen_and_moves_trainable():
    frozen = Parameter(np.ones(3), "f", frozen=True)
    live = Parameter(np.ones(3), "p")
    opt = Adam([frozen, live], lr=0.1)
    opt.step({"p": np.ones(3), "f": np.ones(3)})
    assert np.array_equal(frozen.data, np.ones(3))
    assert not np.array_equal(live.data, np.ones(3))


def test_adam_converges_on_quadratic():
    p = Parameter(np.array([5.0, -3.0]), "p")
    opt = Adam([p], lr=0.1)
    for _ in range(300):
        opt.step({"p": 2 * p.data})
    assert np.abs(p.data).max() < 1e-2


# ---------------------------------------------------------------------------
# training loop on a tiny assembled model


def tiny_corpus(n=3):
    return Corpus([
        ClassDescription(i, f"class {i} marker{i}", s_text=f"semantic text {i} alpha",
                         h_text=f"group {i // 2} text", d_text=f"unique cue {i}",
                         keywords=(f"marker{i}",))
        for i in range(n)
    ])


def tiny_model(strategy="segkpt-shd", seed=0, tau_trainable=True):
    text_cfg = EncoderConfig(d_model=16, n_layers=1, n_heads=2, seed=21)
    vis_cfg = EncoderConfig(d_model=16, n_layers=1, n_heads=2,
                            patch_size=112, frame_size=224, seed=22)
    return PromptTunedClassifier(
        tiny_corpus(), strategy, text_cfg, vis_cfg,
        VideoPromptConfig(n_layers=1),
        FocalConfig(tau_trainable=tau_trainable), seed=seed)


def tiny_dataset(model, n_per_class=4, seed=0, k=2):
    rng = np.random.default_rng(seed)
    tokens, labels, subjects = [], [], []
    for c in range(3):
        base = rng.random((224, 224, 3)).astype(np.float32)
        for i in range(n_per_class):
            frames = np.stack([
                np.clip(base + 0.05 * rng.standard_normal((224, 224, 3)), 0, 1)
                for _ in range(k)
            ]).astype(np.float32)
            tokens.append(model.precompute_tokens(frames))
            labels.append(c)
            subjects.append(1 + i % 4)
    return Dataset(np.stack(tokens), np.asarray(labels), np.asarray(subjects), 3)


def test_zero_epochs_leave_parameters_untouched(tmp_path):
    model = tiny_model()
    before = model.frozen_checksum()
    trainable_before = {p.name: p.data.copy() for p in model.trainable_parameters()}
    ds = tiny_dataset(model)
    cfg = TrainConfig(epochs=0, eval_every=None)
    train(model, ds, None, cfg, seed=1, checkpoint_dir=str(tmp_path / "ckpt"))
    assert model.frozen_checksum() == before
    for p in model.trainable_parameters():
        assert np.array_equal(p.data, trainable_before[p.name])
    assert (tmp_path / "ckpt" / "weights" / "index.json").exists()


def test_frozen_checksum_stable_across_training():
    model = tiny_model()
    before = model.frozen_checksum()
    ds = tiny_dataset(model)
    cfg = TrainConfig(epochs=3, batch_size=4, eval_every=None)
    train(model, ds, None, cfg, seed=1)
    assert model.frozen_checksum() == before


def test_training_loss_decreases_on_separable_toy():
    for seed in range(3):
        model = tiny_model(seed=seed)
        ds = tiny_dataset(model, seed=seed)
        cfg = TrainConfig(epochs=20, batch_size=4, max_steps=50, eval_every=None)
        _, hist = train(model, ds, None, cfg, seed=seed)
        losses = [h["loss"] for h in hist]
        # windowed means: single-batch losses are noisy
        assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_log_rows_have_required_keys(tmp_path):
    model = tiny_model()
    ds = tiny_dataset(model)
    log = tmp_path / "log.jsonl"
    cfg = TrainConfig(epochs=1, batch_size=4, eval_every=2)
    train(model, ds, ds, cfg, seed=1, log_path=str(log))
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert rows
    for row in rows:
        assert set(row) == {"step", "epoch", "loss", "val_top1", "val_f1",
                            "val_wf1", "tau"}
    assert any(r["val_top1"] is not None for r in rows)


def test_resume_reproduces_loss_trajectory(tmp_path):
    def run(epochs, resume=None, ckpt=None):
        model = tiny_model()
        ds = tiny_dataset(model)
        cfg = TrainConfig(epochs=epochs, batch_size=4, eval_every=None)
        _, hist = train(model, ds, None, cfg, seed=7,
                        checkpoint_dir=ckpt, resume_from=resume)
        return [h["loss"] for h in hist]

    full = run(4)
    ckpt = str(tmp_path / "ckpt")
    first = run(2, ckpt=ckpt)
    second = run(4, resume=ckpt)
    assert first + second == full


def test_nan_loss_aborts_with_batch_diagnostics():
    model = tiny_model()
    ds = tiny_dataset(model)
    model.log_tau.data = np.array([np.nan], dtype=np.float32)
    cfg = TrainConfig(epochs=1, batch_size=4, eval_every=None)
    with pytest.raises(NumericError) as e:
        train(model, ds, None, cfg, seed=1)
    assert "batch_indices" in e.value.diagnostics


def test_tau_stays_positive_and_trainable():
    model = tiny_model()
    ds = tiny_dataset(model)
    tau0 = model.tau_value()
    cfg = TrainConfig(epochs=4, batch_size=4, eval_every=None)
    train(model, ds, None, cfg, seed=1)
    assert model.tau_value() > 0.0
    assert model.tau_value() != tau0  # it moved


def test_tau_not_trainable_when_flagged_frozen():
    model = tiny_model(tau_trainable=False)
    ds = tiny_dataset(model)
    tau0 = model.tau_value()
    cfg = TrainConfig(epochs=2, batch_size=4, eval_every=None)
    train(model, ds, None, cfg, seed=1)
    assert model.tau_value() == tau0


def test_end_to_end_loss_gradient_matches_finite_differences():
    """Full model loss (text + video + focal) vs directional FD, 20 seeds."""
    model = tiny_model(strategy="cpt")
    ds = tiny_dataset(model, n_per_class=2)
    params = model.trainable_parameters()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(ds), size=3, replace=False)

        def loss():
            return model.loss_on_batch(ds.tokens[idx], ds.labels[idx])

        worst = max(worst, check_directional(loss, params, rng))
    assert worst <= 1.0


def test_cpt_residual_only_training_decreases_loss():
    """Everything frozen except the per-class residuals; loss must fall."""
    model = tiny_model(strategy="cpt")
    ds = tiny_dataset(model)
    keep = {model.continuous.residual.name}
    for p in model.trainable_parameters():
        if p.name not in keep:
            p.frozen = True
            p.requires_grad = False
    # full-batch: 12 samples, batch 12 -> one step per epoch, 50 steps
    cfg = TrainConfig(epochs=50, batch_size=12, max_steps=50, eval_every=None)
    _, hist = train(model, ds, None, cfg, seed=3)
    assert len(hist) == 50
    assert hist[-1]["loss"] < hist[0]["loss"]
