"""Assembly of the full classifier: frozen encoders + one prompt strategy.

The baseline strategy carries no trainable prompts at all (class-name text
features, no video prompt learner); every other strategy attaches the video
prompt learner and its own text-side state. Only the temperature and prompt
parameters are trainable; everything inside the encoders is frozen.
"""

from __future__ import annotations

import math
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from . import text_prompts as tp
from .autodiff import Parameter, Tensor
from .corpus import Corpus
from .encoders import (DescriptionEmbedder, EncoderConfig, TextEncoder,
                       VisionEncoder, weights_checksum)
from .errors import ConfigError
from .training import FocalConfig, class_probabilities, focal_loss
from .video_prompts import VideoPromptConfig, attach

STRATEGIES = ("baseline", "cpt", "keypt", "segkpt-s", "segkpt-sh", "segkpt-shd")


class PromptTunedClassifier:
    """Dual-encoder contrastive classifier adapted through prompts only."""

    def __init__(self, corpus: Corpus, strategy: str,
                 text_cfg: EncoderConfig, vision_cfg: EncoderConfig,
                 video_prompt_cfg: VideoPromptConfig,
                 focal_cfg: FocalConfig, seed: int = 0):
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}; pick one of {STRATEGIES}")
        if text_cfg.d_model != vision_cfg.d_model:
            raise ConfigError("text and vision towers must share d_model")
        self.corpus = corpus
        self.strategy = strategy
        self.focal_cfg = focal_cfg
        self.text_encoder = TextEncoder(text_cfg)
        self.vision_encoder = VisionEncoder(vision_cfg)
        self.n_classes = len(corpus)

        self.continuous: Optional[tp.ContinuousPrompt] = None
        self._fixed_text_features: Optional[np.ndarray] = None
        if strategy == "cpt":
            embedder = DescriptionEmbedder(d_desc=text_cfg.d_model,
                                           vocab_size=text_cfg.vocab_size,
                                           seed=text_cfg.seed + 1)
            self.continuous = tp.build_cpt(corpus, embedder, text_cfg.d_model, seed=seed)
        else:
            if strategy == "baseline":
                prompt_set = tp.build_baseline(corpus, self.text_encoder)
            elif strategy == "keypt":
                prompt_set = tp.build_keypt(corpus, self.text_encoder)
            else:
                prompt_set = tp.build_segkpt(
                    corpus, tp.STRATEGY_SEGMENTS[strategy], self.text_encoder)
            self.prompt_set = prompt_set
            feats = tp.encode_class_prompts(prompt_set, self.text_encoder)
            self._fixed_text_features = feats.numpy()

        if strategy == "baseline":
            self.video_prompts = None
        else:
            cfg = video_prompt_cfg
            if cfg.n_layers != vision_cfg.n_layers:
                cfg = VideoPromptConfig(cfg.n_summary, cfg.n_global,
                                        cfg.n_local_per_frame, vision_cfg.n_layers,
                                        cfg.share_across_layers)
            self.video_prompts = attach(self.vision_encoder, cfg, seed=seed + 1)

        self.log_tau = Parameter(
            np.asarray([math.log(focal_cfg.tau_init)], dtype=np.float32),
            "loss.log_tau", frozen=not focal_cfg.tau_trainable)

        names = [p.name for p in self.all_parameters()]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError(f"duplicate parameter names: {dupes}")

    # -- parameter bookkeeping ---------------------------------------------

    def all_parameters(self) -> List[Parameter]:
        ps = list(self.text_encoder.parameters())
        ps += self.vision_encoder.parameters()
        if self.continuous is not None:
            ps += self.continuous.parameters()
        if self.video_prompts is not None:
            ps += self.video_prompts.parameters()
        ps.append(self.log_tau)
        return ps

    def trainable_parameters(self) -> List[Parameter]:
        return [p for p in self.all_parameters() if not p.frozen]

    def frozen_parameters(self) -> List[Parameter]:
        return [p for p in self.all_parameters() if p.frozen]

    def frozen_checksum(self) -> str:
        return weights_checksum(self.frozen_parameters())

    def tau(self) -> Tensor:
        return ad.exp(self.log_tau)

    def tau_value(self) -> float:
        return float(np.exp(self.log_tau.data[0]))

    # -- forward paths ------------------------------------------------------

    def text_features(self) -> Tensor:
        """(n_classes, d_model), L2-normalized, class_id order."""
        if self.continuous is not None:
            return tp.encode_class_prompts(self.continuous, self.text_encoder)
        return Tensor(self._fixed_text_features)

    def video_features(self, tokens: np.ndarray) -> Tensor:
        """(B, d_model) from cached patch tokens (B, K, tokens_per_frame, d)."""
        return self.vision_encoder.encode_videos(tokens, self.video_prompts)

    def precompute_tokens(self, frames: np.ndarray) -> np.ndarray:
        """(K, frame, frame, 3) -> (K, tokens_per_frame, d); frozen, cacheable."""
        return self.vision_encoder.patchify_video(frames)

    def loss_on_batch(self, tokens: np.ndarray, label_indexes: np.ndarray) -> Tensor:
        """Mean focal contrastive loss of a batch of cached-token videos."""
        text = self.text_features()
        video = self.video_features(tokens)
        tau = ad.reshape(self.tau(), ())
        p = class_probabilities(video, text, tau)
        y = np.zeros((len(label_indexes), self.n_classes), dtype=np.float32)
        y[np.arange(len(label_indexes)), np.asarray(label_indexes)] = 1.0
        return focal_loss(p, y, self.focal_cfg)

    def predict(self, tokens: np.ndarray, use_temperature: bool = True) -> np.ndarray:
        """Predicted class indexes; temperature cannot change the argmax."""
        text = self.text_features()
        video = self.video_features(tokens)
        sims = ad.matmul(video, ad.transpose(text, (1, 0))).data
        if use_temperature:
            sims = sims / self.tau_value()
        return np.argmax(sims, axis=-1)
