"""Learnable video prompt tokens appended inside the frozen vision tower.

Three token roles, made behaviorally distinct on purpose:

* summary tokens: a learnable base shifted by a set conditioner over all
  frame tokens from the previous layer, mean(gelu(W1 z + b1)) W2
  (video-conditioned; the nonlinearity lets it read distributional token
  statistics, which a plain mean throws away);
* global tokens: per-layer learnable constants (input-independent);
* local tokens: per frame, a learnable base shifted by a shared linear
  projection of that frame's class-token representation.

Prompt tokens are regenerated at every layer from the previous layer's
frame representations and their outputs are discarded between layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError

PromptTriple = Tuple[Optional[Tensor], Optional[Tensor], Optional[Tensor]]


@dataclass
class VideoPromptConfig:
    n_summary: int = 1
    n_global: int = 2
    n_local_per_frame: int = 1
    n_layers: int = 4
    share_across_layers: bool = False

    def __post_init__(self):
        if min(self.n_summary, self.n_global, self.n_local_per_frame) < 0:
            raise ConfigError("prompt token counts must be >= 0")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")

    def tokens_per_layer(self, n_frames: int) -> int:
        return self.n_summary + self.n_global + self.n_local_per_frame * n_frames

    @property
    def empty(self) -> bool:
        return self.n_summary == 0 and self.n_global == 0 and self.n_local_per_frame == 0


class VideoPromptLearner:
    """Produces (summary, global, local) prompt tokens for each tower layer.

    Callable with ``(layer_index, frame_reprs)`` where frame_reprs is the
    previous layer's output shaped (B, T, tokens_per_frame, d). Stateless
    across videos apart from its parameters; any frame count works.
    """

    def __init__(self, config: VideoPromptConfig, d_model: int, seed: int = 0,
                 name: str = "vpl"):
        self.config = config
        self.d_model = d_model
        rng = np.random.default_rng(np.random.PCG64(seed))
        d = d_model
        n_param_layers = 1 if config.share_across_layers else config.n_layers

        def trainable(layer, suffix, shape, std=0.02):
            data = rng.normal(0, std, shape).astype(np.float32)
            return Parameter(data, f"{name}.layer{layer}.{suffix}")

        self._per_layer = []
        for li in range(n_param_layers):
            entry = {}
            if config.n_summary > 0:
                entry["s_base"] = trainable(li, "summary.base", (config.n_summary, d))
                entry["s_hw"] = trainable(li, "summary.hidden_w", (d, d), std=0.05)
                entry["s_hb"] = Parameter(np.zeros(d, np.float32),
                                          f"{name}.layer{li}.summary.hidden_b")
                entry["s_w"] = trainable(li, "summary.w", (d, config.n_summary * d),
                                         std=0.05)
                entry["s_b"] = Parameter(np.zeros(config.n_summary * d, np.float32),
                                         f"{name}.layer{li}.summary.b")
            if config.n_global > 0:
                entry["g_base"] = trainable(li, "global.base", (config.n_global, d))
            if config.n_local_per_frame > 0:
                k = config.n_local_per_frame
                entry["l_base"] = trainable(li, "local.base", (k, d))
                entry["l_w"] = trainable(li, "local.w", (d, k * d))
                entry["l_b"] = Parameter(np.zeros(k * d, np.float32),
                                         f"{name}.layer{li}.local.b")
            self._per_layer.append(entry)

    def parameters(self) -> List[Parameter]:
        out = []
        for entry in self._per_layer:
            out.extend(entry.values())
        return out

    def _entry(self, layer: int) -> dict:
        if self.config.share_across_layers:
            return self._per_layer[0]
        return self._per_layer[layer]

    def __call__(self, layer: int, frame_reprs: Tensor) -> PromptTriple:
        return self.generate_prompts(layer, frame_reprs)

    def generate_prompts(self, layer: int, frame_reprs: Tensor) -> PromptTriple:
        cfg = self.config
        if not 0 <= layer < cfg.n_layers:
            raise ConfigError(f"layer {layer} outside [0, {cfg.n_layers})")
        b, t, p1, d = frame_reprs.shape
        entry = self._entry(layer)

        summary = None
        if cfg.n_summary > 0:
            flat = ad.reshape(frame_reprs, (b, t * p1, d))
            lifted = ad.gelu(ad.add(ad.matmul(flat, entry["s_hw"]), entry["s_hb"]))
            pooled = ad.mean(lifted, axis=1)                         # (B, d)
            cond = ad.add(ad.matmul(pooled, entry["s_w"]), entry["s_b"])
            summary = ad.add(ad.reshape(cond, (b, cfg.n_summary, d)), entry["s_base"])

        global_ = None
        if cfg.n_global > 0:
            zeros = Tensor(np.zeros((b, cfg.n_global, d), np.float32))
            global_ = ad.add(zeros, entry["g_base"])

        local = None
        if cfg.n_local_per_frame > 0:
            k = cfg.n_local_per_frame
            cls = ad.reshape(ad.narrow(frame_reprs, 2, 0, 1), (b, t, d))
            cond = ad.add(ad.matmul(cls, entry["l_w"]), entry["l_b"])  # (B, T, k*d)
            cond = ad.reshape(cond, (b, t, k, d))
            local = ad.reshape(ad.add(cond, entry["l_base"]), (b, t * k, d))

        return summary, global_, local


def attach(encoder, config: VideoPromptConfig, seed: int = 0,
           name: str = "vpl") -> Optional[VideoPromptLearner]:
    """Build the prompt provider for a vision tower.

    Returns None for an all-zero config, which makes the encoding path
    bit-identical to the prompt-free encoder.
    """
    if config.n_layers != encoder.n_layers:
        raise ConfigError(
            f"prompt learner has {config.n_layers} layers, tower has {encoder.n_layers}")
    if config.empty:
        return None
    return VideoPromptLearner(config, encoder.cfg.d_model, seed=seed, name=name)
