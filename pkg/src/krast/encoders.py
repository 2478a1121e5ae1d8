"""Frozen, seeded stand-ins for the pretrained text/vision towers.

Weights are drawn once from a seeded Gaussian (mean 0, std 0.02) and never
updated; the seed fully determines them. Gradients flow through the frozen
layers to any injected prompt vectors, which is the whole point of the
prompt-tuning setup.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ShapeError, TokenBudgetExceeded

log = logging.getLogger(__name__)

PAD_ID = 0
SOT_ID = 1
EOT_ID = 2
N_RESERVED = 3

_WORD_RE = re.compile(r"[a-z0-9]+")
_MASK_OFF = -1e9


@dataclass
class EncoderConfig:
    """Construction parameters for one encoder instance."""

    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    context_len: int = 77
    patch_size: int = 32
    frame_size: int = 224
    vocab_size: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ShapeError("encoder_config", (self.d_model,), (self.n_heads,))
        if self.context_len != 77:
            log.warning(
                "protocol deviation: context_len=%d (the reference protocol uses 77)",
                self.context_len,
            )


@dataclass(frozen=True)
class TokenSequence:
    """Integer token ids, bracketed by start/end-of-text markers."""

    ids: Tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) < 2 or self.ids[0] != SOT_ID or self.ids[-1] != EOT_ID:
            raise ValueError("token sequence must start with SOT and end with EOT")

    def __len__(self):
        return len(self.ids)


def _hash_word(word: str, vocab_size: int) -> int:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    span = vocab_size - N_RESERVED
    return N_RESERVED + int.from_bytes(digest, "little") % span


def words_of(text: str) -> List[str]:
    """Lowercased words split on whitespace and punctuation."""
    return _WORD_RE.findall(text.lower())


def tokenize(text: str, vocab_size: int = 4096, context_len: int = 77) -> TokenSequence:
    """Deterministic hashing tokenizer with SOT/EOT brackets.

    Raises TokenBudgetExceeded (carrying the overflow count) when the
    bracketed sequence is longer than ``context_len``.
    """
    ids = [SOT_ID] + [_hash_word(w, vocab_size) for w in words_of(text)] + [EOT_ID]
    if len(ids) > context_len:
        raise TokenBudgetExceeded(len(ids), context_len)
    return TokenSequence(tuple(ids))


def _gauss(rng: np.random.Generator, shape, std=0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape).astype(np.float32)


class _TransformerLayer:
    """Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, prefix: str, cfg: EncoderConfig, rng: np.random.Generator):
        d = cfg.d_model
        hidden = 4 * d
        self.n_heads = cfg.n_heads

        def frz(name, arr):
            return Parameter(arr, f"{prefix}.{name}", frozen=True)

        self.ln1_g = frz("ln1.gain", np.ones(d, np.float32))
        self.ln1_b = frz("ln1.bias", np.zeros(d, np.float32))
        self.wq = frz("attn.wq", _gauss(rng, (d, d)))
        self.bq = frz("attn.bq", np.zeros(d, np.float32))
        self.wk = frz("attn.wk", _gauss(rng, (d, d)))
        self.bk = frz("attn.bk", np.zeros(d, np.float32))
        self.wv = frz("attn.wv", _gauss(rng, (d, d)))
        self.bv = frz("attn.bv", np.zeros(d, np.float32))
        self.wo = frz("attn.wo", _gauss(rng, (d, d)))
        self.bo = frz("attn.bo", np.zeros(d, np.float32))
        self.ln2_g = frz("ln2.gain", np.ones(d, np.float32))
        self.ln2_b = frz("ln2.bias", np.zeros(d, np.float32))
        self.w1 = frz("mlp.w1", _gauss(rng, (d, hidden)))
        self.b1 = frz("mlp.b1", np.zeros(hidden, np.float32))
        self.w2 = frz("mlp.w2", _gauss(rng, (hidden, d)))
        self.b2 = frz("mlp.b2", np.zeros(d, np.float32))

    def parameters(self) -> List[Parameter]:
        return [self.ln1_g, self.ln1_b, self.wq, self.bq, self.wk, self.bk,
                self.wv, self.bv, self.wo, self.bo, self.ln2_g, self.ln2_b,
                self.w1, self.b1, self.w2, self.b2]

    def _heads(self, x: Tensor, b: int, t: int, d: int) -> Tensor:
        h = self.n_heads
        return ad.transpose(ad.reshape(x, (b, t, h, d // h)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        b, t, d = x.shape
        y = ad.layer_norm(x, self.ln1_g, self.ln1_b)
        q = self._heads(ad.add(ad.matmul(y, self.wq), self.bq), b, t, d)
        k = self._heads(ad.add(ad.matmul(y, self.wk), self.bk), b, t, d)
        v = self._heads(ad.add(ad.matmul(y, self.wv), self.bv), b, t, d)
        a = ad.scaled_dot_product_attention(q, k, v, mask=mask)
        a = ad.reshape(ad.transpose(a, (0, 2, 1, 3)), (b, t, d))
        x = ad.add(x, ad.add(ad.matmul(a, self.wo), self.bo))

        y = ad.layer_norm(x, self.ln2_g, self.ln2_b)
        y = ad.gelu(ad.add(ad.matmul(y, self.w1), self.b1))
        y = ad.add(ad.matmul(y, self.w2), self.b2)
        return ad.add(x, y)


class TextEncoder:
    """Frozen transformer over token ids; feature read from the EOT position."""

    def __init__(self, cfg: EncoderConfig, name: str = "text_enc"):
        self.cfg = cfg
        self.name = name
        rng = np.random.default_rng(np.random.PCG64(cfg.seed))
        d = cfg.d_model
        self.token_table = Parameter(
            _gauss(rng, (cfg.vocab_size, d)), f"{name}.token_table", frozen=True)
        self.pos_table = Parameter(
            _gauss(rng, (cfg.context_len, d)), f"{name}.pos_table", frozen=True)
        self.layers = [
            _TransformerLayer(f"{name}.layer{i}", cfg, rng)
            for i in range(cfg.n_layers)
        ]
        self.ln_f_g = Parameter(np.ones(d, np.float32), f"{name}.ln_f.gain", frozen=True)
        self.ln_f_b = Parameter(np.zeros(d, np.float32), f"{name}.ln_f.bias", frozen=True)

    def parameters(self) -> List[Parameter]:
        ps = [self.token_table, self.pos_table, self.ln_f_g, self.ln_f_b]
        for layer in self.layers:
            ps.extend(layer.parameters())
        return ps

    def tokenize(self, text: str) -> TokenSequence:
        return tokenize(text, self.cfg.vocab_size, self.cfg.context_len)

    def encode(self, seq: TokenSequence,
               injected_prompts: Optional[Tensor] = None) -> Tensor:
        """One L2-normalized feature vector for one sequence."""
        injected = [injected_prompts] if injected_prompts is not None else [None]
        return ad.reshape(self.encode_batch([seq], injected), (self.cfg.d_model,))

    def encode_batch(self, seqs: Sequence[TokenSequence],
                     injected: Optional[Sequence[Optional[Tensor]]] = None) -> Tensor:
        """Encode several sequences in one graph; returns (N, d_model).

        Injected prompt vectors (shape (P, d_model) per sequence) are placed
        between the SOT embedding and the remaining token embeddings; the
        combined length must stay within the context budget. Sequences are
        padded to a common length and padding is masked out of attention.
        """
        cfg = self.cfg
        d = cfg.d_model
        if injected is None:
            injected = [None] * len(seqs)

        rows: List[Tensor] = []
        lengths: List[int] = []
        for seq, prompts in zip(seqs, injected):
            emb = ad.embedding(self.token_table, list(seq.ids))
            if prompts is not None:
                if prompts.shape[-1] != d:
                    raise ShapeError("inject_prompts", prompts.shape, (d,))
                n_p = prompts.shape[0]
                total = len(seq) + n_p
                if total > cfg.context_len:
                    raise TokenBudgetExceeded(total, cfg.context_len)
                emb = ad.concat(
                    [ad.narrow(emb, 0, 0, 1), prompts,
                     ad.narrow(emb, 0, 1, len(seq) - 1)], axis=0)
            length = emb.shape[0]
            emb = ad.add(emb, Tensor(self.pos_table.data[:length]))
            rows.append(emb)
            lengths.append(length)

        max_len = max(lengths)
        padded = []
        for emb, length in zip(rows, lengths):
            if length < max_len:
                pad = Tensor(np.zeros((max_len - length, d), dtype=np.float32))
                emb = ad.concat([emb, pad], axis=0)
            padded.append(emb)
        x = ad.stack_tensors(padded, axis=0)  # (N, max_len, d)

        mask = np.zeros((len(seqs), 1, 1, max_len), dtype=np.float32)
        for i, length in enumerate(lengths):
            mask[i, :, :, length:] = _MASK_OFF

        for layer in self.layers:
            x = layer(x, mask=mask if max_len > min(lengths) else None)
        x = ad.layer_norm(x, self.ln_f_g, self.ln_f_b)
        eot = ad.gather_rows(x, [length - 1 for length in lengths])
        return ad.l2_normalize(eot)


class VisionEncoder:
    """Frozen ViT-style tower over per-frame patch tokens of a whole video.

    All frames' tokens form one joint attention sequence; a prompt provider
    may append summary/global/local tokens at every layer, which are stripped
    again before the next layer. The video feature is the mean of the frames'
    final class-token outputs, averaged with the mean final summary-token
    output when summary tokens exist, then L2-normalized.
    """

    def __init__(self, cfg: EncoderConfig, name: str = "vis_enc"):
        if cfg.frame_size % cfg.patch_size != 0:
            raise ShapeError("vision_config", (cfg.frame_size,), (cfg.patch_size,))
        self.cfg = cfg
        self.name = name
        self.n_patches = (cfg.frame_size // cfg.patch_size) ** 2
        rng = np.random.default_rng(np.random.PCG64(cfg.seed))
        d = cfg.d_model
        patch_dim = cfg.patch_size * cfg.patch_size * 3
        self.patch_proj = Parameter(
            _gauss(rng, (patch_dim, d)), f"{name}.patch_proj", frozen=True)
        self.patch_bias = Parameter(np.zeros(d, np.float32), f"{name}.patch_bias", frozen=True)
        self.cls_embed = Parameter(_gauss(rng, (d,)), f"{name}.cls_embed", frozen=True)
        self.pos_table = Parameter(
            _gauss(rng, (self.n_patches + 1, d)), f"{name}.pos_table", frozen=True)
        self.layers = [
            _TransformerLayer(f"{name}.layer{i}", cfg, rng)
            for i in range(cfg.n_layers)
        ]
        self.ln_f_g = Parameter(np.ones(d, np.float32), f"{name}.ln_f.gain", frozen=True)
        self.ln_f_b = Parameter(np.zeros(d, np.float32), f"{name}.ln_f.bias", frozen=True)

    @property
    def n_layers(self) -> int:
        return self.cfg.n_layers

    @property
    def tokens_per_frame(self) -> int:
        return self.n_patches + 1

    def parameters(self) -> List[Parameter]:
        ps = [self.patch_proj, self.patch_bias, self.cls_embed,
              self.pos_table, self.ln_f_g, self.ln_f_b]
        for layer in self.layers:
            ps.extend(layer.parameters())
        return ps

    def patchify(self, frame: np.ndarray) -> np.ndarray:
        """(frame_size, frame_size, 3) image -> (n_patches+1, d_model) tokens.

        Row 0 is the class-token slot; patch rows are the frozen linear
        projection of each flattened patch plus bias, all with positional
        embeddings added. Pure numpy: the projection is frozen so this never
        carries gradients and may be cached.
        """
        cfg = self.cfg
        s, p = cfg.frame_size, cfg.patch_size
        frame = np.asarray(frame, dtype=np.float32)
        if frame.shape != (s, s, 3):
            raise ShapeError("patchify", frame.shape, (s, s, 3))
        n = s // p
        patches = (frame.reshape(n, p, n, p, 3)
                   .transpose(0, 2, 1, 3, 4)
                   .reshape(n * n, p * p * 3))
        tok = patches @ self.patch_proj.data + self.patch_bias.data
        tok = np.concatenate([self.cls_embed.data[None, :], tok], axis=0)
        return tok + self.pos_table.data

    def patchify_video(self, frames: np.ndarray) -> np.ndarray:
        """(T, frame_size, frame_size, 3) -> (T, n_patches+1, d_model)."""
        return np.stack([self.patchify(f) for f in frames], axis=0)

    def encode_video_layers(self, frame_tokens: Sequence[np.ndarray],
                            prompt_provider: Optional[Callable] = None) -> Tensor:
        """Encode one video given per-frame token matrices."""
        tokens = np.stack([np.asarray(t, dtype=np.float32) for t in frame_tokens])
        out = self.encode_videos(tokens[None, ...], prompt_provider)
        return ad.reshape(out, (self.cfg.d_model,))

    def encode_videos(self, tokens: np.ndarray,
                      prompt_provider: Optional[Callable] = None) -> Tensor:
        """Batched video encoding: (B, T, n_patches+1, d) tokens -> (B, d).

        ``prompt_provider(layer_index, frame_reprs)`` receives the previous
        layer's representations shaped (B, T, n_patches+1, d) and returns a
        (summary, global_, local) triple of (B, n, d) tensors or None each;
        they are appended to the joint sequence in that order.
        """
        b, t, p1, d = tokens.shape
        if p1 != self.tokens_per_frame or d != self.cfg.d_model:
            raise ShapeError("encode_videos", tokens.shape,
                             (b, t, self.tokens_per_frame, self.cfg.d_model))
        content = t * p1
        x = Tensor(np.ascontiguousarray(tokens.reshape(b, content, d), dtype=np.float32))
        summary_out = None
        for li, layer in enumerate(self.layers):
            n_summary = 0
            if prompt_provider is not None:
                frame_view = ad.reshape(x, (b, t, p1, d))
                summary, global_, local = prompt_provider(li, frame_view)
                parts = [x]
                for piece in (summary, global_, local):
                    if piece is None:
                        continue
                    if piece.ndim != 3 or piece.shape[0] != b or piece.shape[2] != d:
                        raise ShapeError("prompt_tokens", piece.shape, (b, -1, d))
                    parts.append(piece)
                if summary is not None:
                    n_summary = summary.shape[1]
                x_joint = ad.concat(parts, axis=1) if len(parts) > 1 else x
            else:
                x_joint = x
            x_joint = layer(x_joint)
            if x_joint.shape[1] > content:
                x = ad.narrow(x_joint, 1, 0, content)
                if li == len(self.layers) - 1 and n_summary > 0:
                    summary_out = ad.narrow(x_joint, 1, content, n_summary)
            else:
                x = x_joint

        x = ad.layer_norm(x, self.ln_f_g, self.ln_f_b)
        cls_idx = [ti * p1 for ti in range(t)]
        cls = ad.index_select(x, 1, cls_idx)          # (B, T, d)
        readout = ad.mean(cls, axis=1)                # (B, d)
        if summary_out is not None:
            # summary outputs stay un-normalized: their scale is a trainable
            # degree of freedom of the prompt learner
            readout = ad.mul(ad.add(readout, ad.mean(summary_out, axis=1)), 0.5)
        return ad.l2_normalize(readout)


class DescriptionEmbedder:
    """Frozen stand-in for a pretrained sentence embedder.

    A seeded embedding table mean-pooled over hashed word ids. There is no
    context-length cap here; descriptions may run long.
    """

    def __init__(self, d_desc: int = 64, vocab_size: int = 4096, seed: int = 0,
                 name: str = "desc_emb"):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.d_desc = d_desc
        self.vocab_size = vocab_size
        self.name = name
        self.table = Parameter(
            _gauss(rng, (vocab_size, d_desc)), f"{name}.table", frozen=True)

    def parameters(self) -> List[Parameter]:
        return [self.table]

    def embed(self, text: str) -> np.ndarray:
        ids = [_hash_word(w, self.vocab_size) for w in words_of(text)]
        if not ids:
            return np.zeros(self.d_desc, dtype=np.float32)
        return self.table.data[ids].mean(axis=0)


def weights_checksum(params: Sequence[Parameter]) -> str:
    """SHA-256 over (name, shape, raw bytes) of the given parameters."""
    h = hashlib.sha256()
    for p in sorted(params, key=lambda p: p.name):
        h.update(p.name.encode())
        h.update(str(p.shape).encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
