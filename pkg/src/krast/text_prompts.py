"""Text-side prompt strategies and per-class text features.

Three families:

* continuous prompts: a frozen description embedding pushed through a
  trainable two-layer MLP plus a per-class trainable residual, expanded
  into a few prefix vectors injected next to the tokenized class name;
* keyword prompts: one token sequence per class built from its curated
  keywords;
* segmented prompts: one sequence per requested description segment
  (semantic / hierarchical / discriminative), encoded separately and
  fused by mean-then-renormalize.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .corpus import Corpus
from .encoders import DescriptionEmbedder, TextEncoder
from .errors import CorpusError, TokenBudgetExceeded

SEGMENT_ORDER = ("S", "H", "D")
N_PREFIX_VECTORS = 4

STRATEGY_SEGMENTS = {
    "segkpt-s": ("S",),
    "segkpt-sh": ("S", "H"),
    "segkpt-shd": ("S", "H", "D"),
}


@dataclass
class DiscretePromptSet:
    """Fixed per-class token sequences; one or more per class."""

    strategy: str
    class_ids: List[int]
    sequences: List[List]  # per class, list of TokenSequence

    def __post_init__(self):
        if self.strategy not in ("baseline", "keypt", "segkpt-s", "segkpt-sh", "segkpt-shd"):
            raise ValueError(f"unknown strategy tag {self.strategy!r}")


class ContinuousPrompt:
    """Trainable state of the continuous strategy.

    Per class: prompt embedding = mlp(description_embedding) + residual.
    The embedding is expanded by a trainable linear map into
    ``N_PREFIX_VECTORS`` prefix vectors for the text encoder. Description
    embeddings are computed once and frozen.
    """

    def __init__(self, corpus: Corpus, embedder: DescriptionEmbedder,
                 d_model: int, seed: int = 0, name: str = "cpt"):
        for e in corpus:
            if not e.s_text.strip():
                raise CorpusError("missing semantic text", class_id=e.class_id)
        rng = np.random.default_rng(np.random.PCG64(seed))
        d_desc = embedder.d_desc
        self.class_ids = corpus.class_ids
        self.names = corpus.names
        self.desc = np.stack([embedder.embed(e.s_text) for e in corpus])  # frozen
        self.w1 = Parameter(rng.normal(0, 0.02, (d_desc, d_model)).astype(np.float32),
                            f"{name}.mlp.w1")
        self.b1 = Parameter(np.zeros(d_model, np.float32), f"{name}.mlp.b1")
        self.w2 = Parameter(rng.normal(0, 0.02, (d_model, d_model)).astype(np.float32),
                            f"{name}.mlp.w2")
        self.b2 = Parameter(np.zeros(d_model, np.float32), f"{name}.mlp.b2")
        self.residual = Parameter(
            rng.normal(0, 0.02, (len(corpus.class_ids), d_model)).astype(np.float32),
            f"{name}.residual")
        self.expand = Parameter(
            rng.normal(0, 0.02, (d_model, N_PREFIX_VECTORS * d_model)).astype(np.float32),
            f"{name}.expand")
        self.d_model = d_model

    def parameters(self) -> List[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2, self.residual, self.expand]

    def class_embeddings(self) -> Tensor:
        """(N, d_model): mlp(desc) + residual, in-graph."""
        h = ad.gelu(ad.add(ad.matmul(Tensor(self.desc), self.w1), self.b1))
        out = ad.add(ad.matmul(h, self.w2), self.b2)
        return ad.add(out, self.residual)

    def prefix_vectors(self) -> List[Tensor]:
        """Per class, (N_PREFIX_VECTORS, d_model) injected prompt vectors."""
        emb = self.class_embeddings()
        flat = ad.matmul(emb, self.expand)  # (N, P*d)
        return [
            ad.reshape(ad.narrow(flat, 0, i, 1), (N_PREFIX_VECTORS, self.d_model))
            for i in range(len(self.class_ids))
        ]


def build_cpt(corpus: Corpus, embedder: DescriptionEmbedder, d_model: int,
              seed: int = 0) -> ContinuousPrompt:
    return ContinuousPrompt(corpus, embedder, d_model, seed=seed)


def build_baseline(corpus: Corpus, encoder: TextEncoder) -> DiscretePromptSet:
    """Class-name-only sequences; the prompt-free reference point."""
    seqs = [[encoder.tokenize(e.name)] for e in corpus]
    return DiscretePromptSet("baseline", corpus.class_ids, seqs)


def build_keypt(corpus: Corpus, encoder: TextEncoder) -> DiscretePromptSet:
    """One sequence per class: joined keywords followed by the class name."""
    seqs = []
    for e in corpus:
        if not e.keywords:
            raise CorpusError("no keywords", class_id=e.class_id)
        text = ", ".join(e.keywords) + " " + e.name
        try:
            seqs.append([encoder.tokenize(text)])
        except TokenBudgetExceeded as err:
            raise TokenBudgetExceeded(err.length, err.budget, class_id=e.class_id)
    return DiscretePromptSet("keypt", corpus.class_ids, seqs)


def build_segkpt(corpus: Corpus, segments: Sequence[str],
                 encoder: TextEncoder) -> DiscretePromptSet:
    """One sequence per requested segment per class, each budget-checked."""
    segs = tuple(s for s in SEGMENT_ORDER if s in set(segments))
    if not segs:
        raise CorpusError("at least one segment (S, H or D) is required")
    if set(segments) - set(SEGMENT_ORDER):
        raise CorpusError(f"unknown segments {sorted(set(segments) - set(SEGMENT_ORDER))}")
    seqs = []
    for e in corpus:
        per_class = []
        for tag in segs:
            text = e.segment(tag)
            if not text.strip():
                raise CorpusError(f"missing {tag} segment", class_id=e.class_id)
            try:
                per_class.append(encoder.tokenize(text))
            except TokenBudgetExceeded as err:
                raise TokenBudgetExceeded(err.length, err.budget,
                                          class_id=e.class_id, segment=tag)
        seqs.append(per_class)
    tag = "segkpt-" + "".join(segs).lower()
    return DiscretePromptSet(tag, corpus.class_ids, seqs)


def encode_class_prompts(prompts, encoder: TextEncoder,
                         corpus: Optional[Corpus] = None) -> Tensor:
    """Per-class text features, (N, d_model), index-aligned with class_id order.

    Multi-segment classes are encoded segment by segment, averaged and
    re-normalized. For a ContinuousPrompt the prefix vectors are injected
    alongside the tokenized class name, so gradients reach its parameters.
    """
    if isinstance(prompts, ContinuousPrompt):
        seqs = [encoder.tokenize(name) for name in prompts.names]
        feats = encoder.encode_batch(seqs, injected=prompts.prefix_vectors())
        return feats
    flat_seqs = []
    counts = []
    for per_class in prompts.sequences:
        flat_seqs.extend(per_class)
        counts.append(len(per_class))
    feats = encoder.encode_batch(flat_seqs)  # (sum(counts), d)
    if all(c == 1 for c in counts):
        return feats
    rows = []
    offset = 0
    for c in counts:
        seg = ad.narrow(feats, 0, offset, c)
        rows.append(ad.l2_normalize(ad.mean(seg, axis=0, keepdims=True)))
        offset += c
    return ad.concat(rows, axis=0)
