"""Synthetic video data, the preprocessing protocol, and subject splits.

Preprocessing follows a fixed recipe: uniformly sample K frames with the
half-offset rule floor((i+0.5)*T/K), then cut a fixed 224x224 window
centered on the per-frame person box (clamped inside the frame, no
resampling). Sampling precedes cropping: both orders produce the same
tensors here and sampling first crops fewer frames.

The synthetic generator renders one moving-pattern family per class
(static oriented grating plus a travelling bright blob whose path the
bounding boxes follow) with mild subject-dependent nuisance, and emits a
matching description corpus whose segment texts name the generative
factors. ``difficulty`` blends every class pattern toward one shared
confuser pattern.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import tensorio
from .corpus import ClassDescription, Corpus
from .errors import InputError, PreprocessError, SplitError

CROP = 224


# ---------------------------------------------------------------------------
# preprocessing protocol


def sample_frames(total: int, count: int) -> List[int]:
    """Uniform frame indices: floor((i + 0.5) * T / K), clamped to T-1."""
    if total < 1 or count < 1:
        raise InputError(f"need total >= 1 and count >= 1, got {total}, {count}")
    return [min(int((i + 0.5) * total / count), total - 1) for i in range(count)]


def crop_person(frame: np.ndarray, bbox: Sequence[float]) -> np.ndarray:
    """Fixed 224x224 window centered on the person box, clamped in-frame."""
    h, w = frame.shape[0], frame.shape[1]
    if h < CROP or w < CROP:
        raise PreprocessError(f"frame {w}x{h} smaller than the {CROP} crop window")
    cx, cy = float(bbox[0]), float(bbox[1])
    x0 = int(min(max(cx - CROP // 2, 0), w - CROP))
    y0 = int(min(max(cy - CROP // 2, 0), h - CROP))
    return frame[y0:y0 + CROP, x0:x0 + CROP]


def crop_origin(frame_w: int, frame_h: int, cx: float, cy: float) -> Tuple[int, int]:
    """Top-left (x, y) of the crop window for a given person center."""
    x0 = int(min(max(cx - CROP // 2, 0), frame_w - CROP))
    y0 = int(min(max(cy - CROP // 2, 0), frame_h - CROP))
    return x0, y0


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (align_corners=false).

    Source coordinate of output pixel i is (i + 0.5) * in/out - 0.5, so a
    4x4 image resized to 2x2 yields the means of its four 2x2 blocks:
    out[0, 0] == mean(image[0:2, 0:2]), etc.
    """
    in_h, in_w = image.shape[0], image.shape[1]
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.clip(y0 + 1, 0, in_h - 1)
    x1 = np.clip(x0 + 1, 0, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    if image.ndim == 2:
        image = image[:, :, None]
    top = image[y0][:, x0] * (1 - wx[..., None]) + image[y0][:, x1] * wx[..., None]
    bot = image[y1][:, x0] * (1 - wx[..., None]) + image[y1][:, x1] * wx[..., None]
    out = top * (1 - wy[..., None]) + bot * wy[..., None]
    return out.squeeze(-1) if out.shape[-1] == 1 else out


def preprocess_frames(frames: np.ndarray, bboxes: np.ndarray, k: int) -> np.ndarray:
    """Sample K frames then crop each: (T, H, W, 3) -> (K, 224, 224, 3)."""
    idx = sample_frames(frames.shape[0], k)
    out = np.empty((k, CROP, CROP, 3), dtype=np.float32)
    for row, i in enumerate(idx):
        out[row] = crop_person(frames[i], bboxes[i])
    return out


# ---------------------------------------------------------------------------
# cross-subject split


@dataclass(frozen=True)
class SplitSpec:
    train_subject_ids: frozenset
    test_subject_ids: frozenset

    def __post_init__(self):
        if self.train_subject_ids & self.test_subject_ids:
            raise SplitError("train and test subjects overlap")


def split_cross_subject(subject_ids: Iterable[int], protocol: str = "etri") -> SplitSpec:
    """Partition subjects; protocol "etri" tests on ids divisible by 3."""
    subjects = set(int(s) for s in subject_ids)
    if protocol != "etri":
        raise InputError(f"unknown split protocol {protocol!r}")
    test = frozenset(s for s in subjects if s % 3 == 0)
    train = frozenset(subjects - test)
    if not test or not train:
        raise SplitError(
            f"degenerate split: {len(train)} train / {len(test)} test subjects")
    return SplitSpec(train, test)


def split_rows(rows: Sequence[dict], protocol: str = "etri") -> Tuple[SplitSpec, list, list]:
    """Split manifest rows by subject; returns (spec, train_rows, test_rows)."""
    spec = split_cross_subject({r["subject_id"] for r in rows}, protocol)
    train = [r for r in rows if r["subject_id"] in spec.train_subject_ids]
    test = [r for r in rows if r["subject_id"] in spec.test_subject_ids]
    return spec, train, test


def class_stats(train_rows: Sequence[dict], val_rows: Sequence[dict],
                class_ids: Optional[Sequence[int]] = None) -> dict:
    """Per-class train/val counts plus the max/min imbalance ratio.

    Classes listed in ``class_ids`` but absent from the data are reported
    with count 0. The ratio is null when a class has no samples at all.
    """
    roster = set(class_ids or [])
    roster |= {r["class_id"] for r in train_rows} | {r["class_id"] for r in val_rows}
    counts = {cid: {"train": 0, "val": 0} for cid in sorted(roster)}
    for r in train_rows:
        counts[r["class_id"]]["train"] += 1
    for r in val_rows:
        counts[r["class_id"]]["val"] += 1
    totals = [c["train"] + c["val"] for c in counts.values()]
    ratio = (max(totals) / min(totals)) if totals and min(totals) > 0 else None
    return {
        "classes": {str(cid): c for cid, c in counts.items()},
        "n_train": len(train_rows),
        "n_val": len(val_rows),
        "imbalance_ratio": ratio,
    }


# ---------------------------------------------------------------------------
# synthetic dataset


@dataclass
class RawVideo:
    frames: np.ndarray   # (T, H, W, 3) float32 in [0, 1]
    subject_id: int
    class_id: int
    bboxes: np.ndarray   # (T, 4) float32 rows (cx, cy, w, h)


@dataclass
class SyntheticDataset:
    videos: List[RawVideo]
    corpus: Corpus


_ORIENTS = [("horizontal", 0.0), ("diagonal", 45.0), ("vertical", 90.0),
            ("oblique", 135.0)]
_FREQS = [("coarse", 3.0), ("medium", 5.0), ("fine", 8.0), ("dense", 12.0)]
_MOTIONS = [("drifting left", (-6.0, 0.0)), ("drifting right", (6.0, 0.0)),
            ("rising slowly", (0.0, -6.0)), ("descending slowly", (0.0, 6.0)),
            ("circling around", (4.5, 4.5))]
_CODEWORDS = ["amber", "basalt", "cobalt", "dune", "ember", "fjord", "garnet",
              "harbor", "indigo", "juniper", "krill", "lumen", "mesa", "nimbus",
              "onyx", "prism", "quartz", "russet", "sable", "topaz"]

_S_TEMPLATE = (
    "A person stays centered in the scene while a softly lit textured backdrop "
    "fills the frame. The camera does not move and the lighting remains even. "
    "The backdrop pattern shows {orient} stripes and the overall motion stays "
    "smooth and steady from the first frame to the last."
)
_H_TEMPLATE = "A person is doing a {level2}, which is part of {level1}."
_D_TEMPLATE = (
    "Distinguished by a {freq} {orient} grating with the bright spot {motion}; "
    "the unique marker is the {code} tile."
)


def _class_factors(index: int) -> dict:
    orient = _ORIENTS[index % len(_ORIENTS)]
    freq = _FREQS[(index // len(_ORIENTS)) % len(_FREQS)]
    motion = _MOTIONS[index % len(_MOTIONS)]
    code = _CODEWORDS[index % len(_CODEWORDS)]
    return {"orient": orient, "freq": freq, "motion": motion, "code": code}


def synthetic_corpus(n_classes: int) -> Corpus:
    entries = []
    for c in range(n_classes):
        f = _class_factors(c)
        orient_w, freq_w, motion_w, code = f["orient"][0], f["freq"][0], f["motion"][0], f["code"]
        level1 = f"{motion_w} scenes"
        level2 = f"{orient_w} {freq_w} pattern activity"
        entries.append(ClassDescription(
            class_id=c,
            name=f"{code} {orient_w} {freq_w} pattern {motion_w}",
            level1=level1,
            level2=level2,
            h_text=_H_TEMPLATE.format(level1=level1, level2=level2),
            s_text=_S_TEMPLATE.format(orient=orient_w),
            d_text=_D_TEMPLATE.format(freq=freq_w, orient=orient_w,
                                      motion=motion_w, code=code),
            keywords=(orient_w, freq_w, motion_w, code),
        ))
    return Corpus(entries)


def _render_video(rng: np.random.Generator, class_index: int, subject_id: int,
                  n_frames: int, h: int, w: int, difficulty: float) -> RawVideo:
    f = _class_factors(class_index)
    theta = math.radians(f["orient"][1])
    freq = f["freq"][1]
    vx, vy = f["motion"][1]

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    scale = min(h, w)
    # phase jitter stays well under a cycle so class centroids survive averaging
    phase = rng.uniform(-0.3, 0.3) + 0.2 * math.sin(subject_id * 1.7)
    grating = np.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta))
                     / scale + phase)
    confuser = np.sin(2 * math.pi * 6.0 * (xx * math.cos(0.6) + yy * math.sin(0.6))
                      / scale + phase)
    texture = (1.0 - difficulty) * grating + difficulty * confuser

    brightness = 0.45 + 0.03 * math.sin(subject_id * 2.1) + rng.uniform(-0.015, 0.015)
    contrast = 1.0 + 0.1 * math.sin(subject_id * 2.39996)
    sigma = 18.0

    cx = w / 2 + rng.uniform(-20, 20)
    cy = h / 2 + rng.uniform(-20, 20)
    frames = np.empty((n_frames, h, w, 3), dtype=np.float32)
    bboxes = np.empty((n_frames, 4), dtype=np.float32)
    chan_gain = np.array([1.0, 0.92, 0.84], dtype=np.float32)
    for t in range(n_frames):
        bx = float(np.clip(cx + vx * t, 40, w - 40))
        by = float(np.clip(cy + vy * t, 40, h - 40))
        if f["motion"][0] == "circling around":
            bx = float(np.clip(cx + 30 * math.cos(0.5 * t), 40, w - 40))
            by = float(np.clip(cy + 30 * math.sin(0.5 * t), 40, h - 40))
        blob = np.exp(-(((xx - bx) ** 2 + (yy - by) ** 2) / (2 * sigma ** 2)))
        plane = brightness + contrast * (0.18 * texture + 0.3 * blob)
        noise = rng.normal(0, 0.02, size=(h, w)).astype(np.float32)
        frame = (plane + noise)[:, :, None] * chan_gain[None, None, :]
        frames[t] = np.clip(frame, 0.0, 1.0)
        bboxes[t] = (bx, by, 120.0, 160.0)
    return RawVideo(frames, subject_id, class_index, bboxes)


def generate_synthetic(n_classes: int, n_subjects: int, samples_per_class: int,
                       seed: int, difficulty: float = 0.0,
                       n_frames: int = 14, frame_hw: Tuple[int, int] = (CROP, CROP),
                       ) -> SyntheticDataset:
    """Render the synthetic dataset and its matching corpus.

    ``samples_per_class`` is the total per class; subjects 1..n_subjects
    are assigned round-robin. Identical arguments reproduce the dataset
    byte for byte.
    """
    if n_classes < 2:
        raise InputError("need at least 2 classes")
    rng = np.random.default_rng(np.random.PCG64(seed))
    h, w = frame_hw
    videos = []
    for c in range(n_classes):
        for s in range(samples_per_class):
            subject = 1 + (s % n_subjects)
            videos.append(_render_video(rng, c, subject, n_frames, h, w, difficulty))
    return SyntheticDataset(videos, synthetic_corpus(n_classes))


def nearest_centroid_accuracy(train: Sequence[Tuple[np.ndarray, int]],
                              test: Sequence[Tuple[np.ndarray, int]],
                              pool: int = 8) -> float:
    """Built-in oracle: nearest class centroid over pooled time-mean pixels.

    Each item is (frames (K, 224, 224, 3), class_index). Serves as the
    difficulty gauge for the synthetic sets.
    """
    def feat(frames):
        m = frames.mean(axis=0)
        hh, ww = m.shape[0] // pool, m.shape[1] // pool
        return m[:hh * pool, :ww * pool].reshape(hh, pool, ww, pool, 3).mean(
            axis=(1, 3)).reshape(-1)

    by_class: Dict[int, list] = {}
    for frames, label in train:
        by_class.setdefault(label, []).append(feat(frames))
    centroids = {c: np.mean(v, axis=0) for c, v in by_class.items()}
    labels = sorted(centroids)
    mat = np.stack([centroids[c] for c in labels])
    correct = 0
    for frames, label in test:
        d = ((mat - feat(frames)[None, :]) ** 2).sum(axis=1)
        if labels[int(np.argmin(d))] == label:
            correct += 1
    return correct / max(len(test), 1)


# ---------------------------------------------------------------------------
# manifests on disk


def write_raw_dataset(dataset: SyntheticDataset, out_dir: str) -> str:
    """Write raw videos as KVT1 + manifest.jsonl + corpus.json; returns manifest path."""
    os.makedirs(os.path.join(out_dir, "videos"), exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w") as mf:
        for i, v in enumerate(dataset.videos):
            rel = os.path.join("videos", f"video_{i:05d}.kvt")
            tensorio.write_kvt(os.path.join(out_dir, rel), v.frames)
            row = {
                "tensor_path": rel,
                "subject_id": v.subject_id,
                "class_id": v.class_id,
                "num_frames": int(v.frames.shape[0]),
                "bboxes": [[float(x) for x in b] for b in v.bboxes],
            }
            mf.write(json.dumps(row) + "\n")
    dataset.corpus.save(os.path.join(out_dir, "corpus.json"))
    return manifest


def read_manifest(path: str) -> List[dict]:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def preprocess_manifest(manifest_path: str, k: int, out_dir: str,
                        jobs: int = 1) -> str:
    """Sample+crop every raw video to (K, 224, 224, 3); returns new manifest path."""
    rows = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)

    def work(item):
        i, row = item
        frames = tensorio.read_kvt(os.path.join(base, row["tensor_path"]))
        bboxes = np.asarray(row["bboxes"], dtype=np.float32)
        sampled = preprocess_frames(frames, bboxes, k)
        rel = os.path.join("samples", f"sample_{i:05d}.kvt")
        tensorio.write_kvt(os.path.join(out_dir, rel), sampled)
        return {
            "tensor_path": rel,
            "subject_id": row["subject_id"],
            "class_id": row["class_id"],
            "num_frames": k,
        }

    items = list(enumerate(rows))
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            new_rows = list(pool.map(work, items))
    else:
        new_rows = [work(it) for it in items]

    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w") as f:
        for row in new_rows:
            f.write(json.dumps(row) + "\n")
    return manifest
