"""Sample construction, the SGD co-training loop, and checkpoint I/O."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..planner import CHUNK_LEN, Episode, delta_sequence
from ..scene import SceneLayout
from .model import (
    FlowBatch,
    ModelConfig,
    PagModel,
    ToyObservation,
    TrainingSample,
    loss_terms_and_grad,
)
from .tokens import GraspTokenBounds, tokenize_bbox, tokenize_grasp

_CHECKPOINT_MAGIC = b"GFPAGCKP"
_CHECKPOINT_VERSION = 1

DEFAULT_MAX_OBJECTS = 6
DEFAULT_NOISE_DIM = 4
DEFAULT_NOISE_SCALE = 0.1


def feature_dim(max_objects: int = DEFAULT_MAX_OBJECTS, noise_dim: int = DEFAULT_NOISE_DIM) -> int:
    return 4 * max_objects + noise_dim


def episode_features(
    layout: SceneLayout,
    target_id: str,
    max_objects: int = DEFAULT_MAX_OBJECTS,
    noise_dim: int = DEFAULT_NOISE_DIM,
    noise_scale: float = DEFAULT_NOISE_SCALE,
) -> np.ndarray:
    """Fixed-length scene features: object centers, target one-hot, nuisance noise.

    The noise term is seeded by the layout's randomization seed, standing in
    for the visual randomization a renderer would produce.
    """
    centers = np.zeros((max_objects, 3))
    one_hot = np.zeros(max_objects)
    for i, placement in enumerate(layout.placements[:max_objects]):
        centers[i] = placement.sphere_center
        if placement.instance_id == target_id:
            one_hot[i] = 1.0
    noise_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([layout.randomization_seed & (2**63 - 1), 7]))
    )
    noise = noise_rng.normal(0.0, noise_scale, size=noise_dim)
    return np.concatenate([centers.ravel(), one_hot, noise])


def proprio_at(episode: Episode, step_index: int) -> np.ndarray:
    """Last two end-effector poses flattened (position + quaternion, 14 values)."""
    prev = episode.steps[max(step_index - 1, 0)].pose
    cur = episode.steps[step_index].pose
    return np.concatenate([prev.position, prev.orientation, cur.position, cur.orientation])


def _chunk_at(deltas, k: int) -> np.ndarray:
    block = list(deltas[k : k + CHUNK_LEN])
    while len(block) < CHUNK_LEN:
        block.append(block[-1])
    return np.concatenate([d.flat() for d in block])


def build_training_samples(
    episodes: list[Episode],
    rng: np.random.Generator,
    vocab: int,
    bounds: GraspTokenBounds | None = None,
    samples_per_episode: int = 4,
    max_objects: int = DEFAULT_MAX_OBJECTS,
    noise_dim: int = DEFAULT_NOISE_DIM,
    noise_scale: float = DEFAULT_NOISE_SCALE,
) -> tuple[list[TrainingSample], list[TrainingSample]]:
    """Build (synthetic, grounding) pools from episodes.

    Synthetic samples carry bbox + grasp tokens and the action chunk at a
    step; grounding samples are the same observations with only bbox
    supervision, standing in for web grounding data.
    """
    if bounds is None:
        bounds = GraspTokenBounds.default()
    synthetic: list[TrainingSample] = []
    grounding: list[TrainingSample] = []
    for ep in episodes:
        usable = [i for i, boxes in enumerate(ep.bbox_labels) if len(boxes) == 2]
        if not usable or len(ep.steps) < 2:
            continue
        try:
            grasp_toks = tokenize_grasp(ep.grasp_label, bounds, vocab)
        except Exception:
            continue  # out-of-bounds grasp labels are skipped, not clamped
        deltas = delta_sequence(ep.steps)
        features = episode_features(ep.layout, ep.target_id, max_objects, noise_dim, noise_scale)
        picks = {usable[0]}
        extra = [i for i in usable if i < len(deltas)]
        for _ in range(max(samples_per_episode - 1, 0)):
            picks.add(extra[int(rng.integers(len(extra)))])
        for k in sorted(picks):
            obs = ToyObservation(features=features, proprio=proprio_at(ep, k))
            bbox_toks = tokenize_bbox(ep.bbox_labels[k], vocab=vocab)
            synthetic.append(
                TrainingSample(
                    observation=obs,
                    bbox_tokens=bbox_toks,
                    is_synthetic=True,
                    grasp_tokens=grasp_toks,
                    action=_chunk_at(deltas, min(k, len(deltas) - 1)),
                )
            )
            grounding.append(
                TrainingSample(observation=obs, bbox_tokens=bbox_toks, is_synthetic=False)
            )
    return synthetic, grounding


@dataclass
class TrainResult:
    model: PagModel
    curve: list[tuple[int, float, float, float]]  # step, L_S2, L_S1, total
    counters: dict[str, int] = field(default_factory=dict)


def train(
    model: PagModel,
    synthetic: list[TrainingSample],
    grounding: list[TrainingSample],
    steps: int,
    learning_rate: float,
    rng: np.random.Generator,
    batch_size: int = 8,
    mix_ratio: float = 0.5,
) -> TrainResult:
    """Plain SGD over a mixed batch stream.

    mix_ratio is the grounding fraction of each batch (0.5 = 1:1). The
    loss curve records per-step batch means of L_S2, L_S1 and their sum.
    """
    if not synthetic:
        raise ValueError("need at least one synthetic sample")
    if mix_ratio > 0.0 and not grounding:
        raise ValueError("mix_ratio > 0 but no grounding samples")
    model = model.copy()
    n_grounding = int(round(batch_size * mix_ratio))
    n_synthetic = batch_size - n_grounding
    counters = {"grounding_samples": 0, "synthetic_samples": 0}
    curve: list[tuple[int, float, float, float]] = []
    for step in range(steps):
        batch: list[tuple[TrainingSample, FlowBatch | None]] = []
        for _ in range(n_synthetic):
            s = synthetic[int(rng.integers(len(synthetic)))]
            batch.append((s, FlowBatch.draw(model.scale_action(s.action), rng)))
        for _ in range(n_grounding):
            batch.append((grounding[int(rng.integers(len(grounding)))], None))
        total = model.zero_grads()
        s2_sum = 0.0
        s1_sum = 0.0
        for sample, fb in batch:
            s2, s1, g = loss_terms_and_grad(model, sample, fb)
            counters["synthetic_samples" if sample.is_synthetic else "grounding_samples"] += 1
            s2_sum += s2
            s1_sum += s1
            for k in total:
                total[k] += g[k]
        scale = learning_rate / batch_size
        for k in model.params:
            model.params[k] -= scale * total[k]
        curve.append((step, s2_sum / batch_size, s1_sum / batch_size, (s2_sum + s1_sum) / batch_size))
    return TrainResult(model=model, curve=curve, counters=counters)


def save_checkpoint(path: str | Path, model: PagModel) -> None:
    """Versioned header + named-section index + flat float64 parameter array."""
    names = sorted(model.params)
    sections = []
    offset = 0
    for name in names:
        arr = model.params[name]
        sections.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    meta = {
        "config": {k: getattr(model.config, k) for k in (
            "feature_dim", "proprio_dim", "vocab", "embed_dim", "hidden_dim",
            "vf_hidden", "n_bbox", "n_grasp", "chunk_len", "action_dim",
            "init_scale", "action_scale",
        )},
        "sections": sections,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    flat = np.concatenate([model.params[n].ravel() for n in names]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(flat.tobytes())


def load_checkpoint(path: str | Path) -> PagModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        version, meta_len = struct.unpack("<II", fh.read(8))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    config = ModelConfig(**meta["config"])
    params = {}
    for section in meta["sections"]:
        size = int(np.prod(section["shape"])) if section["shape"] else 1
        start = section["offset"]
        params[section["name"]] = flat[start : start + size].reshape(section["shape"]).copy()
    return PagModel(config, params)


def write_loss_csv(path: str | Path, curve: list[tuple[int, float, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_s2", "loss_s1", "total"])
        writer.writerows(curve)
