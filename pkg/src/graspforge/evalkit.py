"""Success/SPL metrics, the closed-loop kinematic benchmark, scaling harness.

Evaluation runs in the same kinematic scene model the planner uses: no
renderer, policies consume low-dimensional observations. An attempt is
logged at every gripper closure; success means the target rises at least
15 cm within three attempts, and scenes are never reset mid-trial.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .errors import EmptyInput
from .geometry import Pose
from .grasp import Contact, GripperSpec, _ray_triangle_hits, force_closure
from .pagtoy.model import PagModel, ToyObservation, sample_actions
from .pagtoy.train import (
    DEFAULT_MAX_OBJECTS,
    DEFAULT_NOISE_DIM,
    DEFAULT_NOISE_SCALE,
    build_training_samples,
    train,
)
from .planner import (
    GRIPPER_CLOSED,
    GRIPPER_OPEN,
    MIN_LIFT,
    ActionChunk,
    Episode,
    apply_delta,
    to_delta_actions,
)
from .scene import SceneLayout

logger = logging.getLogger(__name__)

ATTEMPT_LIMIT = 3


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class TrialResult:
    trial_id: int
    method_id: str
    success: bool
    path_length: int  # executed 10 Hz action steps
    attempts: int

    def __post_init__(self) -> None:
        if self.attempts < 0:
            raise ValueError("attempts must be >= 0")
        if self.path_length < 0:
            raise ValueError("path_length must be >= 0")


def success_rate(results: list[TrialResult], attempt_limit: int = ATTEMPT_LIMIT) -> float:
    """Mean success with the <=3-attempt rule enforced.

    A result flagged successful with more attempts than the limit is
    counted as a failure and logged.
    """
    if not results:
        raise EmptyInput("no trial results")
    total = 0.0
    for r in results:
        ok = r.success
        if ok and r.attempts > attempt_limit:
            logger.warning(
                "trial %s (%s): success with %d attempts exceeds the limit %d; counted as failure",
                r.trial_id, r.method_id, r.attempts, attempt_limit,
            )
            ok = False
        total += 1.0 if ok else 0.0
    return total / len(results)


@dataclass
class TrialSet:
    """Trials grouped by trial_id across methods."""

    by_trial: dict[int, dict[str, TrialResult]]
    methods: list[str]

    @classmethod
    def from_results(cls, results: list[TrialResult]) -> "TrialSet":
        by_trial: dict[int, dict[str, TrialResult]] = {}
        methods: list[str] = []
        for r in results:
            slot = by_trial.setdefault(r.trial_id, {})
            if r.method_id in slot:
                raise ValueError(
                    f"method {r.method_id!r} appears twice in trial {r.trial_id}"
                )
            slot[r.method_id] = r
            if r.method_id not in methods:
                methods.append(r.method_id)
        return cls(by_trial=by_trial, methods=methods)

    @property
    def n_trials(self) -> int:
        return len(self.by_trial)


def spl(trial_set: TrialSet, attempt_limit: int = ATTEMPT_LIMIT) -> dict[str, float]:
    """Success weighted by Path Length, per method.

    l_i is the smallest step count among methods that succeeded in trial
    i; trials nobody solved contribute zero to every method.
    """
    totals = {m: 0.0 for m in trial_set.methods}
    n = trial_set.n_trials
    if n == 0:
        return totals
    for trial in trial_set.by_trial.values():
        winners = [
            r.path_length
            for r in trial.values()
            if r.success and r.attempts <= attempt_limit
        ]
        if not winners:
            continue
        shortest = min(winners)
        for method, r in trial.items():
            if r.success and r.attempts <= attempt_limit:
                totals[method] += shortest / max(r.path_length, shortest)
    return {m: v / n for m, v in totals.items()}


# ---------------------------------------------------------------------------
# kinematic closed-loop environment

@dataclass(frozen=True)
class EvalScene:
    """One benchmark trial: a layout plus the expert episode planned on it."""

    layout: SceneLayout
    target_id: str
    episode: Episode


def scene_features(
    layout: SceneLayout,
    target_id: str,
    target_center: np.ndarray,
    max_objects: int = DEFAULT_MAX_OBJECTS,
    noise_dim: int = DEFAULT_NOISE_DIM,
    noise_scale: float = DEFAULT_NOISE_SCALE,
) -> np.ndarray:
    """Live-scene counterpart of pagtoy.train.episode_features."""
    centers = np.zeros((max_objects, 3))
    one_hot = np.zeros(max_objects)
    for i, placement in enumerate(layout.placements[:max_objects]):
        centers[i] = target_center if placement.instance_id == target_id else placement.sphere_center
        if placement.instance_id == target_id:
            one_hot[i] = 1.0
    noise_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([layout.randomization_seed & (2**63 - 1), 7]))
    )
    noise = noise_rng.normal(0.0, noise_scale, size=noise_dim)
    return np.concatenate([centers.ravel(), one_hot, noise])


class KinematicEnv:
    """Rigid-attachment grasp world: the policy moves a free-flying gripper.

    At a closure the closing line through the gripper origin is probed
    against the target mesh; a contact pair inside the finger span passing
    force closure attaches the target rigidly. Reopening drops it back
    onto the table.
    """

    def __init__(
        self,
        scene: EvalScene,
        gripper: GripperSpec,
        mu: float,
        max_objects: int = DEFAULT_MAX_OBJECTS,
        noise_dim: int = DEFAULT_NOISE_DIM,
        noise_scale: float = DEFAULT_NOISE_SCALE,
    ) -> None:
        self.scene = scene
        self.gripper = gripper
        self.mu = mu
        self._feat_args = (max_objects, noise_dim, noise_scale)
        placement = scene.layout.placement(scene.target_id)
        self.target_vertices = placement.posed_vertices()
        self.target_triangles = placement.mesh.triangles
        self.initial_height = float(self.target_vertices[:, 2].min())
        self.ee = scene.episode.steps[0].pose
        self.prev_ee = self.ee
        self.gripper_state = GRIPPER_OPEN
        self.attached = False
        self.attach_pose: Pose | None = None  # ee pose at attachment
        self.attempts = 0
        self.executed_steps = 0

    # -- observation ---------------------------------------------------------

    def observation(self) -> ToyObservation:
        center = self.target_vertices.mean(axis=0)
        features = scene_features(
            self.scene.layout, self.scene.target_id, center, *self._feat_args
        )
        proprio = np.concatenate(
            [self.prev_ee.position, self.prev_ee.orientation, self.ee.position, self.ee.orientation]
        )
        return ToyObservation(features=features, proprio=proprio)

    # -- dynamics -------------------------------------------------------------

    def _closing_line_contacts(self) -> tuple[Contact, Contact] | None:
        axis = geometry.mat_from_quat(self.ee.orientation)[:, 0]
        center = self.ee.position
        half_span = self.gripper.max_width / 2.0 + 1e-9
        pair = []
        from .assets import Mesh as _Mesh  # normals on the current vertex set

        mesh = _Mesh(self.target_vertices, self.target_triangles)
        normals = mesh.face_normals()
        for direction in (axis, -axis):
            hits = _ray_triangle_hits(center, direction, self.target_vertices, self.target_triangles)
            hits[hits < 1e-9] = -np.inf
            hits[hits > half_span] = -np.inf
            tri = int(np.argmax(hits))
            t = hits[tri]
            if not np.isfinite(t):
                return None
            pair.append(Contact(center + t * direction, -normals[tri]))
        if np.linalg.norm(pair[0].point - pair[1].point) < 1e-9:
            return None
        return pair[0], pair[1]

    def _try_attach(self) -> bool:
        contacts = self._closing_line_contacts()
        if contacts is None:
            return False
        if not force_closure(contacts[0], contacts[1], self.mu):
            return False
        self.attached = True
        self.attach_pose = self.ee
        return True

    def _drop_target(self) -> None:
        self.attached = False
        self.attach_pose = None
        drop = self.target_vertices[:, 2].min() - self.scene.layout.table_height
        self.target_vertices = self.target_vertices - np.array([0.0, 0.0, drop])

    def step(self, delta) -> None:
        self.prev_ee = self.ee
        new_ee = apply_delta(self.ee, delta)
        if self.attached:
            # rigid carry: target follows the gripper motion
            motion = new_ee.compose(self.ee.inverse())
            self.target_vertices = motion.transform(self.target_vertices)
        self.ee = new_ee
        if delta.gripper == GRIPPER_CLOSED and self.gripper_state == GRIPPER_OPEN:
            self.attempts += 1
            self._try_attach()
        elif delta.gripper == GRIPPER_OPEN and self.gripper_state == GRIPPER_CLOSED:
            if self.attached:
                self._drop_target()
        self.gripper_state = delta.gripper
        self.executed_steps += 1

    def target_rise(self) -> float:
        return float(self.target_vertices[:, 2].min() - self.initial_height)

    def succeeded(self) -> bool:
        return self.attached and self.target_rise() >= MIN_LIFT


# ---------------------------------------------------------------------------
# policies

class OraclePolicy:
    """Replays the planner's expert trajectory for each scene."""

    method_id = "oracle"

    def begin_trial(self, scene: EvalScene, rng: np.random.Generator) -> None:
        self._chunks = to_delta_actions(scene.episode.steps)
        self._next = 0

    def sample_actions(self, observation: ToyObservation, rng: np.random.Generator) -> ActionChunk:
        chunk = self._chunks[min(self._next, len(self._chunks) - 1)]
        self._next += 1
        return chunk


class RandomPolicy:
    """Uniform small deltas with occasional random closure; a sanity floor."""

    method_id = "random"

    def __init__(self, step_scale: float = 0.02, close_prob: float = 0.05) -> None:
        self.step_scale = step_scale
        self.close_prob = close_prob

    def begin_trial(self, scene: EvalScene, rng: np.random.Generator) -> None:
        pass

    def sample_actions(self, observation: ToyObservation, rng: np.random.Generator) -> ActionChunk:
        flat = np.zeros(28)
        for i in range(4):
            flat[i * 7 : i * 7 + 3] = rng.uniform(-self.step_scale, self.step_scale, 3)
            flat[i * 7 + 6] = 1.0 if rng.random() < self.close_prob else 0.0
        return ActionChunk.from_flat(flat)


class PagPolicy:
    """Closed-loop wrapper over a trained toy model."""

    def __init__(self, model: PagModel, method_id: str = "pag", integration_steps: int = 10) -> None:
        self.model = model
        self.method_id = method_id
        self.integration_steps = integration_steps

    def begin_trial(self, scene: EvalScene, rng: np.random.Generator) -> None:
        pass

    def sample_actions(self, observation: ToyObservation, rng: np.random.Generator) -> ActionChunk:
        return sample_actions(self.model, observation, rng, self.integration_steps)


# ---------------------------------------------------------------------------
# benchmark loop

def run_benchmark(
    policy,
    scenes: list[EvalScene],
    attempt_limit: int = ATTEMPT_LIMIT,
    max_steps: int = 400,
    mu: float = 0.15,
    gripper: GripperSpec | None = None,
    seed: int = 0,
    method_id: str | None = None,
) -> list[TrialResult]:
    """Closed-loop evaluation; one TrialResult per scene, never reset mid-trial."""
    if gripper is None:
        gripper = GripperSpec()
    method = method_id or getattr(policy, "method_id", "policy")
    results = []
    for trial_id, scene in enumerate(scenes):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, trial_id])))
        env = KinematicEnv(scene, gripper, mu)
        if hasattr(policy, "begin_trial"):
            policy.begin_trial(scene, rng)
        success = False
        success_steps = 0
        while env.executed_steps < max_steps:
            chunk = policy.sample_actions(env.observation(), rng)
            for delta in chunk.deltas:
                env.step(delta)
                if env.succeeded():
                    success = True
                    success_steps = env.executed_steps
                    break
                if env.attempts >= attempt_limit and not env.attached:
                    break
            if success or (env.attempts >= attempt_limit and not env.attached):
                break
        results.append(
            TrialResult(
                trial_id=trial_id,
                method_id=method,
                success=success,
                path_length=success_steps if success else env.executed_steps,
                attempts=env.attempts,
            )
        )
    return results


# ---------------------------------------------------------------------------
# scaling harness

@dataclass
class ScalingRunConfig:
    vocab: int = 256
    train_steps: int = 800
    learning_rate: float = 0.05
    batch_size: int = 8
    mix_ratio: float = 0.5
    samples_per_episode: int = 4
    embed_dim: int = 16
    hidden_dim: int = 32
    vf_hidden: int = 64
    seed: int = 0
    max_steps: int = 400
    attempt_limit: int = ATTEMPT_LIMIT
    mu: float = 0.15
    integration_steps: int = 10
    axis: str = "frames"  # frames | categories | instances


def _episode_frames(ep: Episode) -> int:
    return len(ep.steps)


def _subsample(episodes: list[Episode], budget: int, axis: str) -> list[Episode]:
    if axis == "frames":
        out = []
        frames = 0
        for ep in episodes:
            if frames >= budget:
                break
            out.append(ep)
            frames += _episode_frames(ep)
        return out
    if axis == "categories":
        cats = sorted({ep.layout.placement(ep.target_id).category for ep in episodes})
        keep = set(cats[:budget])
        return [ep for ep in episodes if ep.layout.placement(ep.target_id).category in keep]
    if axis == "instances":
        per_cat: dict[str, set[str]] = {}
        out = []
        for ep in episodes:
            placement = ep.layout.placement(ep.target_id)
            base = placement.instance_id.split("#")[0]
            seen = per_cat.setdefault(placement.category, set())
            if base in seen or len(seen) < budget:
                seen.add(base)
                out.append(ep)
        return out
    raise ValueError(f"unknown scaling axis {axis!r}")


@dataclass(frozen=True)
class ScalingRow:
    budget: int
    episodes_used: int
    frames_used: int
    success_rate: float
    spl: float


def scaling_report(
    frame_budgets: list[int],
    episodes: list[Episode],
    eval_scenes: list[EvalScene],
    config: ScalingRunConfig,
) -> list[ScalingRow]:
    """Train a fresh model per budget and evaluate on a shared held-out set.

    SPL's shortest paths are computed across the budget-indexed methods,
    so rows are mutually comparable.
    """
    if list(frame_budgets) != sorted(frame_budgets):
        raise ValueError("budgets must be ascending")
    from .pagtoy.model import ModelConfig, PagModel
    from .pagtoy.train import feature_dim

    all_results: list[TrialResult] = []
    per_budget: dict[int, tuple[int, int, list[TrialResult]]] = {}
    for budget in frame_budgets:
        subset = _subsample(episodes, budget, config.axis)
        if not subset:
            raise ValueError(f"budget {budget} selects no episodes")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, budget])))
        synthetic, grounding = build_training_samples(
            subset, rng, vocab=config.vocab, samples_per_episode=config.samples_per_episode
        )
        model_cfg = ModelConfig(
            feature_dim=feature_dim(),
            vocab=config.vocab,
            embed_dim=config.embed_dim,
            hidden_dim=config.hidden_dim,
            vf_hidden=config.vf_hidden,
        )
        model = PagModel.create(model_cfg, rng)
        result = train(
            model,
            synthetic,
            grounding,
            steps=config.train_steps,
            learning_rate=config.learning_rate,
            rng=rng,
            batch_size=config.batch_size,
            mix_ratio=config.mix_ratio,
        )
        policy = PagPolicy(result.model, method_id=f"budget_{budget}",
                           integration_steps=config.integration_steps)
        trial_results = run_benchmark(
            policy,
            eval_scenes,
            attempt_limit=config.attempt_limit,
            max_steps=config.max_steps,
            mu=config.mu,
            seed=config.seed,
        )
        frames_used = sum(_episode_frames(ep) for ep in subset)
        per_budget[budget] = (len(subset), frames_used, trial_results)
        all_results.extend(trial_results)
    spl_by_method = spl(TrialSet.from_results(all_results))
    rows = []
    for budget in frame_budgets:
        n_eps, frames_used, trial_results = per_budget[budget]
        rows.append(
            ScalingRow(
                budget=budget,
                episodes_used=n_eps,
                frames_used=frames_used,
                success_rate=success_rate(trial_results),
                spl=spl_by_method[f"budget_{budget}"],
            )
        )
    return rows


# ---------------------------------------------------------------------------
# CSV outputs

def write_trials_csv(path: str | Path, results: list[TrialResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial_id", "method", "success", "path_length", "attempts"])
        for r in results:
            writer.writerow([r.trial_id, r.method_id, int(r.success), r.path_length, r.attempts])


def write_spl_csv(path: str | Path, spl_by_method: dict[str, float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "spl"])
        for method, value in spl_by_method.items():
            writer.writerow([method, f"{value:.6f}"])


def write_scaling_csv(path: str | Path, rows: list[ScalingRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["budget", "episodes", "frames", "success_rate", "spl"])
        for row in rows:
            writer.writerow(
                [row.budget, row.episodes_used, row.frames_used,
                 f"{row.success_rate:.6f}", f"{row.spl:.6f}"]
            )
