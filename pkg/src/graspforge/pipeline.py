"""Parallel episode generation with per-worker asset caches and shard writers.

Episode content is a pure function of (config, global_seed, episode
index): each episode derives its RNG stream from SeedSequence([seed,
index]), so the produced payload set is identical for any worker count or
scheduling.
"""
from __future__ import annotations

import multiprocessing as mp
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assets import AssetLibrary
from .config import PipelineConfig, load_asset_entries
from .dataset import LoadReport, load_all, open_writer
from .errors import IoError, NoGraspFound, NotVisible, PlanRejected
from .grasp import GripperSpec, force_closure, grasp_collision_free, sample_antipodal
from .planner import (
    GRIPPER_CLOSED,
    GRIPPER_OPEN,
    MIN_LIFT,
    Episode,
    PlannerParams,
    plan_grasp_trajectory,
    validate_lift,
)
from .scene import generate_layout, project_mesh_bbox, randomize_cameras

DT_SPACING_TOL = 1e-9


def episode_rng(global_seed: int, episode_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([global_seed, episode_index])))


def _planner_params(config: PipelineConfig) -> PlannerParams:
    return PlannerParams(
        approach_duration=config.approach_duration,
        close_duration=config.close_duration,
        lift_duration=config.lift_duration,
        duration_jitter=config.duration_jitter,
        lift_height=config.lift_height,
        v_max=config.v_max,
        start_height=config.start_height,
    )


def build_episode(
    config: PipelineConfig, library: AssetLibrary, episode_index: int
) -> tuple[Episode | None, str | None]:
    """One pipeline pass: layout -> grasp sample -> plan -> labels -> validate.

    Returns (episode, None) or (None, skip_cause).
    """
    rng = episode_rng(config.global_seed, episode_index)
    gripper = GripperSpec()
    n_objects = int(rng.integers(config.objects_min, config.objects_max + 1))
    layout = generate_layout(library, n_objects, rng)
    if not layout.placements:
        return None, "layout_empty"
    target = layout.placements[int(rng.integers(len(layout.placements)))]
    posed = target.posed_mesh()
    try:
        grasps = sample_antipodal(posed, gripper, config.mu, config.grasp_candidates, rng)
    except NoGraspFound:
        return None, "no_grasp"
    free = [g for g in grasps if grasp_collision_free(g, layout, target.instance_id, gripper)]
    if not free:
        return None, "grasp_collision"
    params = _planner_params(config)
    steps = None
    grasp = None
    for _ in range(config.plan_attempts):
        grasp = free[int(rng.integers(len(free)))]
        try:
            steps = plan_grasp_trajectory(layout, target.instance_id, grasp, gripper, rng, params)
            break
        except PlanRejected:
            continue
    if steps is None:
        return None, "plan_rejected"
    rig = randomize_cameras(rng)
    closure = next(i for i, s in enumerate(steps) if s.gripper == GRIPPER_CLOSED)
    try:
        static_boxes = tuple(project_mesh_bbox(posed.vertices, rig))
    except NotVisible:
        return None, "not_visible"
    closure_inv = steps[closure].pose.inverse()
    bbox_labels = []
    for i, step in enumerate(steps):
        if i <= closure:
            bbox_labels.append(static_boxes)
            continue
        motion = step.pose.compose(closure_inv)
        try:
            bbox_labels.append(tuple(project_mesh_bbox(motion.transform(posed.vertices), rig)))
        except NotVisible:
            bbox_labels.append(())
    episode = Episode(
        instruction=f"pick up the {target.category}",
        layout=layout,
        rig=rig,
        target_id=target.instance_id,
        steps=tuple(steps),
        grasp_label=grasp,
        bbox_labels=tuple(bbox_labels),
    )
    validate_lift(episode, config.mu)
    return episode, None


@dataclass
class WorkerSummary:
    worker_id: int
    shard_uuid: str
    written: int
    skipped: Counter = field(default_factory=Counter)
    mesh_loads: int = 0


@dataclass
class GenerationSummary:
    episodes_written: int
    skipped: dict[str, int]
    wall_time: float
    workers: list[WorkerSummary]

    @property
    def throughput(self) -> float:
        return self.episodes_written / self.wall_time if self.wall_time > 0 else 0.0


def _run_worker(
    config: PipelineConfig, worker_id: int, episode_indices: list[int]
) -> WorkerSummary:
    entries = load_asset_entries(config.assets_dir)
    library = AssetLibrary.from_entries(
        entries, simplify_target=config.simplify_target, scale_buckets=config.scale_buckets
    )
    writer = open_writer(config.output_root, worker_id, queue_size=config.queue_size)
    summary = WorkerSummary(worker_id=worker_id, shard_uuid=writer.shard_uuid, written=0)
    for index in episode_indices:
        episode, cause = build_episode(config, library, index)
        if episode is None:
            summary.skipped[cause] += 1
        else:
            writer.write(episode)
            summary.written += 1
    writer.close()
    summary.mesh_loads = library.load_count
    return summary


def _worker_entry(config, worker_id, indices, out_queue) -> None:
    try:
        out_queue.put(_run_worker(config, worker_id, indices))
    except Exception as exc:  # propagated to the parent
        out_queue.put(exc)


def generate(config: PipelineConfig) -> GenerationSummary:
    """Spawn n_workers, each owning one shard writer and one asset cache."""
    root = Path(config.output_root)
    root.mkdir(parents=True, exist_ok=True)
    indices = list(range(config.n_episodes))
    stripes = [indices[w :: config.n_workers] for w in range(config.n_workers)]
    start = time.perf_counter()
    summaries: list[WorkerSummary] = []
    if config.n_workers == 1:
        summaries.append(_run_worker(config, 0, stripes[0]))
    else:
        ctx = mp.get_context("fork")
        queue = ctx.Queue()
        procs = [
            ctx.Process(target=_worker_entry, args=(config, w, stripes[w], queue))
            for w in range(config.n_workers)
        ]
        for p in procs:
            p.start()
        for _ in procs:
            result = queue.get()
            if isinstance(result, Exception):
                for p in procs:
                    p.terminate()
                raise IoError(f"worker failed: {result}") from result
            summaries.append(result)
        for p in procs:
            p.join()
    wall = time.perf_counter() - start
    skipped: Counter = Counter()
    for s in summaries:
        skipped.update(s.skipped)
    return GenerationSummary(
        episodes_written=sum(s.written for s in summaries),
        skipped=dict(skipped),
        wall_time=wall,
        workers=sorted(summaries, key=lambda s: s.worker_id),
    )


# ---------------------------------------------------------------------------
# store validation

@dataclass
class ValidationReport:
    load: LoadReport
    episodes_checked: int
    violations: dict[str, int]

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())


def validate_store(root: str | Path, mu: float = 0.15) -> ValidationReport:
    """Reload every episode and re-check the labeled invariants."""
    episodes, report = load_all(root)
    gripper = GripperSpec()
    violations: Counter = Counter()
    for ep in episodes:
        if not 60 <= len(ep.steps) <= 140:
            violations["step_count"] += 1
        times = np.array([s.t for s in ep.steps])
        if len(times) >= 2 and np.abs(np.diff(times) - 0.1).max() > DT_SPACING_TOL:
            violations["timestamps"] += 1
        states = [s.gripper for s in ep.steps]
        transitions = sum(
            1 for a, b in zip(states[:-1], states[1:]) if a == GRIPPER_OPEN and b == GRIPPER_CLOSED
        )
        if transitions != 1:
            violations["closure"] += 1
        if ep.success:
            closure = ep.closure_index()
            rise = ep.steps[-1].pose.position[2] - ep.steps[closure].pose.position[2]
            if rise < MIN_LIFT - 1e-9:
                violations["lift"] += 1
        if not force_closure(ep.grasp_label.contacts[0], ep.grasp_label.contacts[1], mu):
            violations["force_closure"] += 1
        if ep.grasp_label.width > gripper.max_width + 1e-9:
            violations["width"] += 1
        for step_boxes in ep.bbox_labels:
            for box in step_boxes:
                _, _, _, _, w, h = ep.rig.front.intrinsics
                if not (0 <= box.x_min < box.x_max <= w and 0 <= box.y_min < box.y_max <= h):
                    violations["bbox"] += 1
    return ValidationReport(
        load=report, episodes_checked=len(episodes), violations=dict(violations)
    )
