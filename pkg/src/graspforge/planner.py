"""Grasp-and-lift trajectory planning, lift validation, delta-action chunking.

The end effector is free-flying (no arm model): a single minimum-jerk
Cartesian segment runs from a randomized start pose to the grasp, the
gripper closes, and a vertical minimum-jerk lift follows. Actions are
10 Hz end-effector deltas grouped into chunks of 4.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .errors import PlanRejected, TooShort
from .geometry import Pose
from .grasp import Contact, GraspPose, GripperSpec, force_closure, gripper_scene_clearance
from .scene import BBox2D, CameraRig, SceneLayout

GRIPPER_OPEN = 0
GRIPPER_CLOSED = 1

DT = 0.1  # 10 Hz actions
CHUNK_LEN = 4
MIN_LIFT = 0.15
ACTION_DIM = 7  # dx dy dz + axis-angle rotation + gripper command

_POSE_EPS = 1e-6


@dataclass(frozen=True)
class TrajectoryStep:
    t: float
    pose: Pose
    gripper: int


@dataclass
class Episode:
    instruction: str
    layout: SceneLayout
    rig: CameraRig
    target_id: str
    steps: tuple[TrajectoryStep, ...]
    grasp_label: GraspPose
    bbox_labels: tuple[tuple[BBox2D, ...], ...]  # per step, per visible view
    success: bool = False

    def closure_index(self) -> int | None:
        """Index of the first closed step, or None if the gripper never closes."""
        for i, step in enumerate(self.steps):
            if step.gripper == GRIPPER_CLOSED:
                return i
        return None


@dataclass(frozen=True)
class DeltaAction:
    dpos: np.ndarray
    drot: np.ndarray  # axis-angle of the relative rotation, world frame
    gripper: int

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dpos, self.drot, [float(self.gripper)]])


@dataclass(frozen=True)
class ActionChunk:
    deltas: tuple[DeltaAction, DeltaAction, DeltaAction, DeltaAction]

    def __post_init__(self) -> None:
        if len(self.deltas) != CHUNK_LEN:
            raise ValueError("action chunks hold exactly 4 deltas")

    def flat(self) -> np.ndarray:
        return np.concatenate([d.flat() for d in self.deltas])

    @classmethod
    def from_flat(cls, vec: np.ndarray) -> "ActionChunk":
        vec = np.asarray(vec, dtype=np.float64).reshape(CHUNK_LEN, ACTION_DIM)
        return cls(
            tuple(
                DeltaAction(row[:3], row[3:6], GRIPPER_CLOSED if row[6] > 0.5 else GRIPPER_OPEN)
                for row in vec
            )
        )


@dataclass(frozen=True)
class PlannerParams:
    approach_duration: float = 6.0
    close_duration: float = 0.5
    lift_duration: float = 2.5
    duration_jitter: float = 0.2
    lift_height: float = 0.18
    v_max: float = 0.5
    start_box: tuple[float, float, float] = (0.3, 0.4, 0.2)
    start_height: float = 0.35  # box center above the table at the workspace center
    start_yaw_range: float = np.pi
    min_approach_distance: float = 0.12


def minimum_jerk_profile(n: int) -> np.ndarray:
    """Quintic time scaling s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5 on n+1 samples."""
    tau = np.linspace(0.0, 1.0, n + 1)
    return 10.0 * tau**3 - 15.0 * tau**4 + 6.0 * tau**5


def _top_down_orientation(yaw: float) -> np.ndarray:
    # gripper z (approach) points straight down; yaw spins about world z
    base = np.column_stack([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    return geometry.quat_from_mat(geometry.rotation_about_axis(np.array([0, 0, 1.0]), yaw) @ base)


def plan_grasp_trajectory(
    layout: SceneLayout,
    target_id: str,
    grasp: GraspPose,
    gripper: GripperSpec,
    rng: np.random.Generator,
    params: PlannerParams = PlannerParams(),
) -> list[TrajectoryStep]:
    """Plan start -> grasp -> close -> lift at 10 Hz.

    Raises PlanRejected when any step's gripper geometry comes closer than
    approach_clearance to the table or a non-target bounding sphere, or a
    per-step translation exceeds v_max * dt.
    """
    x0, y0, x1, y1 = layout.workspace
    center = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0, layout.table_height + params.start_height])
    half = np.asarray(params.start_box) / 2.0
    start_pos = None
    for _ in range(20):
        candidate = center + rng.uniform(-half, half)
        if np.linalg.norm(candidate - grasp.position) >= params.min_approach_distance:
            start_pos = candidate
            break
    if start_pos is None:
        raise PlanRejected("no start pose far enough from the grasp")
    start_quat = _top_down_orientation(rng.uniform(-params.start_yaw_range, params.start_yaw_range))

    jit = params.duration_jitter

    def steps_for(duration: float) -> int:
        return max(2, int(round(duration * (1.0 + rng.uniform(-jit, jit)) / DT)))

    n_approach = steps_for(params.approach_duration)
    n_close = steps_for(params.close_duration)
    n_lift = steps_for(params.lift_duration)

    poses: list[Pose] = []
    grippers: list[int] = []
    s = minimum_jerk_profile(n_approach)
    for k in range(n_approach + 1):
        poses.append(
            Pose(
                start_pos + s[k] * (grasp.position - start_pos),
                geometry.quat_slerp(start_quat, grasp.orientation, s[k]),
            )
        )
        grippers.append(GRIPPER_OPEN)
    grasp_pose = Pose(grasp.position, grasp.orientation)
    for _ in range(n_close):
        poses.append(grasp_pose)
        grippers.append(GRIPPER_CLOSED)
    s_lift = minimum_jerk_profile(n_lift)
    lift = np.array([0.0, 0.0, params.lift_height])
    for k in range(1, n_lift + 1):
        poses.append(Pose(grasp.position + s_lift[k] * lift, grasp.orientation))
        grippers.append(GRIPPER_CLOSED)

    _check_plan(poses, grippers, layout, target_id, grasp, gripper, params)
    return [
        TrajectoryStep(t=i * DT, pose=p, gripper=g)
        for i, (p, g) in enumerate(zip(poses, grippers))
    ]


def _check_plan(
    poses: list[Pose],
    grippers: list[int],
    layout: SceneLayout,
    target_id: str,
    grasp: GraspPose,
    gripper: GripperSpec,
    params: PlannerParams,
) -> None:
    closure = grippers.index(GRIPPER_CLOSED)
    for i, pose in enumerate(poses):
        opening = gripper.max_width if i < closure else grasp.width
        clearance = gripper_scene_clearance(
            pose.position, pose.orientation, gripper, opening, layout, target_id
        )
        if clearance < gripper.approach_clearance:
            raise PlanRejected(f"clearance {clearance:.4f} m at step {i}")
        if i > 0:
            step_len = np.linalg.norm(pose.position - poses[i - 1].position)
            if step_len > params.v_max * DT:
                raise PlanRejected(f"step {i} exceeds v_max ({step_len / DT:.3f} m/s)")
    for i in range(1, closure):
        if (
            np.linalg.norm(poses[i].position - poses[i - 1].position) <= _POSE_EPS
            and geometry.quat_angle(poses[i - 1].orientation, poses[i].orientation) <= _POSE_EPS
        ):
            raise PlanRejected(f"hesitation: duplicate pre-closure pose at step {i}")


def validate_lift(episode: Episode, mu: float) -> bool:
    """Quasi-static lift check; sets and returns episode.success.

    The target is rigidly attached at closure. Success requires force
    closure at mu for every post-closure step, the target COM staying
    between the finger span, and a final rise of at least 15 cm.
    """
    closure = episode.closure_index()
    if closure is None or closure == 0:
        episode.success = False
        return False
    grasp = episode.grasp_label
    closure_pose = episode.steps[closure].pose
    inv = closure_pose.inverse()
    local_contacts = [
        (inv.transform(c.point), geometry.quat_rotate(inv.orientation, c.inward_normal))
        for c in grasp.contacts
    ]
    com_world = episode.layout.placement(episode.target_id).posed_mesh().center_of_mass()
    com_local = inv.transform(com_world)

    def orientation_ok(quat: np.ndarray) -> bool:
        # both tests depend only on the rotation: translation cancels in the
        # contact line, the rotated normals, and the COM offset from the origin
        contacts = [
            Contact(geometry.quat_rotate(quat, p), geometry.quat_rotate(quat, n))
            for p, n in local_contacts
        ]
        if not force_closure(contacts[0], contacts[1], mu):
            return False
        axis = geometry.mat_from_quat(quat)[:, 0]
        return abs(np.dot(geometry.quat_rotate(quat, com_local), axis)) <= grasp.width / 2.0 + 1e-9

    ok = True
    last_quat = None
    verdict = True
    for step in episode.steps[closure:]:
        quat = step.pose.orientation
        if last_quat is None or not np.array_equal(quat, last_quat):
            verdict = orientation_ok(quat)
            last_quat = quat
        if not verdict:
            ok = False
            break
    if ok:
        rise = episode.steps[-1].pose.position[2] - closure_pose.position[2]
        ok = rise >= MIN_LIFT
    episode.success = bool(ok)
    return episode.success


def delta_sequence(
    steps: list[TrajectoryStep] | tuple[TrajectoryStep, ...]
) -> list[DeltaAction]:
    """Consecutive-pose deltas; the delta at index k commands step k+1.

    Rotation deltas are world frame: q_{k+1} = dq * q_k. The gripper
    command carries the target step's state.
    """
    if len(steps) < 2:
        raise TooShort("need at least two steps")
    deltas: list[DeltaAction] = []
    for prev, nxt in zip(steps[:-1], steps[1:]):
        dq = geometry.quat_mul(nxt.pose.orientation, geometry.quat_conj(prev.pose.orientation))
        deltas.append(
            DeltaAction(
                dpos=nxt.pose.position - prev.pose.position,
                drot=geometry.rotvec_from_quat(dq),
                gripper=nxt.gripper,
            )
        )
    return deltas


def to_delta_actions(steps: list[TrajectoryStep] | tuple[TrajectoryStep, ...]) -> list[ActionChunk]:
    """Delta actions grouped into chunks of 4; the last partial chunk is
    padded by repeating its final delta."""
    deltas = delta_sequence(steps)
    chunks: list[ActionChunk] = []
    for i in range(0, len(deltas), CHUNK_LEN):
        block = deltas[i : i + CHUNK_LEN]
        while len(block) < CHUNK_LEN:
            block.append(block[-1])
        chunks.append(ActionChunk(tuple(block)))
    return chunks


def apply_delta(pose: Pose, delta: DeltaAction) -> Pose:
    return Pose(
        pose.position + delta.dpos,
        geometry.quat_mul(geometry.quat_from_rotvec(delta.drot), pose.orientation),
    )


def compose_deltas(initial: Pose, deltas: list[DeltaAction]) -> Pose:
    pose = initial
    for d in deltas:
        pose = apply_delta(pose, d)
    return pose


def grasp_pose_supervision(
    steps: tuple[TrajectoryStep, ...], grasp_label: GraspPose, step_index: int
) -> Pose:
    """Supervision target pose: the open-loop grasp before closure, the next
    step's pose at or after it, and the final step returns itself."""
    if not 0 <= step_index < len(steps):
        raise IndexError(f"step index {step_index} out of range")
    closure = None
    for i, step in enumerate(steps):
        if step.gripper == GRIPPER_CLOSED:
            closure = i
            break
    if closure is None or step_index < closure:
        return Pose(grasp_label.position, grasp_label.orientation)
    if step_index == len(steps) - 1:
        return steps[step_index].pose
    return steps[step_index + 1].pose
