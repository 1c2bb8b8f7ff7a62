"""Antipodal parallel-jaw grasp sampling and force-closure certification.

Force closure uses the two-contact antipodal criterion: the line through
the contacts must lie inside both friction cones. Sampling casts rays from
random surface points along the negated contact normal to find the
opposing contact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .assets import Mesh, triangle_areas
from .errors import NoGraspFound, UnknownInstance

# friction-cone boundary counts as closure; the tolerance only absorbs roundoff
_BOUNDARY_SLACK = 1e-9
_MIN_WIDTH = 1e-6

# collision-box dimensions (meters) approximating a parallel-jaw gripper
FINGER_THICKNESS = 0.01
FINGER_WIDTH = 0.02
PALM_HALF_Y = 0.02
PALM_DEPTH = 0.04

REJECTION_BUDGET_PER_GRASP = 100


@dataclass(frozen=True)
class Contact:
    point: np.ndarray
    inward_normal: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        n = np.asarray(self.inward_normal, dtype=np.float64)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("contact normal must be unit length")
        object.__setattr__(self, "inward_normal", n)


@dataclass(frozen=True)
class GripperSpec:
    max_width: float = 0.08
    finger_length: float = 0.05
    finger_extension: float = 0.02  # fingers extended by 2 cm
    approach_clearance: float = 0.005

    def __post_init__(self) -> None:
        for name in ("max_width", "finger_length", "finger_extension", "approach_clearance"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def effective_finger_length(self) -> float:
        return self.finger_length + self.finger_extension


@dataclass(frozen=True)
class GraspPose:
    position: np.ndarray  # gripper origin between fingertips
    orientation: np.ndarray  # unit quaternion; x axis = closing line, z = approach
    width: float
    contacts: tuple[Contact, Contact]

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "orientation", geometry.quat_normalize(self.orientation))
        if self.width <= 0.0:
            raise ValueError("grasp width must be positive")
        sep = np.linalg.norm(self.contacts[1].point - self.contacts[0].point)
        if abs(sep - self.width) > 1e-6:
            raise ValueError("contact separation does not match grasp width")

    @property
    def closing_axis(self) -> np.ndarray:
        return geometry.mat_from_quat(self.orientation)[:, 0]

    @property
    def approach_axis(self) -> np.ndarray:
        return geometry.mat_from_quat(self.orientation)[:, 2]


def force_closure(c1: Contact, c2: Contact, mu: float) -> bool:
    """Two-contact antipodal closure: the contact line lies in both cones.

    The cone is closed: an angle exactly at atan(mu) counts as closure.
    """
    line = c2.point - c1.point
    norm = np.linalg.norm(line)
    if norm < 1e-12:
        raise ValueError("contact points must be distinct")
    line = line / norm
    limit = np.arctan(mu) + _BOUNDARY_SLACK
    a1 = np.arccos(np.clip(np.dot(line, c1.inward_normal), -1.0, 1.0))
    a2 = np.arccos(np.clip(np.dot(-line, c2.inward_normal), -1.0, 1.0))
    return bool(a1 <= limit and a2 <= limit)


def _ray_triangle_hits(
    origin: np.ndarray, direction: np.ndarray, vertices: np.ndarray, triangles: np.ndarray
) -> np.ndarray:
    """Moller-Trumbore over all triangles; returns t per triangle (inf = miss)."""
    a = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - a
    e2 = vertices[triangles[:, 2]] - a
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    t = np.full(len(triangles), np.inf)
    ok = np.abs(det) > 1e-14
    if not ok.any():
        return t
    inv_det = np.zeros_like(det)
    inv_det[ok] = 1.0 / det[ok]
    tvec = origin - a
    u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)
    v = np.dot(qvec, direction) * inv_det
    hit = ok & (u >= -1e-10) & (v >= -1e-10) & (u + v <= 1.0 + 1e-10)
    t_hit = np.einsum("ij,ij->i", e2, qvec) * inv_det
    t[hit] = t_hit[hit]
    return t


def sample_antipodal(
    mesh: Mesh,
    gripper: GripperSpec,
    mu: float,
    n: int,
    rng: np.random.Generator,
) -> list[GraspPose]:
    """Sample up to n force-closure grasps on a mesh in its current frame.

    Rays are cast from area-weighted random surface points along the
    negated (inward) contact normal; the far exit point provides the
    opposing contact. Raises NoGraspFound when the 100*n budget yields
    nothing.
    """
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = triangle_areas(mesh.vertices, mesh.triangles)
    cum = np.cumsum(areas)
    cum /= cum[-1]
    normals = mesh.face_normals()
    grasps: list[GraspPose] = []
    for _ in range(REJECTION_BUDGET_PER_GRASP * n):
        if len(grasps) >= n:
            break
        tri = int(np.searchsorted(cum, rng.random()))
        u, v = rng.random(), rng.random()
        if u + v > 1.0:
            u, v = 1.0 - u, 1.0 - v
        i0, i1, i2 = mesh.triangles[tri]
        p1 = (
            mesh.vertices[i0]
            + u * (mesh.vertices[i1] - mesh.vertices[i0])
            + v * (mesh.vertices[i2] - mesh.vertices[i0])
        )
        n1_in = -normals[tri]
        hits = _ray_triangle_hits(p1, n1_in, mesh.vertices, mesh.triangles)
        hits[~np.isfinite(hits)] = -np.inf
        hits[hits < _MIN_WIDTH] = -np.inf  # behind, or the starting skin itself
        exit_tri = int(np.argmax(hits))  # far exit = the opposing skin
        t = hits[exit_tri]
        if not np.isfinite(t) or t > gripper.max_width:
            continue
        p2 = p1 + t * n1_in
        n2_in = -normals[exit_tri]
        c1, c2 = Contact(p1, n1_in), Contact(p2, n2_in)
        if not force_closure(c1, c2, mu):
            continue
        grasps.append(_build_grasp(c1, c2))
    if not grasps:
        raise NoGraspFound(
            f"no force-closure grasp on {mesh.instance_id!r} within width "
            f"{gripper.max_width} at mu={mu}"
        )
    return grasps


def _build_grasp(c1: Contact, c2: Contact) -> GraspPose:
    closing = geometry.unit(c2.point - c1.point)
    # approach = most-downward direction orthogonal to the closing line
    down = np.array([0.0, 0.0, -1.0])
    approach = down - np.dot(down, closing) * closing
    if np.linalg.norm(approach) < 1e-6:
        approach = np.array([1.0, 0.0, 0.0]) - closing[0] * closing
    approach = geometry.unit(approach)
    y_axis = np.cross(approach, closing)
    rot = np.column_stack([closing, y_axis, approach])
    return GraspPose(
        position=0.5 * (c1.point + c2.point),
        orientation=geometry.quat_from_mat(rot),
        width=float(np.linalg.norm(c2.point - c1.point)),
        contacts=(c1, c2),
    )


# ---------------------------------------------------------------------------
# gripper collision geometry: two finger boxes plus a palm box

@dataclass(frozen=True)
class _Box:
    center: np.ndarray
    half: np.ndarray
    rot: np.ndarray  # columns are the box axes in world frame

    def min_z(self) -> float:
        return float(self.center[2] - np.abs(self.rot[2, :]) @ self.half)

    def sphere_clearance(self, sphere_center: np.ndarray, radius: float) -> float:
        local = self.rot.T @ (np.asarray(sphere_center) - self.center)
        closest = np.clip(local, -self.half, self.half)
        return float(np.linalg.norm(local - closest) - radius)


def gripper_boxes(
    position: np.ndarray, orientation: np.ndarray, gripper: GripperSpec, opening: float
) -> list[_Box]:
    rot = geometry.mat_from_quat(orientation)
    length = gripper.effective_finger_length
    boxes = []
    for side in (-1.0, 1.0):
        local = np.array([side * (opening + FINGER_THICKNESS) / 2.0, 0.0, -length / 2.0])
        boxes.append(
            _Box(
                center=position + rot @ local,
                half=np.array([FINGER_THICKNESS / 2.0, FINGER_WIDTH / 2.0, length / 2.0]),
                rot=rot,
            )
        )
    palm_local = np.array([0.0, 0.0, -length - PALM_DEPTH / 2.0])
    boxes.append(
        _Box(
            center=position + rot @ palm_local,
            half=np.array([opening / 2.0 + FINGER_THICKNESS, PALM_HALF_Y, PALM_DEPTH / 2.0]),
            rot=rot,
        )
    )
    return boxes


def gripper_scene_clearance(
    position: np.ndarray,
    orientation: np.ndarray,
    gripper: GripperSpec,
    opening: float,
    layout,
    target_id: str,
) -> float:
    """Min clearance of the gripper boxes to the table plane and non-target spheres."""
    boxes = gripper_boxes(position, orientation, gripper, opening)
    clearance = min(box.min_z() - layout.table_height for box in boxes)
    for placement in layout.placements:
        if placement.instance_id == target_id:
            continue
        for box in boxes:
            clearance = min(
                clearance,
                box.sphere_clearance(placement.sphere_center, placement.sphere_radius),
            )
    return clearance


def grasp_collision_free(
    grasp: GraspPose, layout, target_id: str, gripper: GripperSpec | None = None
) -> bool:
    """True iff the open gripper at the grasp pose touches neither table nor distractors."""
    if gripper is None:
        gripper = GripperSpec()
    if not any(p.instance_id == target_id for p in layout.placements):
        raise UnknownInstance(f"target {target_id!r} not in layout")
    return (
        gripper_scene_clearance(
            grasp.position, grasp.orientation, gripper, gripper.max_width, layout, target_id
        )
        > 0.0
    )
