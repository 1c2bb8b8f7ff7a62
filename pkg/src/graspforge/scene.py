"""Randomized tabletop layouts, camera rigs, and 2D bounding-box labels.

Visual randomization is reduced to recorded seeds: downstream consumers
work on low-dimensional features, so lighting/texture nuisances are
represented by the layout's randomization_seed instead of pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .assets import AssetLibrary, Mesh
from .errors import EmptyRegistry, NotVisible, UnknownInstance

# workspace rectangle: 0.4 m (x) by 0.5 m (y) in front of the robot
WORKSPACE = (0.3, -0.25, 0.7, 0.25)
TABLE_HEIGHT_RANGE = (-0.1, 0.2)

# nominal camera placement (robot frame, meters)
FRONT_POSITION = np.array([1.35, 0.0, 0.54])
FRONT_LOOKAT = np.array([0.2, 0.0, 0.0])
SIDE_POSITION = np.array([0.5, 0.69, 0.50])
SIDE_LOOKAT = np.array([0.5, 0.0, 0.1])
CAMERA_BALL_RADIUS = 0.15
CAMERA_TILT_DEG = 5.0

# fixed RealSense-class intrinsics: (fx, fy, cx, cy, width, height)
DEFAULT_INTRINSICS = (600.0, 600.0, 320.0, 240.0, 640, 480)

PLACEMENT_RETRIES = 50


@dataclass(frozen=True)
class Placement:
    instance_id: str
    category: str
    mesh: Mesh  # scaled, unposed
    rotation: np.ndarray  # quaternion
    translation: np.ndarray
    circle_radius: float  # table-plane bounding circle, for overlap tests
    sphere_center: np.ndarray  # world-frame bounding sphere, for collision tests
    sphere_radius: float

    def posed_mesh(self) -> Mesh:
        return self.mesh.with_pose(self.rotation, self.translation)

    def posed_vertices(self) -> np.ndarray:
        return geometry.quat_rotate(self.rotation, self.mesh.vertices) + self.translation


@dataclass(frozen=True)
class SceneLayout:
    table_height: float
    placements: tuple[Placement, ...]
    workspace: tuple[float, float, float, float] = WORKSPACE
    randomization_seed: int = 0

    def placement(self, instance_id: str) -> Placement:
        for p in self.placements:
            if p.instance_id == instance_id:
                return p
        raise UnknownInstance(f"instance {instance_id!r} not in layout")


@dataclass(frozen=True)
class CameraView:
    name: str
    position: np.ndarray
    lookat: np.ndarray
    rotation: np.ndarray  # quaternion, camera-to-world (x right, y down, z forward)
    intrinsics: tuple[float, float, float, float, int, int] = DEFAULT_INTRINSICS

    def __post_init__(self) -> None:
        if np.allclose(self.position, self.lookat):
            raise ValueError("camera position must differ from lookat")
        if any(v <= 0 for v in self.intrinsics):
            raise ValueError("intrinsics must be positive")

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        r = geometry.mat_from_quat(self.rotation)
        return (np.asarray(pts) - self.position) @ r  # == R^T (p - c)


@dataclass(frozen=True)
class CameraRig:
    front: CameraView
    side: CameraView

    def views(self) -> tuple[CameraView, CameraView]:
        return (self.front, self.side)


@dataclass(frozen=True)
class BBox2D:
    view: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        fx, fy, cx, cy, w, h = DEFAULT_INTRINSICS
        if not (0.0 <= self.x_min < self.x_max <= w and 0.0 <= self.y_min < self.y_max <= h):
            raise ValueError(
                f"invalid bbox [{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]"
            )


def _lookat_rotation(position: np.ndarray, lookat: np.ndarray) -> np.ndarray:
    """Camera-to-world rotation: +z forward toward lookat, +x right, +y down."""
    forward = geometry.unit(lookat - position)
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(forward, up)) > 1.0 - 1e-9:
        up = np.array([1.0, 0.0, 0.0])
    right = geometry.unit(np.cross(forward, up))
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


def _ball_offset(rng: np.random.Generator, radius: float) -> np.ndarray:
    while True:
        v = rng.uniform(-radius, radius, size=3)
        if np.dot(v, v) <= radius * radius:
            return v


def randomize_cameras(
    rng: np.random.Generator,
    radius: float = CAMERA_BALL_RADIUS,
    tilt_deg: float = CAMERA_TILT_DEG,
    intrinsics: tuple[float, float, float, float, int, int] = DEFAULT_INTRINSICS,
) -> CameraRig:
    """Perturb both cameras: position uniform in a ball, orientation tilted <=5 deg.

    The tilt is applied intrinsically about camera x, then y, then z, each
    angle uniform in [-tilt_deg, +tilt_deg].
    """
    views = {}
    for name, nominal_pos, lookat in (
        ("front", FRONT_POSITION, FRONT_LOOKAT),
        ("side", SIDE_POSITION, SIDE_LOOKAT),
    ):
        position = nominal_pos + _ball_offset(rng, radius)
        base = _lookat_rotation(position, lookat)
        ax, ay, az = np.deg2rad(rng.uniform(-tilt_deg, tilt_deg, size=3))
        rot = base @ geometry.mat_from_euler_xyz(ax, ay, az)
        views[name] = CameraView(
            name=name,
            position=position,
            lookat=lookat,
            rotation=geometry.quat_from_mat(rot),
            intrinsics=intrinsics,
        )
    return CameraRig(front=views["front"], side=views["side"])


def generate_layout(
    library: AssetLibrary,
    n_objects: int,
    rng: np.random.Generator,
    workspace: tuple[float, float, float, float] = WORKSPACE,
    table_height_range: tuple[float, float] = TABLE_HEIGHT_RANGE,
) -> SceneLayout:
    """Place up to n_objects non-overlapping assets in stable poses on the table.

    Each placement draws an asset, a category-constrained scale, a stable
    rotation (uniform among candidates) and an xy position. Placements
    failing the bounding-circle overlap test are retried up to 50 times,
    then dropped.
    """
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    ids = library.instance_ids()
    if not ids:
        raise EmptyRegistry("asset library is empty")
    table_height = float(rng.uniform(*table_height_range))
    seed = int(rng.integers(0, 2**63 - 1))
    x0, y0, x1, y1 = workspace
    placements: list[Placement] = []
    for k in range(n_objects):
        instance = ids[int(rng.integers(len(ids)))]
        prepared = library.prepared(instance)
        spec = prepared.entry.spec
        drawn = float(rng.uniform(spec.min_size, spec.max_size))
        mesh, prepared = library.scaled(instance, drawn)
        rotations = prepared.stable_rotations
        rotation = rotations[int(rng.integers(len(rotations)))]
        rotated = geometry.quat_rotate(rotation, mesh.vertices)
        z_shift = table_height - rotated[:, 2].min()
        xy_centroid = rotated[:, :2].mean(axis=0)
        circle_radius = float(np.linalg.norm(rotated[:, :2] - xy_centroid, axis=1).max())
        for _ in range(PLACEMENT_RETRIES):
            xy = rng.uniform([x0, y0], [x1, y1])
            ok = True
            for other in placements:
                if np.linalg.norm(xy - other.sphere_center[:2]) <= circle_radius + other.circle_radius:
                    ok = False
                    break
            if ok:
                translation = np.array([xy[0] - xy_centroid[0], xy[1] - xy_centroid[1], z_shift])
                posed = rotated + translation
                sphere_center = posed.mean(axis=0)
                sphere_radius = float(np.linalg.norm(posed - sphere_center, axis=1).max())
                placements.append(
                    Placement(
                        instance_id=f"{instance}#{k}",
                        category=prepared.entry.category,
                        mesh=mesh,
                        rotation=rotation,
                        translation=translation,
                        circle_radius=circle_radius,
                        sphere_center=sphere_center,
                        sphere_radius=sphere_radius,
                    )
                )
                break
        # unplaceable object dropped
    return SceneLayout(
        table_height=table_height,
        placements=tuple(placements),
        workspace=workspace,
        randomization_seed=seed,
    )


def project_vertices(view: CameraView, vertices: np.ndarray) -> np.ndarray | None:
    """Pinhole-project world points; None when everything is behind the camera."""
    cam = view.world_to_camera(vertices)
    in_front = cam[:, 2] > 1e-9
    if not in_front.any():
        return None
    fx, fy, cx, cy, _, _ = view.intrinsics
    cam = cam[in_front]
    u = fx * cam[:, 0] / cam[:, 2] + cx
    v = fy * cam[:, 1] / cam[:, 2] + cy
    return np.stack([u, v], axis=1)


def project_bbox(layout: SceneLayout, rig: CameraRig, instance_id: str) -> list[BBox2D]:
    """Tight per-view bbox of the instance's mesh vertices, clamped to the image.

    Views where the object is fully behind the camera or outside the image
    are omitted; NotVisible is raised when no view remains.
    """
    placement = layout.placement(instance_id)
    return project_mesh_bbox(placement.posed_vertices(), rig)


def project_mesh_bbox(world_vertices: np.ndarray, rig: CameraRig) -> list[BBox2D]:
    boxes: list[BBox2D] = []
    for view in rig.views():
        uv = project_vertices(view, world_vertices)
        if uv is None:
            continue
        _, _, _, _, w, h = view.intrinsics
        x_min = float(np.clip(uv[:, 0].min(), 0.0, w))
        x_max = float(np.clip(uv[:, 0].max(), 0.0, w))
        y_min = float(np.clip(uv[:, 1].min(), 0.0, h))
        y_max = float(np.clip(uv[:, 1].max(), 0.0, h))
        # sub-pixel objects keep a half-pixel box instead of collapsing
        if x_max - x_min < 1e-9:
            x_min, x_max = max(0.0, x_min - 0.5), min(float(w), x_max + 0.5)
        if y_max - y_min < 1e-9:
            y_min, y_max = max(0.0, y_min - 0.5), min(float(h), y_max + 0.5)
        if x_max - x_min < 1e-9 or y_max - y_min < 1e-9:
            continue  # entirely outside the image
        boxes.append(BBox2D(view=view.name, x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max))
    if not boxes:
        raise NotVisible("object projects into no camera view")
    return boxes
