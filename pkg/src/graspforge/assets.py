"""Object mesh ingestion: OBJ parsing, category scaling, decimation, resting poses.

Meshes are plain vertex/triangle arrays at desk scale (meters). Resting
poses come from convex-hull face enumeration with a center-of-mass support
test instead of dynamic dropping, so they are deterministic and need no
physics engine.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import geometry
from .errors import DegenerateMesh, EmptyRegistry, NoStablePose, ParseError

_AREA_EPS = 1e-12
_VOLUME_EPS = 1e-12


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (n, 3) float64, meters
    triangles: np.ndarray  # (m, 3) int64 vertex indices
    category: str = ""
    instance_id: str = ""

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if len(t) == 0:
            raise DegenerateMesh(f"mesh {self.instance_id!r} has no triangles")
        if t.min() < 0 or t.max() >= len(v):
            raise DegenerateMesh(f"mesh {self.instance_id!r} has out-of-range triangle indices")
        if np.any(triangle_areas(v, t) <= _AREA_EPS):
            raise DegenerateMesh(f"mesh {self.instance_id!r} contains a zero-area triangle")
        lo, hi = v.min(axis=0), v.max(axis=0)
        if np.any(hi - lo <= 0.0):
            raise DegenerateMesh(f"mesh {self.instance_id!r} has a collapsed bounding box")

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def extents(self) -> np.ndarray:
        lo, hi = self.bbox()
        return hi - lo

    def center_of_mass(self) -> np.ndarray:
        """Uniform-density COM from signed tetra volumes; vertex centroid fallback."""
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        vols = np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0
        total = vols.sum()
        if abs(total) <= _VOLUME_EPS:
            return self.vertices.mean(axis=0)
        centroids = (a + b + c) / 4.0
        return (vols[:, None] * centroids).sum(axis=0) / total

    def face_normals(self) -> np.ndarray:
        """Outward unit normals; winding fixed by the bbox-center heuristic."""
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        lo, hi = self.bbox()
        center = 0.5 * (lo + hi)
        outward = np.einsum("ij,ij->i", n, (a + b + c) / 3.0 - center)
        n[outward < 0.0] *= -1.0
        return n

    def with_pose(self, rotation: np.ndarray, translation: np.ndarray) -> "Mesh":
        return Mesh(
            geometry.quat_rotate(rotation, self.vertices) + translation,
            self.triangles,
            self.category,
            self.instance_id,
        )


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class CategorySpec:
    name: str
    min_size: float
    max_size: float
    upright_only: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.min_size <= self.max_size):
            raise ValueError(f"category {self.name!r}: need 0 < min_size <= max_size")


def load_mesh(path: str | Path, category: str = "", instance_id: str = "") -> Mesh:
    """Parse the ASCII OBJ subset (v/f records, 1-based indices, rest ignored).

    Zero-area triangles are dropped at load. Raises ParseError on malformed
    records and DegenerateMesh when nothing usable remains.
    """
    path = Path(path)
    if not instance_id:
        instance_id = path.stem
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad vertex coordinate") from exc
        elif parts[0] == "f":
            if len(parts) < 4:
                raise ParseError(f"{path}:{lineno}: face needs 3 indices")
            try:
                # tolerate v/vt/vn slash syntax by taking the leading index
                idx = [int(p.split("/")[0]) for p in parts[1:4]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad face index") from exc
            faces.append([i - 1 for i in idx])
        # any other record type ignored
    if not vertices:
        raise ParseError(f"{path}: no vertices found")
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(t) and (t.min() < 0 or t.max() >= len(v)):
        raise ParseError(f"{path}: face index out of range")
    if len(t):
        t = t[triangle_areas(v, t) > _AREA_EPS]
    if len(t) == 0:
        raise DegenerateMesh(f"{path}: no non-degenerate triangles")
    return Mesh(v, t, category=category, instance_id=instance_id)


def load_category_registry(path: str | Path) -> dict[str, CategorySpec]:
    """Read the category registry file: {name: {min_size, max_size, upright_only}}."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read category registry {path}: {exc}") from exc
    registry: dict[str, CategorySpec] = {}
    for name, spec in data.items():
        if name in registry:
            raise ParseError(f"duplicate category {name!r}")
        registry[name] = CategorySpec(
            name=name,
            min_size=float(spec["min_size"]),
            max_size=float(spec["max_size"]),
            upright_only=bool(spec.get("upright_only", False)),
        )
    if not registry:
        raise EmptyRegistry(f"{path}: registry is empty")
    return registry


def scale_to_category(mesh: Mesh, spec: CategorySpec, rng: np.random.Generator) -> Mesh:
    """Uniformly scale so the max bbox extent is drawn from [min_size, max_size]."""
    target = rng.uniform(spec.min_size, spec.max_size)
    return scale_to_extent(mesh, target)


def scale_to_extent(mesh: Mesh, target: float) -> Mesh:
    current = float(mesh.extents().max())
    factor = target / current
    return Mesh(mesh.vertices * factor, mesh.triangles, mesh.category, mesh.instance_id)


def simplify_mesh(mesh: Mesh, target_vertex_count: int) -> Mesh:
    """Decimate by uniform-grid vertex clustering.

    Vertices falling in one grid cell merge to their mean; the result is
    rescaled per axis back onto the original bounding box so extents are
    preserved. The finest grid whose occupied-cell count fits the target
    is used.
    """
    if target_vertex_count < 4:
        raise ValueError("target_vertex_count must be >= 4")
    if len(mesh.vertices) <= target_vertex_count:
        return mesh
    lo, hi = mesh.bbox()
    span = hi - lo
    # descending resolution until the occupied-cell count fits
    for k in range(int(np.ceil(np.sqrt(target_vertex_count))) + 2, 0, -1):
        cell = np.minimum(np.floor((mesh.vertices - lo) / span * k), k - 1).astype(np.int64)
        keys = (cell[:, 0] * k + cell[:, 1]) * k + cell[:, 2]
        uniq, inverse = np.unique(keys, return_inverse=True)
        if len(uniq) <= target_vertex_count:
            break
    counts = np.bincount(inverse)
    reps = np.zeros((len(uniq), 3))
    np.add.at(reps, inverse, mesh.vertices)
    reps /= counts[:, None]
    # snap the decimated cloud back onto the original bbox
    r_lo, r_hi = reps.min(axis=0), reps.max(axis=0)
    r_span = r_hi - r_lo
    if np.any(r_span <= 0.0):
        raise DegenerateMesh(f"clustering collapsed mesh {mesh.instance_id!r}")
    reps = (reps - r_lo) / r_span * span + lo
    tris = inverse[mesh.triangles]
    keep = (
        (tris[:, 0] != tris[:, 1])
        & (tris[:, 1] != tris[:, 2])
        & (tris[:, 0] != tris[:, 2])
    )
    tris = tris[keep]
    if len(tris):
        tris = tris[triangle_areas(reps, tris) > _AREA_EPS]
    if len(tris) == 0:
        raise DegenerateMesh(f"clustering collapsed all triangles of {mesh.instance_id!r}")
    return Mesh(reps, tris, mesh.category, mesh.instance_id)


def _merged_hull_facets(hull: ConvexHull) -> list[tuple[np.ndarray, np.ndarray]]:
    """Group coplanar hull simplices; returns (outward normal, facet vertex ids)."""
    groups: dict[tuple, list[int]] = {}
    for i, eq in enumerate(hull.equations):
        groups.setdefault(tuple(np.round(eq, 7)), []).append(i)
    facets = []
    for eq_key, simplex_ids in groups.items():
        normal = geometry.unit(np.array(eq_key[:3]))
        verts = np.unique(hull.simplices[simplex_ids])
        facets.append((normal, verts))
    return facets


def _convex_polygon_clearance(points_2d: np.ndarray, p: np.ndarray) -> float:
    """Signed distance from p to the convex hull boundary of points_2d (>0 inside)."""
    center = points_2d.mean(axis=0)
    order = np.argsort(np.arctan2(points_2d[:, 1] - center[1], points_2d[:, 0] - center[0]))
    poly = points_2d[order]
    nxt = np.roll(poly, -1, axis=0)
    edges = nxt - poly
    lengths = np.linalg.norm(edges, axis=1)
    ok = lengths > 1e-12
    poly, nxt, edges, lengths = poly[ok], nxt[ok], edges[ok], lengths[ok]
    if len(poly) < 3:
        return -np.inf
    # inward normal for CCW ordering is the left-hand perpendicular
    cross = edges[:, 0] * (p[1] - poly[:, 1]) - edges[:, 1] * (p[0] - poly[:, 0])
    return float(np.min(cross / lengths))


def stable_poses(
    mesh: Mesh,
    upright_only: bool = False,
    margin: float = 1e-9,
    tilt_guard_deg: float = 1.0,
) -> list[np.ndarray]:
    """Rotations that rest one convex-hull face flush on the z=0 table plane.

    A face qualifies when the COM projects strictly inside its support
    polygon and keeps doing so under a tilt_guard_deg tilt about any
    horizontal axis (checked on a ring of axes plus the worst case).
    """
    if upright_only:
        return [geometry.quat_identity()]
    try:
        hull = ConvexHull(mesh.vertices)
    except QhullError as exc:
        raise NoStablePose(f"hull failure for {mesh.instance_id!r}: {exc}") from exc
    com = mesh.center_of_mass()
    tilt = np.deg2rad(tilt_guard_deg)
    poses: list[np.ndarray] = []
    for normal, vert_ids in _merged_hull_facets(hull):
        rot = geometry.rotation_between(normal, np.array([0.0, 0.0, -1.0]))
        face = mesh.vertices[vert_ids] @ rot.T
        com_r = rot @ com
        ok = _convex_polygon_clearance(face[:, :2], com_r[:2]) > margin
        if ok and tilt > 0.0:
            for phi in np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False):
                axis = np.array([np.cos(phi), np.sin(phi), 0.0])
                tr = geometry.rotation_about_axis(axis, tilt)
                if _convex_polygon_clearance((face @ tr.T)[:, :2], (tr @ com_r)[:2]) <= margin:
                    ok = False
                    break
        if ok:
            poses.append(geometry.quat_from_mat(rot))
    if not poses:
        raise NoStablePose(f"no stable resting face for {mesh.instance_id!r}")
    return poses


# ---------------------------------------------------------------------------
# procedural primitives (test fixtures and the builtin demo registry)

def make_box(sx: float, sy: float, sz: float, category: str = "", instance_id: str = "") -> Mesh:
    hx, hy, hz = sx / 2.0, sy / 2.0, sz / 2.0
    v = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    )
    t = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom
            [4, 5, 6], [4, 6, 7],  # top
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [3, 0, 4], [3, 4, 7],  # -x
        ]
    )
    return Mesh(v, t, category=category, instance_id=instance_id)


def make_cube(size: float = 1.0, category: str = "", instance_id: str = "") -> Mesh:
    return make_box(size, size, size, category=category, instance_id=instance_id)


def make_icosphere(radius: float = 0.5, subdivisions: int = 2, category: str = "", instance_id: str = "") -> Mesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts_list = [tuple(v) for v in verts]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = np.asarray(verts_list[i]) + np.asarray(verts_list[j])
            m /= np.linalg.norm(m)
            verts_list.append(tuple(m))
            cache[key] = len(verts_list) - 1
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts_list) * radius
    return Mesh(v, np.asarray(faces, dtype=np.int64), category=category, instance_id=instance_id)


def make_cylinder(radius: float, height: float, segments: int = 24, category: str = "", instance_id: str = "") -> Mesh:
    ang = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -height / 2.0)])
    top = np.column_stack([ring, np.full(segments, height / 2.0)])
    v = np.vstack([bottom, top, [[0.0, 0.0, -height / 2.0]], [[0.0, 0.0, height / 2.0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [
            [i, j, segments + j], [i, segments + j, segments + i],  # side
            [cb, j, i],  # bottom cap
            [ct, segments + i, segments + j],  # top cap
        ]
    return Mesh(v, np.asarray(tris, dtype=np.int64), category=category, instance_id=instance_id)


def make_wedge(sx: float, sy: float, sz: float, category: str = "", instance_id: str = "") -> Mesh:
    hx, hy = sx / 2.0, sy / 2.0
    v = np.array(
        [
            [-hx, -hy, 0.0], [hx, -hy, 0.0], [hx, hy, 0.0], [-hx, hy, 0.0],
            [-hx, 0.0, sz], [hx, 0.0, sz],
        ]
    )
    t = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom
            [0, 1, 5], [0, 5, 4],  # -y slope
            [2, 3, 4], [2, 4, 5],  # +y slope
            [1, 2, 5],  # +x cap
            [3, 0, 4],  # -x cap
        ]
    )
    return Mesh(v, t, category=category, instance_id=instance_id)


def write_obj(mesh: Mesh, path: str | Path) -> None:
    lines = [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# catalog + per-worker cache

@dataclass(frozen=True)
class CatalogEntry:
    """One grasping asset: a mesh source plus its category constraints."""

    instance_id: str
    spec: CategorySpec
    path: Path | None = None  # OBJ file; None when mesh is given directly
    mesh: Mesh | None = None

    @property
    def category(self) -> str:
        return self.spec.name


@dataclass(frozen=True)
class PreparedAsset:
    """Load-once product: simplified unit mesh plus scale-invariant resting poses."""

    entry: CatalogEntry
    mesh: Mesh
    stable_rotations: tuple[np.ndarray, ...]
    com: np.ndarray


@dataclass
class AssetLibrary:
    """Per-worker asset cache.

    Each instance is loaded, simplified and hull-analyzed at most once;
    scaled variants are cached per (instance_id, scale bucket) with an LRU
    bound. `load_count` exposes how many raw loads happened, for cache
    assertions.
    """

    entries: dict[str, CatalogEntry]
    simplify_target: int = 96
    scale_buckets: int = 64
    max_cached_scaled: int = 512
    load_count: int = 0
    _prepared: dict[str, PreparedAsset] = field(default_factory=dict)
    _scaled: "OrderedDict[tuple[str, int], Mesh]" = field(default_factory=OrderedDict)

    @classmethod
    def from_entries(cls, entries: list[CatalogEntry], **kwargs) -> "AssetLibrary":
        if not entries:
            raise EmptyRegistry("no catalog entries")
        return cls(entries={e.instance_id: e for e in entries}, **kwargs)

    def instance_ids(self) -> list[str]:
        return sorted(self.entries)

    def prepared(self, instance_id: str) -> PreparedAsset:
        if instance_id not in self._prepared:
            entry = self.entries[instance_id]
            if entry.mesh is not None:
                mesh = Mesh(
                    entry.mesh.vertices,
                    entry.mesh.triangles,
                    category=entry.category,
                    instance_id=instance_id,
                )
            else:
                mesh = load_mesh(entry.path, category=entry.category, instance_id=instance_id)
            self.load_count += 1
            mesh = simplify_mesh(mesh, self.simplify_target)
            rotations = tuple(stable_poses(mesh, upright_only=entry.spec.upright_only))
            self._prepared[instance_id] = PreparedAsset(
                entry=entry, mesh=mesh, stable_rotations=rotations, com=mesh.center_of_mass()
            )
        return self._prepared[instance_id]

    def bucket_extent(self, entry: CatalogEntry, drawn: float) -> tuple[int, float]:
        """Snap a drawn max-extent onto the bucket grid of [min_size, max_size]."""
        spec = entry.spec
        span = spec.max_size - spec.min_size
        if span <= 0.0 or self.scale_buckets <= 1:
            return 0, spec.min_size
        b = int(np.clip((drawn - spec.min_size) / span * self.scale_buckets, 0, self.scale_buckets - 1))
        return b, spec.min_size + (b + 0.5) * span / self.scale_buckets

    def scaled(self, instance_id: str, drawn_extent: float) -> tuple[Mesh, PreparedAsset]:
        prepared = self.prepared(instance_id)
        bucket, extent = self.bucket_extent(prepared.entry, drawn_extent)
        key = (instance_id, bucket)
        if key not in self._scaled:
            self._scaled[key] = scale_to_extent(prepared.mesh, extent)
            if len(self._scaled) > self.max_cached_scaled:
                self._scaled.popitem(last=False)
        else:
            self._scaled.move_to_end(key)
        return self._scaled[key], prepared
