"""Independent brute-force oracles used by the test suite.

These intentionally avoid the production implementations: force closure is
decided by positive-span tests over sampled cone forces, projection by a
scalar per-vertex loop, support stability by shapely polygon containment.
"""
from __future__ import annotations

import math

import numpy as np
from shapely.geometry import MultiPoint, Point

N_CONE_FORCES = 10_000


def _cone_forces(normal: np.ndarray, mu: float, n: int) -> np.ndarray:
    """n unit forces on the friction-cone boundary (the extreme rays)."""
    normal = normal / np.linalg.norm(normal)
    ortho = np.array([1.0, 0.0, 0.0])
    if abs(normal[0]) > 0.9:
        ortho = np.array([0.0, 1.0, 0.0])
    t1 = np.cross(normal, ortho)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    c = 1.0 / math.sqrt(1.0 + mu * mu)
    s = mu / math.sqrt(1.0 + mu * mu)
    phi = 2.0 * np.pi * np.arange(n) / n
    return (
        c * normal[None, :]
        + s * (np.cos(phi)[:, None] * t1[None, :] + np.sin(phi)[:, None] * t2[None, :])
    )


def direction_in_positive_span(direction: np.ndarray, forces: np.ndarray) -> bool:
    """Is the direction a positive combination of the sampled forces?

    The forces are azimuthally ordered extreme rays, so their conic hull is
    the polyhedral cone whose facets join adjacent rays; membership is a
    half-space sign test against every facet.
    """
    direction = direction / np.linalg.norm(direction)
    nxt = np.roll(forces, -1, axis=0)
    facets = np.cross(forces, nxt)  # inward-oriented for CCW azimuthal order
    return bool(np.all(facets @ direction >= 0.0))


def force_closure_oracle(p1, n1, p2, n2, mu: float, n_forces: int = N_CONE_FORCES) -> bool:
    """Two-contact closure by brute force: the sampled contact forces must
    positively span the two opposing directions along the contact line."""
    line = np.asarray(p2, dtype=float) - np.asarray(p1, dtype=float)
    line = line / np.linalg.norm(line)
    return direction_in_positive_span(
        line, _cone_forces(np.asarray(n1, float), mu, n_forces)
    ) and direction_in_positive_span(
        -line, _cone_forces(np.asarray(n2, float), mu, n_forces)
    )


def cone_angle(line: np.ndarray, normal: np.ndarray) -> float:
    line = line / np.linalg.norm(line)
    normal = normal / np.linalg.norm(normal)
    return float(np.arccos(np.clip(np.dot(line, normal), -1.0, 1.0)))


def project_bbox_oracle(view, vertices: np.ndarray):
    """Scalar per-vertex pinhole projection; returns (x0, y0, x1, y1) or None."""
    import graspforge.geometry as geometry

    r = geometry.mat_from_quat(view.rotation)
    fx, fy, cx, cy, w, h = view.intrinsics
    us, vs = [], []
    for p in vertices:
        d = np.asarray(p, float) - view.position
        x = r[0, 0] * d[0] + r[1, 0] * d[1] + r[2, 0] * d[2]
        y = r[0, 1] * d[0] + r[1, 1] * d[1] + r[2, 1] * d[2]
        z = r[0, 2] * d[0] + r[1, 2] * d[1] + r[2, 2] * d[2]
        if z <= 1e-9:
            continue
        us.append(fx * x / z + cx)
        vs.append(fy * y / z + cy)
    if not us:
        return None
    x0 = min(max(min(us), 0.0), w)
    x1 = min(max(max(us), 0.0), w)
    y0 = min(max(min(vs), 0.0), h)
    y1 = min(max(max(vs), 0.0), h)
    return (x0, y0, x1, y1)


def resting_com_inside_support(mesh, rotation_quat: np.ndarray, tilt_axis=None, tilt_deg=0.0) -> bool:
    """Quasi-static support test: does the COM project (along gravity) inside
    the resting face's polygon?

    The support polygon is the face flush on the table in the untilted pose;
    tilting rotates face and COM together before the xy containment test,
    which is the tip-over-the-contact-edge criterion.
    """
    import graspforge.geometry as geometry

    verts = geometry.quat_rotate(rotation_quat, mesh.vertices)
    com = geometry.quat_rotate(rotation_quat, mesh.center_of_mass())
    z_min = verts[:, 2].min()
    face = verts[verts[:, 2] <= z_min + 1e-6]
    if tilt_axis is not None and tilt_deg:
        rot = geometry.rotation_about_axis(np.asarray(tilt_axis, float), math.radians(tilt_deg))
        face = face @ rot.T
        com = rot @ com
    hull = MultiPoint([tuple(p) for p in face[:, :2]]).convex_hull
    return hull.contains(Point(com[0], com[1]))


def finite_difference_grad(loss_fn, params: dict[str, np.ndarray], h: float = 1e-5):
    """Central-difference gradient of loss_fn(params) per coordinate."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss_fn()
            flat[i] = orig - h
            lo = loss_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads[name] = g
    return grads
