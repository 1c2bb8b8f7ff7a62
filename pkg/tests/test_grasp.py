import numpy as np
import pytest

from graspforge import assets, geometry, grasp
from graspforge.errors import NoGraspFound, UnknownInstance
from graspforge.scene import Placement, SceneLayout

from oracles import cone_angle, force_closure_oracle


def contact(point, normal):
    return grasp.Contact(np.asarray(point, float), geometry.unit(np.asarray(normal, float)))


def tilted_normal(base, tilt):
    """Rotate a unit normal by `tilt` radians about a perpendicular axis."""
    base = geometry.unit(np.asarray(base, float))
    ortho = np.array([0.0, 0.0, 1.0])
    if abs(base[2]) > 0.9:
        ortho = np.array([0.0, 1.0, 0.0])
    axis = geometry.unit(np.cross(base, ortho))
    return geometry.rotation_about_axis(axis, tilt) @ base


# -- force_closure -------------------------------------------------------------

def test_perfectly_opposed_contacts_close():
    c1 = contact([0.03, 0, 0], [-1, 0, 0])
    c2 = contact([-0.03, 0, 0], [1, 0, 0])
    assert grasp.force_closure(c1, c2, 0.15)


def test_tilt_past_cone_fails():
    tilt = np.arctan(0.15) + 0.01
    c1 = contact([0.03, 0, 0], tilted_normal([-1, 0, 0], tilt))
    c2 = contact([-0.03, 0, 0], [1, 0, 0])
    assert not grasp.force_closure(c1, c2, 0.15)


def test_cone_boundary_counts_as_closure():
    tilt = np.arctan(0.15)
    c1 = contact([0.03, 0, 0], tilted_normal([-1, 0, 0], tilt))
    c2 = contact([-0.03, 0, 0], [1, 0, 0])
    assert grasp.force_closure(c1, c2, 0.15)


def test_coincident_points_rejected():
    with pytest.raises(ValueError):
        grasp.force_closure(contact([0, 0, 0], [1, 0, 0]), contact([0, 0, 0], [-1, 0, 0]), 0.15)


def random_contact_pair(rng, mu):
    """Pair biased so roughly half the draws pass the two-cone test."""
    p1 = rng.uniform(-0.05, 0.05, 3)
    direction = geometry.unit(rng.standard_normal(3))
    p2 = p1 + direction * rng.uniform(0.01, 0.08)
    limit = np.arctan(mu)
    n1 = tilted_normal(direction, rng.uniform(0.0, 2.2 * limit))
    n2 = tilted_normal(-direction, rng.uniform(0.0, 2.2 * limit))
    # random azimuth around the line
    for n, p in ((n1, p1), (n2, p2)):
        pass
    q = geometry.quat_from_axis_angle(direction, rng.uniform(0, 2 * np.pi))
    n1 = geometry.quat_rotate(q, n1)
    q = geometry.quat_from_axis_angle(direction, rng.uniform(0, 2 * np.pi))
    n2 = geometry.quat_rotate(q, n2)
    return contact(p1, n1), contact(p2, n2)


def test_matches_cone_sampling_oracle_small():
    rng = np.random.default_rng(42)
    mu = 0.15
    checked = 0
    for _ in range(100):
        c1, c2 = random_contact_pair(rng, mu)
        line = c2.point - c1.point
        band = np.arctan(mu)
        margins = (abs(cone_angle(line, c1.inward_normal) - band),
                   abs(cone_angle(-line, c2.inward_normal) - band))
        if min(margins) <= 1e-6:
            continue
        analytic = grasp.force_closure(c1, c2, mu)
        oracle = force_closure_oracle(
            c1.point, c1.inward_normal, c2.point, c2.inward_normal, mu, n_forces=2000
        )
        assert analytic == oracle
        checked += 1
    assert checked >= 80


def test_mu_monotonicity():
    rng = np.random.default_rng(7)
    for _ in range(200):
        c1, c2 = random_contact_pair(rng, 0.15)
        mus = sorted(rng.uniform(0.02, 1.0, size=3))
        closures = [grasp.force_closure(c1, c2, m) for m in mus]
        for lo, hi in zip(closures[:-1], closures[1:]):
            assert (not lo) or hi


# -- sample_antipodal -----------------------------------------------------------

def test_sphere_grasps_are_antipodal(rng):
    sphere = assets.make_icosphere(0.03, subdivisions=3)
    grasps = grasp.sample_antipodal(sphere, grasp.GripperSpec(), 0.15, 20, rng)
    assert len(grasps) == 20
    for g in grasps:
        assert grasp.force_closure(g.contacts[0], g.contacts[1], 0.15)
        assert abs(g.width - 0.06) < 0.004  # chord through the near-center
        assert g.width <= 0.08


def test_sphere_too_wide_for_gripper(rng):
    sphere = assets.make_icosphere(0.05, subdivisions=3)
    with pytest.raises(NoGraspFound):
        grasp.sample_antipodal(sphere, grasp.GripperSpec(), 0.15, 5, rng)


def test_sampling_deterministic():
    cube = assets.make_cube(0.05)
    a = grasp.sample_antipodal(cube, grasp.GripperSpec(), 0.15, 10, np.random.default_rng(3))
    b = grasp.sample_antipodal(cube, grasp.GripperSpec(), 0.15, 10, np.random.default_rng(3))
    assert len(a) == len(b)
    for ga, gb in zip(a, b):
        np.testing.assert_array_equal(ga.position, gb.position)
        np.testing.assert_array_equal(ga.orientation, gb.orientation)
        assert ga.width == gb.width


def test_all_sampled_grasps_satisfy_invariants(rng):
    for mesh in (assets.make_cube(0.05), assets.make_box(0.2, 0.06, 0.04),
                 assets.make_cylinder(0.03, 0.1)):
        grasps = grasp.sample_antipodal(mesh, grasp.GripperSpec(), 0.15, 15, rng)
        for g in grasps:
            sep = np.linalg.norm(g.contacts[1].point - g.contacts[0].point)
            assert abs(sep - g.width) <= 1e-6
            assert 0.0 < g.width <= 0.08
            assert grasp.force_closure(g.contacts[0], g.contacts[1], 0.15)
            # closing axis runs through both contacts
            axis = g.closing_axis
            np.testing.assert_allclose(
                np.cross(axis, g.contacts[1].point - g.contacts[0].point), 0.0, atol=1e-9
            )


def test_precondition_violations():
    cube = assets.make_cube(0.05)
    with pytest.raises(ValueError):
        grasp.sample_antipodal(cube, grasp.GripperSpec(), 0.0, 5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        grasp.sample_antipodal(cube, grasp.GripperSpec(), 0.15, 0, np.random.default_rng(0))


# -- grasp_collision_free --------------------------------------------------------

def _placement(instance_id, mesh, translation):
    translation = np.asarray(translation, float)
    posed = mesh.vertices + translation
    center = posed.mean(axis=0)
    return Placement(
        instance_id=instance_id,
        category="thing",
        mesh=mesh,
        rotation=geometry.quat_identity(),
        translation=translation,
        circle_radius=float(np.linalg.norm(posed[:, :2] - center[:2], axis=1).max()),
        sphere_center=center,
        sphere_radius=float(np.linalg.norm(posed - center, axis=1).max()),
    )


def _top_down_grasp(center, width=0.04):
    half = width / 2.0
    c1 = contact(center + np.array([half, 0, 0]), [-1, 0, 0])
    c2 = contact(center - np.array([half, 0, 0]), [1, 0, 0])
    rot = np.column_stack([[1, 0, 0], [0, -1, 0], [0, 0, -1.0]])
    return grasp.GraspPose(
        position=np.asarray(center, float),
        orientation=geometry.quat_from_mat(rot),
        width=width,
        contacts=(c1, c2),
    )


def _layout(placements, table_height=0.0):
    return SceneLayout(table_height=table_height, placements=tuple(placements))


def test_lone_object_top_down_collision_free():
    cube = assets.make_cube(0.04)
    target = _placement("tgt", cube, [0.5, 0.0, 0.02])
    g = _top_down_grasp([0.5, 0.0, 0.02])
    assert grasp.grasp_collision_free(g, _layout([target]), "tgt")


def test_palm_below_table_collides():
    cube = assets.make_cube(0.04)
    target = _placement("tgt", cube, [0.5, 0.0, 0.02])
    # grasp from below: approach +z so the palm sits under the table
    rot = np.column_stack([[1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    center = np.array([0.5, 0.0, 0.02])
    g = grasp.GraspPose(
        position=center,
        orientation=geometry.quat_from_mat(rot),
        width=0.04,
        contacts=(contact(center + [0.02, 0, 0], [-1, 0, 0]),
                  contact(center - [0.02, 0, 0], [1, 0, 0])),
    )
    assert not grasp.grasp_collision_free(g, _layout([target]), "tgt")


def test_distractor_sphere_one_mm_from_finger_collides():
    cube = assets.make_cube(0.04)
    target = _placement("tgt", cube, [0.5, 0.0, 0.02])
    g = _top_down_grasp([0.5, 0.0, 0.02])
    boxes = grasp.gripper_boxes(g.position, g.orientation, grasp.GripperSpec(), 0.08)
    finger = boxes[0]
    # sphere center 1 mm beyond the finger face along its x axis
    r = 0.01
    gap = 0.001
    center = finger.center + finger.rot[:, 0] * (finger.half[0] + r - gap)
    distractor = Placement(
        instance_id="dist", category="thing", mesh=cube,
        rotation=geometry.quat_identity(), translation=center,
        circle_radius=r, sphere_center=center, sphere_radius=r,
    )
    assert not grasp.grasp_collision_free(g, _layout([target, distractor]), "tgt")
    # 1 mm clear of the finger instead: no collision
    center2 = finger.center + finger.rot[:, 0] * (finger.half[0] + r + gap)
    distractor2 = Placement(
        instance_id="dist", category="thing", mesh=cube,
        rotation=geometry.quat_identity(), translation=center2,
        circle_radius=r, sphere_center=center2, sphere_radius=r,
    )
    assert grasp.grasp_collision_free(g, _layout([target, distractor2]), "tgt")


def test_unknown_target_raises():
    cube = assets.make_cube(0.04)
    target = _placement("tgt", cube, [0.5, 0.0, 0.02])
    with pytest.raises(UnknownInstance):
        grasp.grasp_collision_free(_top_down_grasp([0.5, 0, 0.02]), _layout([target]), "ghost")
