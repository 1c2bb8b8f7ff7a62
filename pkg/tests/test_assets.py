import numpy as np
import pytest

from graspforge import assets, geometry
from graspforge.errors import DegenerateMesh, NoStablePose, ParseError

from oracles import resting_com_inside_support


# -- load_mesh ---------------------------------------------------------------

def test_load_unit_cube(cube_obj):
    mesh = assets.load_mesh(cube_obj)
    assert len(mesh.vertices) == 8
    assert len(mesh.triangles) == 12
    np.testing.assert_allclose(mesh.extents(), [1.0, 1.0, 1.0])


def test_load_preserves_vertex_order(cube_obj):
    mesh = assets.load_mesh(cube_obj)
    reference = assets.make_cube(1.0)
    np.testing.assert_allclose(mesh.vertices, reference.vertices)


def test_zero_area_triangle_dropped(tmp_path):
    path = tmp_path / "degen.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
        "f 1 2 3\nf 1 2 4\nf 1 3 4\nf 2 3 4\n"
        "f 1 1 2\n"  # zero area
    )
    mesh = assets.load_mesh(path)
    assert len(mesh.triangles) == 4


def test_empty_file_is_parse_error(tmp_path):
    path = tmp_path / "empty.obj"
    path.write_text("")
    with pytest.raises(ParseError):
        assets.load_mesh(path)


def test_malformed_vertex_is_parse_error(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0\nf 1 2 3\n")
    with pytest.raises(ParseError):
        assets.load_mesh(path)


def test_all_degenerate_is_degenerate_mesh(tmp_path):
    path = tmp_path / "flat.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n")
    with pytest.raises(DegenerateMesh):
        assets.load_mesh(path)


def test_other_records_ignored(tmp_path, cube_obj):
    decorated = tmp_path / "decorated.obj"
    decorated.write_text("# header\nvn 0 0 1\nusemtl foo\n" + cube_obj.read_text())
    mesh = assets.load_mesh(decorated)
    assert len(mesh.vertices) == 8


# -- scale_to_category --------------------------------------------------------

def test_scale_within_category_range(rng):
    # object scales span 2 cm to 35 cm
    cube = assets.make_cube(1.0)
    spec = assets.CategorySpec("thing", 0.02, 0.35)
    for _ in range(100):
        scaled = assets.scale_to_category(cube, spec, rng)
        extent = scaled.extents().max()
        assert 0.02 - 1e-9 <= extent <= 0.35 + 1e-9


def test_scale_degenerate_range_is_exact(rng):
    cube = assets.make_cube(1.0)
    spec = assets.CategorySpec("fixed", 0.1, 0.1)
    scaled = assets.scale_to_category(cube, spec, rng)
    assert abs(scaled.extents().max() - 0.1) < 1e-9


def test_scale_deterministic():
    cube = assets.make_cube(1.0)
    spec = assets.CategorySpec("thing", 0.02, 0.35)
    a = assets.scale_to_category(cube, spec, np.random.default_rng(5))
    b = assets.scale_to_category(cube, spec, np.random.default_rng(5))
    np.testing.assert_array_equal(a.vertices, b.vertices)


def test_scale_idempotent_at_drawn_extent(rng):
    cube = assets.make_cube(1.0)
    spec = assets.CategorySpec("thing", 0.05, 0.3)
    once = assets.scale_to_category(cube, spec, np.random.default_rng(2))
    again = assets.scale_to_extent(once, once.extents().max())
    np.testing.assert_allclose(once.vertices, again.vertices, atol=1e-12)


# -- simplify_mesh ------------------------------------------------------------

def test_simplify_noop_when_at_target():
    cube = assets.make_cube(1.0)
    assert assets.simplify_mesh(cube, 8) is cube


def test_simplify_icosphere_to_100():
    sphere = assets.make_icosphere(0.5, subdivisions=3)
    assert len(sphere.vertices) == 642
    simplified = assets.simplify_mesh(sphere, 100)
    assert 4 <= len(simplified.vertices) <= 100
    # bbox preserved within 5% per axis
    np.testing.assert_allclose(simplified.extents(), sphere.extents(), rtol=0.05)
    assert len(simplified.triangles) > 0


def test_simplify_target_too_small_rejected():
    with pytest.raises(ValueError):
        assets.simplify_mesh(assets.make_cube(1.0), 3)


# -- center of mass -----------------------------------------------------------

def test_com_of_cube_is_center():
    cube = assets.make_box(1.0, 2.0, 3.0)
    np.testing.assert_allclose(cube.center_of_mass(), [0.0, 0.0, 0.0], atol=1e-12)


def test_com_shifts_with_mesh():
    cube = assets.make_cube(1.0)
    shifted = assets.Mesh(cube.vertices + np.array([0.5, 0.0, 0.25]), cube.triangles)
    np.testing.assert_allclose(shifted.center_of_mass(), [0.5, 0.0, 0.25], atol=1e-12)


# -- stable_poses -------------------------------------------------------------

def test_cube_has_six_stable_faces():
    poses = assets.stable_poses(assets.make_cube(1.0))
    assert len(poses) >= 6


def test_upright_only_returns_identity():
    poses = assets.stable_poses(assets.make_cube(1.0), upright_only=True)
    assert len(poses) == 1
    np.testing.assert_allclose(poses[0], geometry.quat_identity())


def test_tall_box_has_lying_poses():
    box = assets.make_box(0.02, 0.02, 0.3)
    poses = assets.stable_poses(box)
    heights = []
    for q in poses:
        verts = geometry.quat_rotate(q, box.vertices)
        heights.append(verts[:, 2].max() - verts[:, 2].min())
    # standing (0.3 tall) and lying (0.02 tall) poses both present
    assert min(heights) < 0.05
    assert max(heights) > 0.25


def test_every_pose_passes_support_oracle():
    for mesh in (assets.make_cube(1.0), assets.make_box(0.02, 0.02, 0.3),
                 assets.make_wedge(0.6, 1.0, 0.5), assets.make_cylinder(0.3, 1.0)):
        for q in assets.stable_poses(mesh):
            assert resting_com_inside_support(mesh, q)


def test_poses_survive_one_degree_tilt():
    rng = np.random.default_rng(0)
    for mesh in (assets.make_cube(1.0), assets.make_box(0.02, 0.02, 0.3),
                 assets.make_wedge(0.6, 1.0, 0.5)):
        for q in assets.stable_poses(mesh):
            for _ in range(8):
                phi = rng.uniform(0.0, 2.0 * np.pi)
                axis = [np.cos(phi), np.sin(phi), 0.0]
                assert resting_com_inside_support(mesh, q, tilt_axis=axis, tilt_deg=1.0)


def test_face_flush_on_table():
    box = assets.make_box(0.1, 0.2, 0.3)
    for q in assets.stable_poses(box):
        verts = geometry.quat_rotate(q, box.vertices)
        z_min = verts[:, 2].min()
        on_plane = np.sum(verts[:, 2] <= z_min + 1e-9)
        assert on_plane >= 3  # a full face, not an edge or corner


def test_no_stable_pose_on_degenerate_hull():
    # coplanar vertices in a tilted plane: positive bbox extents, flat hull
    flat = assets.Mesh(
        np.array([[0.0, 0, 0], [1.0, 0, 1.0], [0, 1.0, 0], [1.0, 1.0, 1.0]]),
        np.array([[0, 1, 2], [1, 3, 2]]),
    )
    with pytest.raises(NoStablePose):
        assets.stable_poses(flat)


def test_no_stable_pose_under_impossible_margin():
    with pytest.raises(NoStablePose):
        assets.stable_poses(assets.make_cube(1.0), margin=10.0)


# -- registry and library ------------------------------------------------------

def test_category_registry_round_trip(tmp_path):
    path = tmp_path / "categories.json"
    path.write_text('{"cup": {"min_size": 0.05, "max_size": 0.12, "upright_only": true}}')
    registry = assets.load_category_registry(path)
    assert registry["cup"].upright_only
    assert registry["cup"].min_size == 0.05


def test_category_spec_bounds():
    with pytest.raises(ValueError):
        assets.CategorySpec("bad", 0.2, 0.1)


def test_library_loads_each_instance_once(builtin_library):
    library = assets.AssetLibrary.from_entries(list(builtin_library.entries.values()))
    rng = np.random.default_rng(0)
    ids = library.instance_ids()
    for _ in range(200):
        iid = ids[int(rng.integers(len(ids)))]
        spec = library.entries[iid].spec
        library.scaled(iid, float(rng.uniform(spec.min_size, spec.max_size)))
    assert library.load_count == len(ids)


def test_library_scaled_cache_bounded():
    entries = list(assets.AssetLibrary.from_entries(
        __import__("graspforge.config", fromlist=["builtin_entries"]).builtin_entries()
    ).entries.values())
    library = assets.AssetLibrary.from_entries(entries, max_cached_scaled=4)
    rng = np.random.default_rng(0)
    for iid in library.instance_ids():
        spec = library.entries[iid].spec
        for _ in range(4):
            library.scaled(iid, float(rng.uniform(spec.min_size, spec.max_size)))
    assert len(library._scaled) <= 4
