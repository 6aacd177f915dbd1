import numpy as np
import pytest

import vertexflow as vf
from vertexflow.errors import ConfigError, SingularElementError
from vertexflow.mesh import element_p1_gradients

from conftest import jittered_mesh


def test_unit_square_split(unit_square_mesh):
    mesh = unit_square_mesh
    assert mesh.num_nodes == 4
    assert mesh.num_elements == 2
    assert mesh.element_volumes.sum() == pytest.approx(1.0, rel=1e-14)


def test_structured_counts_2d():
    mesh = vf.build_structured((40, 40), (100.0, 100.0))
    assert mesh.num_nodes == 41 * 41 == 1681
    assert mesh.num_elements == 2 * 40 * 40 == 3200
    assert mesh.element_volumes.sum() == pytest.approx(1e4, rel=1e-12)


def test_structured_node_count_matches_reported_coarse_level():
    mesh = vf.build_structured((4, 4), (1.0, 1.0))
    assert mesh.num_nodes == 25


def test_structured_counts_3d():
    mesh = vf.build_structured((3, 2, 4), (1.0, 2.0, 1.5))
    assert mesh.num_elements == 6 * 3 * 2 * 4
    assert mesh.num_nodes == 4 * 3 * 5
    assert mesh.element_volumes.sum() == pytest.approx(3.0, rel=1e-12)
    assert np.all(mesh.element_volumes > 0)


@pytest.mark.parametrize("bad", [((0, 1), (1.0, 1.0)), ((2, 2), (1.0, -1.0)),
                                 ((2, 2), (0.0, 1.0))])
def test_structured_rejects_bad_dims(bad):
    with pytest.raises(ConfigError):
        vf.build_structured(*bad)


def test_p1_gradients_reference_triangle():
    grads = vf.p1_gradients([(0, 0), (1, 0), (0, 1)])
    assert grads[0] == pytest.approx([-1.0, -1.0])
    assert grads[1] == pytest.approx([1.0, 0.0])
    assert grads[2] == pytest.approx([0.0, 1.0])


def test_p1_gradients_partition_of_unity():
    rng = np.random.default_rng(7)
    for _ in range(50):
        coords = rng.uniform(-1, 1, (3, 2))
        e1, e2 = coords[1] - coords[0], coords[2] - coords[0]
        if abs(e1[0] * e2[1] - e1[1] * e2[0]) < 1e-3:
            continue
        grads = vf.p1_gradients(coords)
        assert np.abs(grads.sum(axis=0)).max() < 1e-14 * max(1.0, np.abs(grads).max())
    for _ in range(50):
        coords = rng.uniform(-1, 1, (4, 3))
        if abs(np.linalg.det((coords[1:] - coords[0]).T)) < 1e-3:
            continue
        grads = vf.p1_gradients(coords)
        assert np.abs(grads.sum(axis=0)).max() < 1e-13 * max(1.0, np.abs(grads).max())


def test_p1_gradients_scale_as_inverse_length():
    base = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
    for h in (0.5, 2.0, 10.0):
        grads = vf.p1_gradients(base * h)
        assert grads == pytest.approx(vf.p1_gradients(base) / h, rel=1e-12)


def test_p1_gradients_rejects_degenerate():
    with pytest.raises(SingularElementError):
        vf.p1_gradients([(0, 0), (1, 1), (2, 2)])


def test_gradients_match_shape_function_derivatives(small_mesh):
    from oracles import fd_gradient, shape_function

    grads = element_p1_gradients(small_mesh)
    for e in (0, 7, 17):
        coords = small_mesh.element_coords(e)
        centroid = coords.mean(axis=0)
        for a in range(3):
            expected = fd_gradient(shape_function(coords, a), centroid)
            assert grads[e, a] == pytest.approx(expected, abs=1e-6)


def test_patch_identity(small_mesh):
    mesh = small_mesh
    patch_total = sum(mesh.element_volumes[p].sum() for p in mesh.node_patches)
    assert patch_total == pytest.approx((mesh.dim + 1) * mesh.element_volumes.sum(),
                                        rel=1e-13)
    mesh3 = vf.build_structured((2, 2, 2), (1.0, 1.0, 1.0))
    patch_total = sum(mesh3.element_volumes[p].sum() for p in mesh3.node_patches)
    assert patch_total == pytest.approx(4 * mesh3.element_volumes.sum(), rel=1e-13)


def test_neighbor_symmetry(small_mesh):
    mesh = small_mesh
    for i, nbrs in enumerate(mesh.neighbor_sets):
        assert i not in nbrs
        for j in nbrs:
            assert i in mesh.neighbor_sets[j]


def test_boundary_nodes(small_mesh):
    mesh = small_mesh
    on_edge = np.any((mesh.vertices == 0.0) | (mesh.vertices == 1.0), axis=1)
    assert set(mesh.boundary_nodes) == set(np.nonzero(on_edge)[0])


def test_jittered_mesh_still_valid():
    mesh = jittered_mesh((4, 4), (1.0, 1.0), seed=3)
    assert np.all(mesh.element_volumes > 0)
    assert mesh.element_volumes.sum() == pytest.approx(1.0, rel=1e-12)


def test_interpolate_nodal(small_mesh):
    mesh = small_mesh
    const = vf.interpolate_nodal(lambda x, y: 3.5, mesh)
    assert const == pytest.approx(np.full(mesh.num_nodes, 3.5))
    xs = vf.interpolate_nodal(lambda x, y: x, mesh)
    assert xs == pytest.approx(mesh.vertices[:, 0])


def test_interpolate_initial_saturation_field():
    mesh = vf.build_structured((4, 4), (1.0, 1.0))
    f = lambda x, y: 0.4 + 0.4 * x * y + 0.2 * np.cos(x)
    vals = vf.interpolate_nodal(f, mesh)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    assert vals == pytest.approx(0.4 + 0.4 * x * y + 0.2 * np.cos(x))


def test_mesh_file_round_trip(tmp_path, small_mesh):
    mesh = small_mesh
    lines = [f"2 {mesh.num_nodes} {mesh.num_elements}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [" ".join(str(v) for v in el) for el in mesh.elements]
    path = tmp_path / "square.msh"
    path.write_text("\n".join(lines) + "\n")

    loaded = vf.read_mesh(path)
    assert loaded.dim == 2
    assert loaded.vertices == pytest.approx(mesh.vertices)
    assert np.array_equal(loaded.elements, mesh.elements)


@pytest.mark.parametrize("content", [
    "",
    "2 3\n",
    "2 3 1\n0 0\n1 0\n0 1\n",            # missing element line
    "2 3 1\n0 0\n1 0\n0 1\n0 1 5\n",     # index out of range
    "2 3 1\n0 0\n1 0\nbad 1\n0 1 2\n",   # bad coordinate
])
def test_mesh_file_errors(tmp_path, content):
    path = tmp_path / "broken.msh"
    path.write_text(content)
    with pytest.raises(ConfigError):
        vf.read_mesh(path)


def test_mesh_file_degenerate_element(tmp_path):
    path = tmp_path / "flat.msh"
    path.write_text("2 3 1\n0 0\n1 1\n2 2\n0 1 2\n")
    with pytest.raises(SingularElementError):
        vf.read_mesh(path)
