from __future__ import annotations

import numpy as np
import pytest

from fraclap.analysis import fit_slope
from fraclap.mesh import (TriangleMesh, build_disk_mesh, build_dof_map, coarse_disk, disk_hierarchy,
                          format_mesh, parse_mesh, prolongation, read_mesh, refine_uniform,
                          write_mesh)


def single_triangle():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return TriangleMesh(v, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]))


def square_five():
    """Unit square split into four triangles around its centre: one interior vertex."""
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], dtype=float)
    t = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    b = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    return TriangleMesh(v, t, b)


def test_coarse_fan():
    m = build_disk_mesh(0)
    assert m.nt == 4
    m.validate()
    r = np.linalg.norm(m.vertices[m.boundary_vertex_mask], axis=1)
    assert np.all(np.abs(r - 1) <= 1e-14)


def test_level_one_has_sixteen_triangles():
    assert build_disk_mesh(1).nt == 16


@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_disk_levels_valid(level):
    m = build_disk_mesh(level)
    m.validate()
    assert m.nt == 4 * 4 ** level
    r = np.linalg.norm(m.vertices[m.boundary_vertex_mask], axis=1)
    assert np.max(np.abs(r - 1)) <= 1e-14
    # every interior edge in two triangles, boundary edges in one
    t = m.triangles
    e = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert (counts == 1).sum() == m.nb
    assert set(counts.tolist()) <= {1, 2}


def test_refine_single_triangle():
    r = refine_uniform(single_triangle())
    assert r.nt == 4 and r.nv == 6
    r.validate()
    assert np.isclose(r.areas.sum(), 0.5)
    # the middle child uses only midpoints
    assert set(r.triangles[3].tolist()) == {3, 4, 5}


def test_euler_relation_preserved():
    m = build_disk_mesh(1)
    for _ in range(3):
        ne = len(m.edges)
        assert m.nv - ne + m.nt == 1  # simply connected planar domain
        m = refine_uniform(m)


def test_diameter_shrinks():
    meshes = disk_hierarchy(5)
    for a, b in zip(meshes[:-1], meshes[1:]):
        assert b.h <= 0.55 * a.h


def test_quasi_uniform_and_h_slope():
    meshes = disk_hierarchy(7)
    for m in meshes:
        d = m.diameters
        assert d.max() / d.min() <= 4.0
    # the coarse fan is excluded: its chords are far from the circle
    meshes = meshes[1:]
    lv = np.arange(len(meshes))
    slope = np.polyfit(lv, np.log([m.h for m in meshes]), 1)[0]
    assert abs(slope + np.log(2)) <= 0.05 * np.log(2)


def test_dof_count_exponent():
    meshes = disk_hierarchy(6)[2:]
    n = [build_dof_map(m, 0.25).n for m in meshes]
    assert 1.9 <= fit_slope([1 / m.h for m in meshes], n) <= 2.1


def test_boundary_tiling_under_refinement():
    m = build_disk_mesh(2)
    r = refine_uniform(m)
    # each parent boundary edge is split into two consecutive children
    for k, (a, b) in enumerate(m.boundary_edges):
        (a1, m1), (m2, b1) = r.boundary_edges[2 * k], r.boundary_edges[2 * k + 1]
        assert a1 == a and b1 == b and m1 == m2
        assert abs(np.linalg.norm(r.vertices[m1]) - 1) < 1e-14


def test_dofmap_examples():
    m = square_five()
    assert build_dof_map(m, 0.75).n == 1
    assert build_dof_map(m, 0.25).n == 5
    half = build_dof_map(m, 0.5)
    assert half.n == 1 and not half.boundary_dofs
    with pytest.raises(ValueError):
        build_dof_map(m, 1.0)
    with pytest.raises(ValueError):
        build_dof_map(m, 0.0)


@pytest.mark.parametrize("s", [0.25, 0.75])
def test_dofmap_invariants(s):
    m = build_disk_mesh(3)
    dm = build_dof_map(m, s)
    ids = dm.dof_of_vertex[dm.dof_of_vertex >= 0]
    assert sorted(ids.tolist()) == list(range(dm.n))
    on_bnd = dm.dof_of_vertex[m.boundary_vertex_mask]
    assert np.all(on_bnd >= 0) if s < 0.5 else np.all(on_bnd < 0)


def test_prolongation_values():
    c = build_disk_mesh(1)
    f = refine_uniform(c)
    dc, df = build_dof_map(c, 0.25), build_dof_map(f, 0.25)
    P = prolongation(f, dc, df).toarray()
    e = np.zeros(dc.n)
    vtx = 0  # the centre
    e[vtx] = 1.0
    w = P @ e
    assert w[vtx] == 1.0
    neighbours = [k for k, (a, b) in enumerate(f.parents) if a != b and vtx in (a, b)]
    assert neighbours and np.all(w[neighbours] == 0.5)
    assert np.count_nonzero(w) == 1 + len(neighbours)


def test_prolongation_requires_nesting():
    m = build_disk_mesh(2)
    dm = build_dof_map(m, 0.25)
    with pytest.raises(ValueError):
        prolongation(coarse_disk(), dm, dm)


def test_text_roundtrip(tmp_path):
    m = build_disk_mesh(2)
    text = format_mesh(m)
    head = text.splitlines()[0]
    assert head == f"vertices {m.nv} triangles {m.nt} boundary {m.nb}"
    p = tmp_path / "m.txt"
    write_mesh(m, p)
    back = read_mesh(p, circle=True)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary_edges, m.boundary_edges)
    assert format_mesh(back) == text


def test_parse_rejects_bad_header():
    with pytest.raises(ValueError):
        parse_mesh("verts 1 tris 0 boundary 0\n0 0\n")


def test_mesh_is_immutable():
    m = build_disk_mesh(1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 3.0
