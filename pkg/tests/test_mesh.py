import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hhostokes.mesh import (
    FAMILIES,
    MAX_AMPLITUDE,
    MeshError,
    format_mesh,
    generate,
    generate_cartesian,
    generate_distorted_cartesian,
    generate_distorted_triangular,
    load_mesh,
    mesh_stats,
    parse_mesh,
)


def check_invariants(mesh):
    for f, face in enumerate(mesh.faces):
        assert len(face.cells) in (1, 2)
        assert face.is_boundary == (len(face.cells) == 1)
        assert face.length > 0
        for c in face.cells:
            assert f in mesh.cells[c].faces
    for c, cell in enumerate(mesh.cells):
        assert cell.area > 0
        assert np.allclose(np.linalg.norm(cell.normals, axis=1), 1.0, atol=1e-14)
        closure = sum(mesh.faces[f].length * n for f, n in zip(cell.faces, cell.normals))
        assert np.abs(closure).max() <= 1e-12 * cell.diameter
        for f in cell.faces:
            assert mesh.faces[f].length <= cell.diameter + 1e-15
            assert c in mesh.faces[f].cells
    for f in mesh.interior_faces:
        c1, c2 = mesh.faces[f].cells
        n1 = mesh.cells[c1].normals[mesh.cells[c1].faces.index(f)]
        n2 = mesh.cells[c2].normals[mesh.cells[c2].faces.index(f)]
        assert np.allclose(n1, -n2, atol=1e-14)
    assert mesh.h == max(c.diameter for c in mesh.cells)
    assert abs(sum(c.area for c in mesh.cells) - 1.0) <= 1e-12


def test_cartesian_counts():
    m = generate_cartesian(1)
    assert (m.n_cells, len(m.faces), len(m.boundary_faces), len(m.interior_faces)) == (1, 4, 4, 0)
    m = generate_cartesian(2)
    assert (m.n_cells, len(m.faces), len(m.interior_faces)) == (4, 12, 4)
    assert generate_cartesian(8).h == pytest.approx(math.sqrt(2) / 8, rel=1e-14)


def test_triangular_counts():
    m = generate_distorted_triangular(2, 0.0)
    assert (m.n_cells, len(m.faces)) == (8, 16)
    m = generate_distorted_triangular(1, 0.0)
    assert (m.n_cells, len(m.interior_faces)) == (2, 1)
    assert generate_distorted_triangular(4, 0.15).n_cells == 32


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("n", [2, 4, 7])
def test_generator_invariants(family, n):
    check_invariants(generate(family, n, 0.15))


def test_zero_amplitude_is_cartesian():
    a, b = generate_distorted_cartesian(4, 0.0), generate_cartesian(4)
    assert np.array_equal(a.vertices, b.vertices)
    assert [c.vertices for c in a.cells] == [c.vertices for c in b.cells]


def test_distortion_keeps_boundary():
    m, ref = generate_distorted_cartesian(2, 0.15), generate_cartesian(2)
    on_bdry = np.any((ref.vertices == 0) | (ref.vertices == 1), axis=1)
    assert np.array_equal(m.vertices[on_bdry], ref.vertices[on_bdry])
    m4 = generate_distorted_cartesian(4, 0.15)
    assert not np.array_equal(m4.vertices, generate_cartesian(4).vertices)


def test_cartesian_refinement_halves_h():
    for n in (2, 4, 8):
        assert generate_cartesian(2 * n).h == pytest.approx(generate_cartesian(n).h / 2, rel=1e-14)


@pytest.mark.parametrize("family", ["distorted_cartesian", "distorted_triangular"])
def test_distorted_refinement_roughly_halves_h(family):
    for n in (4, 8, 16):
        ratio = generate(family, n).h / generate(family, 2 * n).h
        assert 1.8 < ratio < 2.2


def test_invalid_parameters():
    with pytest.raises(ValueError):
        generate_cartesian(0)
    with pytest.raises(ValueError):
        generate_distorted_cartesian(4, 0.5)
    with pytest.raises(ValueError):
        generate_distorted_cartesian(1, 0.1)
    with pytest.raises(ValueError):
        generate("hexagonal", 4)


SQUARE = """polymesh 2d
# unit square
vertices 4
0 0
1 0
0 1
1 1
cells 1
4 0 1 3 2
"""

L_SHAPE = """polymesh 2d
vertices 8
0 0
1 0
2 0
0 1
1 1
2 1
0 2
1 2
cells 3
4 0 1 4 3
4 1 2 5 4
4 3 4 7 6
"""


def test_parse_single_square_matches_generator():
    m, ref = parse_mesh(SQUARE), generate_cartesian(1)
    assert np.array_equal(m.vertices, ref.vertices)
    assert m.cells[0].vertices == ref.cells[0].vertices
    assert m.h == ref.h


def test_parse_l_shape():
    m = parse_mesh(L_SHAPE)
    assert (m.n_cells, len(m.faces)) == (3, 10)


def test_load_and_round_trip(tmp_path):
    m = generate_distorted_triangular(3)
    p = tmp_path / "m.txt"
    p.write_text(format_mesh(m))
    m2 = load_mesh(p)
    assert np.array_equal(m.vertices, m2.vertices)
    assert [c.faces for c in m.cells] == [c.faces for c in m2.cells]


def test_non_manifold_rejected():
    text = """polymesh 2d
vertices 5
0 0
1 0
0 1
1 1
0 -1
cells 3
3 0 1 2
3 1 0 4
3 0 1 3
"""
    with pytest.raises(MeshError, match="non-manifold"):
        parse_mesh(text)


def test_zero_area_and_orientation_rejected():
    text = SQUARE.replace("4 0 1 3 2", "4 0 2 3 1")
    with pytest.raises(MeshError, match="area"):
        parse_mesh(text)
    flat = "polymesh 2d\nvertices 3\n0 0\n1 0\n2 0\ncells 1\n3 0 1 2\n"
    with pytest.raises(MeshError, match="area"):
        parse_mesh(flat)


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("polymesh 3d\n", 1),
        ("polymesh 2d\nvertices x\n", 2),
        ("polymesh 2d\nvertices 1\n0 0 0\n", 3),
        ("polymesh 2d\nvertices 1\n\n# c\n0 a\n", 5),
        ("polymesh 2d\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n4 0 1 2\n", 7),
    ],
)
def test_parse_errors_carry_line_numbers(text, lineno):
    with pytest.raises(MeshError, match=f"<string>:{lineno}:"):
        parse_mesh(text)


def test_parse_truncated():
    with pytest.raises(MeshError, match="end of file"):
        parse_mesh("polymesh 2d\nvertices 2\n0 0\n")


def test_missing_vertex_rejected():
    with pytest.raises(MeshError, match="missing vertex"):
        parse_mesh(SQUARE.replace("4 0 1 3 2", "4 0 1 3 9"))


def test_mesh_stats():
    assert mesh_stats(generate_cartesian(4)).max_faces_per_cell == 4
    assert mesh_stats(generate_distorted_triangular(4, 0.15)).max_faces_per_cell == 3
    s = mesh_stats(generate_cartesian(8))
    assert s.min_face_cell_ratio == pytest.approx(1 / math.sqrt(2), rel=1e-14)
    for fam in FAMILIES:
        s = mesh_stats(generate(fam, 4))
        assert 0 < s.min_inradius_ratio < 1 and 0 < s.min_face_cell_ratio <= s.max_face_cell_ratio <= 1


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 6), amp=st.floats(0.0, MAX_AMPLITUDE, exclude_max=True))
def test_distorted_meshes_valid(n, amp):
    check_invariants(generate_distorted_cartesian(n, amp))
    check_invariants(generate_distorted_triangular(n, amp))


def test_amplitude_bound():
    # the n = 3 triangular mesh is the tightest case for the bound
    check_invariants(generate_distorted_triangular(3, np.nextafter(MAX_AMPLITUDE, 0)))
    for gen in (generate_distorted_cartesian, generate_distorted_triangular):
        with pytest.raises(ValueError, match="amplitude"):
            gen(3, MAX_AMPLITUDE)
