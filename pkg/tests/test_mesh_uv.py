import numpy as np
import pytest

from sketchsplat.errors import DimensionError, InputError
from sketchsplat.mesh import (DEFAULT_TEMPLATE_PATH, TemplateMesh,
                              build_default_head_mesh, load_mesh_obj, save_mesh_obj,
                              splat_vertex_features_to_uv)


def _quad_mesh(res=16):
    """Two triangles covering the unit UV square; a 3D slanted quad."""
    verts = np.array([[0, 0, 0], [1, 0, 0.2], [1, 1, 0.4], [0, 1, 0.1]], np.float32)
    faces = np.array([[0, 1, 2], [0, 2, 3]], np.int32)
    uvs = np.array([
        [[0, 0], [1, 0], [1, 1]],
        [[0, 0], [1, 1], [0, 1]],
    ], np.float32)
    return TemplateMesh(verts, faces, uvs, uv_resolution=res)


class TestTemplateMesh:
    def test_default_template_counts(self, mesh):
        assert 2000 <= mesh.vertex_count <= 3000
        table = mesh.texel_table()
        assert 11000 <= table.valid_count <= 14500  # ~13k gaussian budget

    def test_default_template_has_no_uv_overlap(self, mesh):
        assert mesh.uv_overlap_violations() == 0

    def test_barycentric_weights_partition_unity(self, mesh):
        table = mesh.texel_table()
        w = table.bary[table.valid]
        assert w.min() >= 0.0
        assert np.abs(w.sum(axis=1) - 1.0).max() <= 1e-6

    def test_asset_file_matches_generator(self, mesh):
        generated = build_default_head_mesh()
        assert np.allclose(mesh.vertices, generated.vertices, atol=1e-6)
        assert np.array_equal(mesh.faces, generated.faces)
        assert np.allclose(mesh.face_uvs, generated.face_uvs, atol=1e-6)
        assert DEFAULT_TEMPLATE_PATH.exists()

    def test_obj_roundtrip(self, tmp_path):
        m = _quad_mesh()
        path = tmp_path / "quad.obj"
        save_mesh_obj(m, path)
        loaded = load_mesh_obj(path, uv_resolution=16)
        assert np.allclose(loaded.vertices, m.vertices, atol=1e-6)
        assert np.array_equal(loaded.faces, m.faces)
        assert np.allclose(loaded.face_uvs, m.face_uvs, atol=1e-6)

    def test_loader_rejects_garbage(self, tmp_path):
        bad = tmp_path / "bad.obj"
        bad.write_text("v 0 0 0\nf 1/1 2/2\n")
        with pytest.raises(InputError):
            load_mesh_obj(bad)

    def test_negative_uv_area_rejected(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], np.float32)
        faces = np.array([[0, 1, 2]], np.int32)
        uvs = np.array([[[0, 0], [0, 1], [1, 0]]], np.float32)  # clockwise
        with pytest.raises(InputError):
            TemplateMesh(verts, faces, uvs)


class TestTexelSurfacePoint:
    def test_face_corner_texel_is_near_vertex(self):
        m = _quad_mesh(res=32)
        # texel nearest UV (0,0) is the corner of vertex 0 (bary ~ (1,0,0))
        p = m.texel_surface_point((0, 0))
        assert p is not None
        uv_eps = 1.0 / 32
        assert np.linalg.norm(p - m.vertices[0]) < 2 * uv_eps * 1.5

    def test_uncovered_texel_is_invalid(self, mesh):
        table = mesh.texel_table()
        iy, ix = np.nonzero(~table.valid)
        assert mesh.texel_surface_point((int(ix[0]), int(iy[0]))) is None

    def test_out_of_bounds_raises(self, mesh):
        with pytest.raises(IndexError):
            mesh.texel_surface_point((mesh.uv_resolution, 0))

    @pytest.mark.parametrize("seed", range(5))
    def test_covered_texel_lies_on_face_plane(self, mesh, seed):
        rng = np.random.default_rng(seed)
        table = mesh.texel_table()
        iy, ix = np.nonzero(table.valid)
        k = int(rng.integers(0, len(ix)))
        p = mesh.texel_surface_point((int(ix[k]), int(iy[k])))
        f = int(table.face_index[iy[k], ix[k]])
        tri = mesh.vertices[mesh.faces[f]].astype(np.float64)
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        n /= np.linalg.norm(n)
        assert abs(np.dot(p.astype(np.float64) - tri[0], n)) < 1e-5


class TestSplatVertexFeatures:
    def test_constant_features_fill_valid_texels(self, mesh):
        feats = np.full((mesh.vertex_count, 4), 3.25, np.float32)
        out = splat_vertex_features_to_uv(feats, mesh, 64)
        table = mesh.texel_table(64)
        assert np.abs(out.data[table.valid] - 3.25).max() <= 1e-5
        assert not out.data[~table.valid].any()

    def test_corner_texel_equals_vertex_feature(self):
        m = _quad_mesh(res=64)
        feats = np.array([[1.0], [2.0], [3.0], [4.0]], np.float32)
        out = splat_vertex_features_to_uv(feats, m, 64)
        # texel at UV (0.5/64, 0.5/64) has bary ~ (1,0,0) for face 0
        assert out.data[0, 0, 0] == pytest.approx(1.0, abs=0.12)

    def test_matches_per_texel_triangle_search_oracle(self):
        m = _quad_mesh()
        res = 32
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(4, 3)).astype(np.float32)
        out = splat_vertex_features_to_uv(feats, m, res)
        for iy in range(res):
            for ix in range(res):
                u, v = (ix + 0.5) / res, (iy + 0.5) / res
                expected = None
                for f in range(m.face_count):  # first containing face wins
                    tri = m.face_uvs[f].astype(np.float64)
                    mat = np.array([tri[1] - tri[0], tri[2] - tri[0]]).T
                    w12 = np.linalg.solve(mat, np.array([u, v]) - tri[0])
                    w = np.array([1 - w12.sum(), w12[0], w12[1]])
                    if np.all(w >= -1e-9):
                        expected = w @ feats[m.faces[f]].astype(np.float64)
                        break
                if expected is None:
                    assert not out.data[iy, ix].any()
                else:
                    assert np.abs(out.data[iy, ix] - expected).max() <= 1e-5

    def test_dimension_mismatch_raises(self, mesh):
        with pytest.raises(DimensionError):
            splat_vertex_features_to_uv(np.zeros((10, 3), np.float32), mesh, 64)
        with pytest.raises(DimensionError):
            splat_vertex_features_to_uv(
                np.zeros((mesh.vertex_count, 3), np.float32), mesh, 2)


def test_template_configurable_resolution():
    from sketchsplat.mesh import default_head_mesh
    from sketchsplat.uvmap import attribute_map_from_raw, decode_uv_to_gaussians
    mesh64 = default_head_mesh(uv_resolution=64)
    table = mesh64.texel_table()
    assert table.resolution == 64
    raw = np.zeros((64, 64, 14), np.float32)
    gset = decode_uv_to_gaussians(attribute_map_from_raw(raw, mesh64), mesh64)
    assert len(gset) == table.valid_count > 2000
    assert gset.uv_resolution == 64
