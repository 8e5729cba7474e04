import numpy as np
import pytest

from dfnvem import geometry as geo
from dfnvem import meshing as msh
from dfnvem.errors import ConstraintConflict, InconsistentEndpoints

UNIT_SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def euler_characteristic(mesh):
    return mesh.n_nodes - mesh.n_edges + mesh.n_cells


def total_area(mesh):
    return mesh.cell_areas.sum()


class TestCartesian:
    def test_counts_2x2(self):
        mesh = msh.cartesian_mesh(2)
        stats = msh.mesh_stats(mesh)
        assert stats["n_cells"] == 4
        assert stats["n_edges"] == 12
        assert abs(stats["h_avg"] - np.sqrt(2) / 2) < 1e-14
        assert abs(stats["h_max"] - np.sqrt(2) / 2) < 1e-14

    def test_geometry(self):
        mesh = msh.cartesian_mesh(5)
        assert abs(total_area(mesh) - 1.0) < 1e-12
        assert euler_characteristic(mesh) == 1
        assert len(mesh.boundary_edges) == 20
        # Outward normals sum to zero around every cell.
        for k in range(mesh.n_cells):
            nrm = mesh.cell_outward_normals(k)
            ln = mesh.edge_len[mesh.cells[k]]
            assert np.allclose((nrm * ln[:, None]).sum(0), 0, atol=1e-13)


class TestRandom:
    def test_valid_and_deterministic(self):
        m1 = msh.random_mesh(8, seed=3)
        m2 = msh.random_mesh(8, seed=3)
        assert np.array_equal(m1.nodes, m2.nodes)
        assert abs(total_area(m1) - 1.0) < 1e-12
        assert (m1.cell_areas > 0).all()
        # Boundary untouched.
        b = msh.cartesian_mesh(8)
        onb = (b.nodes[:, 0] < 1e-12) | (b.nodes[:, 0] > 1 - 1e-12) | \
              (b.nodes[:, 1] < 1e-12) | (b.nodes[:, 1] > 1 - 1e-12)
        assert np.allclose(m1.nodes[onb], b.nodes[onb])

    def test_moves_interior(self):
        m = msh.random_mesh(6, seed=1)
        b = msh.cartesian_mesh(6)
        assert not np.allclose(m.nodes, b.nodes)


class TestTriangulate:
    def test_unit_square_no_traces(self):
        mesh = msh.triangulate(UNIT_SQUARE, h_target=0.5)
        assert mesh.n_cells >= 2
        assert mesh.cell_diameters.max() <= 1.0 + 1e-12
        assert abs(total_area(mesh) - 1.0) < 1e-10
        assert euler_characteristic(mesh) == 1
        # Every square edge is covered by boundary edges.
        bmid = mesh.edge_mid[mesh.boundary_edges]
        dist = msh._points_segments_mindist(
            bmid, [(UNIT_SQUARE[i], UNIT_SQUARE[(i + 1) % 4]) for i in range(4)]
        )
        assert dist.max() < 1e-12
        blen = mesh.edge_len[mesh.boundary_edges].sum()
        assert abs(blen - 4.0) < 1e-10

    def test_octagon_with_diameter_trace(self):
        ang = np.arange(8) * np.pi / 4
        poly = np.column_stack([np.cos(ang), 0.5 + 0.5 * np.sin(ang)])
        mesh = msh.triangulate(poly, traces=[(0, [0, 0], [0, 1])], h_target=0.2)
        eids = np.where(mesh.edge_trace == 0)[0]
        assert len(eids) >= 5
        pts = mesh.nodes[np.unique(mesh.edge_nodes[eids])]
        assert np.abs(pts[:, 0]).max() < 1e-12
        assert abs(total_area(mesh) - abs(geo.polygon_area(poly))) < 1e-10

    def test_partial_trace_endpoints_are_nodes(self):
        mesh = msh.triangulate(
            UNIT_SQUARE, traces=[(0, [0.25, 0.5], [0.75, 0.5])], h_target=0.25
        )
        eids = np.where(mesh.edge_trace == 0)[0]
        assert len(eids) >= 2
        pts = mesh.nodes[np.unique(mesh.edge_nodes[eids])]
        assert np.abs(pts[:, 1] - 0.5).max() < 1e-12
        for endpoint in ([0.25, 0.5], [0.75, 0.5]):
            assert np.linalg.norm(mesh.nodes - endpoint, axis=1).min() < 1e-12
        # Trace edges are interior: two adjacent cells each.
        assert (mesh.edge_cells[eids] >= 0).all()

    def test_crossing_traces_split_at_xi(self):
        mesh = msh.triangulate(
            UNIT_SQUARE,
            traces=[(0, [0.1, 0.5], [0.9, 0.5]), (1, [0.5, 0.1], [0.5, 0.9])],
            h_target=0.2,
        )
        assert np.linalg.norm(mesh.nodes - [0.5, 0.5], axis=1).min() < 1e-12
        assert (mesh.edge_trace == 0).sum() >= 4
        assert (mesh.edge_trace == 1).sum() >= 4

    def test_conflicting_traces_raise(self):
        with pytest.raises(ConstraintConflict):
            msh.triangulate(
                UNIT_SQUARE,
                traces=[(0, [0.2, 0.5], [0.8, 0.5]),
                        (1, [0.2, 0.5 + 1e-7], [0.8, 0.5 + 1e-7])],
                h_target=0.25,
            )

    def test_deterministic(self):
        m1 = msh.triangulate(UNIT_SQUARE, h_target=0.3)
        m2 = msh.triangulate(UNIT_SQUARE, h_target=0.3)
        assert np.array_equal(m1.nodes, m2.nodes)
        assert np.array_equal(m1.edge_nodes, m2.edge_nodes)


def two_fracture_network():
    ang = np.arange(8) * np.pi / 4
    f0 = geo.Fracture(id=0, vertices=np.column_stack(
        [np.zeros(8), 0.5 + 0.5 * np.sin(ang), np.cos(ang)]))
    f1 = geo.Fracture(id=1, vertices=np.column_stack(
        [np.cos(ang), 0.5 + 0.5 * np.sin(ang), np.zeros(8)]))
    return geo.build_network([f0, f1])


class TestCorefine:
    def test_union_rule(self):
        got = msh.corefine([np.array([0, 0.5, 1.0]), np.array([0, 0.3, 1.0])],
                           1.0, 1e-9)
        assert np.allclose(got, [0, 0.3, 0.5, 1.0])

    def test_idempotent(self):
        a = np.array([0, 0.25, 0.5, 1.0])
        assert np.allclose(msh.corefine([a, a.copy()], 1.0, 1e-9), a)

    def test_tolerance_merge(self):
        got = msh.corefine(
            [np.array([0, 0.5, 1.0]), np.array([0, 0.5 + 1e-12, 1.0])],
            1.0, 1e-9,
        )
        assert np.allclose(got, [0, 0.5, 1.0])
        assert len(got) == 3

    def test_inconsistent_endpoints(self):
        with pytest.raises(InconsistentEndpoints):
            msh.corefine([np.array([0, 0.9]), np.array([0, 1.0])], 1.0, 1e-9)

    def test_network_corefine_matches_partitions(self):
        net = two_fracture_network()
        meshes = {
            0: msh.triangulate_fracture(net.fractures[0], net.traces_of(0), 0.33),
            1: msh.triangulate_fracture(net.fractures[1], net.traces_of(1), 0.21),
        }
        tms = msh.corefine_network(meshes, net)
        tm = tms[0]
        line = net.lines[0]
        # Both parents now carry identical trace partitions.
        lens = {}
        for fid in (0, 1):
            eids = np.where(meshes[fid].edge_trace == line.id)[0]
            lens[fid] = np.sort(meshes[fid].edge_len[eids])
            assert len(eids) == tm.n_elems
        assert np.allclose(lens[0], lens[1], atol=1e-12)
        assert np.allclose(np.sort(tm.elem_len), lens[0], atol=1e-12)
        # Union contains every original breakpoint of each parent.
        assert abs(tm.breakpoints[0]) < 1e-12
        assert abs(tm.breakpoints[-1] - line.length) < 1e-12
        # Meshes remain geometrically consistent after edge splits.
        for fid in (0, 1):
            area = abs(geo.polygon_area(net.fractures[fid].local_polygon))
            assert abs(meshes[fid].cell_areas.sum() - area) < 1e-10 * area


class TestSplitInterface:
    def build(self):
        net = two_fracture_network()
        meshes = {
            0: msh.triangulate_fracture(net.fractures[0], net.traces_of(0), 0.3),
            1: msh.triangulate_fracture(net.fractures[1], net.traces_of(1), 0.3),
        }
        tms = msh.corefine_network(meshes, net)
        return net, meshes, tms

    def test_duplication_counts(self):
        net, meshes, tms = self.build()
        tm = tms[0]
        for fid in (0, 1):
            before = meshes[fid].n_edges
            split = msh.split_interface_dofs(meshes[fid], tms, fid)
            assert split.n_edges == before + tm.n_elems
            for side in (1, -1):
                eids = tm.side_edges[(fid, side)]
                assert len(eids) == tm.n_elems
                # Each duplicated edge has exactly one adjacent cell.
                assert (split.edge_cells[eids, 0] >= 0).all()
                assert (split.edge_cells[eids, 1] < 0).all()
                assert (split.edge_trace_side[eids] == side).all()
            tm.side_edges.clear()

    def test_no_traces_identity(self):
        mesh = msh.cartesian_mesh(3)
        mesh.frame = geo.build_frame(
            np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float))
        out = msh.split_interface_dofs(mesh, {}, 0)
        assert out.n_edges == mesh.n_edges
        assert out.n_cells == mesh.n_cells

    def test_immersed_tip_not_duplicated(self):
        # Partial trace: tip node stays shared, non-trace edges untouched.
        f = geo.Fracture(id=0, vertices=np.array(
            [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float))
        line = geo.IntersectionLine(
            id=0, p0=[0.0, 0.5, 0.0], p1=[0.6, 0.5, 0.0], parents=(0, 1),
            end_kind=("boundary", "immersed"))
        mesh = msh.triangulate(
            f.local_polygon, [(0, [0.0, 0.5], [0.6, 0.5])], 0.3, frame=f.frame)
        n_nodes = mesh.n_nodes

        class FakeNet:
            lines = [line]
            points = []
            tol = 1e-9

        tms = msh.corefine_network({0: mesh}, FakeNet())
        split = msh.split_interface_dofs(mesh, tms, 0)
        assert split.n_nodes == n_nodes
        n_tr = tms[0].n_elems
        assert split.n_edges == mesh.n_edges + n_tr


class TestMeshIO:
    def test_roundtrip(self, tmp_path):
        mesh = msh.triangulate(UNIT_SQUARE, traces=[(0, [0.25, 0.5], [0.75, 0.5])],
                               h_target=0.3)
        path = tmp_path / "mesh.txt"
        msh.save_mesh(mesh, path)
        back = msh.load_mesh(path)
        assert np.array_equal(back.edge_nodes, mesh.edge_nodes)
        assert np.allclose(back.nodes, mesh.nodes)
        assert np.array_equal(back.edge_trace, mesh.edge_trace)
        assert back.n_cells == mesh.n_cells
        assert np.allclose(back.cell_areas, mesh.cell_areas)

    def test_imported_mesh_solves(self, tmp_path):
        # Externally generated triangulations enter through the text
        # format and run through the full pipeline unchanged.
        from _util import run
        frac = geo.Fracture(id=0, vertices=np.array(
            [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float))
        net = geo.build_network([frac])
        mesh = msh.triangulate(frac.local_polygon, h_target=0.3,
                               frame=frac.frame)
        path = tmp_path / "external.mesh.txt"
        msh.save_mesh(mesh, path)
        imported = msh.load_mesh(path, frame=frac.frame)
        g = lambda fid, x: 1.0 + 2.0 * np.asarray(x)[..., 0]
        problem, dofs, system, sol, rep = run(net, {0: imported}, g=g)
        c3 = imported.frame.to_global(imported.cell_centroids)
        assert np.abs(sol.pressure[0] - g(0, c3)).max() < 1e-10
