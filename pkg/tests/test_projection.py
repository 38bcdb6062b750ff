import math

import numpy as np
import pytest

from curvesvv import fixtures, geometry as geo, mesh as hm, projection as proj


def annulus_setup():
    patches = fixtures.quarter_annulus_geometry()
    msh = fixtures.quarter_annulus_mesh()
    index = geo.build_patch_index(patches)
    return msh, patches, index


class TestAssignParents:
    def test_node_on_patch_zero_distance(self):
        msh, patches, index = annulus_setup()
        assocs = {a.node: a for a in proj.assign_parent_surfaces(msh, index)}
        # node 1 sits exactly on the inner arc at 30 degrees
        assert assocs[1].patch_id == 0
        assert assocs[1].distance <= 1e-10

    def test_tie_broken_by_lowest_id(self):
        # two perpendicular boundary lines through the origin; the probe node
        # is equidistant from both and inside both inflated boxes
        line0 = geo.LinePatch(0, (0, 0, 0), (1, 0, 0))
        line1 = geo.LinePatch(1, (0, 0, 0), (0, 1, 0))
        nodes = np.array([[0.04, 0.04, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        msh = hm.HighOrderMesh(
            nodes,
            [hm.Element("triangle", 1, [0, 1, 2])],
            [hm.BoundaryEdge([0, 1], 0), hm.BoundaryEdge([2, 0], 1)],
        )
        index = geo.build_patch_index([line0, line1])
        assocs = {a.node: a for a in proj.assign_parent_surfaces(msh, index)}
        assert assocs[0].patch_id == 0
        assert abs(assocs[0].distance - 0.04) < 1e-12

    def test_matches_brute_force_on_200_nodes(self):
        rng = np.random.default_rng(31)
        patches = fixtures.rounded_plate_geometry()
        points = []
        for _ in range(200):
            patch = patches[rng.integers(len(patches))]
            lo, hi = patch.domain[:, 0], patch.domain[:, 1]
            s = lo + (hi - lo) * rng.uniform(0, 1, patch.dim)
            points.append(patch.point(s) + rng.uniform(-0.02, 0.02, 3) * [1, 1, 0])
        points.append(np.array([2.0, -1.0, 0.0]))  # strip apex, off boundary
        nodes = np.array(points)
        elements = [hm.Element("triangle", 1, [i, i + 1, 200]) for i in range(199)]
        boundary = [hm.BoundaryEdge([i, i + 1], "farfield") for i in range(199)]
        msh = hm.HighOrderMesh(nodes, elements, boundary)
        index = geo.build_patch_index(patches)
        assocs = {a.node: a for a in proj.assign_parent_surfaces(msh, index)}

        # oracle: project onto every patch, seeded from a dense parameter scan
        for node in range(200):
            point = nodes[node]
            best = None
            for patch in patches:
                lo, hi = patch.domain[:, 0], patch.domain[:, 1]
                grids = [np.linspace(lo[d], hi[d], 400) for d in range(patch.dim)]
                mesh_g = np.meshgrid(*grids, indexing="ij")
                samples = np.stack([m.ravel() for m in mesh_g], axis=1)
                pts = np.array([patch.point(s) for s in samples])
                seed = samples[np.argmin(np.linalg.norm(pts - point, axis=1))]
                _, dist = geo.project(patch, point, seed)
                if best is None or (dist, patch.id) < best:
                    best = (dist, patch.id)
            assert assocs[node].patch_id == best[1]

    def test_candidate_sparsity_on_rounded_plate(self):
        rng = np.random.default_rng(77)
        patches = fixtures.rounded_plate_geometry()
        index = geo.build_patch_index(patches)
        counts = []
        for _ in range(500):
            patch = patches[rng.integers(len(patches))]
            lo, hi = patch.domain[:, 0], patch.domain[:, 1]
            s = lo + (hi - lo) * rng.uniform(0, 1, patch.dim)
            counts.append(len(index.query(patch.point(s))))
        assert np.median(counts) <= 3

    def test_unassigned_node_error(self):
        line = geo.LinePatch(0, (10, 10, 0), (11, 10, 0))
        nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
        msh = hm.HighOrderMesh(
            nodes,
            [hm.Element("triangle", 1, [0, 1, 2])],
            [hm.BoundaryEdge([0, 1], 0)],
        )
        index = geo.build_patch_index([line])
        with pytest.raises(proj.UnassignedNodeError) as err:
            proj.assign_parent_surfaces(msh, index)
        assert set(err.value.nodes) == {0, 1}

    def test_threaded_matches_serial(self):
        msh, patches, index = annulus_setup()
        serial = proj.assign_parent_surfaces(msh, index)
        threaded = proj.assign_parent_surfaces(msh, index, threads=4)
        for a, b in zip(serial, threaded):
            assert (a.node, a.patch_id, a.params) == (b.node, b.patch_id, b.params)


def sliver_snap_fixture():
    """Boundary node whose snap would invert the sliver above it."""
    nodes = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.5, 0.05, 0.0],  # boundary node to snap
            [0.0, 0.07, 0.0],
            [1.0, 0.07, 0.0],
        ]
    )
    elements = [
        hm.Element("triangle", 1, [0, 1, 2]),
        hm.Element("triangle", 1, [2, 4, 3]),
    ]
    boundary = [hm.BoundaryEdge([0, 2], 0)]
    return hm.HighOrderMesh(nodes, elements, boundary)


class TestSnapNodes:
    def test_small_offset_snapped(self):
        msh, patches, index = annulus_setup()
        # nudge an inner-arc vertex slightly off the circle
        msh.nodes[1] *= 1.0 + 1e-4
        assocs = proj.assign_parent_surfaces(msh, index)
        snapped = proj.snap_nodes(msh, assocs)
        assert not snapped.excluded
        assert abs(np.linalg.norm(snapped.nodes[1][:2]) - 1.0) <= 1e-10

    def test_large_displacement_excluded(self):
        msh = sliver_snap_fixture()
        local = np.mean(msh.edge_lengths_at(2))
        target = msh.nodes[2] + np.array([0.0, 0.2 * local, 0.0])
        assoc = proj.NodeAssociation(2, 0, (0.5,), 0.2 * local, target)
        snapped = proj.snap_nodes(msh, [assoc])
        assert assoc.status == "excluded" and assoc.reason == "displacement"
        assert snapped.excluded[2] == "displacement"
        assert np.allclose(snapped.nodes[2], msh.nodes[2])

    def test_inversion_excluded(self):
        msh = sliver_snap_fixture()
        # target above the sliver top edge (y = 0.07) but within the
        # displacement budget (10% of mean incident edge ~ 0.05)
        target = np.array([0.5, 0.09, 0.0])
        assoc = proj.NodeAssociation(2, 0, (0.5,), 0.04, target)
        snapped = proj.snap_nodes(msh, [assoc])
        assert assoc.status == "excluded" and assoc.reason == "inversion"
        assert snapped.excluded[2] == "inversion"

    def test_snapped_xor_excluded_exhaustive(self):
        msh, patches, index = annulus_setup()
        msh.nodes[1] *= 1.0 + 5e-3
        assocs = proj.assign_parent_surfaces(msh, index)
        proj.snap_nodes(msh, assocs)
        statuses = {a.node: a.status for a in assocs}
        assert set(statuses) == msh.boundary_node_ids()
        assert all(s in ("snapped", "excluded") for s in statuses.values())

    def test_monotone_in_displacement_budget(self):
        rng = np.random.default_rng(5)
        msh, patches, index = annulus_setup()
        for node in sorted(msh.boundary_node_ids()):
            msh.nodes[node][:2] *= 1.0 + rng.uniform(0.0, 0.02)
        assocs = proj.assign_parent_surfaces(msh, index)
        snapped_sets = []
        for budget in (0.02, 0.05, 0.10, 0.30):
            for a in assocs:
                a.status, a.reason = "pending", None
            out = proj.snap_nodes(msh, assocs, max_rel_disp=budget)
            snapped_sets.append(
                {a.node for a in assocs if a.status == "snapped"}
            )
        for small, big in zip(snapped_sets, snapped_sets[1:]):
            assert small <= big


class TestCurveBoundary:
    def curved_annulus(self, order=3):
        msh, patches, index = annulus_setup()
        assocs = proj.assign_parent_surfaces(msh, index)
        snapped = proj.snap_nodes(msh, assocs)
        return proj.curve_boundary(snapped, order, patches), patches

    def test_arc_edge_interior_nodes_on_circle(self):
        curved, _ = self.curved_annulus(order=3)
        for edge in curved.boundary:
            if edge.tag == 0:
                radii = np.linalg.norm(curved.nodes[edge.nodes][:, :2], axis=1)
                assert np.max(np.abs(radii - 1.0)) <= 1e-10
            if edge.tag == 1:
                radii = np.linalg.norm(curved.nodes[edge.nodes][:, :2], axis=1)
                assert np.max(np.abs(radii - 2.0)) <= 1e-10

    def test_line_edge_nodes_equal_linear_interpolation(self):
        curved, _ = self.curved_annulus(order=4)
        for edge in curved.boundary:
            if edge.tag in (2, 3):
                a, b = curved.nodes[edge.nodes[0]], curved.nodes[edge.nodes[-1]]
                n = edge.nodes.size - 1
                for k, node in enumerate(edge.nodes[1:-1], start=1):
                    expect = a + (b - a) * k / n
                    assert np.allclose(curved.nodes[node], expect, atol=1e-12)

    def test_excluded_endpoint_keeps_edge_straight(self):
        msh, patches, index = annulus_setup()
        assocs = proj.assign_parent_surfaces(msh, index)
        snapped = proj.snap_nodes(msh, assocs)
        snapped.excluded[1] = "displacement"  # force an exclusion at a vertex
        curved = proj.curve_boundary(snapped, 3, patches)
        for edge in curved.boundary:
            if edge.tag == 0 and 1 in (edge.nodes[0], edge.nodes[-1]):
                a, b = curved.nodes[edge.nodes[0]], curved.nodes[edge.nodes[-1]]
                chord = b - a
                for node in edge.nodes[1:-1]:
                    rel = curved.nodes[node] - a
                    cross = rel[0] * chord[1] - rel[1] * chord[0]
                    assert abs(cross) <= 1e-12

    def test_annulus_has_no_exclusions_and_all_edges_curved(self):
        msh, patches, index = annulus_setup()
        assocs = proj.assign_parent_surfaces(msh, index)
        snapped = proj.snap_nodes(msh, assocs)
        assert not snapped.excluded
        curved = proj.curve_boundary(snapped, 4, patches)
        for edge in curved.boundary:
            patch = {p.id: p for p in patches}[edge.tag]
            for node in edge.nodes:
                _, dist = geo.project(
                    patch, curved.nodes[node], patch.domain_center()
                )
                assert dist <= 1e-9

    def test_order_one_is_noop(self):
        msh, patches, index = annulus_setup()
        curved = proj.curve_boundary(msh, 1, patches)
        assert np.array_equal(curved.nodes, msh.nodes)
        assert len(curved.elements) == len(msh.elements)

    def test_curving_inverts_inner_slivers(self):
        curved, _ = self.curved_annulus(order=4)
        assert len(hm.invalid_elements(curved)) >= 1

    def test_interior_edges_remain_straight(self):
        curved, _ = self.curved_annulus(order=3)
        boundary_nodes = curved.boundary_node_ids()
        for elem in curved.elements:
            for side in range(elem.num_vertices):
                ids = elem.side_node_ids(side)
                if all(int(i) in boundary_nodes for i in ids):
                    continue  # boundary side, may be curved
                a, b = curved.nodes[ids[0]], curved.nodes[ids[-1]]
                n = len(ids) - 1
                for k, node in enumerate(ids[1:-1], start=1):
                    expect = a + (b - a) * k / n
                    assert np.allclose(curved.nodes[node], expect, atol=1e-12)
