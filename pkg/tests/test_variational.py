import numpy as np
import pytest
from scipy.optimize import minimize as scipy_minimize

from curvesvv import fixtures, geometry as geo, mesh as hm, polybasis as pb
from curvesvv import projection as proj
from curvesvv import variational as vc

ALL_KINDS = vc.FUNCTIONAL_KINDS


def hexagon_mesh():
    """Six triangles around a central free node."""
    center = np.array([[0.0, 0.0, 0.0]])
    ring = np.array(
        [[np.cos(a), np.sin(a), 0.0] for a in np.linspace(0, 2 * np.pi, 7)[:-1]]
    )
    nodes = np.vstack((center, ring))
    elements = [hm.Element("triangle", 1, [0, 1 + k, 1 + (k + 1) % 6]) for k in range(6)]
    boundary = [hm.BoundaryEdge([1 + k, 1 + (k + 1) % 6], "farfield") for k in range(6)]
    return hm.HighOrderMesh(nodes, elements, boundary)


def curved_annulus(order=4):
    patches = fixtures.quarter_annulus_geometry()
    msh = fixtures.quarter_annulus_mesh()
    index = geo.build_patch_index(patches)
    assocs = proj.assign_parent_surfaces(msh, index)
    snapped = proj.snap_nodes(msh, assocs)
    return proj.curve_boundary(snapped, order, patches)


class TestElementEnergy:
    def test_identity_elastic_kinds_zero(self):
        msh = hexagon_mesh()
        for kind in ("linear-elasticity", "hyperelastic"):
            func = vc.EnergyFunctional(kind, delta=1e-12)
            total = vc.mesh_energy(msh, func)
            assert abs(total) < 1e-10

    def test_identity_winslow_equals_twice_area(self):
        msh = hexagon_mesh()
        func = vc.EnergyFunctional("winslow", delta=1e-12)
        total = vc.mesh_energy(msh, func)
        area = 6 * 0.5 * np.sin(np.pi / 3)  # hexagon of unit-radius triangles
        assert abs(total - 2.0 * area) < 1e-8

    def test_distortion_identity_energy_equals_area(self):
        msh = hexagon_mesh()
        func = vc.EnergyFunctional("distortion", delta=1e-12)
        area = 6 * 0.5 * np.sin(np.pi / 3)
        assert abs(vc.mesh_energy(msh, func) - area) < 1e-8

    def test_energy_stable_under_quadrature_refinement(self):
        rng = np.random.default_rng(3)
        verts = np.array([[0, 0, 0], [1, 0.1, 0], [0.2, 1.1, 0]], float)
        lin = hm.HighOrderMesh(verts, [hm.Element("triangle", 1, [0, 1, 2])])
        msh = hm.elevate_order(lin, 3)
        elem = msh.elements[0]
        msh.nodes[elem.nodes[3:], :2] += rng.uniform(-0.02, 0.02, (elem.nodes.size - 3, 2))
        func = vc.EnergyFunctional("hyperelastic", delta=1e-8)
        base = vc.element_energy(msh, elem, func, rule=pb.gll_rule(6))
        refined = vc.element_energy(msh, elem, func, rule=pb.gll_rule(10))
        assert abs(base - refined) / abs(refined) <= 1e-8

    def test_regularization_vanishes_quadratically(self):
        # on a valid mesh, |E_delta - E_0| should shrink like delta^2
        msh = hexagon_mesh()
        msh.nodes[0, :2] = [0.12, -0.07]
        errs = []
        deltas = (1e-2, 1e-3, 1e-4)
        for kind in ("winslow", "hyperelastic", "distortion"):
            ref = vc.mesh_energy(msh, vc.EnergyFunctional(kind, delta=1e-14))
            errs = [
                abs(vc.mesh_energy(msh, vc.EnergyFunctional(kind, delta=d)) - ref)
                for d in deltas
            ]
            # each factor-10 delta reduction buys ~factor-100 energy change
            assert errs[1] <= errs[0] * 2e-2 + 1e-14
            assert errs[2] <= errs[1] * 2e-2 + 1e-14

    def test_finite_on_inverted_configuration(self):
        msh = hexagon_mesh()
        msh.nodes[0, :2] = [1.5, 0.0]  # pushes the free node through the ring
        for kind in ALL_KINDS:
            func = vc.EnergyFunctional(kind, delta=1e-3)
            val = vc.mesh_energy(msh, func)
            assert np.isfinite(val)


class TestEnergyGradient:
    def test_identity_elastic_kinds_zero_gradient(self):
        msh = hexagon_mesh()
        for kind in ("linear-elasticity", "hyperelastic"):
            func = vc.EnergyFunctional(kind, delta=1e-8)
            g = vc.energy_gradient(msh, func, 0)
            assert np.max(np.abs(g)) < 1e-12

    def _fd_gradient(self, msh, func, node, steps=(1e-4, 1e-5, 1e-6)):
        node_elems = msh.node_to_elements()
        star = node_elems[node]
        ideals = {e: vc._ideal_data(msh, msh.elements[e]) for e in star}
        q = max(msh.elements[e].order for e in star) + 2
        delta = func.resolved_delta()

        def star_energy():
            return vc._star_energy(msh, func, star, ideals, q, delta)

        best = None
        for h in steps:
            fd = np.zeros(2)
            for d in range(2):
                msh.nodes[node][d] += h
                ep = star_energy()
                msh.nodes[node][d] -= 2 * h
                em = star_energy()
                msh.nodes[node][d] += h
                fd[d] = (ep - em) / (2 * h)
            if best is None:
                best = fd
            else:
                best = np.vstack((best, fd))
        return np.atleast_2d(best)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(19)
        for kind in ALL_KINDS:
            func = vc.EnergyFunctional(kind, delta=1e-6)
            for _ in range(8):
                msh = hexagon_mesh()
                msh.nodes[:, :2] += rng.uniform(-0.15, 0.15, (len(msh.nodes), 2))
                g = vc.energy_gradient(msh, func, 0)
                fds = self._fd_gradient(msh, func, 0)
                rel = min(
                    np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
                    for fd in fds
                )
                assert rel <= 1e-6, f"{kind}: rel error {rel}"

    def test_translation_invariance(self):
        rng = np.random.default_rng(6)
        msh = hexagon_mesh()
        msh.nodes[:, :2] += rng.uniform(-0.1, 0.1, (len(msh.nodes), 2))
        shifted = msh.copy()
        shifted.nodes[:, :2] += [13.7, -4.2]
        for kind in ALL_KINDS:
            func = vc.EnergyFunctional(kind, delta=1e-6)
            g0 = vc.energy_gradient(msh, func, 0)
            g1 = vc.energy_gradient(shifted, func, 0)
            assert np.allclose(g0, g1, atol=1e-10)


class TestRelaxNode:
    def test_zero_displacement_at_minimum(self):
        msh = hexagon_mesh()
        func = vc.EnergyFunctional("linear-elasticity", delta=1e-8)
        disp = vc.relax_node(msh, func, 0)
        assert np.linalg.norm(disp) < 1e-12

    def test_matches_brute_force_grid_oracle(self):
        # one boundary vertex displaced; the center relaxes to the local
        # minimum of the two-variable star energy
        for kind in ALL_KINDS:
            msh = hexagon_mesh()
            msh.nodes[1, :2] = [1.25, 0.2]
            func = vc.EnergyFunctional(kind, delta=1e-8)
            node_elems = msh.node_to_elements()
            star = node_elems[0]
            ideals = {e: vc._ideal_data(msh, msh.elements[e]) for e in star}

            def star_energy(xy, msh=msh, star=star, ideals=ideals, func=func):
                saved = msh.nodes[0, :2].copy()
                msh.nodes[0, :2] = xy
                val = vc._star_energy(msh, func, star, ideals, 3, 1e-8)
                msh.nodes[0, :2] = saved
                return val

            # 400x400 grid scan plus derivative-free polish
            grid = np.linspace(-0.4, 0.4, 400)
            best, best_val = None, np.inf
            for x in grid:
                for y in grid:
                    v = star_energy((x, y))
                    if v < best_val:
                        best, best_val = (x, y), v
            polish = scipy_minimize(
                star_energy, best, method="Nelder-Mead",
                options={"xatol": 1e-10, "fatol": 1e-14},
            )
            oracle = polish.x

            for _ in range(60):
                disp = vc.relax_node(msh, func, 0, node_elems=node_elems,
                                     ideals=ideals, q=3, delta=1e-8)
                if np.linalg.norm(disp) < 1e-12:
                    break
            assert np.linalg.norm(msh.nodes[0, :2] - oracle) <= 1e-5, kind

    def test_line_search_never_increases_energy(self):
        rng = np.random.default_rng(44)
        for trial in range(100):
            kind = ALL_KINDS[trial % 4]
            msh = hexagon_mesh()
            msh.nodes[:, :2] += rng.uniform(-0.25, 0.25, (len(msh.nodes), 2))
            func = vc.EnergyFunctional(kind, delta=1e-6)
            node_elems = msh.node_to_elements()
            star = node_elems[0]
            ideals = {e: vc._ideal_data(msh, msh.elements[e]) for e in star}
            before = vc._star_energy(msh, func, star, ideals, 3, 1e-6)
            vc.relax_node(msh, func, 0, node_elems=node_elems, ideals=ideals,
                          q=3, delta=1e-6)
            after = vc._star_energy(msh, func, star, ideals, 3, 1e-6)
            assert after <= before + 1e-12


class TestOptimize:
    def test_straight_mesh_converges_immediately(self):
        msh = hexagon_mesh()
        func = vc.EnergyFunctional("winslow")
        out, report = vc.optimize(msh, func)
        assert report.converged
        assert len(report.rows) == 1
        assert np.allclose(out.nodes, msh.nodes, atol=1e-12)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_untangles_quarter_annulus(self, kind):
        curved = curved_annulus(order=4)
        assert len(hm.invalid_elements(curved)) >= 1
        func = vc.EnergyFunctional(kind)
        out, report = vc.optimize(curved, func, eps=1e-6)
        assert report.converged, f"{kind} did not converge"
        assert report.rows[-1][3] == 0, f"{kind} left invalid elements"
        energies = report.energies
        assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))

    def test_boundary_nodes_never_move(self):
        curved = curved_annulus(order=3)
        func = vc.EnergyFunctional("hyperelastic")
        out, _ = vc.optimize(curved, func, eps=1e-6, max_sweeps=40)
        for node in curved.boundary_node_ids():
            assert np.allclose(out.nodes[node], curved.nodes[node], atol=0.0)

    def test_translation_equivariance(self):
        curved = curved_annulus(order=3)
        shifted = curved.copy()
        shifted.nodes[:, :2] += [3.0, -2.0]
        func = vc.EnergyFunctional("winslow", delta=1e-6)
        out_a, _ = vc.optimize(curved, func, eps=1e-6, max_sweeps=60)
        out_b, _ = vc.optimize(shifted, func, eps=1e-6, max_sweeps=60)
        assert np.max(np.abs((out_b.nodes - out_a.nodes)[:, :2] - [3.0, -2.0])) <= 1e-8

    def test_halving_eps_never_raises_energy(self):
        curved = curved_annulus(order=3)
        func = vc.EnergyFunctional("winslow")
        _, r1 = vc.optimize(curved, func, eps=2e-5)
        _, r2 = vc.optimize(curved, func, eps=1e-5)
        assert r2.energies[-1] <= r1.energies[-1] + 1e-12

    def test_max_sweeps_reports_unconverged(self):
        curved = curved_annulus(order=4)
        func = vc.EnergyFunctional("winslow")
        _, report = vc.optimize(curved, func, eps=1e-14, max_sweeps=2)
        assert not report.converged
        assert len(report.rows) == 2

    def test_report_csv(self, tmp_path):
        msh = hexagon_mesh()
        func = vc.EnergyFunctional("winslow")
        _, report = vc.optimize(msh, func)
        path = tmp_path / "conv.csv"
        report.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "sweep,energy,residual,invalid_count"
        assert len(lines) == 2
