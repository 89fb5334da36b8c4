import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIG2_EDGES, fig2_graph
from distobs.campaign import e4_instance
from distobs.control import (
    DecoupledControllerSet,
    UncertifiedError,
    build_plant_observer,
    compose_distributed_controller,
    composed_closed_loop,
    controller_violations,
    equivalence_gap,
    interconnection_matrix,
    permutation_witness,
    proposition2_pipeline,
    synthesize_decoupled,
)
from distobs.graph import DirectedGraph
from distobs.numerics import eigenvalues, spectral_radius
from distobs.plant import Plant, is_detectable, is_stabilizable
from distobs.simulator import fit_decay_rate, run, run_controlled
from distobs.synthesis import GainSet, design_observer, error_matrix
from distobs.weights import build_weight_matrix


def fig2_control_plant():
    A = np.diag([1.2, 0.8])
    H = [[[1, 0]], [[0, 1]], np.zeros((0, 2)), [[1, 1]], [[0, 1]], [[1, 0]], [[0, 1]]]
    B = [[[1], [0]], np.zeros((2, 0)), np.zeros((2, 0)), np.zeros((2, 0)), np.zeros((2, 0)),
         np.zeros((2, 0)), [[0], [1]]]
    return Plant(A, [np.array(h, float).reshape(-1, 2) for h in H],
                 [np.array(b, float).reshape(2, -1) for b in B])


def same_multiset(a, b, tol):
    a, b = list(np.sort_complex(np.asarray(a))), list(np.asarray(b))
    if len(a) != len(b):
        return False
    for x in a:
        k = int(np.argmin([abs(x - y) for y in b]))
        if abs(x - b[k]) > tol:
            return False
        b.pop(k)
    return True


@pytest.fixture(scope="module")
def fig2_design():
    g, p = fig2_graph(), fig2_control_plant()
    wm, res, _ = design_observer(g, p, seed=0)
    assert res.converged
    return g, p, wm, res.gains


@pytest.fixture(scope="module")
def scalar():
    p = Plant(np.array([[1.5]]), [np.array([[1.0]])], [np.array([[1.0]])])
    g = DirectedGraph(1)
    return g, p


class TestPlantObserver:
    def test_structure(self, fig2_design):
        g, p, wm, gains = fig2_design
        sys = build_plant_observer(p, wm, gains)
        n, m = p.n, p.m
        assert np.all(sys.M[:n, n:] == 0)
        for i, C in enumerate(sys.selectors):
            expect = np.zeros_like(C)
            expect[:, n + i * n:n + (i + 1) * n] = np.eye(n)
            np.testing.assert_array_equal(C, expect)
        for B, Bi in zip(sys.B_blocks, p.B_blocks):
            np.testing.assert_array_equal(B[:n], Bi)
            assert np.all(B[n:] == 0)

    def test_spectrum_union(self, fig2_design):
        g, p, wm, gains = fig2_design
        sys = build_plant_observer(p, wm, gains)
        expected = list(eigenvalues(p.A)) + list(eigenvalues(error_matrix(wm, p, gains)))
        assert same_multiset(eigenvalues(sys.M), expected, 1e-6)

    def test_rejects_uncertified(self, fig2_design):
        g, p, wm, gains = fig2_design
        with pytest.raises(UncertifiedError):
            build_plant_observer(p, wm, GainSet.zeros(p, gains.mu))

    def test_m1_reduction(self, scalar):
        g, p = scalar
        gains = GainSet([[[1.5]]], np.zeros((1, 1, 0)), np.zeros((1, 0, 1)), np.zeros((1, 0, 0)))
        sys = build_plant_observer(p, np.eye(1), gains)
        np.testing.assert_allclose(sys.M, [[1.5, 0.0], [1.5, 0.0]])

    def test_trajectory_matches_simulator(self, fig2_design):
        g, p, wm, gains = fig2_design
        sys = build_plant_observer(p, wm, gains)
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal(p.n)
        xh0 = rng.standard_normal((p.m, p.n))
        tr = run(p, wm, gains, x0, xh0, horizon=80, graph=g)
        s = np.concatenate([x0, xh0.ravel(), np.zeros(sum(gains.mu))])
        for k in range(81):
            ref = np.concatenate([tr.x[k], tr.xhat[k].ravel(), np.concatenate(tr.z[k]) if tr.z[k] else []])
            np.testing.assert_allclose(s, ref, atol=1e-10 * max(1.0, np.abs(ref).max()))
            s = sys.M @ s
        # omniscience with u = 0: every estimate tracks x, internal states vanish
        assert tr.max_error()[-1] < 1e-5
        assert all(np.abs(z).max(initial=0) < 1e-5 for z in tr.z[-1])


class TestDecoupled:
    def test_stable_plant_zero_controllers(self):
        p = Plant(np.diag([0.5, 0.2]), [np.eye(2)], [np.eye(2)])
        gains = GainSet([np.zeros((2, 2))], [np.zeros((2, 0))], [np.zeros((0, 2))], [np.zeros((0, 0))])
        sys = build_plant_observer(p, np.eye(1), gains)
        d = DecoupledControllerSet.from_blocks([(np.zeros((2, 2)), np.zeros((2, 0)), np.zeros((0, 2)), np.zeros((0, 0)))])
        assert spectral_radius(interconnection_matrix(sys, d)) < 1
        res = synthesize_decoupled(sys, p, nu=0)
        assert res.converged

    def test_scalar_pipeline(self, scalar):
        g, p = scalar
        res = proposition2_pipeline(p, g, seed=0)
        assert res.status == "ok"
        assert res.closed_loop_radius < 1
        assert res.equivalence_gap <= 1e-12

    @pytest.mark.parametrize("seed", range(8))
    def test_m1_separation(self, seed):
        rng = np.random.default_rng(500 + seed)
        n = int(rng.integers(1, 3))
        A = rng.standard_normal((n, n))
        A *= rng.uniform(0.8, 1.6) / max(spectral_radius(A), 1e-9)
        H = rng.standard_normal((1, n)) * (rng.random() < 0.8)
        B = rng.standard_normal((n, 1)) * (rng.random() < 0.8)
        p = Plant(A, [H], [B])
        res = proposition2_pipeline(p, DirectedGraph(1), seed=seed, restarts=6)
        expected = is_stabilizable(A, B)[0] and is_detectable(A, H)[0]
        assert res.converged == expected


class TestComposition:
    def test_permutation_identity(self, fig2_design):
        g, p, wm, gains = fig2_design
        sys = build_plant_observer(p, wm, gains)
        res = synthesize_decoupled(sys, p, seed=0)
        ctrl = compose_distributed_controller(gains, res.controllers, wm, p)
        A1 = composed_closed_loop(ctrl, p)
        A2 = interconnection_matrix(sys, res.controllers)
        perm = permutation_witness(p.n, list(gains.mu), res.controllers.nu)
        assert sorted(perm) == list(range(len(perm)))
        assert equivalence_gap(ctrl, sys, res.controllers, p) <= 1e-12
        np.testing.assert_allclose(A1[np.ix_(perm, perm)], A2, rtol=0, atol=1e-12)
        assert abs(spectral_radius(A1) - res.radius) < 1e-10
        assert res.converged and spectral_radius(A1) < 1
        assert controller_violations(ctrl, g) == []

    def test_only_neighbour_blocks(self, fig2_design):
        g, p, wm, gains = fig2_design
        d = DecoupledControllerSet.from_blocks(
            [(np.zeros((B.shape[1], p.n)), np.zeros((B.shape[1], 1)), np.zeros((1, p.n)), np.zeros((1, 1)))
             for B in p.B_blocks])
        ctrl = compose_distributed_controller(gains, d, wm, p)
        for (i, j) in ctrl.S_c:
            assert i == j or (j, i) in FIG2_EDGES

    def test_m1_observer_feedback(self, scalar):
        g, p = scalar
        res = proposition2_pipeline(p, g, seed=1)
        ctrl = res.controller
        assert ctrl.m == 1 and list(ctrl.S_c) == [(1, 1)]

    @given(st.integers(0, 10**6))
    @settings(max_examples=10, deadline=None)
    def test_random_equivalence_exact(self, seed):
        inst = e4_instance(seed)
        p, g = inst.plant, inst.graph
        wm = build_weight_matrix(g, p.A, seed=seed)
        rng = np.random.default_rng(seed)
        mus = [int(rng.integers(0, 3)) for _ in range(p.m)]
        gains = GainSet([rng.standard_normal((p.n, r)) for r in p.r],
                        [rng.standard_normal((p.n, k)) for k in mus],
                        [rng.standard_normal((k, r)) for k, r in zip(mus, p.r)],
                        [rng.standard_normal((k, k)) for k in mus])
        sys = build_plant_observer(p, wm, gains, check=False)
        blocks = []
        for B in p.B_blocks:
            nu = int(rng.integers(0, 3))
            q = B.shape[1]
            blocks.append((rng.standard_normal((q, p.n)), rng.standard_normal((q, nu)),
                           rng.standard_normal((nu, p.n)), rng.standard_normal((nu, nu))))
        d = DecoupledControllerSet.from_blocks(blocks)
        ctrl = compose_distributed_controller(gains, d, wm, p)
        assert equivalence_gap(ctrl, sys, d, p) <= 1e-12


class TestPipeline:
    def test_assumption_i(self):
        p = Plant(np.array([[2.0]]), [np.array([[1.0]])], [np.array([[0.0]])])
        res = proposition2_pipeline(p, DirectedGraph(1))
        assert res.status == "assumption_i_violated" and res.observer is None

    def test_assumption_ii(self):
        p = Plant(np.diag([2.0, 3.0]), [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])],
                  [np.eye(2), np.zeros((2, 0))])
        res = proposition2_pipeline(p, DirectedGraph(2, [(1, 2)]))
        assert res.status == "assumption_ii_violated" and res.observer is None

    def test_fig2_pipeline_decays(self):
        g, p = fig2_graph(), fig2_control_plant()
        res = proposition2_pipeline(p, g, seed=0)
        assert res.status == "ok"
        rng = np.random.default_rng(0)
        tr = run_controlled(res.controller, p, rng.standard_normal(p.n),
                            rng.standard_normal(sum(res.controller.dims)), 300)
        norms = tr.state_norm
        assert norms[-1] < 1e-6 * norms[0]
        assert fit_decay_rate(norms) <= res.closed_loop_radius + 0.05
