import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fig2_graph, fig2_plant
from distobs.graph import DirectedGraph
from distobs.plant import Plant
from distobs.simulator import (
    NoiseModel,
    ObserverNetworkState,
    WeightGraphError,
    csv_header,
    fit_decay_rate,
    run,
    run_controlled,
    step,
    write_csv,
)
from distobs.synthesis import GainSet, design_observer, error_matrix
from distobs.weights import build_weight_matrix


@pytest.fixture(scope="module")
def certified():
    g, p = fig2_graph(), fig2_plant()
    wm, res, _ = design_observer(g, p, seed=0)
    assert res.converged
    return g, p, wm, res


def unit_errors(rng, m, n):
    e = rng.standard_normal((m, n))
    return e / np.linalg.norm(e, axis=1, keepdims=True)


class TestStep:
    def test_open_loop_identity_weights(self):
        A = np.array([[1.1, 0.2], [0.0, 0.5]])
        p = Plant(A, [np.zeros((0, 2))] * 2)
        g = GainSet.zeros(p, [0, 0])
        xh = np.array([[1.0, 2.0], [3.0, -1.0]])
        s = step(ObserverNetworkState(np.zeros(2), xh, [np.zeros(0)] * 2), p, np.eye(2), g,
                 graph=DirectedGraph(2))
        np.testing.assert_allclose(s.xhat, xh @ A.T)
        assert s.k == 1

    def test_zero_error_stays_zero(self, certified):
        g, p, wm, res = certified
        x0 = np.array([0.3, -0.7])
        tr = run(p, wm, res.gains, x0, np.tile(x0, (p.m, 1)), horizon=50, graph=g)
        assert tr.max_error().max() <= 1e-12 * max(1.0, np.abs(tr.x).max())

    def test_hand_computed_scalar(self):
        a = 2.0
        p = Plant(np.array([[a]]), [np.array([[1.0]]), np.array([[3.0]])])
        W = np.array([[0.75, 0.25], [0.0, 1.0]])
        g = GainSet([[[0.5]], [[0.2]]], [[[1.0]], np.zeros((1, 0))], [[[0.4]], np.zeros((0, 3 // 3))],
                    [[[0.1]], np.zeros((0, 0))])
        x, xh1, xh2, z1 = 1.0, 0.5, -1.0, 2.0
        s = step(ObserverNetworkState(np.array([x]), np.array([[xh1], [xh2]]), [np.array([z1]), np.zeros(0)]),
                 p, W, g, graph=DirectedGraph(2, [(2, 1)]))
        innov1 = x - xh1
        innov2 = 3 * x - 3 * xh2
        assert s.xhat[0, 0] == pytest.approx(a * (0.75 * xh1 + 0.25 * xh2) + 0.5 * innov1 + 1.0 * z1)
        assert s.xhat[1, 0] == pytest.approx(a * xh2 + 0.2 * innov2)
        assert s.z[0][0] == pytest.approx(0.4 * innov1 + 0.1 * z1)
        assert s.x[0] == a * x

    def test_weight_graph_inconsistency(self):
        p = Plant(np.eye(1), [np.eye(1), np.eye(1)])
        g = GainSet.zeros(p, [0, 0])
        W = np.array([[0.5, 0.5], [0.0, 1.0]])
        with pytest.raises(WeightGraphError):
            run(p, W, g, [0.0], [[0.0], [0.0]], horizon=1, graph=DirectedGraph(2, [(1, 2)]))

    def test_locality(self, certified):
        g, p, wm, res = certified
        rng = np.random.default_rng(0)
        st0 = ObserverNetworkState(rng.standard_normal(p.n), rng.standard_normal((p.m, p.n)),
                                   [rng.standard_normal(mu) for mu in res.gains.mu])
        base = step(st0, p, wm, res.gains, graph=g)
        nb = [{1, 3}, {1, 2}, {2, 3}, {4, 7}, {3, 5, 6, 7}, {5, 6}, {4, 7}]
        for i in range(p.m):
            for j in range(p.m):
                if j + 1 in nb[i]:
                    continue
                xh = st0.xhat.copy()
                xh[j] = 0.0
                zz = [z.copy() for z in st0.z]
                zz[j] = np.zeros_like(zz[j])
                other = step(ObserverNetworkState(st0.x, xh, zz), p, wm, res.gains, graph=g)
                np.testing.assert_array_equal(other.xhat[i], base.xhat[i])
                np.testing.assert_array_equal(other.z[i], base.z[i])


class TestRun:
    def test_record_count_and_nonnegative(self, certified):
        g, p, wm, res = certified
        tr = run(p, wm, res.gains, np.ones(2), np.zeros((7, 2)), horizon=25, graph=g)
        assert tr.x.shape[0] == 26 and len(tr.z) == 26 and tr.steps == 25
        assert np.all(tr.err >= 0)

    def test_horizon_validation(self, certified):
        g, p, wm, res = certified
        with pytest.raises(ValueError):
            run(p, wm, res.gains, np.ones(2), np.zeros((7, 2)), horizon=0)

    def test_certified_decay(self, certified):
        g, p, wm, res = certified
        rng = np.random.default_rng(1)
        tr = run(p, wm, res.gains, np.zeros(2), -unit_errors(rng, 7, 2), horizon=150, graph=g)
        rate = fit_decay_rate(tr.max_error())
        assert rate <= res.closed_loop_radius + 0.05
        me = tr.max_error()
        k = np.arange(len(me))
        C = np.max(me[10:] / (res.closed_loop_radius + 0.05) ** k[10:])
        assert np.isfinite(C) and C < 1e3

    def test_uncertified_non_decaying(self, certified):
        g, p, wm, res = certified
        zero = GainSet.zeros(p, res.gains.mu)
        tr = run(p, wm, zero, np.zeros(2), np.ones((7, 2)), horizon=100, graph=g)
        assert tr.max_error()[-1] > tr.max_error()[0]

    def test_linear_algebra_equivalence(self, certified):
        g, p, wm, res = certified
        rng = np.random.default_rng(2)
        x0 = rng.standard_normal(2)
        z0 = [rng.standard_normal(mu) for mu in res.gains.mu]
        tr = run(p, wm, res.gains, x0, x0 - rng.standard_normal((7, 2)), z0=z0, horizon=50, graph=g)
        E = error_matrix(wm, p, res.gains)
        s = tr.error_state(0)
        for k in range(51):
            np.testing.assert_allclose(tr.error_state(k), s, atol=1e-8)
            s = E @ s

    def test_overflow_truncates(self):
        p = Plant(np.array([[10.0]]), [np.zeros((0, 1))])
        tr = run(p, np.eye(1), GainSet.zeros(p, [0]), [1.0], [[0.0]], horizon=400)
        assert tr.overflow_step is not None and tr.overflow_step <= 160
        assert tr.x.shape[0] == tr.overflow_step

    def test_bit_identical(self, certified):
        g, p, wm, res = certified
        noise = NoiseModel(0.01, 0.01)
        a = run(p, wm, res.gains, np.ones(2), np.zeros((7, 2)), horizon=30, noise=noise, seed=4, graph=g)
        b = run(p, wm, res.gains, np.ones(2), np.zeros((7, 2)), horizon=30, noise=noise, seed=4, graph=g)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.xhat, b.xhat)

    def test_bounded_noise_no_drift(self):
        # |lambda| = 1 keeps x of moderate size, so x - xhat stays representable over 500 steps
        c, s = np.cos(0.3), np.sin(0.3)
        base = fig2_plant()
        p = Plant(np.array([[c, -s], [s, c]]), list(base.H_blocks))
        g = fig2_graph()
        wm, res, _ = design_observer(g, p, seed=0)
        assert res.converged
        noise = NoiseModel(0.01, 0.01)
        mse = np.zeros(501)
        for seed in range(50):
            tr = run(p, wm, res.gains, np.zeros(2), np.zeros((7, 2)), horizon=500, noise=noise,
                     seed=seed, graph=g)
            mse += (tr.err ** 2).mean(axis=1) / 50
        early, late = mse[100:300].mean(), mse[300:].mean()
        assert np.all(np.isfinite(mse)) and mse.max() < 1.0
        assert late < 2 * early


class TestControlled:
    def test_stable_open_loop(self):
        from distobs.control import DistributedController
        p = Plant(np.diag([0.5, 0.3]), [np.zeros((0, 2))], [np.zeros((2, 0))])
        ctrl = DistributedController({(1, 1): np.zeros((0, 0))}, (np.zeros((0, 0)),), (np.zeros((0, 0)),),
                                     (np.zeros((0, 0)),), (0,), ((0, 0, 0),))
        tr = run_controlled(ctrl, p, np.ones(2), horizon=60)
        assert tr.state_norm[-1] < 1e-15

    def test_scalar_pipeline(self):
        from distobs.control import proposition2_pipeline
        p = Plant(np.array([[1.5]]), [np.array([[1.0]])], [np.array([[1.0]])])
        res = proposition2_pipeline(p, DirectedGraph(1), seed=0)
        tr = run_controlled(res.controller, p, np.ones(1), horizon=200)
        assert tr.state_norm[-1] <= 1e-9
        rate = fit_decay_rate(tr.state_norm)
        assert rate is None or rate <= res.closed_loop_radius + 0.05


class TestFitAndCsv:
    def test_fit_exact_geometric(self):
        assert fit_decay_rate(0.7 ** np.arange(60)) == pytest.approx(0.7)

    def test_fit_floor_and_scale(self):
        norms = np.concatenate([0.5 ** np.arange(40), np.full(20, 1e-3)])
        assert fit_decay_rate(norms, floor=1e-14, scale=np.full(60, 1e8)) == pytest.approx(0.5)
        assert fit_decay_rate(np.zeros(30)) is None

    def test_csv(self, certified, tmp_path):
        g, p, wm, res = certified
        tr = run(p, wm, res.gains, np.ones(2) / 3, np.zeros((7, 2)), horizon=5, graph=g)
        path = tmp_path / "t.csv"
        write_csv(tr, path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == csv_header(2, 7)
        assert rows[0][:3] == ["k", "x_1", "x_2"] and rows[0][-1] == "err_7" and "xhat_7_2" in rows[0]
        assert len(rows) == 7
        assert float(rows[1][1]) == tr.x[0, 0]
        assert rows[1][1] == "%.17g" % tr.x[0, 0]


@given(st.integers(0, 10**4))
@settings(max_examples=15, deadline=None)
def test_error_trajectory_independent_of_state(seed):
    g, p = fig2_graph(), fig2_plant()
    wm = build_weight_matrix(g, p.A, seed=seed)
    rng = np.random.default_rng(seed)
    gains = GainSet([rng.standard_normal((2, r)) * 0.3 for r in p.r], [rng.standard_normal((2, 1)) * 0.3] * 7,
                    [rng.standard_normal((1, r)) * 0.3 for r in p.r], [np.array([[0.2]])] * 7)
    e0 = rng.standard_normal((7, 2))
    a = run(p, wm, gains, np.zeros(2), -e0, horizon=20, graph=g)
    x1 = rng.standard_normal(2)
    b = run(p, wm, gains, x1, x1 - e0, horizon=20, graph=g)
    for k in range(21):
        np.testing.assert_allclose(a.error_state(k), b.error_state(k), atol=1e-9 * max(1, np.abs(a.error_state(k)).max()))
