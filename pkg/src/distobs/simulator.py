"""Discrete-time simulation of the plant, the observer network and the
closed loop with composed controllers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .graph import neighborhoods

OVERFLOW = 1e150


class WeightGraphError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Uniform i.i.d. noise on ``[-amp, amp]`` for the state and each measurement."""

    state_amp: float = 0.0
    meas_amp: float = 0.0

    @property
    def active(self):
        return self.state_amp > 0 or self.meas_amp > 0


@dataclass
class ObserverNetworkState:
    x: np.ndarray
    xhat: np.ndarray
    z: list
    k: int = 0


def _neighbour_lists(Wm, graph):
    m = Wm.shape[0]
    if graph is not None:
        nb = neighborhoods(graph)
        for i in range(m):
            for j in range(m):
                if Wm[i, j] != 0 and (j + 1) not in nb[i]:
                    raise WeightGraphError(f"w[{i + 1},{j + 1}] is nonzero but {j + 1} is not in N_{i + 1}")
        return [sorted(v - 1 for v in nb[i]) for i in range(m)]
    return [[j for j in range(m) if Wm[i, j] != 0 or i == j] for i in range(m)]


def step(state, p, W, g, noise=None, rng=None, graph=None, _nbrs=None):
    """One step of the plant and every observer. Observer ``i`` touches only
    ``y_i`` and the estimates of its neighbourhood."""
    Wm = np.asarray(getattr(W, "W", W), dtype=float)
    nbrs = _nbrs if _nbrs is not None else _neighbour_lists(Wm, graph)
    A = p.A
    x = state.x
    ys = [H @ x for H in p.H_blocks]
    if noise is not None and noise.meas_amp > 0:
        ys = [y + rng.uniform(-noise.meas_amp, noise.meas_amp, size=y.shape) for y in ys]
    xhat_new = np.empty_like(state.xhat)
    z_new = []
    for i in range(p.m):
        mix = np.zeros(p.n)
        for j in nbrs[i]:
            mix += Wm[i, j] * state.xhat[j]
        innov = ys[i] - p.H_blocks[i] @ state.xhat[i]
        xhat_new[i] = A @ mix + g.K[i] @ innov + g.P[i] @ state.z[i]
        z_new.append(g.Q[i] @ innov + g.S[i] @ state.z[i])
    x_new = A @ x
    if noise is not None and noise.state_amp > 0:
        x_new = x_new + rng.uniform(-noise.state_amp, noise.state_amp, size=x.shape)
    return ObserverNetworkState(x_new, xhat_new, z_new, state.k + 1)


@dataclass
class SimulationTrace:
    x: np.ndarray
    xhat: np.ndarray
    z: list
    err: np.ndarray
    config: dict = field(default_factory=dict)
    overflow_step: int | None = None

    @property
    def steps(self):
        return self.x.shape[0] - 1

    def max_error(self):
        return self.err.max(axis=1)

    def error_state(self, k):
        """Stacked ``(x - xhat_1, .., x - xhat_m, z_1, .., z_m)`` at step ``k``."""
        parts = [self.x[k] - self.xhat[k, i] for i in range(self.xhat.shape[1])]
        parts += [zk for zk in self.z[k]]
        return np.concatenate(parts) if parts else np.zeros(0)


def run(p, W, g, x0, xhat0, z0=None, horizon=100, noise=None, seed=0, graph=None):
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    Wm = np.asarray(getattr(W, "W", W), dtype=float)
    nbrs = _neighbour_lists(Wm, graph)
    rng = np.random.default_rng(seed)
    m, n = p.m, p.n
    xhat0 = np.asarray(xhat0, dtype=float).reshape(m, n)
    if z0 is None:
        z0 = [np.zeros(mu) for mu in g.mu]
    st = ObserverNetworkState(np.asarray(x0, dtype=float).copy(), xhat0.copy(),
                              [np.asarray(z, dtype=float).copy() for z in z0])
    xs, xh, zs = [st.x], [st.xhat], [st.z]
    overflow = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon):
            st = step(st, p, Wm, g, noise, rng, _nbrs=nbrs)
            big = max(np.abs(st.x).max(initial=0.0), np.abs(st.xhat).max(initial=0.0))
            if not np.isfinite(big) or big > OVERFLOW:
                overflow = k + 1
                break
            xs.append(st.x)
            xh.append(st.xhat)
            zs.append(st.z)
    X = np.array(xs)
    XH = np.array(xh)
    err = np.linalg.norm(X[:, None, :] - XH, axis=2)
    cfg = {"horizon": horizon, "seed": seed,
           "noise": None if noise is None else {"state_amp": noise.state_amp, "meas_amp": noise.meas_amp}}
    return SimulationTrace(X, XH, zs, err, cfg, overflow)


@dataclass
class ControlTrace:
    x: np.ndarray
    xi: np.ndarray
    state_norm: np.ndarray
    config: dict = field(default_factory=dict)
    overflow_step: int | None = None


def run_controlled(ctrl, p, x0, internal0=None, horizon=100, seed=0, noise=None):
    """Plant driven by the composed controllers; each controller reads only
    its own output and its neighbours' internal states."""
    rng = np.random.default_rng(seed)
    offs = np.concatenate([[0], np.cumsum(ctrl.dims)]).astype(int)
    x = np.asarray(x0, dtype=float).copy()
    xi = np.zeros(offs[-1]) if internal0 is None else np.asarray(internal0, dtype=float).copy()
    blocks = [xi[offs[i]:offs[i + 1]] for i in range(ctrl.m)]
    rows = {}
    for (a, b), S in ctrl.S_c.items():
        rows.setdefault(a - 1, []).append((b - 1, S))
    xs, xis = [x], [xi]
    overflow = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon):
            ys = [H @ x for H in p.H_blocks]
            if noise is not None and noise.meas_amp > 0:
                ys = [y + rng.uniform(-noise.meas_amp, noise.meas_amp, size=y.shape) for y in ys]
            us = [ctrl.P_c[i] @ blocks[i] + ctrl.K_c[i] @ ys[i] for i in range(ctrl.m)]
            nxt = []
            for i in range(ctrl.m):
                v = ctrl.Q_c[i] @ ys[i]
                for j, S in rows.get(i, []):
                    v = v + S @ blocks[j]
                nxt.append(v)
            x = p.A @ x + sum((B @ u for B, u in zip(p.B_blocks, us)), np.zeros(p.n))
            if noise is not None and noise.state_amp > 0:
                x = x + rng.uniform(-noise.state_amp, noise.state_amp, size=x.shape)
            blocks = nxt
            xi = np.concatenate(blocks) if blocks else np.zeros(0)
            big = max(np.abs(x).max(initial=0.0), np.abs(xi).max(initial=0.0))
            if not np.isfinite(big) or big > OVERFLOW:
                overflow = k + 1
                break
            xs.append(x)
            xis.append(xi)
    X = np.array(xs)
    return ControlTrace(X, np.array(xis), np.linalg.norm(X, axis=1),
                        {"horizon": horizon, "seed": seed}, overflow)


def fit_decay_rate(norms, burn_in=10, floor=1e-14, scale=None):
    """Geometric rate from a least-squares line through ``log(norms)`` after
    ``burn_in``, up to the first value below the floor. With ``scale`` (for
    example the state norm) the floor is relative, ``floor * max(1, scale_k)``,
    so round-off growth on unstable plants is left out. ``None`` if fewer than
    two points remain."""
    norms = np.asarray(norms, dtype=float)
    k = np.arange(len(norms))
    lim = np.full(len(norms), floor)
    if scale is not None:
        lim = floor * np.maximum(1.0, np.asarray(scale, dtype=float))
    bad = (norms < lim) | ~np.isfinite(norms)
    stop = int(np.argmax(bad)) if bad.any() else len(norms)
    keep = (k >= burn_in) & (k < stop)
    if keep.sum() < 2:
        return None
    slope, _ = np.polyfit(k[keep], np.log(norms[keep]), 1)
    return float(np.exp(slope))


def csv_header(n, m):
    cols = ["k"] + [f"x_{j}" for j in range(1, n + 1)]
    cols += [f"xhat_{i}_{j}" for i in range(1, m + 1) for j in range(1, n + 1)]
    cols += [f"err_{i}" for i in range(1, m + 1)]
    return cols


def write_csv(trace, path):
    n = trace.x.shape[1]
    m = trace.xhat.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(n, m))
        for k in range(trace.x.shape[0]):
            row = [str(k)] + [f"{v:.17g}" for v in trace.x[k]]
            row += [f"{v:.17g}" for v in trace.xhat[k].ravel()]
            row += [f"{v:.17g}" for v in trace.err[k]]
            w.writerow(row)
