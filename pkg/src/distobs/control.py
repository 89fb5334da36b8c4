"""Distributed stabilizing controllers built on top of an omniscient observer network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .graph import neighborhoods
from .numerics import DEFAULT_TOL, spectral_radius
from .plant import is_stabilizable, theorem1_condition
from .stabilizer import Channels, stabilize
from .synthesis import GainSet, error_matrix, synthesize_gains, verify_omniscience_certificate
from .weights import build_weight_matrix


class UncertifiedError(ValueError):
    pass


@dataclass(frozen=True)
class PlantObserverSystem:
    """State ``(x, xhat_1..xhat_m, z_1..z_m)``; input ``u_i`` enters the plant
    rows through ``B_i``; controller ``i`` reads ``xhat_i``."""

    M: np.ndarray
    B_blocks: tuple
    selectors: tuple
    n: int
    m: int
    mu: tuple

    def channels(self):
        return Channels(self.M, self.B_blocks, self.selectors)


def bdiag(blocks):
    """Block diagonal that keeps zero-size blocks' row and column counts."""
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def build_plant_observer(p, W, g, tol=DEFAULT_TOL, check=True):
    if p.B_blocks is None:
        raise ValueError("plant has no input blocks")
    Wm = np.asarray(getattr(W, "W", W), dtype=float)
    if check:
        cert = verify_omniscience_certificate(Wm, p, g, tol)
        if not cert["pass"]:
            raise UncertifiedError(f"observer gains are not certified (radius {cert['radius']:.6g})")
    n, m = p.n, p.m
    mus = g.mu
    N = m * n
    nz = sum(mus)
    Hbar = bdiag(p.H_blocks)
    Kbar = bdiag(g.K)
    Pbar = bdiag(g.P)
    Qbar = bdiag(g.Q)
    Sbar = bdiag(g.S)
    ones = np.kron(np.ones((m, 1)), np.eye(n))
    tot = n + N + nz
    M = np.zeros((tot, tot))
    xs, hs, zs = slice(0, n), slice(n, n + N), slice(n + N, tot)
    M[xs, xs] = p.A
    M[hs, xs] = Kbar @ Hbar @ ones
    M[hs, hs] = np.kron(Wm, p.A) - Kbar @ Hbar
    M[hs, zs] = Pbar
    M[zs, xs] = Qbar @ Hbar @ ones
    M[zs, hs] = -Qbar @ Hbar
    M[zs, zs] = Sbar
    Bs, Cs = [], []
    for i in range(m):
        B = np.zeros((tot, p.B_blocks[i].shape[1]))
        B[:n] = p.B_blocks[i]
        Bs.append(B)
        C = np.zeros((n, tot))
        C[:, n + i * n:n + (i + 1) * n] = np.eye(n)
        Cs.append(C)
    sys = PlantObserverSystem(M, tuple(Bs), tuple(Cs), n, m, tuple(mus))
    if check:
        _check_similarity(sys, Wm, p, g)
    return sys


def error_coordinates(n, m, nz):
    """``T`` mapping ``(x, xhat, z)`` to ``(x, xtilde, z)`` with ``xtilde_i = x - xhat_i``."""
    N = m * n
    T = np.eye(n + N + nz)
    T[n:n + N, :n] = np.kron(np.ones((m, 1)), np.eye(n))
    T[n:n + N, n:n + N] = -np.eye(N)
    return T


def _check_similarity(sys, Wm, p, g):
    n, m = sys.n, sys.m
    nz = sum(sys.mu)
    T = error_coordinates(n, m, nz)
    # T is an involution, so T^{-1} = T
    Mt = T @ sys.M @ T
    E = error_matrix(Wm, p, g)
    scale = max(1.0, np.abs(sys.M).max())
    ok = (np.allclose(Mt[:n, :n], p.A, atol=1e-12 * scale)
          and np.abs(Mt[:n, n:]).max(initial=0.0) <= 1e-12 * scale
          and np.allclose(Mt[n:, n:], E, atol=1e-12 * scale))
    if not ok:
        raise AssertionError("plant/observer matrix is not block triangular in error coordinates")


@dataclass(frozen=True)
class DecoupledControllerSet:
    """Per channel: ``w_i+ = S_i w_i + Q_i xhat_i``, ``u_i = P_i w_i + K_i xhat_i``."""

    S: tuple
    Q: tuple
    P: tuple
    K: tuple

    @property
    def nu(self):
        return [S.shape[0] for S in self.S]

    @property
    def m(self):
        return len(self.S)

    def as_blocks(self):
        return [(K, P, Q, S) for K, P, Q, S in zip(self.K, self.P, self.Q, self.S)]

    @classmethod
    def from_blocks(cls, blocks):
        K, P, Q, S = zip(*blocks) if blocks else ((), (), (), ())
        return cls(tuple(S), tuple(Q), tuple(P), tuple(K))


def interconnection_matrix(sys, d):
    return sys.channels().closed_loop(d.as_blocks())


def lqr_warm_start(p, sys, nu):
    """Plant state feedback ``u = F x`` from the discrete Riccati equation,
    split so channel ``i`` applies its rows of ``F`` to ``xhat_i``."""
    B = p.B
    n = p.n
    ch = sys.channels()
    zero = []
    for Bi, mu in zip(p.B_blocks, nu):
        pi = Bi.shape[1]
        zero.append((np.zeros((pi, n)), np.zeros((pi, mu)), np.zeros((mu, n)), np.zeros((mu, mu))))
    try:
        X = sla.solve_discrete_are(p.A, B, np.eye(n), np.eye(B.shape[1]))
        F = -np.linalg.solve(np.eye(B.shape[1]) + B.T @ X @ B, B.T @ X @ p.A)
    except (np.linalg.LinAlgError, ValueError):
        return Channels.pack(zero)
    best, best_r = zero, spectral_radius(ch.closed_loop(zero))
    for t in (1.0, 0.75, 0.5, 0.25):
        blocks, off = [], 0
        for (Kz, Pz, Qz, Sz), Bi in zip(zero, p.B_blocks):
            pi = Bi.shape[1]
            blocks.append((t * F[off:off + pi], Pz, Qz, Sz))
            off += pi
        r = spectral_radius(ch.closed_loop(blocks))
        if r < best_r:
            best, best_r = blocks, r
    return Channels.pack(best)


@dataclass(frozen=True)
class DecoupledResult:
    controllers: DecoupledControllerSet
    radius: float
    converged: bool
    iterations: int
    escalations: list = field(default_factory=list)


def synthesize_decoupled(sys, p, nu=None, seed=0, restarts=8, max_iters=2000, tol=DEFAULT_TOL,
                         target=0.9, escalate=None):
    n, m = sys.n, sys.m
    if escalate is None:
        escalate = nu is None
    nu_list = [n] * m if nu is None else ([int(nu)] * m if np.ndim(nu) == 0 else [int(x) for x in nu])
    ladder = [nu_list]
    if escalate:
        ladder += [[k * x for x in nu_list] for k in (2, 3)]
    ch = sys.channels()
    best, iters, escalations = None, 0, []
    for step, orders in enumerate(ladder):
        warm = lqr_warm_start(p, sys, orders)
        res = stabilize(ch, orders, warm, seed=seed, restarts=restarts, max_iters=max_iters,
                        target=target, tol=tol)
        iters += res.iterations
        if best is None or res.radius < best.radius:
            best = res
        if res.converged:
            break
        if step + 1 < len(ladder):
            escalations.append({"from_nu": orders, "to_nu": ladder[step + 1], "radius": res.radius})
    d = DecoupledControllerSet.from_blocks(best.blocks)
    return DecoupledResult(d, best.radius, best.converged, iters, escalations)


@dataclass(frozen=True)
class DistributedController:
    """Per-vertex controller with state ``xi_i = (xhat_i, z_i, w_i)``:
    ``xi_i+ = sum_{j in N_i} S_c[i, j] xi_j + Q_c[i] y_i``,
    ``u_i = P_c[i] xi_i + K_c[i] y_i``."""

    S_c: dict
    Q_c: tuple
    P_c: tuple
    K_c: tuple
    dims: tuple
    part_dims: tuple

    @property
    def m(self):
        return len(self.Q_c)


def compose_distributed_controller(g, d, W, p):
    Wm = np.asarray(getattr(W, "W", W), dtype=float)
    n, m = p.n, p.m
    mus, nus = g.mu, d.nu
    S_c, Q_c, P_c, K_c, dims = {}, [], [], [], []
    for i in range(m):
        mu, nu = mus[i], nus[i]
        H = p.H_blocks[i]
        di = n + mu + nu
        dims.append(di)
        for j in range(m):
            if Wm[i, j] == 0 and i != j:
                continue
            dj = n + mus[j] + nus[j]
            blk = np.zeros((di, dj))
            blk[:n, :n] = Wm[i, j] * p.A
            if i == j:
                blk[:n, :n] -= g.K[i] @ H
                blk[:n, n:n + mu] = g.P[i]
                blk[n:n + mu, :n] = -g.Q[i] @ H
                blk[n:n + mu, n:n + mu] = g.S[i]
                blk[n + mu:, :n] = d.Q[i]
                blk[n + mu:, n + mu:] = d.S[i]
            S_c[(i + 1, j + 1)] = blk
        Q_c.append(np.vstack([g.K[i], g.Q[i], np.zeros((nu, H.shape[0]))]))
        pi = d.K[i].shape[0]
        P_c.append(np.hstack([d.K[i], np.zeros((pi, mu)), d.P[i]]))
        K_c.append(np.zeros((pi, H.shape[0])))
    parts = tuple((n, mus[i], nus[i]) for i in range(m))
    return DistributedController(S_c, tuple(Q_c), tuple(P_c), tuple(K_c), tuple(dims), parts)


def controller_violations(ctrl, graph):
    nb = neighborhoods(graph)
    return [f"S_c[{i},{j}] present but {j} is not a neighbour of {i}"
            for (i, j) in ctrl.S_c if j not in nb[i - 1]]


def composed_closed_loop(ctrl, p):
    """Closed loop of the plant with the composed controllers, state ``(x, xi_1..xi_m)``."""
    n, m = p.n, p.m
    offs = np.concatenate([[n], n + np.cumsum(ctrl.dims)]).astype(int)
    tot = int(offs[-1])
    M = np.zeros((tot, tot))
    M[:n, :n] = p.A
    for i in range(m):
        Bi, Hi = p.B_blocks[i], p.H_blocks[i]
        si = slice(offs[i], offs[i + 1])
        M[:n, :n] += Bi @ ctrl.K_c[i] @ Hi
        M[:n, si] += Bi @ ctrl.P_c[i]
        M[si, :n] += ctrl.Q_c[i] @ Hi
        for (a, b), blk in ctrl.S_c.items():
            if a == i + 1:
                M[si, offs[b - 1]:offs[b]] = blk
    return M


def permutation_witness(n, mus, nus):
    """Indices ``perm`` with ``composed[perm][:, perm]`` in the stacked order
    ``(x, xhat_1..xhat_m, z_1..z_m, w_1..w_m)``."""
    m = len(mus)
    off = [n]
    for i in range(m):
        off.append(off[-1] + n + mus[i] + nus[i])
    perm = list(range(n))
    perm += [off[i] + k for i in range(m) for k in range(n)]
    perm += [off[i] + n + k for i in range(m) for k in range(mus[i])]
    perm += [off[i] + n + mus[i] + k for i in range(m) for k in range(nus[i])]
    return np.array(perm, dtype=int)


def equivalence_gap(ctrl, sys, d, p):
    A1 = composed_closed_loop(ctrl, p)
    A2 = interconnection_matrix(sys, d)
    perm = permutation_witness(p.n, list(sys.mu), d.nu)
    if A1.shape != A2.shape:
        return np.inf
    return float(np.abs(A1[np.ix_(perm, perm)] - A2).max(initial=0.0))


@dataclass
class PipelineResult:
    status: str
    stabilizable: bool
    theorem1: object
    weights: object = None
    observer: object = None
    decoupled: object = None
    controller: object = None
    closed_loop_radius: float | None = None
    equivalence_gap: float | None = None
    notes: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status == "ok"


def proposition2_pipeline(p, graph, seed=0, mu=None, nu=None, restarts=8, max_iters=2000,
                          tol=DEFAULT_TOL, w_attempts=3):
    """Check stabilizability and network detectability, then design the
    observers, the decoupled controllers and their composition. A failed
    search is retried on a freshly drawn ``W`` up to ``w_attempts`` times."""
    if p.B_blocks is None:
        raise ValueError("plant has no input blocks")
    stab, wit = is_stabilizable(p.A, p.B, tol)
    t1 = theorem1_condition(p, graph, tol)
    res = PipelineResult("ok", stab, t1)
    if not stab:
        res.status = "assumption_i_violated"
        res.notes.append(f"plant not stabilizable at {wit}")
    if not t1.holds:
        res.status = "assumption_ii_violated" if stab else "assumptions_violated"
        res.notes.append(f"detectability fails for {[c.vertices for c in t1.failing()]}")
    if res.status != "ok":
        return res
    for attempt in range(max(w_attempts, 1)):
        wm = build_weight_matrix(graph, p.A, tol, seed + 7919 * attempt)
        obs = synthesize_gains(wm, p, mu, seed=seed, restarts=restarts, max_iters=max_iters, tol=tol)
        if not obs.converged:
            res.notes.append(f"W attempt {attempt + 1}: observer radius {obs.closed_loop_radius:.6g}")
            if res.observer is None:
                res.weights, res.observer = wm, obs
            res.status = "observer_budget_exhausted"
            continue
        sys = build_plant_observer(p, wm, obs.gains, tol)
        dec = synthesize_decoupled(sys, p, nu, seed=seed, restarts=restarts, max_iters=max_iters, tol=tol)
        ctrl = compose_distributed_controller(obs.gains, dec.controllers, wm, p)
        keep = res.decoupled is None or dec.radius < res.decoupled.radius
        if keep:
            res.weights, res.observer, res.decoupled, res.controller = wm, obs, dec, ctrl
            res.closed_loop_radius = spectral_radius(composed_closed_loop(ctrl, p))
            res.equivalence_gap = equivalence_gap(ctrl, sys, dec.controllers, p)
        if dec.converged:
            res.status = "ok"
            break
        res.status = "controller_budget_exhausted"
        res.notes.append(f"W attempt {attempt + 1}: controller radius {dec.radius:.6g}")
    if res.status != "ok" and res.decoupled is not None:
        # the kept design got past observer synthesis
        res.status = "controller_budget_exhausted"
    return res

__all__ = [
    "GainSet",
    "PlantObserverSystem",
    "DecoupledControllerSet",
    "DistributedController",
    "build_plant_observer",
    "synthesize_decoupled",
    "compose_distributed_controller",
    "composed_closed_loop",
    "interconnection_matrix",
    "permutation_witness",
    "equivalence_gap",
    "proposition2_pipeline",
    "PipelineResult",
]
