"""Observer gains ``{K_i, P_i, Q_i, S_i}`` and the error-dynamics matrix."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fixedmodes import FixedModeError, build_triple, unstable_fixed_modes
from .numerics import DEFAULT_TOL, spectral_radius
from .stabilizer import Channels, pole_shrink_warm_start, stabilize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GainSet:
    K: tuple
    P: tuple
    Q: tuple
    S: tuple

    def __init__(self, K, P, Q, S):
        if not (len(K) == len(P) == len(Q) == len(S)):
            raise ValueError("K, P, Q, S need one block per observer")
        for i, (k, p, q, s) in enumerate(zip(K, P, Q, S), start=1):
            n, r = np.shape(k)
            mu = np.shape(s)[0] if np.ndim(s) == 2 else 0
            if np.shape(p) != (n, mu) or np.shape(q) != (mu, r) or np.shape(s) != (mu, mu):
                raise ValueError(
                    f"observer {i}: inconsistent shapes K{np.shape(k)} P{np.shape(p)} "
                    f"Q{np.shape(q)} S{np.shape(s)}"
                )
        conv = lambda xs: tuple(np.asarray(x, dtype=float) for x in xs)  # noqa: E731
        object.__setattr__(self, "K", conv(K))
        object.__setattr__(self, "P", conv(P))
        object.__setattr__(self, "Q", conv(Q))
        object.__setattr__(self, "S", conv(S))

    @property
    def m(self):
        return len(self.K)

    @property
    def mu(self):
        return [S.shape[0] for S in self.S]

    @classmethod
    def zeros(cls, p, mu):
        n = p.n
        mu = [int(x) for x in mu]
        return cls(
            [np.zeros((n, r)) for r in p.r],
            [np.zeros((n, k)) for k in mu],
            [np.zeros((k, r)) for k, r in zip(mu, p.r)],
            [np.zeros((k, k)) for k in mu],
        )

    def check_plant(self, p):
        if self.m != p.m:
            raise ValueError(f"gain set has {self.m} observers, plant has {p.m}")
        for i, (K, H) in enumerate(zip(self.K, p.H_blocks), start=1):
            if K.shape != (p.n, H.shape[0]):
                raise ValueError(f"K_{i} has shape {K.shape}, expected {(p.n, H.shape[0])}")


@dataclass(frozen=True)
class SynthesisResult:
    gains: GainSet
    closed_loop_radius: float
    iterations: int
    converged: bool
    seed: int
    escalations: list = field(default_factory=list)


def _weights(W):
    return np.asarray(getattr(W, "W", W), dtype=float)


def error_matrix(W, p, g):
    """``[[W kron A - Bbar Kbar Hbar, -Bbar Pbar], [Qbar Hbar, Sbar]]``."""
    Wm = _weights(W)
    g.check_plant(p)
    m, n = p.m, p.n
    if Wm.shape != (m, m):
        raise ValueError(f"W is {Wm.shape}, expected {(m, m)}")
    mus = g.mu
    N = m * n
    tot = N + sum(mus)
    M = np.zeros((tot, tot))
    M[:N, :N] = np.kron(Wm, p.A)
    off = N
    for i in range(m):
        x = slice(i * n, (i + 1) * n)
        z = slice(off, off + mus[i])
        H = p.H_blocks[i]
        M[x, x] -= g.K[i] @ H
        M[x, z] = -g.P[i]
        M[z, x] = g.Q[i] @ H
        M[z, z] = g.S[i]
        off += mus[i]
    return M


def verify_omniscience_certificate(W, p, g, tol=DEFAULT_TOL):
    r = spectral_radius(error_matrix(W, p, g))
    return {"radius": r, "pass": bool(r < 1.0)}


def observer_channels(W, p, vertices=None):
    """Channel form of the error dynamics restricted to ``vertices`` (1-based,
    in order): ``A = W_V kron A``, ``B_i = -(e_i kron I_n)``, ``H_i = e_i^T kron H_i``."""
    Wm = _weights(W)
    if vertices is None:
        vertices = list(range(1, p.m + 1))
    idx = [v - 1 for v in vertices]
    q, n = len(idx), p.n
    Bs, Hs = [], []
    for a, v in enumerate(vertices):
        e = np.zeros((q, 1))
        e[a] = 1.0
        Bs.append(-np.kron(e, np.eye(n)))
        Hs.append(np.kron(e.T, p.H_blocks[v - 1]))
    return Channels(np.kron(Wm[np.ix_(idx, idx)], p.A), tuple(Bs), tuple(Hs))


def _solve_group(W, p, vertices, ladder, seed, restarts, max_iters, target, tol, escalations):
    ch = observer_channels(W, p, vertices)
    res = None
    for step, mu in enumerate(ladder):
        orders = [mu] * len(vertices)
        warm = pole_shrink_warm_start(ch, orders, tol=tol)
        cur = stabilize(ch, orders, warm, seed=seed, restarts=restarts,
                        max_iters=max_iters, target=target, tol=tol)
        if res is None or cur.radius < res.radius:
            res = cur
        if cur.converged:
            break
        if step + 1 < len(ladder):
            escalations.append({"vertices": list(vertices), "from_mu": mu, "to_mu": ladder[step + 1],
                                "radius": cur.radius})
            log.info("mu escalation on %s: %d -> %d (radius %.4g)", vertices, mu, ladder[step + 1], cur.radius)
    return res


def synthesize_gains(W, p, mu=None, seed=0, restarts=8, max_iters=2000, tol=DEFAULT_TOL,
                     target=0.9, check_fixed_modes=True, escalate=None):
    """Search observer gains that make the error dynamics stable.

    With a block layout on ``W`` every source block is solved on its own and
    non-source observers keep zero gains (their block is stable by
    construction). ``mu=None`` starts at ``n`` per observer and escalates in
    steps of ``n`` up to ``|V_c| * n`` when a block does not converge.

    Raises :class:`FixedModeError` when an unstable fixed mode makes the
    search provably hopeless.
    """
    Wm = _weights(W)
    if check_fixed_modes:
        rep = unstable_fixed_modes(build_triple(Wm, p), tol)
        if rep.verdict:
            raise FixedModeError(f"unstable fixed modes {rep.fixed_modes()}; no gains can stabilize")
    n, m = p.n, p.m
    if escalate is None:
        escalate = mu is None
    mu_list = [n] * m if mu is None else ([int(mu)] * m if np.ndim(mu) == 0 else [int(x) for x in mu])
    if len(mu_list) != m:
        raise ValueError(f"mu has {len(mu_list)} entries for {m} observers")

    layout = getattr(W, "block_layout", None)
    if layout is not None:
        groups = layout.source_vertex_sets()
    else:
        groups = [tuple(range(1, m + 1))]

    g = GainSet.zeros(p, mu_list)
    K, P, Q, S = (list(x) for x in (g.K, g.P, g.Q, g.S))
    iters, escalations = 0, []
    for gi, verts in enumerate(groups):
        base = mu_list[verts[0] - 1]
        if any(mu_list[v - 1] != base for v in verts):
            ladder = None
        else:
            ladder = [base * k for k in range(1, len(verts) + 1)] if escalate and base > 0 else [base]
        if ladder is None:
            ch = observer_channels(Wm, p, verts)
            orders = [mu_list[v - 1] for v in verts]
            res = stabilize(ch, orders, pole_shrink_warm_start(ch, orders, tol=tol), seed=seed + gi,
                            restarts=restarts, max_iters=max_iters, target=target, tol=tol)
        else:
            res = _solve_group(Wm, p, verts, ladder, seed + gi, restarts, max_iters, target, tol, escalations)
        iters += res.iterations
        for v, blk in zip(verts, res.blocks):
            K[v - 1], P[v - 1], Q[v - 1], S[v - 1] = blk
    gains = GainSet(K, P, Q, S)
    r = spectral_radius(error_matrix(Wm, p, gains))
    return SynthesisResult(gains, r, iters, bool(r < 1.0 - tol.stability_margin), seed, escalations)


def design_observer(graph, p, seed=0, mu=None, restarts=8, max_iters=2000, tol=DEFAULT_TOL,
                    target=0.9, w_attempts=3):
    """Build ``W`` and search gains; a non-converged search is retried on a
    freshly drawn ``W`` up to ``w_attempts`` times. Returns ``(W, result, attempts)``."""
    from .weights import build_weight_matrix

    best = None
    for a in range(max(w_attempts, 1)):
        wm = build_weight_matrix(graph, p.A, tol, seed + 7919 * a)
        res = synthesize_gains(wm, p, mu, seed=seed, restarts=restarts, max_iters=max_iters,
                               tol=tol, target=target)
        if best is None or res.closed_loop_radius < best[1].closed_loop_radius:
            best = (wm, res, a + 1)
        if res.converged:
            return wm, res, a + 1
        log.info("W attempt %d did not converge (radius %.4g)", a + 1, res.closed_loop_radius)
    return best
