"""Brute-force cross-checks used by tests and campaigns only.

This module imports nothing from the modules it checks; plants and triples
are accepted by duck typing (``.A``, ``.H_blocks``; ``.Abar``,
``.Bbar_blocks``, ``.Hbar_blocks``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import neighborhoods
from .numerics import DEFAULT_TOL, cluster_values, eigenvalues, null_vectors


@dataclass(frozen=True)
class OracleVerdict:
    name: str
    instance: str
    verdict: bool
    evidence: dict = field(default_factory=dict)
    conclusive: bool = True


def oracle_detectability(A, H, tol=DEFAULT_TOL):
    """Detectable iff ``A`` restricted to the unobservable subspace has no
    eigenvalue of modulus >= 1."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    H = np.asarray(H, dtype=float).reshape(-1, n)
    if n > 5:
        raise ValueError("oracle_detectability is limited to n <= 5")
    blocks, Hk = [], H
    for _ in range(n):
        blocks.append(Hk)
        Hk = Hk @ A
    O = np.vstack(blocks) if H.shape[0] else np.zeros((0, n))
    # entries of H A^k are judged against the size of A^k, not against each other
    scale = max(1.0, np.linalg.norm(A, 2)) ** (n - 1)
    Nb = null_vectors(O, tol, scale) if O.shape[0] else np.eye(n)
    if Nb.shape[1] == 0:
        return OracleVerdict("detectability", "", True, {"unobservable_dim": 0})
    # the kernel is A-invariant: A Nb = Nb R
    R = np.linalg.pinv(Nb) @ A @ Nb
    bad = [complex(x) for x in eigenvalues(np.real_if_close(R)) if abs(x) >= 1.0]
    return OracleVerdict("detectability", "", not bad,
                         {"unobservable_dim": Nb.shape[1], "unstable_hidden": bad})


def oracle_fixed_mode(triple, trials=8, seed=0, tol=DEFAULT_TOL, match_tol=1e-6):
    """Persistent eigenvalues under Gaussian random block-diagonal static gains."""
    if trials < 2:
        raise ValueError("trials must be at least 2")
    rng = np.random.default_rng(seed)
    runs = []
    for _ in range(trials):
        M = np.array(triple.Abar, dtype=float)
        for B, H in zip(triple.Bbar_blocks, triple.Hbar_blocks):
            M = M + B @ rng.standard_normal((B.shape[1], H.shape[0])) @ H
        runs.append(eigenvalues(M))
    mt = max(match_tol, tol.eig_sep_tol)
    keep = [complex(l) for l in runs[0] if all(np.min(np.abs(ev - l)) < mt for ev in runs[1:])]
    return cluster_values(keep, mt)


def _random_consistent_W(graph, rng):
    m = graph.m
    W = np.zeros((m, m))
    for i, nb in enumerate(neighborhoods(graph)):
        idx = [j - 1 for j in nb]
        w = rng.uniform(0.0, 1.0, size=len(idx))
        W[i, idx] = w / w.sum()
    return W


def _error_radius(W, A, Hs, gains):
    m, n = W.shape[0], A.shape[0]
    mu = n
    N = m * n
    M = np.zeros((N + m * mu, N + m * mu))
    M[:N, :N] = np.kron(W, A)
    for i, (K, P, Q, S) in enumerate(gains):
        x = slice(i * n, (i + 1) * n)
        z = slice(N + i * mu, N + (i + 1) * mu)
        M[x, x] -= K @ Hs[i]
        M[x, z] = -P
        M[z, x] = Q @ Hs[i]
        M[z, z] = S
    return float(np.max(np.abs(eigenvalues(M))))


def oracle_omniscience_search(p, graph, budget=2000, seed=0):
    """Random search over consistent stochastic ``W`` and gains with
    ``mu_i = n``. ``True`` is conclusive; ``False`` is only evidence."""
    A = np.asarray(p.A, dtype=float)
    Hs = [np.asarray(H, dtype=float) for H in p.H_blocks]
    n, m = A.shape[0], graph.m
    if n > 3 or m > 4:
        raise ValueError("oracle_omniscience_search is limited to n <= 3, m <= 4")
    rng = np.random.default_rng(seed)
    best = np.inf
    for t in range(budget):
        W = _random_consistent_W(graph, rng)
        scale = rng.uniform(0.1, 2.0)
        gains = []
        for H in Hs:
            r = H.shape[0]
            gains.append((scale * rng.standard_normal((n, r)), scale * rng.standard_normal((n, n)),
                          scale * rng.standard_normal((n, r)), scale * rng.standard_normal((n, n))))
        rad = _error_radius(W, A, Hs, gains)
        best = min(best, rad)
        if rad < 1.0:
            return OracleVerdict("omniscience_search", "", True, {"samples": t + 1, "radius": rad})
    return OracleVerdict("omniscience_search", "", False, {"samples": budget, "best_radius": best},
                         conclusive=False)
