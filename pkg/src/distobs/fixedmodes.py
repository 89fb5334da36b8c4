"""Decentralized fixed modes of ``(W kron A, Bbar, Hbar)`` by bordered-rank test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DEFAULT_TOL, cluster_values, complex_rank, eigenvalues, unstable_eigenvalues

MAX_CHANNELS = 16


class FixedModeError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecentralizedTriple:
    Abar: np.ndarray
    Bbar_blocks: tuple
    Hbar_blocks: tuple

    @property
    def m(self):
        return len(self.Bbar_blocks)

    @property
    def size(self):
        return self.Abar.shape[0]


def build_triple(W, p):
    """``Abar = W kron A``, ``Bbar_i = e_i kron I_n``, ``Hbar_i = e_i^T kron H_i``."""
    W = np.asarray(getattr(W, "W", W), dtype=float)
    m, n = W.shape[0], p.n
    if W.shape != (m, m) or p.m != m:
        raise ValueError(f"W is {W.shape} but the plant has {p.m} output blocks")
    Bs, Hs = [], []
    for i in range(m):
        e = np.zeros((m, 1))
        e[i] = 1.0
        Bs.append(np.kron(e, np.eye(n)))
        Hs.append(np.kron(e.T, p.H_blocks[i]))
    return DecentralizedTriple(np.kron(W, p.A), tuple(Bs), tuple(Hs))


@dataclass(frozen=True)
class FixedModeReport:
    candidates: tuple
    violations: tuple
    verdict: bool

    def fixed_modes(self):
        seen = []
        for lam, *_ in self.violations:
            if lam not in seen:
                seen.append(lam)
        return seen


def bordered(t, lam, J):
    N = t.size
    Jc = [i for i in range(t.m) if i not in J]
    BJ = np.hstack([t.Bbar_blocks[i] for i in J]) if J else np.zeros((N, 0))
    HJ = np.vstack([t.Hbar_blocks[i] for i in Jc]) if Jc else np.zeros((0, N))
    top = np.hstack([t.Abar - lam * np.eye(N), BJ])
    bot = np.hstack([HJ, np.zeros((HJ.shape[0], BJ.shape[1]))])
    return np.vstack([top, bot])


def unstable_fixed_modes(t, tol=DEFAULT_TOL):
    """Check every distinct unstable eigenvalue of ``Abar`` against every
    channel subset ``J``; ``rank < size`` marks a fixed mode.

    Violations are ``(lambda, J, rank, required)`` with ``J`` 1-based, ordered
    by eigenvalue index then subset bitmask.
    """
    if t.m > MAX_CHANNELS:
        raise FixedModeError(f"{t.m} channels exceeds the cap of {MAX_CHANNELS}")
    cands = unstable_eigenvalues(t.Abar, tol)
    distinct = cluster_values(cands, tol.eig_sep_tol)
    N = t.size
    violations = []
    for lam in distinct:
        for mask in range(2 ** t.m):
            J = [i for i in range(t.m) if mask >> i & 1]
            rk = complex_rank(bordered(t, lam, J).astype(complex), tol)
            if rk < N:
                if mask == 2 ** t.m - 1:
                    raise FixedModeError("full input set lost rank; inconsistent triple")
                violations.append((lam, tuple(i + 1 for i in J), rk, N))
    return FixedModeReport(tuple(cands), tuple(violations), bool(violations))


def _persistent(ev_runs, match_tol):
    base = ev_runs[0]
    keep = []
    for lam in base:
        if all(np.min(np.abs(ev - lam)) < match_tol for ev in ev_runs[1:]):
            keep.append(complex(lam))
    return cluster_values(keep, match_tol)


def fixed_mode_oracle(t, trials=8, seed=0, tol=DEFAULT_TOL, match_tol=1e-6):
    """Eigenvalues of ``Abar + sum Bbar_i K_i Hbar_i`` that survive every one
    of ``trials`` uniform random block-diagonal gains."""
    if trials < 2:
        raise ValueError("trials must be at least 2")
    rng = np.random.default_rng(seed)
    runs = []
    for _ in range(trials):
        M = t.Abar.copy()
        for B, H in zip(t.Bbar_blocks, t.Hbar_blocks):
            K = rng.uniform(-2.0, 2.0, size=(B.shape[1], H.shape[0]))
            M = M + B @ K @ H
        runs.append(eigenvalues(M))
    return _persistent(runs, max(match_tol, tol.eig_sep_tol))
