"""LTI plant with per-observer output blocks and optional per-agent input blocks,
plus PBH detectability/stabilizability tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import source_components
from .numerics import DEFAULT_TOL, as_matrix, cluster_values, complex_rank, eigenvalues


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Plant:
    A: np.ndarray
    H_blocks: tuple
    B_blocks: tuple | None = None

    def __init__(self, A, H_blocks, B_blocks=None):
        A = as_matrix(A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        hs = []
        for i, H in enumerate(H_blocks, start=1):
            H = np.asarray(H, dtype=float)
            if H.size == 0:
                H = np.zeros((0, n))
            H = as_matrix(H, f"H_{i}")
            if H.shape[1] != n:
                raise DimensionError(f"H_{i} has {H.shape[1]} columns, expected {n}")
            hs.append(H)
        if not hs:
            raise DimensionError("at least one output block is required")
        bs = None
        if B_blocks is not None:
            bs = []
            for i, B in enumerate(B_blocks, start=1):
                B = np.asarray(B, dtype=float)
                if B.size == 0:
                    B = np.zeros((n, 0))
                B = as_matrix(B, f"B_{i}")
                if B.shape[0] != n:
                    raise DimensionError(f"B_{i} has {B.shape[0]} rows, expected {n}")
                bs.append(B)
            if len(bs) != len(hs):
                raise DimensionError(f"{len(bs)} input blocks for {len(hs)} output blocks")
            bs = tuple(bs)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "H_blocks", tuple(hs))
        object.__setattr__(self, "B_blocks", bs)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return len(self.H_blocks)

    @property
    def r(self):
        return [H.shape[0] for H in self.H_blocks]

    @property
    def p(self):
        return None if self.B_blocks is None else [B.shape[1] for B in self.B_blocks]

    @property
    def H(self):
        return stack_H(self, range(1, self.m + 1))

    @property
    def B(self):
        return stack_B(self, range(1, self.m + 1))


def _selection(sel, m):
    idx = [int(j) for j in sel]
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValueError(f"selection {idx} is not strictly increasing")
    if idx and not (1 <= idx[0] and idx[-1] <= m):
        raise ValueError(f"selection {idx} outside 1..{m}")
    return idx


def stack_H(p, sel):
    idx = _selection(sel, p.m)
    if not idx:
        return np.zeros((0, p.n))
    return np.vstack([p.H_blocks[j - 1] for j in idx])


def stack_B(p, sel):
    if p.B_blocks is None:
        raise DimensionError("plant has no input blocks")
    idx = _selection(sel, p.m)
    if not idx:
        return np.zeros((p.n, 0))
    return np.hstack([p.B_blocks[j - 1] for j in idx])


def _distinct_unstable(A, tol):
    lam = [x for x in eigenvalues(A) if abs(x) >= 1.0]
    return cluster_values(lam, tol.eig_sep_tol)


def is_detectable(A, H, tol=DEFAULT_TOL):
    """PBH test over the distinct unstable eigenvalues of ``A``.

    Returns ``(True, None)`` or ``(False, witness_eigenvalue)``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    H = np.asarray(H, dtype=float).reshape(-1, n)
    for lam in _distinct_unstable(A, tol):
        M = np.vstack([A - lam * np.eye(n), H.astype(complex)])
        if complex_rank(M, tol) < n:
            return False, lam
    return True, None


def is_stabilizable(A, B, tol=DEFAULT_TOL):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    for lam in _distinct_unstable(A, tol):
        M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        if complex_rank(M, tol) < n:
            return False, lam
    return True, None


@dataclass(frozen=True)
class ComponentVerdict:
    vertices: tuple
    detectable: bool
    witness: complex | None


@dataclass(frozen=True)
class DetectabilityVerdict:
    holds: bool
    components: tuple

    def failing(self):
        return [c for c in self.components if not c.detectable]


def theorem1_condition(p, g, tol=DEFAULT_TOL):
    """Omniscience is achievable iff every source component's stacked outputs
    make ``(A, H_V)`` detectable."""
    if p.m != g.m:
        raise DimensionError(f"plant has {p.m} output blocks but graph has {g.m} vertices")
    comps = []
    for sc in source_components(g):
        ok, lam = is_detectable(p.A, stack_H(p, sc.vertices), tol)
        comps.append(ComponentVerdict(sc.vertices, ok, lam))
    return DetectabilityVerdict(all(c.detectable for c in comps), tuple(comps))
