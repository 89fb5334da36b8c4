"""Tolerance-aware dense linear algebra shared by the rest of the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


class NumericsError(RuntimeError):
    """Raised when an eigen-decomposition cannot be trusted."""


@dataclass(frozen=True)
class Tolerances:
    rank_rel_tol: float = 1e-9
    eig_sep_tol: float = 1e-7
    zero_entry_tol: float = 1e-8
    stability_margin: float = 1e-6

    def __post_init__(self):
        for name in ("rank_rel_tol", "eig_sep_tol", "zero_entry_tol", "stability_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.rank_rel_tol < 1:
            raise ValueError("rank_rel_tol must be < 1")

    def to_dict(self):
        return {
            "rank_rel_tol": self.rank_rel_tol,
            "eig_sep_tol": self.eig_sep_tol,
            "zero_entry_tol": self.zero_entry_tol,
            "stability_margin": self.stability_margin,
        }


DEFAULT_TOL = Tolerances()


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues with unit-norm right and left eigenvectors.

    ``right[:, k]`` satisfies ``M v = lambda_k v`` and ``left[:, k]`` satisfies
    ``w^T M = lambda_k w^T``.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    repeated: np.ndarray

    @property
    def simple(self):
        return not bool(np.any(self.repeated))

    def __len__(self):
        return len(self.eigenvalues)


def as_matrix(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def _require_square(M):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")


RESIDUAL_TOL = 1e-9


def _eig_once(M):
    w, vl, vr = sla.eig(M, left=True, right=True)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(vl)) and np.all(np.isfinite(vr))):
        raise np.linalg.LinAlgError("non-finite eigen-decomposition")
    # balancing can go wrong on badly scaled input; reject untrustworthy pairs
    scale = RESIDUAL_TOL * max(np.linalg.norm(M), np.finfo(float).tiny)
    vrn = vr / np.linalg.norm(vr, axis=0, keepdims=True)
    vln = vl / np.linalg.norm(vl, axis=0, keepdims=True)
    if (np.linalg.norm(M @ vrn - vrn * w, axis=0).max() > scale
            or np.linalg.norm(vln.conj().T @ M - w[:, None] * vln.conj().T, axis=1).max() > scale):
        raise np.linalg.LinAlgError("eigenpair residual too large")
    return w, vl, vr


def repeated_flags(eigenvalues, sep_tol):
    ev = np.asarray(eigenvalues)
    n = len(ev)
    flags = np.zeros(n, dtype=bool)
    if n > 1:
        d = np.abs(ev[:, None] - ev[None, :])
        np.fill_diagonal(d, np.inf)
        flags = d.min(axis=1) < sep_tol
    return flags


def spectrum(M, tol=DEFAULT_TOL, seed=0):
    """Full eigen-decomposition of a square matrix.

    A failed decomposition is retried once on a random orthogonal similarity
    of ``M``; a second failure raises :class:`NumericsError`.
    """
    M = np.asarray(M, dtype=float)
    _require_square(M)
    n = M.shape[0]
    if n == 0:
        empty = np.zeros((0, 0), dtype=complex)
        return Spectrum(np.zeros(0, dtype=complex), empty, empty, np.zeros(0, dtype=bool))
    if not np.all(np.isfinite(M)):
        raise NumericsError("matrix has non-finite entries")
    try:
        w, vl, vr = _eig_once(M)
    except (np.linalg.LinAlgError, ValueError):
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        try:
            w, vl, vr = _eig_once(Q.T @ M @ Q)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericsError(f"eigen-decomposition failed after restart: {exc}") from exc
        vr = Q @ vr
        vl = Q @ vl
    vr = vr / np.linalg.norm(vr, axis=0, keepdims=True)
    # scipy's vl satisfies vl^H M = lambda vl^H; store w = conj(vl) so w^T M = lambda w^T
    left = vl.conj()
    left = left / np.linalg.norm(left, axis=0, keepdims=True)
    return Spectrum(w.astype(complex), vr.astype(complex), left.astype(complex),
                    repeated_flags(w, tol.eig_sep_tol))


def eigenvalues(M):
    M = np.asarray(M, dtype=float)
    _require_square(M)
    if M.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    try:
        w = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(str(exc)) from exc
    if not np.all(np.isfinite(w)):
        raise NumericsError("non-finite eigenvalues")
    return w.astype(complex)


def unstable_eigenvalues(M, tol=DEFAULT_TOL):
    """Eigenvalues with modulus >= 1, kept with multiplicity."""
    w = eigenvalues(M)
    return [complex(x) for x in w if abs(x) >= 1.0]


def spectral_radius(M, tol=DEFAULT_TOL):
    w = eigenvalues(M)
    return float(np.max(np.abs(w))) if len(w) else 0.0


def rank_tol(M, tol=DEFAULT_TOL):
    """Numerical rank: singular values above ``rank_rel_tol * sigma_max``."""
    M = np.asarray(M)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol.rank_rel_tol * s[0]))


def real_embedding(M):
    """Real 2x-size embedding [[Re, -Im], [Im, Re]]; its rank is twice the complex rank."""
    M = np.asarray(M)
    R, I = M.real, M.imag
    return np.block([[R, -I], [I, R]])


def complex_rank(M, tol=DEFAULT_TOL):
    M = np.asarray(M)
    if not np.iscomplexobj(M) or not np.any(M.imag):
        return rank_tol(np.real(M), tol)
    return rank_tol(real_embedding(M), tol) // 2


def kron(A, B):
    return np.kron(np.asarray(A, dtype=float), np.asarray(B, dtype=float))


def cluster_values(values, sep_tol):
    """Group complex values whose chained distances are below ``sep_tol``.

    Returns one representative (cluster mean) per group, in order of first
    appearance.
    """
    reps, members = [], []
    for v in values:
        for k, r in enumerate(reps):
            if abs(v - r) < sep_tol:
                members[k].append(v)
                reps[k] = complex(np.mean(members[k]))
                break
        else:
            reps.append(complex(v))
            members.append([v])
    return reps


def null_vectors(M, tol=DEFAULT_TOL, scale=0.0):
    """Orthonormal basis (columns) of the numerical kernel of ``M``.

    Singular values up to ``rank_rel_tol * max(sigma_max, scale)`` count as
    zero; ``scale`` gives an absolute floor when ``M`` itself is tiny."""
    M = np.asarray(M)
    n = M.shape[1]
    if M.shape[0] == 0:
        return np.eye(n, dtype=M.dtype if np.iscomplexobj(M) else float)
    _, s, vh = np.linalg.svd(M)
    ref = max(s[0] if len(s) else 0.0, scale)
    r = int(np.sum(s > tol.rank_rel_tol * ref)) if ref > 0 else 0
    return vh[r:].conj().T
