"""Weighted Laplacian matrices and consensus weight matrices.

Conventions: ``L[j, i] < 0`` exactly when the graph has the edge ``i -> j``,
and ``W[i, j]`` may be nonzero only for ``j`` in the neighbourhood of ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import (
    DirectedGraph,
    is_strongly_connected,
    neighborhoods,
    rooted_forest_over_nonsource,
    source_components,
)
from .numerics import (
    DEFAULT_TOL,
    cluster_values,
    eigenvalues,
    null_vectors,
    rank_tol,
    spectral_radius,
    spectrum,
)


class WeightConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class WLM:
    L: np.ndarray
    graph: DirectedGraph


def wlm_violations(L, g, row_tol=1e-12):
    """Entrywise check of the three defining WLM properties."""
    L = np.asarray(L, dtype=float)
    out = []
    m = g.m
    if L.shape != (m, m):
        return [f"shape {L.shape} != ({m}, {m})"]
    for i in range(1, m + 1):
        for j in range(1, m + 1):
            if i == j:
                continue
            v = L[j - 1, i - 1]
            if (i, j) in g.edges:
                if not v < 0:
                    out.append(f"l[{j},{i}] = {v} should be negative for edge ({i},{j})")
            elif v != 0:
                out.append(f"l[{j},{i}] = {v} should be zero (no edge ({i},{j}))")
    rs = np.abs(L.sum(axis=1))
    scale = max(1.0, float(np.abs(L).max(initial=0.0)))
    for i in np.where(rs > row_tol * scale)[0]:
        out.append(f"row {i + 1} sums to {L[i].sum()}")
    return out


def laplacian_from_weights(g, weights):
    """Assemble a WLM from positive per-edge weights ``{(i, j): a}``."""
    L = np.zeros((g.m, g.m))
    for (i, j), a in weights.items():
        L[j - 1, i - 1] = -a
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def random_wlm(g, seed=0):
    rng = np.random.default_rng(seed)
    weights = {e: rng.uniform(0.1, 2.0) for e in g.sorted_edges()}
    return WLM(laplacian_from_weights(g, weights), g)


def _separated(ev, sep_tol, zeros_expected):
    """True when exactly ``zeros_expected`` eigenvalues sit at the origin and
    all remaining ones are pairwise separated and away from zero."""
    ev = np.asarray(ev)
    near0 = np.abs(ev) < sep_tol
    if int(near0.sum()) != zeros_expected:
        return False
    nz = ev[~near0]
    if len(nz) > 1:
        d = np.abs(nz[:, None] - nz[None, :])
        np.fill_diagonal(d, np.inf)
        if d.min() < sep_tol:
            return False
    return True


def make_simple_spectrum(wlm, tol=DEFAULT_TOL, seed=0, max_halvings=60, max_perturb=5):
    """Row-rescale a WLM of a strongly connected graph until every eigenvalue
    is simple.

    Rows are activated one at a time; each new row scale starts at 1 and is
    halved until the nonzero eigenvalues of the partially activated matrix are
    pairwise separated. Returns ``(WLM, scales)``.
    """
    g = wlm.graph
    if not is_strongly_connected(g):
        raise ValueError("make_simple_spectrum needs a strongly connected graph")
    m = g.m
    L0 = np.asarray(wlm.L, dtype=float)
    if _separated(eigenvalues(L0), tol.eig_sep_tol, 1):
        return WLM(L0.copy(), g), np.ones(m)

    rng = np.random.default_rng(seed)
    L = L0.copy()
    for _ in range(max_perturb):
        scales = np.zeros(m)
        ok = True
        for k in range(m):
            a = 1.0
            for _ in range(max_halvings):
                scales[k] = a
                if k + 1 < m:
                    # rows k+1.. are still zero: the spectrum is that of the leading block
                    ev = eigenvalues(scales[: k + 1, None] * L[: k + 1, : k + 1])
                    good = _separated(ev, tol.eig_sep_tol, 0)
                else:
                    ev = eigenvalues(scales[:, None] * L)
                    good = _separated(ev, tol.eig_sep_tol, 1)
                if good:
                    break
                a *= 0.5
            else:
                ok = False
                break
        if ok:
            return WLM(scales[:, None] * L, g), scales
        # perturb the edge weights and start over
        off = L - np.diag(np.diag(L))
        off = off * (1.0 + 0.1 * rng.uniform(-1, 1, size=off.shape))
        L = off - np.diag(off.sum(axis=1))
    raise WeightConstructionError("could not separate the spectrum by row scaling")


def _krylov_rank(A, v, transpose=False):
    m = A.shape[0]
    M = A.T if transpose else A
    cols = [v]
    for _ in range(m - 1):
        cols.append(M @ cols[-1])
    return rank_tol(np.column_stack(cols))


def perron_wlm(g, anchor, mode="observable", seed=0, tol=DEFAULT_TOL, retries=20):
    """WLM built from a nonnegative realization via a Perron similarity.

    ``A1`` is drawn consistent with the graph plus self-loops and kept only if
    ``(A1, e_anchor^T)`` is observable (or ``(A1, e_anchor)`` controllable).
    With ``v`` the positive Perron vector and ``M = diag(v)``, the result is
    ``I - M^{-1} A1 M / lambda_perron``.
    """
    if mode not in ("observable", "controllable"):
        raise ValueError(f"unknown mode {mode!r}")
    if not is_strongly_connected(g):
        raise ValueError("perron_wlm needs a strongly connected graph")
    m = g.m
    e = np.zeros(m)
    e[anchor - 1] = 1.0
    rng = np.random.default_rng(seed)
    for _ in range(retries):
        A1 = np.diag(rng.uniform(0.1, 1.0, size=m))
        for (i, j) in g.sorted_edges():
            A1[j - 1, i - 1] = rng.uniform(0.1, 1.0)
        if _krylov_rank(A1, e, transpose=(mode == "observable")) < m:
            continue
        w, V = np.linalg.eig(A1)
        k = int(np.argmax(w.real))
        lam = float(w[k].real)
        v = np.real(V[:, k])
        v = v / v[np.argmax(np.abs(v))]
        if np.any(v <= 0):
            continue
        L = np.eye(m) - (np.diag(1.0 / v) @ A1 @ np.diag(v)) / lam
        # the diagonal absorbs rounding so rows sum to zero to machine precision
        off = L - np.diag(np.diag(L))
        L = off - np.diag(off.sum(axis=1))
        if _krylov_rank(L, e, transpose=(mode == "observable")) == m:
            return WLM(L, g)
    raise WeightConstructionError(
        f"no {mode} realization found after {retries} attempts"
    )


@dataclass
class EigCheckReport:
    p1_pass: bool | None = None
    p2_pass: bool | None = None
    uepp_pass: bool | None = None
    details: list = field(default_factory=list)


def check_p1_p2(M, tol=DEFAULT_TOL):
    """P2: all eigenvalues simple. P1: no zero entry in any unit right or left
    eigenvector (indeterminate, ``None``, when P2 fails)."""
    sp = spectrum(M, tol)
    rep = EigCheckReport()
    rep.p2_pass = sp.simple
    for k in np.where(sp.repeated)[0]:
        rep.details.append(("repeated", complex(sp.eigenvalues[k])))
    if not rep.p2_pass:
        rep.p1_pass = None
        return rep
    rep.p1_pass = True
    for side, vecs in (("right", sp.right), ("left", sp.left)):
        for k in range(len(sp)):
            small = np.where(np.abs(vecs[:, k]) <= tol.zero_entry_tol)[0]
            for idx in small:
                rep.p1_pass = False
                rep.details.append((f"zero {side} entry", complex(sp.eigenvalues[k]), int(idx) + 1))
    return rep


def _distinct(M, tol):
    return cluster_values(eigenvalues(M), tol.eig_sep_tol)


def uepp_collisions(eig_w, eig_a, sep_tol):
    """Pairs of distinct factorizations that give the same nonzero product."""
    prods = []
    for a in eig_w:
        for b in eig_a:
            p = a * b
            if abs(p) >= sep_tol:
                prods.append((p, a, b))
    out = []
    for s in range(len(prods)):
        for t in range(s + 1, len(prods)):
            if abs(prods[s][0] - prods[t][0]) < sep_tol:
                out.append((prods[s][0], (prods[s][1], prods[s][2]), (prods[t][1], prods[t][2])))
    return out


def check_uepp(W, A, tol=DEFAULT_TOL):
    rep = EigCheckReport()
    cols = uepp_collisions(_distinct(W, tol), _distinct(A, tol), tol.eig_sep_tol)
    rep.uepp_pass = not cols
    rep.details.extend(("collision",) + c for c in cols)
    return rep


def is_stochastic(W, row_tol=1e-10):
    W = np.asarray(W)
    return bool(np.all(W >= -1e-15) and np.all(np.abs(W.sum(axis=1) - 1.0) <= row_tol))


def alpha_upper(L, eps=1e-3):
    """Largest step for which ``I - alpha L`` stays entrywise nonnegative (with slack)."""
    d = float(np.max(np.diag(L), initial=0.0))
    return 1.0 / (d + eps)


def choose_alpha(wlm, A, tol=DEFAULT_TOL, seed=0, window=(0.75, 1.0), draws=50):
    """Draw ``alpha`` until ``W = I - alpha L`` is stochastic and ``W kron A``
    has the unique eigenvalue product property.

    ``alpha`` is uniform on ``window`` times the nonnegativity limit
    ``1 / (max_i l_ii + eps)``. Returns ``(alpha, W)``.
    """
    L = np.asarray(wlm.L if isinstance(wlm, WLM) else wlm, dtype=float)
    m = L.shape[0]
    rng = np.random.default_rng(seed)
    hi = alpha_upper(L)
    lo_f, hi_f = window
    vacuous = spectral_radius(A, tol) == 0.0
    tried = []
    for _ in range(draws):
        alpha = float(rng.uniform(lo_f * hi, hi_f * hi))
        W = np.eye(m) - alpha * L
        if not is_stochastic(W):
            continue
        if vacuous:
            return alpha, W
        rep = check_uepp(W, A, tol)
        if rep.uepp_pass:
            return alpha, W
        tried.append((alpha, rep.details))
    raise WeightConstructionError(
        f"UEPP failed for {draws} draws of alpha; last collisions: {tried[-1][1] if tried else None}"
    )


@dataclass(frozen=True)
class KronFactor:
    lam_w: complex
    lam_a: complex
    v: np.ndarray
    p: np.ndarray
    p_basis: np.ndarray
    residual: float

    def reconstruction_residual(self, q):
        """Distance of unit-normalized ``q`` from span{v kron p_k}."""
        q = np.asarray(q, dtype=complex)
        q = q / np.linalg.norm(q)
        basis = np.column_stack([np.kron(self.v, self.p_basis[:, k]) for k in range(self.p_basis.shape[1])])
        Qb, _ = np.linalg.qr(basis)
        return float(np.linalg.norm(q - Qb @ (Qb.conj().T @ q)))


class PreconditionError(ValueError):
    pass


def kron_eigvec_factorization(W, A, lam, tol=DEFAULT_TOL, check=True):
    """Factor the eigenvector of ``W kron A`` at a nonzero eigenvalue as ``v kron p``."""
    W = np.asarray(W, dtype=float)
    A = np.asarray(A, dtype=float)
    lam = complex(lam)
    if abs(lam) < tol.eig_sep_tol:
        raise PreconditionError("eigenvalue must be nonzero")
    if check:
        if not check_p1_p2(W, tol).p2_pass:
            raise PreconditionError("W must have simple eigenvalues")
        if not check_uepp(W, A, tol).uepp_pass:
            raise PreconditionError("W kron A must satisfy UEPP")
    sw = spectrum(W, tol)
    ea = _distinct(A, tol)
    match_tol = 1e-6 * max(1.0, abs(lam))
    cands = [(k, b) for k, a in enumerate(sw.eigenvalues) for b in ea if abs(a * b - lam) < match_tol]
    if len(cands) != 1:
        raise PreconditionError(f"{len(cands)} factorizations of {lam}")
    k, lam_a = cands[0]
    lam_w = complex(sw.eigenvalues[k])
    v = sw.right[:, k]
    n = A.shape[0]
    basis = null_vectors(A - lam_a * np.eye(n), tol)
    if basis.shape[1] == 0:
        # inexact eigenvalue of a defective block: take the smallest singular direction
        _, _, vh = np.linalg.svd(A - lam_a * np.eye(n))
        basis = vh[-1:].conj().T
    p = basis[:, 0]
    q = np.kron(v, p)
    res = np.linalg.norm(np.kron(W, A) @ q - lam * q)
    bound = 1e-8 * max(1.0, np.linalg.norm(W, 2) * np.linalg.norm(A, 2))
    if res > bound:
        raise PreconditionError(f"reconstruction residual {res:.3e} exceeds {bound:.3e}")
    return KronFactor(lam_w, complex(lam_a), v, p, basis, float(res))


@dataclass(frozen=True)
class BlockLayout:
    """Permutation ``perm`` (0-based vertex indices) putting W in the
    [[W1,0,..],[0,W2,..],..,[W31,W32,..,W33]] template."""

    perm: tuple
    source_blocks: tuple
    nonsource: tuple

    def source_vertex_sets(self):
        return [tuple(self.perm[a] + 1 for a in range(s, e)) for s, e in self.source_blocks]

    def nonsource_vertices(self):
        s, e = self.nonsource
        return tuple(self.perm[a] + 1 for a in range(s, e))


@dataclass(frozen=True)
class WeightMatrix:
    W: np.ndarray
    block_layout: BlockLayout | None = None
    alphas: tuple | None = None
    delta: float | None = None

    @property
    def m(self):
        return self.W.shape[0]

    def permuted(self):
        if self.block_layout is None:
            return self.W.copy()
        p = list(self.block_layout.perm)
        return self.W[np.ix_(p, p)]


def weight_violations(W, g, row_tol=1e-10):
    W = np.asarray(W)
    out = []
    rs = np.abs(W.sum(axis=1) - 1.0)
    for i in np.where(rs > row_tol)[0]:
        out.append(f"row {i + 1} sums to {W[i].sum()}")
    nb = neighborhoods(g)
    for i in range(g.m):
        for j in range(g.m):
            if W[i, j] != 0 and (j + 1) not in nb[i]:
                out.append(f"w[{i + 1},{j + 1}] = {W[i, j]} but {j + 1} is not a neighbour of {i + 1}")
    return out


def layout_violations(wm, A, tol=DEFAULT_TOL):
    """Check the block template and properties F0-F4 of a constructed W."""
    out = []
    lay = wm.block_layout
    if lay is None:
        return ["no block layout"]
    Wp = wm.permuted()
    blocks = list(lay.source_blocks)
    ns, ne = lay.nonsource
    for a, (s, e) in enumerate(blocks):
        rows = slice(s, e)
        mask = np.ones(Wp.shape[1], dtype=bool)
        mask[s:e] = False
        if np.any(Wp[rows][:, mask] != 0):
            out.append(f"source block {a + 1} has nonzero entries outside its diagonal block")
        Wi = Wp[s:e, s:e]
        rep = check_p1_p2(Wi, tol)
        if not rep.p2_pass:
            out.append(f"F2 fails for source block {a + 1}")
        elif not rep.p1_pass:
            out.append(f"F1 fails for source block {a + 1}")
        else:
            # F3: unstable eigenvectors of W_i kron A factor
            WA = np.kron(Wi, A)
            for lam in eigenvalues(WA):
                if abs(lam) >= 1.0:
                    try:
                        kron_eigvec_factorization(Wi, A, lam, tol, check=False)
                    except PreconditionError as exc:
                        out.append(f"F3 fails for block {a + 1} at {lam}: {exc}")
                        break
    if ne > ns:
        W33 = Wp[ns:ne, ns:ne]
        if np.any(np.triu(W33, 1) != 0):
            out.append("W33 is not lower triangular")
        if spectral_radius(W33) * spectral_radius(A) >= 1.0 - tol.stability_margin:
            out.append("F4 fails: W33 kron A has unstable eigenvalues")
    return out


def build_weight_matrix(g, A, tol=DEFAULT_TOL, seed=0, max_retries=25, delta=0.05):
    """Construct a block lower-triangular weight matrix for any number of
    source components.

    Source blocks are ``I - alpha_i L_i`` with ``L_i`` a simple-spectrum WLM
    whose eigenvectors have no zero entries. Non-source rows, ordered along a
    rooted forest, put ``delta`` on the diagonal and on earlier in-neighbours
    and the remainder on the tree parent, with ``delta * rho(A)`` below
    ``1 - stability_margin``.
    """
    A = np.asarray(A, dtype=float)
    m = g.m
    rng = np.random.default_rng(seed)
    sources = source_components(g)
    W = np.zeros((m, m))
    alphas = []
    perm, blocks = [], []
    for sc in sources:
        verts = list(sc.vertices)
        local = {v: k + 1 for k, v in enumerate(verts)}
        gc = DirectedGraph(len(verts), [(local[i], local[j]) for (i, j) in sc.internal_edges])
        for _ in range(max_retries):
            s1, s2, s3 = (int(x) for x in rng.integers(0, 2**62, size=3))
            L, _ = make_simple_spectrum(random_wlm(gc, s1), tol, s2)
            rep = check_p1_p2(L.L, tol)
            if rep.p1_pass and rep.p2_pass:
                break
        else:
            raise WeightConstructionError(
                f"P1/P2 rejection exceeded {max_retries} retries for component {sc.vertices}"
            )
        alpha, Wc = choose_alpha(L, A, tol, s3)
        idx = [v - 1 for v in verts]
        W[np.ix_(idx, idx)] = Wc
        alphas.append(alpha)
        blocks.append((len(perm), len(perm) + len(verts)))
        perm.extend(idx)

    forest = rooted_forest_over_nonsource(g, sources)
    rho_a = spectral_radius(A, tol)
    src_set = {v for sc in sources for v in sc.vertices}
    earlier = set(src_set)
    placed = []
    for v in forest.order:
        par = forest.parent(v)
        if par is None:
            par = forest.root_feeders[v]
        placed.append((v, par, [u for u in g.in_neighbors(v) if u in earlier and u != par]))
        earlier.add(v)
    most = max((len(o) for _, _, o in placed), default=0)
    d = delta
    while d * rho_a >= 1.0 - tol.stability_margin or d * (1 + most) >= 1.0:
        d *= 0.5
    assert d > 0
    ns = len(perm)
    for v, par, others in placed:
        i = v - 1
        W[i, i] = d
        for u in others:
            W[i, u - 1] = d
        W[i, par - 1] = 1.0 - d * (1 + len(others))
        perm.append(i)
    layout = BlockLayout(tuple(perm), tuple(blocks), (ns, len(perm)))
    wm = WeightMatrix(W, layout, tuple(alphas), d if forest.order else None)

    problems = weight_violations(W, g) + layout_violations(wm, A, tol)
    if problems:
        raise WeightConstructionError("; ".join(problems))
    return wm
