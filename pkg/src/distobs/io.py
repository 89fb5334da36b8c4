"""YAML problem and solution files.

Problem layout::

    graph:   {m: 3, edges: [[1, 2], [2, 3]]}
    plant:   {A: [[...]], H: [[[...]], [], ...], B: [[[...]], ...]}
    options: {seed: 0, mu: null, nu: null, restarts: 8, max_iters: 2000,
              tolerances: {rank_rel_tol: 1e-9, ...}}

Matrices are nested row-major lists. Floats are written with 17 significant
digits so a write/read cycle is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .control import DecoupledControllerSet
from .graph import DirectedGraph, GraphError
from .numerics import DEFAULT_TOL, Tolerances
from .plant import DimensionError, Plant
from .synthesis import GainSet
from .weights import BlockLayout, WeightMatrix


class FormatError(ValueError):
    def __init__(self, msg, line=None, path=None):
        where = f"{path or '<input>'}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + msg)
        self.line = line


OPTION_KEYS = {"seed", "mu", "nu", "restarts", "max_iters", "tolerances", "horizon", "target"}


@dataclass
class Problem:
    graph: DirectedGraph
    plant: Plant
    options: dict = field(default_factory=dict)

    @property
    def tol(self):
        return Tolerances(**{**DEFAULT_TOL.to_dict(), **(self.options.get("tolerances") or {})})


class _Dumper(yaml.SafeDumper):
    pass


def _float_repr(dumper, value):
    if value != value:
        text = ".nan"
    elif value in (float("inf"), float("-inf")):
        text = ".inf" if value > 0 else "-.inf"
    else:
        text = f"{value:.17g}"
        if "." not in text and "n" not in text:
            text = text.replace("e", ".0e") if "e" in text else text + ".0"
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


_Dumper.add_representer(float, _float_repr)


def _plain(x):
    """numpy-free nested structure for dumping."""
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()] if x.ndim else _plain(x.item())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def dump_yaml(obj):
    return yaml.dump(_plain(obj), Dumper=_Dumper, sort_keys=False, default_flow_style=None, width=120)


def _node_line(root, path):
    """1-based line of the YAML node at ``path`` (keys and indices), or of
    the deepest existing ancestor."""
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        nxt = None
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def _parse(text, path):
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise FormatError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, path) from exc
    return root, data


def _matrix(value, where, err, rows=None, cols=None):
    if value is None or value == []:
        if rows is None and cols is None:
            raise err("empty matrix where a shape cannot be inferred", where)
        return np.zeros((rows or 0, cols or 0))
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise err("matrix must be a list of rows", where)
    if len({len(r) for r in value}) > 1:
        raise err("matrix rows have different lengths", where)
    try:
        M = np.array([[float(x) for x in r] for r in value], dtype=float)
    except (TypeError, ValueError) as exc:
        raise err(f"non-numeric matrix entry ({exc})", where) from exc
    if M.size == 0:
        M = np.zeros((len(value) if rows is None else rows, cols or 0))
    if not np.all(np.isfinite(M)):
        raise err("matrix has non-finite entries", where)
    return M


def problem_from_text(text, path=None):
    root, data = _parse(text, path)

    def err(msg, where=()):
        return FormatError(msg, _node_line(root, where), path)

    if not isinstance(data, dict):
        raise err("top level must be a mapping with graph and plant sections")
    for sec in ("graph", "plant"):
        if sec not in data or not isinstance(data[sec], dict):
            raise err(f"missing or malformed '{sec}' section")
    gd = data["graph"]
    if "m" not in gd:
        raise err("graph.m is required", ("graph",))
    try:
        edges = [tuple(int(v) for v in e) for e in (gd.get("edges") or [])]
    except (TypeError, ValueError) as exc:
        raise err(f"edges must be pairs of integers ({exc})", ("graph", "edges")) from exc
    for k, e in enumerate(edges):
        if len(e) != 2:
            raise err(f"edge {list(e)} is not a pair", ("graph", "edges", k))
    try:
        g = DirectedGraph(int(gd["m"]), edges)
    except GraphError as exc:
        bad = next((k for k, e in enumerate(edges) if e[0] == e[1] or not all(1 <= v <= int(gd["m"]) for v in e)), None)
        raise err(str(exc), ("graph", "edges", bad) if bad is not None else ("graph",)) from exc

    pd = data["plant"]
    if "A" not in pd:
        raise err("plant.A is required", ("plant",))
    A = _matrix(pd["A"], ("plant", "A"), err)
    n = A.shape[0]
    if A.shape != (n, n):
        raise err(f"A must be square, got {A.shape}", ("plant", "A"))
    Hraw = pd.get("H")
    if not isinstance(Hraw, list):
        raise err("plant.H must be a list with one block per vertex", ("plant",))
    if len(Hraw) != g.m:
        raise err(f"plant.H has {len(Hraw)} blocks for {g.m} vertices", ("plant", "H"))
    Hs = []
    for i, h in enumerate(Hraw):
        H = _matrix(h, ("plant", "H", i), err, rows=0, cols=n)
        if H.shape[1] != n:
            raise err(f"H_{i + 1} has {H.shape[1]} columns, expected {n}", ("plant", "H", i))
        Hs.append(H)
    Bs = None
    if pd.get("B") is not None:
        if not isinstance(pd["B"], list) or len(pd["B"]) != g.m:
            raise err(f"plant.B must list {g.m} blocks", ("plant", "B"))
        Bs = []
        for i, b in enumerate(pd["B"]):
            B = _matrix(b, ("plant", "B", i), err, rows=n, cols=0)
            if B.size == 0:
                B = np.zeros((n, 0))
            if B.shape[0] != n:
                raise err(f"B_{i + 1} has {B.shape[0]} rows, expected {n}", ("plant", "B", i))
            Bs.append(B)
    try:
        p = Plant(A, Hs, Bs)
    except DimensionError as exc:
        raise err(str(exc), ("plant",)) from exc

    opts = data.get("options") or {}
    if not isinstance(opts, dict):
        raise err("options must be a mapping", ("options",))
    unknown = set(opts) - OPTION_KEYS
    if unknown:
        raise err(f"unknown option(s) {sorted(unknown)}", ("options", sorted(unknown)[0]))
    tols = opts.get("tolerances") or {}
    try:
        Tolerances(**{**DEFAULT_TOL.to_dict(), **{k: float(v) for k, v in tols.items()}})
    except (TypeError, ValueError) as exc:
        raise err(f"bad tolerances: {exc}", ("options", "tolerances")) from exc
    opts = dict(opts)
    if tols:
        opts["tolerances"] = {k: float(v) for k, v in tols.items()}
    return Problem(g, p, opts)


def load_problem(path):
    with open(path) as fh:
        return problem_from_text(fh.read(), str(path))


def problem_to_dict(pr):
    p = pr.plant
    d = {
        "graph": {"m": pr.graph.m, "edges": [list(e) for e in pr.graph.sorted_edges()]},
        "plant": {"A": p.A, "H": [H for H in p.H_blocks]},
    }
    if p.B_blocks is not None:
        d["plant"]["B"] = [B for B in p.B_blocks]
    if pr.options:
        d["options"] = pr.options
    return d


def save_problem(pr, path):
    with open(path, "w") as fh:
        fh.write(dump_yaml(problem_to_dict(pr)))


# solution files

def gains_to_dict(g):
    return {"mu": g.mu, "observers": [{"K": K, "P": P, "Q": Q, "S": S}
                                      for K, P, Q, S in zip(g.K, g.P, g.Q, g.S)]}


def gains_from_dict(d, p, err):
    obs = d.get("observers") or []
    if len(obs) != p.m:
        raise err(f"gains list {len(obs)} observers for {p.m} vertices")
    mus = [int(x) for x in d.get("mu", [])]
    K, P, Q, S = [], [], [], []
    for i, o in enumerate(obs):
        r, mu, n = p.r[i], mus[i], p.n
        K.append(_matrix(o["K"], (), err, n, r).reshape(n, r))
        P.append(_matrix(o["P"], (), err, n, mu).reshape(n, mu))
        Q.append(_matrix(o["Q"], (), err, mu, r).reshape(mu, r))
        S.append(_matrix(o["S"], (), err, mu, mu).reshape(mu, mu))
    return GainSet(K, P, Q, S)


def decoupled_to_dict(dc):
    return {"nu": dc.nu, "controllers": [{"K": K, "P": P, "Q": Q, "S": S}
                                         for K, P, Q, S in zip(dc.K, dc.P, dc.Q, dc.S)]}


def decoupled_from_dict(d, p, err):
    cs = d.get("controllers") or []
    nus = [int(x) for x in d.get("nu", [])]
    K, P, Q, S = [], [], [], []
    for i, c in enumerate(cs):
        n, pi, nu = p.n, p.p[i], nus[i]
        K.append(_matrix(c["K"], (), err, pi, n).reshape(pi, n))
        P.append(_matrix(c["P"], (), err, pi, nu).reshape(pi, nu))
        Q.append(_matrix(c["Q"], (), err, nu, n).reshape(nu, n))
        S.append(_matrix(c["S"], (), err, nu, nu).reshape(nu, nu))
    return DecoupledControllerSet(tuple(S), tuple(Q), tuple(P), tuple(K))


def weights_to_dict(wm):
    d = {"W": wm.W}
    if wm.block_layout is not None:
        lay = wm.block_layout
        d["block_layout"] = {"perm": [int(v) + 1 for v in lay.perm],
                             "source_blocks": [list(b) for b in lay.source_blocks],
                             "nonsource": list(lay.nonsource)}
    if wm.alphas is not None:
        d["alphas"] = list(wm.alphas)
    if wm.delta is not None:
        d["delta"] = wm.delta
    return d


def weights_from_dict(d, m, err):
    W = _matrix(d.get("W"), (), err, m, m)
    if W.shape != (m, m):
        raise err(f"W has shape {W.shape}, expected {(m, m)}")
    lay = None
    if d.get("block_layout"):
        b = d["block_layout"]
        lay = BlockLayout(tuple(int(v) - 1 for v in b["perm"]),
                          tuple(tuple(int(x) for x in s) for s in b["source_blocks"]),
                          tuple(int(x) for x in b["nonsource"]))
    alphas = tuple(float(a) for a in d["alphas"]) if d.get("alphas") is not None else None
    delta = float(d["delta"]) if d.get("delta") is not None else None
    return WeightMatrix(W, lay, alphas, delta)


@dataclass
class Solution:
    weights: WeightMatrix
    gains: GainSet
    decoupled: DecoupledControllerSet | None = None
    certificates: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)


def solution_to_dict(sol):
    d = {"provenance": {"tool": "distobs", "version": __version__, **sol.provenance},
         "weights": weights_to_dict(sol.weights),
         "gains": gains_to_dict(sol.gains)}
    if sol.decoupled is not None:
        d["decoupled"] = decoupled_to_dict(sol.decoupled)
    d["certificates"] = sol.certificates
    return d


def save_solution(sol, path):
    with open(path, "w") as fh:
        fh.write(dump_yaml(solution_to_dict(sol)))


def solution_from_text(text, problem, path=None):
    root, data = _parse(text, path)

    def err(msg, where=()):
        return FormatError(msg, _node_line(root, where), path)

    if not isinstance(data, dict) or "weights" not in data or "gains" not in data:
        raise err("solution needs 'weights' and 'gains' sections")
    p = problem.plant
    try:
        wm = weights_from_dict(data["weights"], p.m, lambda m, w=(): err(m, ("weights",) + tuple(w)))
        g = gains_from_dict(data["gains"], p, lambda m, w=(): err(m, ("gains",) + tuple(w)))
        dc = None
        if data.get("decoupled"):
            if p.B_blocks is None:
                raise err("solution has controllers but the plant has no inputs", ("decoupled",))
            dc = decoupled_from_dict(data["decoupled"], p, lambda m, w=(): err(m, ("decoupled",) + tuple(w)))
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise err(f"malformed solution: {exc}") from exc
    return Solution(wm, g, dc, data.get("certificates") or {}, data.get("provenance") or {})


def load_solution(path, problem):
    with open(path) as fh:
        return solution_from_text(fh.read(), problem, str(path))
