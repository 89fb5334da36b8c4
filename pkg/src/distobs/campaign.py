"""Seeded instance generators and randomized verification campaigns."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .control import proposition2_pipeline
from .fixedmodes import FixedModeError, build_triple, fixed_mode_oracle, unstable_fixed_modes
from .graph import DirectedGraph, is_strongly_connected, source_components
from .numerics import DEFAULT_TOL, eigenvalues, spectral_radius
from .oracles import oracle_fixed_mode, oracle_omniscience_search
from .plant import Plant, is_stabilizable, theorem1_condition
from .simulator import run_controlled
from .synthesis import design_observer


def random_graph(m, rng, p_edge=0.4):
    edges = [(i, j) for i in range(1, m + 1) for j in range(1, m + 1)
             if i != j and rng.random() < p_edge]
    return DirectedGraph(m, edges)


def random_strongly_connected(m, rng, p_extra=0.3):
    perm = [int(v) + 1 for v in rng.permutation(m)]
    edges = {(perm[k], perm[(k + 1) % m]) for k in range(m)} if m > 1 else set()
    for i in range(1, m + 1):
        for j in range(1, m + 1):
            if i != j and rng.random() < p_extra:
                edges.add((i, j))
    return DirectedGraph(m, edges)


def random_A(n, rng, rho_range=(0.5, 2.0)):
    A = rng.standard_normal((n, n))
    r = spectral_radius(A)
    if r == 0:
        A = A + np.eye(n)
        r = spectral_radius(A)
    return A * (rng.uniform(*rho_range) / r)


def hide_mode(A, H_blocks, vertices, rng):
    """Project the given output blocks so one unstable mode of ``A`` is
    invisible to them. Returns the hidden eigenvalue or ``None``."""
    w, V = np.linalg.eig(A)
    unstable = [k for k in range(len(w)) if abs(w[k]) >= 1.0]
    if not unstable:
        return None
    k = unstable[int(rng.integers(len(unstable)))]
    v = V[:, k]
    basis = np.column_stack([v.real, v.imag])
    Q, R = np.linalg.qr(basis)
    Q = Q[:, np.abs(np.diag(R)) > 1e-12]
    proj = np.eye(A.shape[0]) - Q @ Q.T
    for i in vertices:
        H_blocks[i - 1] = H_blocks[i - 1] @ proj
    return complex(w[k])


@dataclass
class Instance:
    graph: DirectedGraph
    plant: Plant
    seed: int
    injected: complex | None = None


def e1_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(2, 5))
    g = random_graph(m, rng)
    A = random_A(n, rng)
    Hs = [rng.standard_normal((int(rng.integers(0, n + 1)), n)) for _ in range(m)]
    injected = None
    if rng.random() < 0.5:
        srcs = source_components(g)
        sc = srcs[int(rng.integers(len(srcs)))]
        injected = hide_mode(A, Hs, sc.vertices, rng)
    return Instance(g, Plant(A, Hs), seed, injected)


def e4_instance(seed, max_tries=200):
    """Random instance with a stabilizable plant and a detectable network."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(2, 5))
        g = random_graph(m, rng)
        A = random_A(n, rng)
        Hs = [rng.standard_normal((int(rng.integers(0, n + 1)), n)) for _ in range(m)]
        Bs = [rng.standard_normal((n, int(rng.integers(0, 2)))) for _ in range(m)]
        p = Plant(A, Hs, Bs)
        if is_stabilizable(A, p.B)[0] and theorem1_condition(p, g).holds:
            return Instance(g, p, seed)
    raise RuntimeError("no stabilizable and detectable instance found")


def fixed_mode_instance(seed):
    """Small triple, half of them with a source block that hides a mode."""
    from .weights import build_weight_matrix

    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(2, 5))
    g = random_graph(m, rng)
    A = random_A(n, rng)
    Hs = [rng.standard_normal((int(rng.integers(0, n + 1)), n)) for _ in range(m)]
    if rng.random() < 0.5:
        srcs = source_components(g)
        hide_mode(A, Hs, srcs[int(rng.integers(len(srcs)))].vertices, rng)
    p = Plant(A, Hs)
    wm = build_weight_matrix(g, A, DEFAULT_TOL, int(rng.integers(2**31)))
    return g, p, build_triple(wm, p)


@dataclass
class Summary:
    name: str
    outcomes: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self):
        return asdict(self)


def e1_campaign(count=200, master_seed=0, oracle_budget=300, tol=DEFAULT_TOL, **opts):
    """Detectability verdict vs synthesis and random search."""
    t0 = time.perf_counter()
    out = Summary("E1")
    seeds = np.random.SeedSequence(master_seed).generate_state(count)
    for s in seeds:
        inst = e1_instance(int(s))
        v = theorem1_condition(inst.plant, inst.graph, tol)
        rec = {"seed": int(s), "n": inst.plant.n, "m": inst.plant.m, "condition": v.holds}
        if v.holds:
            try:
                wm, res, tries = design_observer(inst.graph, inst.plant, seed=int(s), tol=tol, **opts)
                rec.update(converged=res.converged, radius=res.closed_loop_radius, w_attempts=tries)
            except FixedModeError as exc:
                rec.update(converged=False, radius=None, anomaly=str(exc))
        else:
            try:
                wm, res, tries = design_observer(inst.graph, inst.plant, seed=int(s), tol=tol,
                                                 **{**opts, "w_attempts": 1})
                rec.update(synthesis_failed=not res.converged, radius=res.closed_loop_radius)
            except FixedModeError:
                rec.update(synthesis_failed=True, fixed_mode_gate=True)
            orc = oracle_omniscience_search(inst.plant, inst.graph, budget=oracle_budget, seed=int(s))
            rec.update(oracle_found=orc.verdict, oracle_best=orc.evidence.get("best_radius"))
        out.outcomes.append(rec)
    pos = [r for r in out.outcomes if r["condition"]]
    neg = [r for r in out.outcomes if not r["condition"]]
    out.aggregates = {
        "instances": len(out.outcomes),
        "condition_true": len(pos),
        "condition_false": len(neg),
        "converged_rate": (sum(r["converged"] for r in pos) / len(pos)) if pos else None,
        "negative_agreement": (sum(r["synthesis_failed"] and not r["oracle_found"] for r in neg) / len(neg))
        if neg else None,
        "nonconverged_radii": [r["radius"] for r in pos if not r["converged"]],
    }
    out.seconds = time.perf_counter() - t0
    return out


def e4_campaign(count=30, master_seed=0, horizon=400, tol=DEFAULT_TOL, **opts):
    t0 = time.perf_counter()
    out = Summary("E4")
    seeds = np.random.SeedSequence(master_seed).generate_state(count)
    for s in seeds:
        inst = e4_instance(int(s))
        res = proposition2_pipeline(inst.plant, inst.graph, seed=int(s), tol=tol, **opts)
        rec = {"seed": int(s), "status": res.status, "radius": res.closed_loop_radius,
               "equivalence_gap": res.equivalence_gap}
        if res.controller is not None and res.converged:
            rng = np.random.default_rng(int(s))
            tr = run_controlled(res.controller, inst.plant, rng.standard_normal(inst.plant.n),
                                rng.standard_normal(sum(res.controller.dims)), horizon)
            rec["final_norm"] = float(tr.state_norm[-1])
            rec["initial_norm"] = float(tr.state_norm[0])
        out.outcomes.append(rec)
    conv = [r for r in out.outcomes if r["status"] == "ok"]
    out.aggregates = {
        "instances": count,
        "converged_rate": len(conv) / count if count else None,
        "max_equivalence_gap": max((r["equivalence_gap"] for r in out.outcomes
                                    if r["equivalence_gap"] is not None), default=None),
    }
    out.seconds = time.perf_counter() - t0
    return out


def fixed_mode_campaign(count=100, master_seed=0, tol=DEFAULT_TOL):
    t0 = time.perf_counter()
    out = Summary("fixed_modes")
    seeds = np.random.SeedSequence(master_seed).generate_state(count)
    for s in seeds:
        g, p, t = fixed_mode_instance(int(s))
        rep = unstable_fixed_modes(t, tol)
        orc = [l for l in oracle_fixed_mode(t, 8, int(s), tol) if abs(l) >= 1.0]
        own = [l for l in fixed_mode_oracle(t, 8, int(s), tol) if abs(l) >= 1.0]
        out.outcomes.append({"seed": int(s), "rank_test": rep.verdict, "oracle": bool(orc),
                             "uniform_oracle": bool(own)})
    agree = sum(r["rank_test"] == r["oracle"] for r in out.outcomes)
    out.aggregates = {"instances": count, "agreement": agree / count if count else None,
                      "with_fixed_modes": sum(r["rank_test"] for r in out.outcomes)}
    out.seconds = time.perf_counter() - t0
    return out


def theorem2_campaign(graphs_per_size=1, sizes=(2, 3, 4, 5, 6), draws=100, master_seed=0, tol=DEFAULT_TOL):
    from .weights import check_p1_p2, make_simple_spectrum, random_wlm

    t0 = time.perf_counter()
    out = Summary("theorem2")
    rng = np.random.default_rng(master_seed)
    for m in sizes:
        for _ in range(graphs_per_size):
            g = random_strongly_connected(m, rng)
            passed = 0
            for d in range(draws):
                L, _ = make_simple_spectrum(random_wlm(g, int(rng.integers(2**31))), tol, d)
                rep = check_p1_p2(L.L, tol)
                passed += bool(rep.p1_pass and rep.p2_pass)
            out.outcomes.append({"m": m, "edges": sorted(g.edges), "passed": passed, "draws": draws})
    out.aggregates = {"min_pass": min((r["passed"] for r in out.outcomes), default=None)}
    out.seconds = time.perf_counter() - t0
    return out


CAMPAIGNS = {
    "e1": e1_campaign,
    "e4": e4_campaign,
    "fixed_modes": fixed_mode_campaign,
    "theorem2": theorem2_campaign,
}


def run_config(cfg):
    """Run the campaigns listed under ``cfg['campaigns']``; each entry names a
    campaign and its keyword arguments."""
    results = []
    for entry in cfg.get("campaigns", []) or []:
        entry = dict(entry)
        name = entry.pop("name")
        if name not in CAMPAIGNS:
            raise ValueError(f"unknown campaign {name!r}; choose from {sorted(CAMPAIGNS)}")
        results.append(CAMPAIGNS[name](**entry).to_dict())
    return results


__all__ = [
    "Instance",
    "Summary",
    "e1_instance",
    "e4_instance",
    "fixed_mode_instance",
    "e1_campaign",
    "e4_campaign",
    "fixed_mode_campaign",
    "theorem2_campaign",
    "random_graph",
    "random_strongly_connected",
    "random_A",
    "hide_mode",
    "run_config",
    "is_strongly_connected",
    "eigenvalues",
]
