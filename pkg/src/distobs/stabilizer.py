"""Decentralized dynamic output-feedback search shared by observer and
controller synthesis.

Channel ``i`` of the system ``x+ = A x + sum_i B_i u_i``, ``y_i = H_i x`` gets
a controller ``u_i = K_i y_i + P_i z_i``, ``z_i+ = Q_i y_i + S_i z_i``. The
closed loop is

    [[A + sum B_i K_i H_i, B_i P_i], [Q_i H_i, S_i]].

The search minimizes ``sum max(0, |lambda| - tau)^2`` over the eigenvalues
with L-BFGS (analytic eigenvalue gradients), lowering ``tau`` in stages,
restarting from perturbed points and finally polishing the true spectral
radius with a compass pattern search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .numerics import DEFAULT_TOL, spectral_radius, spectrum

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Channels:
    A: np.ndarray
    B: tuple
    H: tuple

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def count(self):
        return len(self.B)

    def shapes(self, orders):
        """Per channel ``(p_i, r_i, mu_i)``."""
        return [(B.shape[1], H.shape[0], int(mu)) for B, H, mu in zip(self.B, self.H, orders)]

    def n_params(self, orders):
        return sum(p * r + p * mu + mu * r + mu * mu for p, r, mu in self.shapes(orders))

    def unpack(self, theta, orders):
        out, k = [], 0
        for p, r, mu in self.shapes(orders):
            blocks = []
            for a, b in ((p, r), (p, mu), (mu, r), (mu, mu)):
                blocks.append(np.asarray(theta[k:k + a * b], dtype=float).reshape(a, b))
                k += a * b
            out.append(tuple(blocks))
        return out

    @staticmethod
    def pack(blocks):
        parts = [np.asarray(X, dtype=float).ravel() for ch in blocks for X in ch]
        return np.concatenate(parts) if parts else np.zeros(0)

    def closed_loop(self, blocks):
        N = self.N
        mus = [ch[3].shape[0] for ch in blocks]
        tot = N + sum(mus)
        M = np.zeros((tot, tot))
        M[:N, :N] = self.A
        off = N
        for (K, P, Q, S), B, H, mu in zip(blocks, self.B, self.H, mus):
            z = slice(off, off + mu)
            M[:N, :N] += B @ K @ H
            M[:N, z] = B @ P
            M[z, :N] = Q @ H
            M[z, z] = S
            off += mu
        return M

    def pullback(self, G, orders):
        N = self.N
        Gxx = G[:N, :N]
        parts, off = [], N
        for B, H, mu in zip(self.B, self.H, orders):
            z = slice(off, off + mu)
            parts += [
                (B.T @ Gxx @ H.T).ravel(),
                (B.T @ G[:N, z]).ravel(),
                (G[z, :N] @ H.T).ravel(),
                G[z, z].ravel(),
            ]
            off += mu
        return np.concatenate(parts) if parts else np.zeros(0)


def surrogate(ch, orders, theta, tau):
    """Value and gradient of ``sum max(0, |lambda| - tau)^2``."""
    M = ch.closed_loop(ch.unpack(theta, orders))
    ev, vl, vr = sla.eig(M, left=True, right=True)
    mod = np.abs(ev)
    ex = mod - tau
    f = 0.0
    G = np.zeros_like(M)
    for k in np.where(ex > 0)[0]:
        f += ex[k] ** 2
        den = vl[:, k].conj() @ vr[:, k]
        if abs(den) < 1e-14:
            continue
        dl = np.outer(vl[:, k].conj(), vr[:, k]) / den
        G += 2 * ex[k] * np.real(np.conj(ev[k]) / max(mod[k], 1e-300) * dl)
    return f, ch.pullback(G, orders)


def radius(ch, orders, theta):
    return spectral_radius(ch.closed_loop(ch.unpack(theta, orders)))


def pole_shrink_warm_start(ch, orders, shrink=0.5, tol=DEFAULT_TOL):
    """Static gains from a least-squares first-order move of every unstable
    open-loop eigenvalue toward ``shrink`` times itself. Dynamic blocks are zero."""
    sp = spectrum(ch.A, tol)
    zero = [
        (np.zeros((p, r)), np.zeros((p, mu)), np.zeros((mu, r)), np.zeros((mu, mu)))
        for p, r, mu in ch.shapes(orders)
    ]
    unstable = [k for k in range(len(sp)) if abs(sp.eigenvalues[k]) >= 1.0]
    nk = sum(p * r for p, r, _ in ch.shapes(orders))
    if not unstable or nk == 0:
        return Channels.pack(zero)
    rows, rhs = [], []
    for k in unstable:
        w, v = sp.left[:, k], sp.right[:, k]
        den = w @ v
        if abs(den) < 1e-12:
            continue
        coef = [np.outer(B.T @ w, H @ v).ravel() / den for B, H in zip(ch.B, ch.H)]
        rows.append(np.concatenate(coef))
        rhs.append((shrink - 1.0) * sp.eigenvalues[k])
    if not rows:
        return Channels.pack(zero)
    C = np.array(rows)
    d = np.array(rhs)
    x, *_ = np.linalg.lstsq(np.vstack([C.real, C.imag]), np.concatenate([d.real, d.imag]), rcond=None)
    best, best_r = zero, radius(ch, orders, Channels.pack(zero))
    for t in (1.0, 0.5, 0.25, 0.125):
        blocks, k = [], 0
        for (p, r, mu), z in zip(ch.shapes(orders), zero):
            K = t * x[k:k + p * r].reshape(p, r)
            k += p * r
            blocks.append((K,) + z[1:])
        rr = radius(ch, orders, Channels.pack(blocks))
        if rr < best_r:
            best, best_r = blocks, rr
    return Channels.pack(best)


def pattern_search(fun, x0, step=0.5, min_step=1e-6, max_evals=2000):
    """Compass search with step halving; returns ``(x, f, evals)``."""
    x = np.array(x0, dtype=float)
    fx = fun(x)
    evals = 1
    while step > min_step and evals < max_evals:
        improved = False
        for i in range(len(x)):
            for s in (step, -step):
                y = x.copy()
                y[i] += s
                fy = fun(y)
                evals += 1
                if fy < fx:
                    x, fx, improved = y, fy, True
                    break
                if evals >= max_evals:
                    break
            if evals >= max_evals:
                break
        if not improved:
            step *= 0.5
    return x, fx, evals


@dataclass(frozen=True)
class StabilizeResult:
    theta: np.ndarray
    blocks: list
    radius: float
    iterations: int
    converged: bool
    restart: int


def stabilize(ch, orders, warm=None, seed=0, restarts=8, max_iters=2000,
              target=0.9, taus=(0.95, 0.8, 0.6), scales=(0.5, 1.0, 2.0, 4.0), tol=DEFAULT_TOL):
    """Search channel gains until the closed-loop spectral radius is below
    ``target`` (early exit) and in any case report the best point found.

    Restart 0 starts from ``warm`` (zeros when absent), restart 1 from zeros,
    later restarts from Gaussian perturbations of ``warm`` whose scale cycles
    through ``scales``; large scales reach controllers that are themselves
    unstable, which some plants require. Restarts use seeds spawned from
    ``seed`` and run in order, so ties resolve to the lower index.
    """
    orders = [int(mu) for mu in orders]
    npar = ch.n_params(orders)
    limit = 1.0 - tol.stability_margin
    if warm is None:
        warm = np.zeros(npar)
    seeds = np.random.SeedSequence(seed).spawn(max(restarts, 1))
    best = (np.inf, warm, -1)
    iters = 0
    for r in range(max(restarts, 1)):
        rng = np.random.default_rng(seeds[r])
        if r == 0:
            th = np.array(warm, dtype=float)
        elif r == 1:
            th = np.zeros(npar)
        else:
            th = np.array(warm) + rng.normal(scale=scales[(r - 2) % len(scales)], size=npar)
        if npar == 0 or r == 0:
            rr = radius(ch, orders, th)
            if rr < best[0]:
                best = (rr, th.copy(), r)
            if rr < target:
                break
        if npar == 0:
            break
        for tau in taus:
            res = minimize(lambda t: surrogate(ch, orders, t, tau), th, jac=True,
                           method="L-BFGS-B", options={"maxiter": max_iters})
            iters += int(res.nit)
            th = res.x
            rr = radius(ch, orders, th)
            if rr < best[0]:
                best = (rr, th.copy(), r)
            if rr < target:
                break
        if best[0] < target:
            break
    if best[0] >= target and npar > 0:
        x, fx, ev = pattern_search(lambda t: radius(ch, orders, t), best[1], max_evals=max_iters)
        iters += ev
        if fx < best[0]:
            best = (fx, x, best[2])
    rr, th, r = best
    log.debug("stabilize: radius %.6g after %d iterations (restart %d)", rr, iters, r)
    return StabilizeResult(th, ch.unpack(th, orders), float(rr), iters, bool(rr < limit), r)
