"""Elastic-net code solver.

Each problem is ``min_a 0.5 a'Ga - a'b + lam * Omega(a)`` with a small
symmetric PSD ``G`` (k x k). It is solved by cyclic coordinate descent;
the kernel is compiled with numba because the driver runs it for every
sample of every minibatch.
"""

from __future__ import annotations

import logging

import numpy as np
from numba import njit

from .regularizers import PenaltyParams, penalty_value

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_SWEEPS = 100


@njit(cache=True)
def _kkt(G, b, a, Ga, l1, l2):
    res = 0.0
    for j in range(a.shape[0]):
        if G[j, j] + l2 <= 0.0:
            continue
        g = Ga[j] - b[j] + l2 * a[j]
        if a[j] > 0.0:
            r = abs(g + l1)
        elif a[j] < 0.0:
            r = abs(g - l1)
        else:
            r = max(abs(g) - l1, 0.0)
        if r > res:
            res = r
    return res


@njit(cache=True)
def _cd_batch(G, B, A, l1, l2, tol, max_sweeps, sweeps, degenerate, residuals):
    # G: (1 or m, k, k); B, A: (m, k); A is updated in place
    m, k = B.shape
    shared = G.shape[0] == 1
    Ga = np.empty(k)
    for s in range(m):
        Gs = G[0] if shared else G[s]
        b = B[s]
        a = A[s]
        for j in range(k):
            acc = 0.0
            for l in range(k):
                acc += Gs[j, l] * a[l]
            Ga[j] = acc
        n_deg = 0
        for j in range(k):
            if Gs[j, j] + l2 <= 0.0:
                n_deg += 1
                if a[j] != 0.0:
                    for l in range(k):
                        Ga[l] -= Gs[l, j] * a[j]
                    a[j] = 0.0
        degenerate[s] = n_deg
        res = _kkt(Gs, b, a, Ga, l1, l2)
        n = 0
        while res > tol and n < max_sweeps:
            for j in range(k):
                denom = Gs[j, j] + l2
                if denom <= 0.0:
                    continue
                rho = b[j] - Ga[j] + Gs[j, j] * a[j]
                if rho > l1:
                    new = (rho - l1) / denom
                elif rho < -l1:
                    new = (rho + l1) / denom
                else:
                    new = 0.0
                delta = new - a[j]
                if delta != 0.0:
                    for l in range(k):
                        Ga[l] += Gs[l, j] * delta
                    a[j] = new
            n += 1
            res = _kkt(Gs, b, a, Ga, l1, l2)
        sweeps[s] = n
        residuals[s] = res


def solve_codes(G, B, penalty: PenaltyParams, warm_start=None,
                tol: float = DEFAULT_TOL, max_sweeps: int = DEFAULT_MAX_SWEEPS):
    """Solve a batch of code problems.

    ``G`` is ``(k, k)`` (shared by all problems) or ``(m, k, k)``; ``B`` is
    ``(m, k)``. Returns ``(codes, info)`` where ``codes`` is ``(m, k)`` and
    ``info`` holds per-problem sweep counts, final KKT residuals and the
    number of degenerate coordinates (zero curvature) that were pinned to 0.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be >= 1")
    G = np.ascontiguousarray(G, dtype=np.float64)
    if G.ndim == 2:
        G = G[None]
    B = np.ascontiguousarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[None]
    m, k = B.shape
    if G.shape[1:] != (k, k) or G.shape[0] not in (1, m):
        raise ValueError(f"incompatible shapes G{G.shape} and beta{B.shape}")
    if warm_start is None:
        A = np.zeros((m, k))
    else:
        A = np.array(warm_start, dtype=np.float64, order="C").reshape(m, k)
    sweeps = np.zeros(m, dtype=np.int64)
    degenerate = np.zeros(m, dtype=np.int64)
    residuals = np.zeros(m)
    _cd_batch(G, B, A, penalty.l1, penalty.l2, float(tol), int(max_sweeps),
              sweeps, degenerate, residuals)
    if degenerate.any():
        logger.debug("%d degenerate coordinates pinned to zero", int(degenerate.sum()))
    return A, {"sweeps": sweeps, "degenerate": degenerate, "residual": residuals}


def warmup():
    """Compile (or load from cache) the kernel so timed runs exclude JIT cost."""
    solve_codes(np.eye(2), np.ones((1, 2)), PenaltyParams(0.1, 0.5))


def solve_code(G, beta, penalty: PenaltyParams, warm_start=None,
               tol: float = DEFAULT_TOL, max_sweeps: int = DEFAULT_MAX_SWEEPS) -> np.ndarray:
    A, _ = solve_codes(G, np.asarray(beta)[None], penalty,
                       None if warm_start is None else np.asarray(warm_start)[None],
                       tol, max_sweeps)
    return A[0]


def code_objective(G, beta, alpha, penalty: PenaltyParams) -> float:
    G = np.asarray(G, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    return 0.5 * float(alpha @ G @ alpha) - float(alpha @ beta) + penalty_value(alpha, penalty)


def kkt_residual(G, beta, alpha, penalty: PenaltyParams) -> float:
    """Largest distance from 0 to a coordinate subdifferential at ``alpha``."""
    G = np.ascontiguousarray(G, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    return float(_kkt(G, beta, alpha, G @ alpha, penalty.l1, penalty.l2))
