"""Aggregated surrogate statistics and the dictionary update steps.

The surrogate is ``0.5 Tr(D'D C) - Tr(D'B) + offset`` where ``C`` and
``B`` are running weighted averages of ``a a'`` and ``x a'``. It is
minimized over the elastic-net ball, column by column, with projected
block coordinate descent. The subsampled variant only moves the masked
rows and shrinks each column's ball radius by the mass held in the frozen
rows, so the full column stays feasible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .regularizers import BallParams, PenaltyParams, column_ball_norms, penalty_value, project_ball

logger = logging.getLogger(__name__)

DEGENERATE_CURVATURE = 1e-12


@dataclass
class SurrogateStats:
    B: np.ndarray
    C: np.ndarray
    t: int = 0
    loss_offset: float = 0.0

    @classmethod
    def zeros(cls, p: int, k: int) -> "SurrogateStats":
        return cls(np.zeros((p, k)), np.zeros((k, k)))


class Dictionary:
    """Dictionary ``D`` (p x k) with cached per-column ball norms."""

    def __init__(self, D: np.ndarray, ball: BallParams):
        self.D = np.array(D, dtype=np.float64, order="C")
        self.ball = ball
        self.norms = column_ball_norms(self.D, ball)
        self.skipped = 0
        self.clamped = 0

    @property
    def shape(self):
        return self.D.shape

    def refresh_norms(self):
        self.norms = column_ball_norms(self.D, self.ball)

    def copy(self) -> "Dictionary":
        out = Dictionary(self.D, self.ball)
        out.norms = self.norms.copy()
        return out


def init_dictionary(X: np.ndarray, k: int, ball: BallParams, rng: np.random.Generator) -> Dictionary:
    """Start from ``k`` distinct random samples projected onto the ball.

    Falls back to Gaussian atoms when there are fewer samples than atoms;
    zero samples (e.g. constant columns after centering) are replaced too.
    """
    p, n = X.shape
    if n >= k:
        D = X[:, rng.choice(n, size=k, replace=False)].copy()
    else:
        D = np.zeros((p, k))
    for j in range(k):
        if not np.any(D[:, j]):
            g = rng.standard_normal(p)
            D[:, j] = g / np.linalg.norm(g)
        D[:, j] = project_ball(D[:, j], ball, 1.0)
    return Dictionary(D, ball)


def _loss_terms(sq_norms: np.ndarray, A: np.ndarray, penalty: PenaltyParams) -> float:
    # mean over the batch of 0.5 ||x||^2 + lam * Omega(a); A is (k, m)
    return float(np.mean([0.5 * s + penalty_value(A[:, c], penalty) for c, s in enumerate(sq_norms)]))


def _as_batch(x, alpha):
    x = np.asarray(x, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if alpha.ndim == 1:
        alpha = alpha[:, None]
    return x, alpha


def blend_rows(B: np.ndarray, rows: np.ndarray, x_rows: np.ndarray, A: np.ndarray, w: float):
    """``B[rows] <- (1 - w) B[rows] + w mean_c(x_c[rows] a_c')``."""
    if rows.size:
        B[rows] = (1.0 - w) * B[rows] + w * ((x_rows @ A.T) / A.shape[1])


def update_stats_masked(stats: SurrogateStats, x_rows: np.ndarray, A: np.ndarray, w: float,
                        rows: np.ndarray, sq_norms: np.ndarray, penalty: PenaltyParams):
    """Synchronous phase: ``C``, the loss offset, and the masked rows of ``B``.

    ``x_rows`` holds only the masked rows of the batch (``len(rows) x m``);
    ``sq_norms`` are the full squared norms of the batch samples.
    """
    if not 0 < w <= 1:
        raise ValueError(f"weight must lie in (0, 1], got {w}")
    m = A.shape[1]
    stats.C = (1.0 - w) * stats.C + w * ((A @ A.T) / m)
    stats.loss_offset = (1.0 - w) * stats.loss_offset + w * _loss_terms(sq_norms, A, penalty)
    blend_rows(stats.B, rows, x_rows, A, w)
    stats.t += 1


def update_stats_complement(stats: SurrogateStats, x_rows: np.ndarray, A: np.ndarray, w: float,
                            rows: np.ndarray):
    """Deferred phase: the unmasked rows of ``B``. Touches no other state."""
    blend_rows(stats.B, rows, x_rows, A, w)


def update_stats_full(stats: SurrogateStats, x, alpha, w: float, penalty: PenaltyParams):
    x, A = _as_batch(x, alpha)
    rows = np.arange(x.shape[0])
    update_stats_masked(stats, x, A, w, rows, (x * x).sum(axis=0), penalty)


def update_stats_split(stats: SurrogateStats, x, alpha, w: float, mask, penalty: PenaltyParams):
    x, A = _as_batch(x, alpha)
    update_stats_masked(stats, x[mask.indices], A, w, mask.indices, (x * x).sum(axis=0), penalty)
    comp = mask.complement()
    update_stats_complement(stats, x[comp], A, w, comp)


def _bcd_pass(Dp: np.ndarray, Bp: np.ndarray, C: np.ndarray, radii: np.ndarray, ball: BallParams):
    """One ascending-column pass of projected BCD on the rows held in ``Dp``."""
    skipped = clamped = 0
    for j in range(Dp.shape[1]):
        cjj = C[j, j]
        if cjj <= DEGENERATE_CURVATURE:
            skipped += 1
            continue
        if radii[j] <= 0.0:
            Dp[:, j] = 0.0
            clamped += 1
            continue
        u = Dp[:, j] - (Dp @ C[:, j] - Bp[:, j]) / cjj
        Dp[:, j] = project_ball(u, ball, radii[j])
    return skipped, clamped


def full_dict_update(dictionary: Dictionary, stats: SurrogateStats, passes: int = 1):
    if passes < 1:
        raise ValueError("passes must be >= 1")
    radii = np.ones(dictionary.D.shape[1])
    for _ in range(passes):
        skipped, _ = _bcd_pass(dictionary.D, stats.B, stats.C, radii, dictionary.ball)
        dictionary.skipped += skipped
    dictionary.refresh_norms()


def partial_dict_update(dictionary: Dictionary, stats: SurrogateStats, mask):
    """Single BCD pass restricted to the masked rows; other rows stay frozen.

    Column ``j``'s masked part is projected onto the ball of radius
    ``1 - norm(d_j) + norm(P d_j)``, i.e. one minus the frozen rows'
    share, read from the cached column norms so no unmasked row is touched.
    """
    idx = mask.indices
    if idx.size == 0:
        return
    ball = dictionary.ball
    Dp = dictionary.D[idx]
    old_masked = column_ball_norms(Dp, ball)
    frozen = np.maximum(dictionary.norms - old_masked, 0.0)
    radii = 1.0 - frozen
    if np.any(radii <= 0.0):
        logger.debug("clamping %d non-positive radii", int(np.sum(radii <= 0.0)))
    skipped, clamped = _bcd_pass(Dp, stats.B[idx], stats.C, radii, ball)
    dictionary.skipped += skipped
    dictionary.clamped += clamped
    dictionary.D[idx] = Dp
    dictionary.norms = frozen + column_ball_norms(Dp, ball)


def surrogate_value(dictionary: Dictionary | np.ndarray, stats: SurrogateStats) -> float:
    D = dictionary.D if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    return 0.5 * float(np.sum((D.T @ D) * stats.C)) - float(np.sum(D * stats.B)) + stats.loss_offset
