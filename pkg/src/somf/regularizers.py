"""Elastic-net code penalty and elastic-net ball constraint for atoms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BISECTION_TOL = 1e-12


@dataclass(frozen=True)
class PenaltyParams:
    """``lam * ((1 - l1_ratio) * ||a||_2^2 + l1_ratio * ||a||_1)``."""

    lam: float = 0.1
    l1_ratio: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError(f"code l1 ratio must lie in [0, 1], got {self.l1_ratio}")

    @property
    def l1(self) -> float:
        """Soft-threshold level of the coordinate update."""
        return self.lam * self.l1_ratio

    @property
    def l2(self) -> float:
        """Curvature added to each coordinate by the squared-l2 term."""
        return 2.0 * self.lam * (1.0 - self.l1_ratio)


@dataclass(frozen=True)
class BallParams:
    """Atom constraint ``l1_ratio * ||d||_1 + (1 - l1_ratio) * ||d||_2^2 <= radius``."""

    l1_ratio: float = 0.0

    def __post_init__(self):
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError(f"dictionary l1 ratio must lie in [0, 1], got {self.l1_ratio}")


def penalty_value(alpha: np.ndarray, penalty: PenaltyParams) -> float:
    alpha = np.asarray(alpha, dtype=np.float64)
    nu = penalty.l1_ratio
    return penalty.lam * ((1 - nu) * float(alpha @ alpha) + nu * float(np.abs(alpha).sum()))


def ball_norm(d: np.ndarray, ball: BallParams) -> float:
    d = np.asarray(d, dtype=np.float64)
    mu = ball.l1_ratio
    return mu * float(np.abs(d).sum()) + (1 - mu) * float(d @ d)


def column_ball_norms(D: np.ndarray, ball: BallParams) -> np.ndarray:
    mu = ball.l1_ratio
    return mu * np.abs(D).sum(axis=0) + (1 - mu) * (D * D).sum(axis=0)


def _project_l1(d: np.ndarray, radius: float) -> np.ndarray:
    # sort-based projection onto the l1 ball (Duchi et al. 2008)
    a = np.abs(d)
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, a.size + 1)
    rho = np.nonzero(u * ks > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(d) * np.maximum(a - theta, 0.0)


def _shrink(d: np.ndarray, theta: float, mu: float) -> np.ndarray:
    return np.sign(d) * np.maximum(np.abs(d) - theta * mu, 0.0) / (1.0 + 2.0 * theta * (1.0 - mu))


def project_ball(d: np.ndarray, ball: BallParams, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``d`` onto the elastic-net ball of ``radius``.

    For a mixed ball (``0 < l1_ratio < 1``) the projection is
    ``sign(d) * max(|d| - theta*mu, 0) / (1 + 2*theta*(1 - mu))`` where the
    multiplier ``theta`` is found by bisection. The upper (feasible) end of
    the final bracket is returned so the output never leaves the ball.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    d = np.asarray(d, dtype=np.float64)
    if ball_norm(d, ball) <= radius:
        return d.copy()
    mu = ball.l1_ratio
    if mu == 0.0:
        return d * (np.sqrt(radius) / np.sqrt(float(d @ d)))
    if mu == 1.0:
        return _project_l1(d, radius)

    lo = 0.0
    hi = np.abs(d).max() / mu + 2.0 * (1.0 - mu) * np.sqrt(float(d @ d))
    while ball_norm(_shrink(d, hi, mu), ball) > radius:
        lo, hi = hi, 2.0 * hi
    while hi - lo > BISECTION_TOL * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if ball_norm(_shrink(d, mid, mu), ball) > radius:
            lo = mid
        else:
            hi = mid
    return _shrink(d, hi, mu)
