"""Per-sample averaged estimators of ``D'D`` and ``D'x``.

Each time sample ``i`` is drawn, its pair ``(G_i, beta_i)`` is blended
with the fresh masked estimates using a weight ``gamma_c`` that depends on
how many times ``i`` has been seen. The masked estimates are unbiased, and
averaging over the different masks a sample receives drives the variance
down as the sample is revisited.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import masked_gram, symmetrize


@dataclass(frozen=True)
class WeightSchedule:
    """``w_t = t**-v`` for the surrogate, ``gamma_c = c**-(2.5 - 2v)`` for estimators.

    Convergence needs ``3/4 < v < 1``; ``allow_invalid`` lifts that check
    (``v`` must still be non-negative so every weight stays in ``(0, 1]``).
    """

    v: float = 0.9
    allow_invalid: bool = False
    no_averaging: bool = False

    def __post_init__(self):
        if self.allow_invalid:
            if not self.v >= 0:
                raise ValueError(f"v_weight must be >= 0, got {self.v}")
        elif not 0.75 < self.v < 1:
            raise ValueError(f"v_weight must lie in (0.75, 1), got {self.v}")

    @property
    def gamma_exponent(self) -> float:
        return 2.5 - 2.0 * self.v

    def w(self, t: int) -> float:
        if t < 1:
            raise ValueError("iteration counter starts at 1")
        return 1.0 if t == 1 else float(t) ** -self.v

    def gamma(self, c: int) -> float:
        if c < 1:
            raise ValueError("observation counter starts at 1")
        if self.no_averaging or c == 1:
            return 1.0
        return float(c) ** -self.gamma_exponent


def convex_weights(blend: list[float]) -> np.ndarray:
    """Unroll ``s_t = (1 - b_t) s_{t-1} + b_t z_t`` into weights on ``z_1..z_m``.

    Weight of ``z_s`` is ``b_s * prod_{u > s} (1 - b_u)``.
    """
    blend = np.asarray(blend, dtype=np.float64)
    if blend.size == 0:
        raise ValueError("need at least one blend weight")
    out = np.empty_like(blend)
    tail = 1.0
    for s in range(blend.size - 1, -1, -1):
        out[s] = blend[s] * tail
        tail *= 1.0 - blend[s]
    return out


def explicit_weights(schedule: WeightSchedule, n_observations: int) -> np.ndarray:
    """Weights carried by each past observation of a sample after ``n_observations``."""
    return convex_weights([schedule.gamma(c) for c in range(1, n_observations + 1)])


class EstimatorStore:
    """Dense in-memory store of ``n`` pairs ``(G_i, beta_i)`` plus counters.

    Memory is ``n * (k**2 + k)`` floats and ``n`` counters, independent of
    the feature dimension.
    """

    def __init__(self, n: int, k: int, schedule: WeightSchedule):
        self.n = n
        self.k = k
        self.schedule = schedule
        self.G = np.zeros((n, k, k))
        self.beta = np.zeros((n, k))
        self.counts = np.zeros(n, dtype=np.int64)

    def _check(self, i: int):
        if not 0 <= i < self.n:
            raise IndexError(f"sample index {i} out of range [0, {self.n})")

    def blend(self, i: int, gram: np.ndarray, beta: np.ndarray):
        """Fold one fresh estimate into sample ``i``'s running averages."""
        self._check(i)
        self.counts[i] += 1
        gamma = self.schedule.gamma(int(self.counts[i]))
        self.G[i] = symmetrize((1.0 - gamma) * self.G[i] + gamma * gram)
        self.beta[i] = (1.0 - gamma) * self.beta[i] + gamma * beta
        return self.G[i], self.beta[i]

    def update(self, i: int, D_prev: np.ndarray, x: np.ndarray, mask):
        """Blend ``D'MD`` and ``D'Mx`` for sample ``i``; returns the updated pair."""
        if not (D_prev.shape[0] == x.shape[0] == mask.dim):
            raise ValueError("dictionary, sample and mask dimensions disagree")
        Dm = D_prev[mask.indices]
        beta = mask.scale * (Dm.T @ x[mask.indices])
        return self.blend(i, masked_gram(D_prev, mask), beta)

    def snapshot(self, i: int):
        self._check(i)
        return self.G[i].copy(), self.beta[i].copy(), int(self.counts[i])


def update_estimators(store: EstimatorStore, i: int, D_prev, x, mask):
    return store.update(i, D_prev, x, mask)
