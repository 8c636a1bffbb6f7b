"""Outer loops of online matrix factorization (OMF) and its subsampled
variant (SOMF).

Both algorithms run through :class:`OnlineFactorizer`. OMF uses the exact
code problem ``(D'D, D'x)`` and a full dictionary update; SOMF draws one
feature mask per minibatch, uses the averaged per-sample estimators, and
updates only the masked rows of the dictionary. With ``reduction=1`` and
every sample seen once, SOMF performs exactly the OMF arithmetic.

Cost accounting
---------------
``touched_coords`` is a deterministic tally of scalar multiply-adds on the
critical path of an iteration with ``q`` masked rows, ``m`` samples and
``k`` atoms::

    gram            q k^2
    code targets    m q k
    code assembly   m (k^2 + k)
    C update        m k^2 + k^2
    B masked rows   m q k + q k
    dictionary      passes * q (k^2 + 2k)

OMF is the same with ``q = p``. The inner coordinate-descent sweeps are
excluded (k-dimensional, trajectory dependent), and the unmasked rows of
``B`` (``(p - q)(m + 1) k``) are tallied separately as ``deferred_coords``
because they run off the critical path in pipelined mode.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

from . import __version__
from .codes import solve_codes, warmup
from .estimators import EstimatorStore, WeightSchedule
from .linalg import as_matrix, masked_gram
from .regularizers import BallParams, PenaltyParams, penalty_value
from .sampling import Mask, SampleStream, draw_mask, make_rngs
from .surrogate import (
    Dictionary,
    SurrogateStats,
    full_dict_update,
    init_dictionary,
    partial_dict_update,
    surrogate_value,
    update_stats_complement,
    update_stats_masked,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("omf", "somf")
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class FactorizationConfig:
    k: int = 16
    algorithm: str = "somf"
    reduction: float = 4.0
    lambda_: float = 0.1
    code_l1_ratio: float = 1.0
    dict_l1_ratio: float = 0.0
    v_weight: float = 0.9
    batch_size: int = 50
    epochs: int = 1
    seed: int = 0
    eval_subset: int = 200
    pipelined: bool = False
    no_averaging: bool = False
    mask_per_sample: bool = False
    allow_invalid_schedule: bool = False
    code_tol: float = 1e-6
    code_max_sweeps: int = 100
    dict_passes: int = 1
    n_records: int = 20

    # config-file / CLI spelling of fields whose names differ
    ALIASES = {"lambda": "lambda_"}

    @classmethod
    def from_mapping(cls, data: dict) -> "FactorizationConfig":
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = cls.ALIASES.get(key, key).replace("-", "_")
            if name not in names:
                raise ConfigError(key, "unknown configuration key")
            kwargs[name] = value
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lambda_")
        return out

    def validated(self) -> "FactorizationConfig":
        """Return a checked copy; OMF forces ``reduction = 1``."""
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.algorithm in ALGORITHMS, "algorithm", f"must be one of {ALGORITHMS}")
        for name in ("k", "batch_size", "epochs", "eval_subset", "code_max_sweeps", "dict_passes", "n_records"):
            value = getattr(self, name)
            need(isinstance(value, (int, np.integer)) and not isinstance(value, bool) and value >= 1,
                 name, f"must be a positive integer, got {value!r}")
        need(isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64, "seed",
             "must be an unsigned 64-bit integer")
        need(self.reduction >= 1, "reduction", f"must be >= 1, got {self.reduction}")
        need(self.code_tol > 0, "code_tol", "must be positive")
        try:
            self.penalty()
        except ValueError as exc:
            raise ConfigError("lambda" if "lambda" in str(exc) else "code_l1_ratio", str(exc)) from None
        try:
            self.ball()
        except ValueError as exc:
            raise ConfigError("dict_l1_ratio", str(exc)) from None
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError("v_weight", str(exc)) from None
        if self.algorithm == "omf" and self.reduction != 1:
            return replace(self, reduction=1.0)
        return self

    def penalty(self) -> PenaltyParams:
        return PenaltyParams(self.lambda_, self.code_l1_ratio)

    def ball(self) -> BallParams:
        return BallParams(self.dict_l1_ratio)

    def schedule(self) -> WeightSchedule:
        return WeightSchedule(self.v_weight, self.allow_invalid_schedule, self.no_averaging)


@dataclass
class TraceRecord:
    t: int
    seconds: float
    touched_coords: int
    f_bar: float
    g_bar: float
    g_bar_prev: float
    stationarity: float


TRACE_COLUMNS = tuple(f.name for f in fields(TraceRecord))


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    deferred_coords: int = 0
    degenerate_codes: int = 0
    skipped_columns: int = 0
    clamped_columns: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


@dataclass
class StepInfo:
    t: int
    batch: np.ndarray
    mask: Mask
    w: float
    codes: np.ndarray  # (k, m)
    D_prev: Optional[np.ndarray]


def record_schedule(n_iter: int, n_records: int) -> set:
    return set(np.unique(np.round(np.geomspace(1, n_iter, n_records)).astype(int)).tolist()) | {n_iter}


def iteration_cost(q: int, k: int, m: int, passes: int = 1, q_targets: Optional[int] = None) -> int:
    """Critical-path multiply-adds of one iteration (see module docstring).

    ``q_targets`` is the mask size summed over samples when every sample
    has its own mask; each then pays its own gram. Defaults to ``m * q``
    with a single shared gram.
    """
    if q_targets is None:
        gram, targets = q * k * k, m * q * k
    else:
        gram, targets = q_targets * k * k, q_targets * k
    return int(gram + targets + m * (k * k + k) + m * k * k + k * k
               + m * q * k + q * k + passes * q * (k * k + 2 * k))


def stationarity_diagnostic(D_prev, D, w: float) -> float:
    D_prev = D_prev.D if isinstance(D_prev, Dictionary) else D_prev
    D = D.D if isinstance(D, Dictionary) else D
    return float(np.linalg.norm(D - D_prev)) / w


def evaluate_objective(X, D, penalty: PenaltyParams, subset=None,
                       tol: float = 1e-6, max_sweeps: int = 100) -> float:
    """Mean over ``subset`` of ``min_a 0.5 ||x - D a||^2 + lam Omega(a)``."""
    D = D.D if isinstance(D, Dictionary) else np.asarray(D, dtype=np.float64)
    subset = np.arange(X.shape[1]) if subset is None else np.asarray(subset)
    if subset.size == 0:
        raise ValueError("evaluation subset is empty")
    Xs = X[:, subset]
    gram = D.T @ D
    gram = 0.5 * (gram + gram.T)
    A, _ = solve_codes(gram, (D.T @ Xs).T, penalty, tol=tol, max_sweeps=max_sweeps)
    R = Xs - D @ A.T
    losses = 0.5 * (R * R).sum(axis=0) + np.array([penalty_value(a, penalty) for a in A])
    return float(losses.mean())


def _worker_cap() -> int:
    try:
        return max(1, int(os.environ.get("SOMF_THREADS", "2")))
    except ValueError:
        return 2


class OnlineFactorizer:
    """Stateful OMF / SOMF run over the columns of ``X`` (p x n).

    ``callback(model, info)`` is invoked after every iteration; when given,
    ``info.D_prev`` holds a copy of the dictionary before the update.
    """

    def __init__(self, X, config: FactorizationConfig,
                 callback: Optional[Callable[["OnlineFactorizer", StepInfo], None]] = None):
        self.config = cfg = config.validated()
        self.X = as_matrix(X, "X")
        p, n = self.X.shape
        self.p, self.n = p, n
        self.penalty = cfg.penalty()
        self.schedule = cfg.schedule()
        self.callback = callback
        warmup()
        self.rngs = make_rngs(cfg.seed)
        self.stream = SampleStream(n, self.rngs["order"])
        self.dictionary = init_dictionary(self.X, cfg.k, cfg.ball(), self.rngs["init"])
        self.stats = SurrogateStats.zeros(p, cfg.k)
        self.store = EstimatorStore(n, cfg.k, self.schedule) if cfg.algorithm == "somf" else None
        self.sq_norms = (self.X * self.X).sum(axis=0)
        self.eval_cols = np.sort(self.rngs["eval"].choice(n, size=min(cfg.eval_subset, n), replace=False))
        self.n_iter = cfg.epochs * math.ceil(n / cfg.batch_size)
        self.record_at = record_schedule(self.n_iter, cfg.n_records)
        self.t = 0
        self.touched = 0
        self.seconds = 0.0
        self.trace = RunTrace()
        self._executor = None
        if cfg.pipelined and cfg.algorithm == "somf":
            if _worker_cap() >= 2:
                self._executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="somf-b")
            else:
                logger.warning("SOMF_THREADS < 2: pipelined mode runs sequentially")

    # -- one iteration ----------------------------------------------------

    def _draw_masks(self, m: int):
        cfg = self.config
        if cfg.algorithm == "omf":
            mask = Mask.full(self.p)
            return mask, [mask] * m
        rng = self.rngs["mask"]
        if cfg.mask_per_sample:
            masks = [draw_mask(rng, self.p, cfg.reduction) for _ in range(m)]
            union = masks[0]
            for other in masks[1:]:
                union = union.union(other)
            return union, masks
        mask = draw_mask(rng, self.p, cfg.reduction)
        return mask, [mask] * m

    def _code_problems(self, batch, mask, masks):
        """Return ``(G, betas)`` for the batch: exact for OMF, averaged for SOMF."""
        D = self.dictionary.D
        X = self.X
        shared = all(mk is mask for mk in masks)
        if shared:
            gram = masked_gram(D, mask)
            targets = mask.scale * (D[mask.indices].T @ X[np.ix_(mask.indices, batch)])
            if self.store is None:
                return gram[None], targets.T
        k = self.config.k
        Gs = np.empty((batch.size, k, k))
        betas = np.empty((batch.size, k))
        for c, i in enumerate(batch):
            if shared:
                Gs[c], betas[c] = self.store.blend(int(i), gram, targets[:, c])
            else:
                Gs[c], betas[c] = self.store.update(int(i), D, X[:, i], masks[c])
        return Gs, betas

    def step(self) -> StepInfo:
        cfg = self.config
        start = time.perf_counter()
        self.t += 1
        t = self.t
        w = self.schedule.w(t)
        batch = self.stream.next_batch(cfg.batch_size)
        m = batch.size
        mask, masks = self._draw_masks(m)
        idx = mask.indices

        G, betas = self._code_problems(batch, mask, masks)
        A, info = solve_codes(G, betas, self.penalty, tol=cfg.code_tol, max_sweeps=cfg.code_max_sweeps)
        self.trace.degenerate_codes += int(info["degenerate"].sum())
        A = A.T  # (k, m)

        record = t in self.record_at
        D_prev = self.dictionary.D.copy() if (record or self.callback is not None) else None

        x_rows = self.X[np.ix_(idx, batch)]
        update_stats_masked(self.stats, x_rows, A, w, idx, self.sq_norms[batch], self.penalty)
        if self.store is None:
            full_dict_update(self.dictionary, self.stats, cfg.dict_passes)
        else:
            comp = mask.complement()
            if self._executor is not None:
                fut = self._executor.submit(self._complement_phase, comp, batch, A, w)
                partial_dict_update(self.dictionary, self.stats, mask)
                fut.result()
            else:
                partial_dict_update(self.dictionary, self.stats, mask)
                self._complement_phase(comp, batch, A, w)
            self.trace.deferred_coords += comp.size * (m + 1) * cfg.k

        k = cfg.k
        passes = cfg.dict_passes if self.store is None else 1
        q_targets = sum(mk.size for mk in masks) if cfg.mask_per_sample and self.store is not None else None
        self.touched += iteration_cost(idx.size, k, m, passes, q_targets)
        self.seconds += time.perf_counter() - start

        if record:
            self._record(D_prev, w)
        step = StepInfo(t, batch, mask, w, A, D_prev)
        if self.callback is not None:
            self.callback(self, step)
        return step

    def _complement_phase(self, comp, batch, A, w):
        update_stats_complement(self.stats, self.X[np.ix_(comp, batch)], A, w, comp)

    def _record(self, D_prev, w):
        cfg = self.config
        D = self.dictionary.D
        f_bar = evaluate_objective(self.X, D, self.penalty, self.eval_cols, cfg.code_tol, cfg.code_max_sweeps)
        self.trace.records.append(TraceRecord(
            t=self.t,
            seconds=self.seconds,
            touched_coords=self.touched,
            f_bar=f_bar,
            g_bar=surrogate_value(D, self.stats),
            g_bar_prev=surrogate_value(D_prev, self.stats),
            stationarity=stationarity_diagnostic(D_prev, D, w),
        ))
        logger.info("t=%d f_bar=%.6g touched=%d", self.t, f_bar, self.touched)

    # -- whole run --------------------------------------------------------

    def run(self, n_iter: Optional[int] = None):
        """Iterate until ``n_iter`` (default: the configured epochs) is reached."""
        stop = self.n_iter if n_iter is None else n_iter
        try:
            while self.t < stop:
                self.step()
        finally:
            self.close()
        self.trace.skipped_columns = self.dictionary.skipped
        self.trace.clamped_columns = self.dictionary.clamped
        return self.dictionary, self.trace

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    # -- checkpointing ----------------------------------------------------

    def save_checkpoint(self, path):
        """Write the full resumable state to a versioned ``.npz`` container."""
        store = self.store
        records = np.array([[getattr(r, c) for c in TRACE_COLUMNS] for r in self.trace.records],
                           dtype=np.float64).reshape(-1, len(TRACE_COLUMNS))
        with open(path, "wb") as fh:
            np.savez(
                fh,
                magic=np.array("SOMFCKPT"),
                version=np.array(CHECKPOINT_VERSION),
                package_version=np.array(__version__),
                config=np.array(json.dumps(self.config.to_mapping())),
                data_shape=np.array(self.X.shape),
                data_checksum=np.array(float(self.sq_norms.sum())),
                D=self.dictionary.D,
                norms=self.dictionary.norms,
                dict_counters=np.array([self.dictionary.skipped, self.dictionary.clamped]),
                B=self.stats.B,
                C=self.stats.C,
                stats_scalars=np.array([self.stats.t, self.stats.loss_offset]),
                store_G=store.G if store is not None else np.zeros((0,)),
                store_beta=store.beta if store is not None else np.zeros((0,)),
                store_counts=store.counts if store is not None else np.zeros((0,), dtype=np.int64),
                stream_order=self.stream.order,
                stream_pos=np.array([self.stream.cursor, self.stream.epoch]),
                rng_states=np.array(json.dumps({k: _rng_state(g) for k, g in self.rngs.items()})),
                counters=np.array([self.t, self.touched, self.trace.deferred_coords,
                                   self.trace.degenerate_codes]),
                seconds=np.array(self.seconds),
                records=records,
            )

    @classmethod
    def from_checkpoint(cls, path, X, callback=None, **overrides) -> "OnlineFactorizer":
        """Rebuild a run from ``path``; ``overrides`` may extend ``epochs``."""
        with np.load(path, allow_pickle=False) as z:
            if str(z["magic"]) != "SOMFCKPT":
                raise ValueError(f"{path}: not a checkpoint file")
            if int(z["version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {int(z['version'])}")
            cfg = FactorizationConfig.from_mapping(json.loads(str(z["config"])))
            cfg = replace(cfg, **overrides)
            X = as_matrix(X, "X")
            if tuple(z["data_shape"]) != X.shape:
                raise ValueError(f"{path}: checkpoint was written for data of shape {tuple(z['data_shape'])}")
            model = cls(X, cfg, callback)
            if not np.isclose(float(z["data_checksum"]), float(model.sq_norms.sum()), rtol=1e-12):
                raise ValueError(f"{path}: data does not match the checkpoint")
            model.dictionary.D[...] = z["D"]
            model.dictionary.norms = z["norms"].copy()
            model.dictionary.skipped, model.dictionary.clamped = (int(v) for v in z["dict_counters"])
            model.stats = SurrogateStats(z["B"].copy(), z["C"].copy(), int(z["stats_scalars"][0]),
                                         float(z["stats_scalars"][1]))
            if model.store is not None:
                model.store.G[...] = z["store_G"]
                model.store.beta[...] = z["store_beta"]
                model.store.counts[...] = z["store_counts"]
            model.stream.order = z["stream_order"].copy()
            model.stream.cursor, model.stream.epoch = (int(v) for v in z["stream_pos"])
            for name, state in json.loads(str(z["rng_states"])).items():
                _set_rng_state(model.rngs[name], state)
            model.t, model.touched, model.trace.deferred_coords, model.trace.degenerate_codes = (
                int(v) for v in z["counters"])
            model.seconds = float(z["seconds"])
            model.trace.records = [
                TraceRecord(*(int(v) if c in ("t", "touched_coords") else float(v)
                              for c, v in zip(TRACE_COLUMNS, row)))
                for row in z["records"]
            ]
        return model


def _rng_state(gen: np.random.Generator) -> dict:
    def plain(obj):
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray):
            return {"__array__": [int(v) for v in obj], "dtype": str(obj.dtype)}
        if isinstance(obj, np.integer):
            return int(obj)
        return obj
    return plain(gen.bit_generator.state)


def _set_rng_state(gen: np.random.Generator, state: dict):
    def restore(obj):
        if isinstance(obj, dict):
            if "__array__" in obj:
                return np.array(obj["__array__"], dtype=obj["dtype"])
            return {k: restore(v) for k, v in obj.items()}
        return obj
    gen.bit_generator.state = restore(state)


def run_omf(X, config: FactorizationConfig, callback=None):
    """Run classical online matrix factorization; ``config.algorithm`` is set to ``omf``."""
    return OnlineFactorizer(X, replace(config, algorithm="omf"), callback).run()


def run_somf(X, config: FactorizationConfig, callback=None):
    """Run subsampled online matrix factorization; ``config.algorithm`` is set to ``somf``."""
    return OnlineFactorizer(X, replace(config, algorithm="somf"), callback).run()
