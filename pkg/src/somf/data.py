"""Dataset ingestion: matrix container files, CSV, image volumes, patches.

Matrix file layout (all little-endian)::

    bytes 0-7    b"SOMFMAT1"
    bytes 8-15   rows  (uint64)
    bytes 16-23  cols  (uint64)
    bytes 24-    rows*cols float64 values, column-major

Raw volume layout: ``H, W, C`` as uint64 followed by ``H*W*C`` float64
values in row-major order with the channel index fastest.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"SOMFMAT1"
HEADER = struct.Struct("<8sQQ")
VOLUME_HEADER = struct.Struct("<QQQ")
NORMALIZE_MODES = ("none", "l2", "center_l2")


class MatrixFileError(ValueError):
    """Malformed matrix or volume file; ``offset`` is the offending byte."""

    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: {message} (byte offset {offset})")
        self.path = str(path)
        self.offset = offset


def save_matrix(M, path):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("only 2-D matrices can be saved")
    rows, cols = M.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, rows, cols))
        fh.write(M.astype("<f8").tobytes(order="F"))


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise MatrixFileError(path, len(raw), f"truncated header: {len(raw)} of {HEADER.size} bytes")
    magic, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MatrixFileError(path, 0, f"bad magic {magic!r}, expected {MAGIC!r}")
    expected = 8 * rows * cols
    payload = len(raw) - HEADER.size
    if payload != expected:
        raise MatrixFileError(path, HEADER.size,
                              f"size mismatch: header declares {rows}x{cols} "
                              f"({expected} payload bytes) but file holds {payload}")
    data = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    M = data.reshape((rows, cols), order="F").astype(np.float64)
    if not np.all(np.isfinite(M)):
        bad = int(np.flatnonzero(~np.isfinite(M.ravel(order="F")))[0])
        raise MatrixFileError(path, HEADER.size + 8 * bad, "non-finite value")
    return M


def load_csv(path) -> np.ndarray:
    """Header-less CSV, one matrix row per line."""
    M = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{path}: non-finite value")
    return M


def save_csv(M, path):
    np.savetxt(path, np.asarray(M, dtype=np.float64), delimiter=",", fmt="%.17g")


def load_data(path) -> np.ndarray:
    """Load a matrix file, or a CSV file when the suffix is ``.csv``."""
    if os.fspath(path).lower().endswith(".csv"):
        return load_csv(path)
    return load_matrix(path)


def save_volume(volume, path):
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3:
        raise ValueError("volume must be H x W x C")
    with open(path, "wb") as fh:
        fh.write(VOLUME_HEADER.pack(*volume.shape))
        fh.write(volume.astype("<f8").tobytes(order="C"))


def load_volume(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < VOLUME_HEADER.size:
        raise MatrixFileError(path, len(raw), "truncated volume header")
    H, W, C = VOLUME_HEADER.unpack_from(raw)
    expected = 8 * H * W * C
    if len(raw) - VOLUME_HEADER.size != expected:
        raise MatrixFileError(path, VOLUME_HEADER.size,
                              f"size mismatch: header declares {H}x{W}x{C} "
                              f"({expected} payload bytes) but file holds {len(raw) - VOLUME_HEADER.size}")
    data = np.frombuffer(raw, dtype="<f8", offset=VOLUME_HEADER.size)
    return data.reshape((H, W, C)).astype(np.float64)


def patch_count(H: int, W: int, height: int, width: int, stride: int = 1) -> int:
    return ((H - height) // stride + 1) * ((W - width) // stride + 1)


def extract_patches(volume, height: int, width: int | None = None, stride: int = 1) -> np.ndarray:
    """Vectorize every ``height x width`` patch of an ``H x W x C`` volume.

    Returns a ``(height*width*C) x n_patches`` matrix. Patch origins are
    enumerated row-major; inside a patch values are row-major with the
    channel index fastest.
    """
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim == 2:
        volume = volume[:, :, None]
    if volume.ndim != 3:
        raise ValueError("volume must be H x W x C")
    width = height if width is None else width
    H, W, C = volume.shape
    if height < 1 or width < 1 or stride < 1:
        raise ValueError("patch sides and stride must be positive")
    if height > H or width > W:
        raise ValueError(f"patch {height}x{width} does not fit in a {H}x{W} volume")
    win = np.lib.stride_tricks.sliding_window_view(volume, (height, width), axis=(0, 1))
    # win: (H-h+1, W-w+1, C, h, w) -> keep strided origins, order (origin, h, w, C)
    win = win[::stride, ::stride].transpose(0, 1, 3, 4, 2)
    n = win.shape[0] * win.shape[1]
    return np.ascontiguousarray(win.reshape(n, height * width * C).T)


def normalize_samples(X, mode: str = "center_l2") -> np.ndarray:
    """Per-column preprocessing; constant columns become zero under ``center_l2``.

    ``l2`` only rescales to unit norm (zero columns stay zero).
    """
    if mode not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {NORMALIZE_MODES}, got {mode!r}")
    X = np.array(X, dtype=np.float64)
    if mode == "none":
        return X
    # centering a constant column leaves rounding residue, not signal
    floor = 0.0
    if mode == "center_l2":
        floor = 1e-12 * np.sqrt((X * X).sum(axis=0))
        X -= X.mean(axis=0)
    norms = np.sqrt((X * X).sum(axis=0))
    nonzero = norms > floor
    X[:, nonzero] /= norms[nonzero]
    X[:, ~nonzero] = 0.0
    return X


def make_synthetic(p_base: int, n: int, k_true: int, duplication: int = 1,
                   noise: float = 0.1, density: float = 0.3, seed: int = 0) -> np.ndarray:
    """``X = D* A* + noise`` with each feature row repeated ``duplication`` times.

    ``D*`` has unit Gaussian columns, ``A*`` is Gaussian with a fraction
    ``density`` of nonzeros per column. Row duplication manufactures the
    feature redundancy that subsampling exploits. The result has
    ``p_base * duplication`` rows.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    D = rng.standard_normal((p_base, k_true))
    D /= np.linalg.norm(D, axis=0)
    A = rng.standard_normal((k_true, n)) * (rng.random((k_true, n)) < density)
    X = D @ A + noise * rng.standard_normal((p_base, n)) / np.sqrt(p_base)
    return np.repeat(X, duplication, axis=0)
