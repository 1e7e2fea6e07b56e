"""Pairwise Pearson correlation, neighbour ranking and top-K sparsification.

The engine centres every channel once, then computes each unordered pair
``i < j`` exactly once with a fixed left-to-right summation over time and
writes both symmetric cells. Pairs are enumerated row-major and split into
contiguous blocks, one per worker, so any worker count yields the same bits.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._accel import default_workers, njit, resolve_backend
from .data import DataError

_NUMPY_CHUNK = 1 << 16  # elements of a temporary product block in the numpy path


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    gamma: np.ndarray
    source_range: tuple
    channel_ids: tuple = ()

    @property
    def M(self):
        return self.gamma.shape[0]

    def to_csv(self, path):
        ids = self.channel_ids or tuple(str(i) for i in range(self.M))
        with open(path, "w") as fh:
            fh.write("," + ",".join(ids) + "\n")
            for cid, row in zip(ids, self.gamma):
                fh.write(cid + "," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    """Per-channel ordered neighbours: ``indices[c]`` and ``values[c]`` have K entries."""

    indices: np.ndarray
    values: np.ndarray
    channel_ids: tuple = ()

    @property
    def K(self):
        return self.indices.shape[1]

    @property
    def M(self):
        return self.indices.shape[0]

    def neighbors(self, channel):
        return list(zip(self.indices[channel].tolist(), self.values[channel].tolist()))

    def to_text(self):
        ids = self.channel_ids or tuple(str(i) for i in range(self.M))
        lines = []
        for c in range(self.M):
            parts = ", ".join(f"{ids[j]}={v!r}" for j, v in zip(self.indices[c].tolist(), self.values[c].tolist()))
            lines.append(f"{ids[c]}: {parts}" if parts else f"{ids[c]}:")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, channel_ids):
        pos = {cid: i for i, cid in enumerate(channel_ids)}
        rows = {}
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            head, _, rest = line.partition(":")
            head = head.strip()
            if head not in pos:
                raise DataError(f"line {line_no}: unknown channel id {head!r}")
            entries = []
            for item in filter(None, (p.strip() for p in rest.split(","))):
                name, eq, val = item.rpartition("=")
                if not eq or name not in pos:
                    raise DataError(f"line {line_no}: malformed neighbour entry {item!r}")
                entries.append((pos[name], float(val)))
            rows[pos[head]] = entries
        if len(rows) != len(channel_ids):
            missing = [channel_ids[i] for i in range(len(channel_ids)) if i not in rows]
            raise DataError(f"neighbour text is missing channels: {missing[:5]}")
        ks = {len(v) for v in rows.values()}
        if len(ks) != 1:
            raise DataError(f"inconsistent neighbour counts per channel: {sorted(ks)}")
        K = ks.pop()
        M = len(channel_ids)
        idx = np.array([[j for j, _ in rows[c]] for c in range(M)], dtype=np.int64).reshape(M, K)
        val = np.array([[v for _, v in rows[c]] for c in range(M)], dtype=np.float64).reshape(M, K)
        return cls(idx, val, tuple(channel_ids))


# --------------------------------------------------------------------------
# pair partitioning


def n_pairs(M):
    return M * (M - 1) // 2


def pair_offset(i, M):
    """Linear index of pair (i, i + 1) in row-major upper-triangle order."""
    return i * (2 * M - i - 1) // 2


def pair_at(p, M):
    """Inverse of the row-major enumeration: linear index -> (i, j)."""
    # Closed-form guess, corrected for float rounding.
    i = int((2 * M - 1 - math.sqrt((2 * M - 1) ** 2 - 8 * p)) // 2)
    i = max(0, min(i, M - 2))
    while i > 0 and pair_offset(i, M) > p:
        i -= 1
    while i < M - 2 and pair_offset(i + 1, M) <= p:
        i += 1
    return i, i + 1 + (p - pair_offset(i, M))


def partition_pairs(M, workers):
    """Contiguous ``(start, stop)`` blocks covering ``range(n_pairs(M))``."""
    total = n_pairs(M)
    workers = max(1, min(int(workers), total)) if total else 1
    bounds = [total * w // workers for w in range(workers + 1)]
    return [(bounds[w], bounds[w + 1]) for w in range(workers)]


# --------------------------------------------------------------------------
# kernels


@njit(nogil=True, cache=True)
def _center_nb(x):
    M, T = x.shape
    z = np.empty_like(x)
    norms = np.empty(M)
    for i in range(M):
        s = 0.0
        for t in range(T):
            s += x[i, t]
        mu = s / T
        ss = 0.0
        for t in range(T):
            d = x[i, t] - mu
            z[i, t] = d
            ss += d * d
        norms[i] = math.sqrt(ss)
    return z, norms


def _center_np(x):
    z = x - x.mean(axis=1, keepdims=True)
    return z, np.sqrt(np.einsum("ij,ij->i", z, z))


@njit(nogil=True, cache=True)
def _pair_block_nb(z, inv_norm, i, j, count, out):
    M, T = z.shape
    for _ in range(count):
        if inv_norm[i] == 0.0 or inv_norm[j] == 0.0:
            r = 0.0
        else:
            s = 0.0
            for t in range(T):
                s += z[i, t] * z[j, t]
            r = s * inv_norm[i] * inv_norm[j]
            if r > 1.0:
                r = 1.0
            elif r < -1.0:
                r = -1.0
        out[i, j] = r
        out[j, i] = r
        j += 1
        if j == M:
            i += 1
            j = i + 1


def _pair_block_np(z, inv_norm, i, j, count, out):
    M, T = z.shape
    step = max(1, _NUMPY_CHUNK // max(T, 1))
    while count > 0:
        stop = min(M, j + min(count, step))
        dots = np.einsum("t,jt->j", z[i], z[j:stop])
        r = np.clip(dots * inv_norm[i] * inv_norm[j:stop], -1.0, 1.0)
        if inv_norm[i] == 0.0:
            r[:] = 0.0
        r[inv_norm[j:stop] == 0.0] = 0.0
        out[i, j:stop] = r
        out[j:stop, i] = r
        count -= stop - j
        j = stop
        if j == M:
            i += 1
            j = i + 1


_KERNELS = {
    "numba": (_center_nb, _pair_block_nb),
    "numpy": (_center_np, _pair_block_np),
}


@njit(nogil=True, cache=True)
def _naive_pearson_nb(x):
    M, T = x.shape
    out = np.zeros((M, M))
    for i in range(M):
        for j in range(i, M):
            mi = 0.0
            mj = 0.0
            for t in range(T):
                mi += x[i, t]
                mj += x[j, t]
            mi /= T
            mj /= T
            sxy = 0.0
            sxx = 0.0
            syy = 0.0
            for t in range(T):
                a = x[i, t] - mi
                b = x[j, t] - mj
                sxy += a * b
                sxx += a * a
                syy += b * b
            vary_i = False
            vary_j = False
            for t in range(1, T):
                vary_i = vary_i or x[i, t] != x[i, 0]
                vary_j = vary_j or x[j, t] != x[j, 0]
            r = 0.0
            if vary_i and vary_j:
                r = sxy / math.sqrt(sxx * syy)
                r = min(1.0, max(-1.0, r))
            out[i, j] = r
            out[j, i] = r
    return out


def naive_pearson(values):
    """Serial two-loop Pearson oracle (compiled when numba is available)."""
    x = np.ascontiguousarray(values, dtype=np.float64)
    return _naive_pearson_nb(x)


def _constant_rows(x):
    return np.ptp(x, axis=1) == 0


# --------------------------------------------------------------------------
# public operations


def pearson_values(values, workers=None, backend=None):
    """Pearson matrix of the rows of ``values`` (M x T)."""
    x = np.ascontiguousarray(values, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"expected an M x T matrix, got shape {x.shape}")
    M, T = x.shape
    if T < 3:
        raise DataError(f"correlation needs at least 3 time points, got {T}")
    center, block = _KERNELS[resolve_backend(backend)]
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError(f"workers must be positive, got {workers}")

    z, norms = center(x)
    constant = _constant_rows(x)
    inv_norm = np.zeros(M)
    ok = ~constant & (norms > 0)
    inv_norm[ok] = 1.0 / norms[ok]
    gamma = np.zeros((M, M))
    blocks = [b for b in partition_pairs(M, workers) if b[1] > b[0]]

    def run(b):
        i, j = pair_at(b[0], M)
        block(z, inv_norm, i, j, b[1] - b[0], gamma)

    if len(blocks) <= 1:
        for b in blocks:
            run(b)
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            list(pool.map(run, blocks))
    np.fill_diagonal(gamma, np.where(constant, 0.0, 1.0))
    return gamma


def pearson_matrix(dataset, range_name="train", workers=None, backend=None):
    """Correlation of all channel pairs over one split of ``dataset``."""
    lo, hi = dataset.range_bounds(range_name)
    gamma = pearson_values(dataset.values[:, lo:hi], workers=workers, backend=backend)
    return CorrelationMatrix(gamma, (lo, hi), dataset.channel_ids)


def _ranking(gamma, score):
    if score not in ("signed", "absolute"):
        raise ValueError(f"score must be 'signed' or 'absolute', got {score!r}")
    s = np.abs(gamma) if score == "absolute" else np.array(gamma, dtype=np.float64)
    # Self always ranks last; a stable sort on the negated score breaks ties by index.
    np.fill_diagonal(s, -np.inf)
    return s, np.argsort(-s, axis=1, kind="stable")


def _check_k(K, M):
    if K < 0 or K >= M:
        raise DataError(f"K must satisfy 0 <= K < M={M}, got K={K}")


def top_k_neighbors(corr, K, score="signed"):
    """The K highest-scoring other channels per channel."""
    gamma = getattr(corr, "gamma", corr)
    M = gamma.shape[0]
    K = int(K)
    _check_k(K, M)
    _, order = _ranking(gamma, score)
    idx = np.ascontiguousarray(order[:, :K])
    vals = np.take_along_axis(gamma, idx, axis=1)
    return NeighborIndex(idx, vals, getattr(corr, "channel_ids", ()))


def bottom_k_neighbors(corr, K, score="signed"):
    """The K lowest-ranked other channels per channel, kept in ranking order."""
    gamma = getattr(corr, "gamma", corr)
    M = gamma.shape[0]
    K = int(K)
    _check_k(K, M)
    _, order = _ranking(gamma, score)
    # Column M-1 is always self.
    idx = np.ascontiguousarray(order[:, M - 1 - K : M - 1])
    vals = np.take_along_axis(gamma, idx, axis=1)
    return NeighborIndex(idx, vals, getattr(corr, "channel_ids", ()))


@dataclass
class BenchmarkReport:
    M: int
    T: int
    oracle_time: float
    runs: list  # (workers, wall_time)
    backend: str
    verified: bool

    def speedup(self, workers):
        for w, t in self.runs:
            if w == workers:
                return self.oracle_time / t
        raise KeyError(workers)

    def to_dict(self):
        return {
            "M": self.M,
            "T": self.T,
            "backend": self.backend,
            "oracle_time": self.oracle_time,
            "runs": [{"workers": w, "wall_time": t, "speedup": self.oracle_time / t} for w, t in self.runs],
            "verified": self.verified,
        }


class CorrelationMismatch(RuntimeError):
    pass


def benchmark_correlation(dataset, workers_list, range_name="train", backend=None, atol=1e-10):
    """Time the serial oracle against the engine at each worker count.

    Every engine result is compared with the oracle (and the engine results
    with each other, bitwise) before any timing is returned.
    """
    backend = resolve_backend(backend)
    lo, hi = dataset.range_bounds(range_name)
    x = np.ascontiguousarray(dataset.values[:, lo:hi])
    # Warm the compiled kernels so timings exclude JIT compilation.
    naive_pearson(x[:3, :5])
    pearson_values(x[:3, :5], workers=1, backend=backend)

    t0 = time.perf_counter()
    reference = naive_pearson(x)
    oracle_time = time.perf_counter() - t0

    runs, first = [], None
    for w in workers_list:
        t0 = time.perf_counter()
        gamma = pearson_values(x, workers=w, backend=backend)
        runs.append((int(w), time.perf_counter() - t0))
        err = float(np.max(np.abs(gamma - reference))) if gamma.size else 0.0
        if err > atol:
            raise CorrelationMismatch(f"engine with {w} workers differs from oracle by {err:.3e}")
        if first is None:
            first = gamma
        elif not np.array_equal(first, gamma):
            raise CorrelationMismatch(f"engine output with {w} workers is not bit-identical to {workers_list[0]} workers")
    return BenchmarkReport(x.shape[0], x.shape[1], oracle_time, runs, backend, True)
