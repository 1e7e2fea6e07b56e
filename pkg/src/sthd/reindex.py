"""ReIndex batching over the flattened (channel, window) axis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DataError, make_windows, neighbor_table


@dataclass(frozen=True, eq=False)
class SampleIndex:
    """``entries`` is an (n, 2) array of (target_channel, window_start)."""

    entries: np.ndarray
    epoch_seed: tuple

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray  # b x L x (1+K)
    targets: np.ndarray  # b x tau
    provenance: np.ndarray  # b x 2

    def __len__(self):
        return len(self.provenance)


def epoch_rng(base_seed, epoch):
    return np.random.default_rng([int(base_seed), int(epoch)])


def build_index(dataset, spec, range_name, base_seed=0, epoch=0, shuffle=None):
    """Flattened sample index; shuffled only for the training range by default."""
    entries = make_windows(dataset, spec, range_name)
    if shuffle is None:
        shuffle = range_name == "train"
    if shuffle:
        # Generator.permutation is a Fisher-Yates shuffle.
        entries = entries[epoch_rng(base_seed, epoch).permutation(len(entries))]
    return SampleIndex(entries, (int(base_seed), int(epoch)))


class BatchAssembler:
    """Gathers normalized windows for many samples at once.

    Equivalent to calling :func:`sthd.data.assemble_sample` per entry.
    """

    def __init__(self, dataset, neighbors, normalizer, spec):
        self.spec = spec
        self.table = neighbor_table(neighbors, dataset.M)
        self.K = self.table.shape[1]
        self.normalized = normalizer.normalize(dataset.values)
        self.T = dataset.T

    def __call__(self, entries):
        entries = np.asarray(entries, dtype=np.int64).reshape(-1, 2)
        target, start = entries[:, 0], entries[:, 1]
        L, tau = self.spec.input_length, self.spec.horizon
        if len(entries) and (start.min() < 0 or start.max() + L + tau > self.T):
            raise DataError("batch contains a window outside the series")
        channels = np.concatenate([target[:, None], self.table[target]], axis=1)
        times = start[:, None] + np.arange(L)
        inputs = self.normalized[channels[:, None, :], times[:, :, None]]
        horizon_t = start[:, None] + L + np.arange(tau)
        targets = self.normalized[target[:, None], horizon_t]
        return Batch(inputs, targets, entries)


def next_batch(index, cursor, b, assembler, drop_last=False):
    """Return ``(batch, new_cursor)``, or ``(None, cursor)`` at end of epoch."""
    if b < 1:
        raise ValueError(f"batch size must be positive, got {b}")
    n = len(index)
    if cursor >= n:
        return None, cursor
    stop = min(n, cursor + b)
    if drop_last and stop - cursor < b:
        return None, n
    return assembler(index.entries[cursor:stop]), stop


def iter_batches(index, b, assembler, drop_last=False):
    cursor = 0
    while True:
        batch, cursor = next_batch(index, cursor, b, assembler, drop_last)
        if batch is None:
            return
        yield batch


def legacy_batches(dataset, spec, range_name, b, assembler, base_seed=0, epoch=0, shuffle=True):
    """Batches over the window axis only: each holds b time slices x all M channels."""
    entries = make_windows(dataset, spec, range_name)
    starts = np.unique(entries[:, 1])
    if shuffle:
        starts = starts[epoch_rng(base_seed, epoch).permutation(len(starts))]
    channels = np.arange(dataset.M, dtype=np.int64)
    for lo in range(0, len(starts), b):
        chunk = starts[lo : lo + b]
        block = np.column_stack([np.tile(channels, len(chunk)), np.repeat(chunk, dataset.M)])
        yield assembler(block)


def legacy_batch_shape(M, b, K, L):
    """Elements per batch when sampling along the window axis: b * M * (1+K) * L."""
    for name, v in (("M", M), ("b", b), ("L", L)):
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    if K < 0:
        raise ValueError(f"K must be non-negative, got {K}")
    return b * M * (1 + K) * L


def reindex_batch_shape(b, K, L):
    """Elements per ReIndex batch: b * (1+K) * L."""
    return b * (1 + K) * L
