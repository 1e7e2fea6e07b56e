"""Dataset representation, CSV ingestion, normalization and sliding windows."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Raised for malformed input data or impossible window requests."""


@dataclass(frozen=True, eq=False)
class MtsDataset:
    """M channels x T time points, channel-major, with chronological splits."""

    values: np.ndarray
    channel_ids: tuple
    split: tuple
    frequency_label: str = ""

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 2:
            raise DataError(f"values must be 2-D (M x T), got shape {values.shape}")
        M, T = values.shape
        if M < 1 or T < 2:
            raise DataError(f"need M >= 1 and T >= 2, got M={M}, T={T}")
        ids = tuple(str(c) for c in self.channel_ids)
        if len(ids) != M:
            raise DataError(f"{len(ids)} channel ids for {M} channels")
        if len(set(ids)) != M:
            raise DataError("channel ids must be unique")
        train_end, val_end = (int(s) for s in self.split)
        if not 0 < train_end < val_end <= T:
            raise DataError(f"invalid split ({train_end}, {val_end}) for T={T}")
        if not np.isfinite(values).all():
            i, t = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at channel {ids[i]!r}, time {t}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_ids", ids)
        object.__setattr__(self, "split", (train_end, val_end))

    @property
    def M(self):
        return self.values.shape[0]

    @property
    def T(self):
        return self.values.shape[1]

    def range_bounds(self, name):
        """Half-open ``[start, stop)`` time bounds of a split."""
        train_end, val_end = self.split
        bounds = {"train": (0, train_end), "val": (train_end, val_end), "test": (val_end, self.T)}
        try:
            return bounds[name]
        except KeyError:
            raise DataError(f"unknown range {name!r}; expected one of {SPLITS}") from None


def load_csv(path, split_fractions=(0.7, 0.1), frequency_label=""):
    """Read a CSV with a header of channel ids and one row per time step."""
    f_train, f_val = (float(f) for f in split_fractions)
    if not 0 < f_train < f_train + f_val < 1:
        raise DataError(f"split fractions must satisfy 0 < f_train < f_train + f_val < 1, got {split_fractions}")
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        seen = set()
        for col, h in enumerate(header, start=1):
            if not h:
                raise DataError(f"{path}: empty channel id in header column {col}")
            if h in seen:
                raise DataError(f"{path}: duplicate channel id {h!r} in header column {col}")
            seen.add(h)
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: non-numeric value {cell!r} at row {row_no}, column {col}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value {cell!r} at row {row_no}, column {col}")
                parsed.append(v)
            rows.append(parsed)
    T = len(rows)
    if T < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {T}")
    values = np.array(rows, dtype=np.float64).T
    split = (math.floor(f_train * T), math.floor((f_train + f_val) * T))
    return MtsDataset(values, tuple(header), split, frequency_label)


def save_csv(dataset, path):
    """Write ``dataset`` in the format read by :func:`load_csv` (repr-exact floats)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.channel_ids)
        for t in range(dataset.T):
            writer.writerow(repr(float(v)) for v in dataset.values[:, t])


@dataclass(frozen=True, eq=False)
class NormalizationState:
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = 1e-8

    @property
    def scale(self):
        return np.maximum(self.std, self.epsilon)

    def normalize(self, values, channels=None):
        """z-score rows of ``values``; ``channels`` selects the statistics per row."""
        mean, scale = self._stats(channels)
        return (np.asarray(values, dtype=np.float64) - mean) / scale

    def denormalize(self, values, channels=None):
        mean, scale = self._stats(channels)
        return np.asarray(values, dtype=np.float64) * scale + mean

    def _stats(self, channels):
        if channels is None:
            return self.mean[:, None], self.scale[:, None]
        channels = np.asarray(channels)
        return self.mean[channels][..., None], self.scale[channels][..., None]


def fit_normalizer(dataset, epsilon=1e-8):
    """Per-channel mean/std over the training range only."""
    train_end = dataset.split[0]
    if train_end < 2:
        raise DataError(f"training range too short for normalization: {train_end}")
    block = dataset.values[:, :train_end]
    return NormalizationState(block.mean(axis=1), block.std(axis=1), epsilon)


@dataclass(frozen=True)
class WindowSpec:
    input_length: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        for name in ("input_length", "horizon", "stride"):
            if int(getattr(self, name)) < 1:
                raise DataError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def span(self):
        return self.input_length + self.horizon


def window_starts(dataset, spec, range_name):
    """Absolute start times of every window fully inside ``range_name``."""
    lo, hi = dataset.range_bounds(range_name)
    length = hi - lo
    if length < spec.span:
        raise DataError(
            f"{range_name} range has {length} time points, need at least "
            f"L + tau = {spec.input_length} + {spec.horizon} = {spec.span}"
        )
    return np.arange(lo, hi - spec.span + 1, spec.stride, dtype=np.int64)


def make_windows(dataset, spec, range_name):
    """All (target_channel, window_start) pairs, ascending by channel then start."""
    starts = window_starts(dataset, spec, range_name)
    channels = np.repeat(np.arange(dataset.M, dtype=np.int64), len(starts))
    return np.column_stack([channels, np.tile(starts, dataset.M)])


@dataclass(frozen=True, eq=False)
class Sample:
    inputs: np.ndarray
    target_horizon: np.ndarray
    target_channel: int
    window_start: int


def neighbor_table(neighbors, M):
    """(M, K) integer array of neighbour channels; accepts a NeighborIndex or array."""
    if neighbors is None:
        return np.zeros((M, 0), dtype=np.int64)
    table = getattr(neighbors, "indices", neighbors)
    table = np.asarray(table, dtype=np.int64)
    if table.ndim != 2 or table.shape[0] != M:
        raise DataError(f"neighbour table must have shape (M={M}, K), got {table.shape}")
    return table


def assemble_sample(dataset, neighbors, normalizer, target_channel, window_start, spec):
    """Column 0 is the target window; columns 1..K are neighbours in rank order."""
    table = neighbor_table(neighbors, dataset.M)
    c, t0 = int(target_channel), int(window_start)
    if not 0 <= c < dataset.M:
        raise DataError(f"target channel {c} out of range for M={dataset.M}")
    if t0 < 0 or t0 + spec.span > dataset.T:
        raise DataError(f"window [{t0}, {t0 + spec.span}) outside [0, {dataset.T})")
    channels = np.concatenate([[c], table[c]])
    L = spec.input_length
    window = normalizer.normalize(dataset.values[channels, t0 : t0 + L], channels)
    horizon = normalizer.normalize(dataset.values[c : c + 1, t0 + L : t0 + spec.span], [c])[0]
    return Sample(np.ascontiguousarray(window.T), horizon, c, t0)


@dataclass(frozen=True)
class SyntheticSpec:
    """Grouped synthetic series.

    Every channel mixes its group latent (weight ``intra_group_coupling``)
    with an idiosyncratic component, plus white noise of std ``noise_std``.
    With ``leaders == 0`` member ``q`` of a group sees the latent delayed by
    ``q * lag`` steps; otherwise the first ``leaders`` members of each group
    run ``lag`` steps ahead of the rest. Latent and idiosyncratic components
    have unit variance: ``n_waves`` random sinusoids plus an AR(1) part with
    coefficient ``ar_phi`` and stationary std ``innovation_std``, rescaled.
    """

    M: int
    T: int
    num_groups: int = 1
    intra_group_coupling: float = 1.0
    noise_std: float = 0.0
    lag: int = 0
    seed: int = 0
    n_waves: int = 3
    innovation_std: float = 0.0
    ar_phi: float = 0.95
    leaders: int = 0
    split_fractions: tuple = (0.6, 0.2)

    def __post_init__(self):
        if not 1 <= self.num_groups <= self.M:
            raise DataError(f"num_groups must be in [1, M={self.M}], got {self.num_groups}")
        if not 0 < self.intra_group_coupling <= 1:
            raise DataError(f"intra_group_coupling must be in (0, 1], got {self.intra_group_coupling}")
        if self.noise_std < 0 or self.innovation_std < 0 or self.lag < 0:
            raise DataError("noise_std, innovation_std and lag must be non-negative")
        if not 0 <= self.ar_phi < 1:
            raise DataError(f"ar_phi must be in [0, 1), got {self.ar_phi}")
        if self.leaders < 0:
            raise DataError(f"leaders must be non-negative, got {self.leaders}")


def synthetic_groups(spec):
    """Group label of every channel: contiguous, near-equal blocks."""
    return np.arange(spec.M) * spec.num_groups // spec.M


def _component(rng, n, n_waves, innovation_std, phi):
    t = np.arange(n, dtype=np.float64)
    out = np.zeros(n)
    if n_waves:
        periods = rng.uniform(6.0, 48.0, n_waves)
        phases = rng.uniform(0.0, 2 * np.pi, n_waves)
        amps = rng.uniform(0.5, 1.5, n_waves)
        for p, ph, a in zip(periods, phases, amps):
            out += a * np.sin(2 * np.pi * t / p + ph)
        out /= math.sqrt(0.5 * float(np.sum(amps**2)))
    if innovation_std > 0:
        shocks = rng.normal(0.0, innovation_std * math.sqrt(1 - phi**2), n)
        ar = np.empty(n)
        ar[0] = rng.normal(0.0, innovation_std)
        for i in range(1, n):
            ar[i] = phi * ar[i - 1] + shocks[i]
        out += ar
    variance = (1.0 if n_waves else 0.0) + innovation_std**2
    return out / math.sqrt(variance) if variance > 0 else out


def generate_synthetic(spec):
    """Deterministic grouped dataset; a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    groups = synthetic_groups(spec)
    positions = np.zeros(spec.M, dtype=np.int64)
    for g in range(spec.num_groups):
        members = np.flatnonzero(groups == g)
        positions[members] = np.arange(len(members))
    if spec.leaders:
        shifts = np.where(positions < spec.leaders, spec.lag, 0)
    else:
        shifts = (positions.max() - positions) * spec.lag
    n = spec.T + int(shifts.max())
    latents = [_component(rng, n, spec.n_waves, spec.innovation_std, spec.ar_phi) for _ in range(spec.num_groups)]
    c = spec.intra_group_coupling
    own = math.sqrt(max(0.0, 1.0 - c * c))
    values = np.empty((spec.M, spec.T))
    for i in range(spec.M):
        shift = shifts[i]
        values[i] = c * latents[groups[i]][shift : shift + spec.T]
        if own > 0:
            values[i] += own * _component(rng, spec.T, spec.n_waves, spec.innovation_std, spec.ar_phi)
    if spec.noise_std > 0:
        values += rng.normal(0.0, spec.noise_std, values.shape)
    T = spec.T
    f_train, f_val = spec.split_fractions
    split = (math.floor(f_train * T), math.floor((f_train + f_val) * T))
    ids = tuple(f"s{i}" for i in range(spec.M))
    return MtsDataset(values, ids, split, "synthetic")
