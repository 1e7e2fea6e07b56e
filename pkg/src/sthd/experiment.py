"""Experiment configuration, the training loop and ablation / K-sweep drivers."""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .correlation import bottom_k_neighbors, pearson_matrix, top_k_neighbors
from .data import SyntheticSpec, WindowSpec, fit_normalizer, generate_synthetic, load_csv
from .metrics import METRICS, ForecastSet, all_metrics
from .model import ConfigError, SthdConfig, SthdModel, forward_loss
from .nn import Adam, load_checkpoint, save_checkpoint
from .reindex import BatchAssembler, build_index, iter_batches, legacy_batch_shape, legacy_batches

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
MODES = ("related", "unrelated", "none", "reindex_off")
PLOT_COLUMNS = ("k", "seed", "horizon", "rmse", "wrmspe", "mae", "wape")


@dataclass(frozen=True)
class ExperimentConfig:
    # data source: a CSV path, or "synthetic" to use the syn_* keys
    dataset: str = "synthetic"
    split_train: float = 0.7
    split_val: float = 0.1
    syn_M: int = 40
    syn_T: int = 1000  # long enough for the default window on a 10% validation split
    syn_groups: int = 4
    syn_coupling: float = 0.9
    syn_noise: float = 0.5
    syn_lag: int = 0
    syn_seed: int = 0
    syn_waves: int = 3
    syn_innovation: float = 0.0
    syn_ar_phi: float = 0.95
    syn_leaders: int = 0
    # windows and model; defaults follow the Crime-Chicago profile
    input_length: int = 48
    horizon: int = 12
    horizons: tuple = ()
    stride: int = 1
    K: int = 5
    score: str = "signed"
    patch_len: int = 12
    patch_stride: int = 6
    d_model: int = 256
    n_heads: int = 4
    head_dim: int = 0
    e_layers: int = 2
    d_ff: int = 384
    conv_kernel: int = 1
    dropout: float = 0.0
    # optimisation
    batch_size: int = 128
    eval_batch_size: int = 512
    lr: float = 0.001
    max_epochs: int = 100
    max_steps: int = 0  # 0 means no step limit
    early_stop_delta: float = 1e-7
    early_stop_patience: int = 1
    early_stop_mode: str = "previous"
    drop_last: bool = False
    seeds: tuple = (0,)
    mode: str = "related"
    workers: int = 0  # 0 means STHD_WORKERS or the CPU count
    legacy_element_ceiling: int = 50_000_000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.score not in ("signed", "absolute"):
            raise ConfigError(f"score must be 'signed' or 'absolute', got {self.score!r}")
        if self.early_stop_mode not in ("previous", "best"):
            raise ConfigError(f"early_stop_mode must be 'previous' or 'best', got {self.early_stop_mode!r}")
        if not self.seeds:
            raise ConfigError("seeds must name at least one seed")
        for name in ("batch_size", "eval_batch_size", "max_epochs", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def horizon_list(self):
        return tuple(self.horizons) or (self.horizon,)

    def with_overrides(self, **kw):
        return replace(self, **kw)

    def to_text(self):
        return "".join(f"{f.name} = {_format_value(getattr(self, f.name))}\n" for f in fields(self))

    def config_hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def window_spec(self, horizon=None):
        return WindowSpec(self.input_length, horizon or self.horizon, self.stride)

    def model_config(self, K, horizon=None):
        return SthdConfig(
            input_length=self.input_length,
            horizon=horizon or self.horizon,
            K=K,
            patch_len=self.patch_len,
            patch_stride=self.patch_stride,
            d_model=self.d_model,
            n_heads=self.n_heads,
            head_dim=self.head_dim,
            e_layers=self.e_layers,
            d_ff=self.d_ff,
            conv_kernel=self.conv_kernel,
            dropout=self.dropout,
        )

    def synthetic_spec(self):
        return SyntheticSpec(
            M=self.syn_M,
            T=self.syn_T,
            num_groups=self.syn_groups,
            intra_group_coupling=self.syn_coupling,
            noise_std=self.syn_noise,
            lag=self.syn_lag,
            seed=self.syn_seed,
            n_waves=self.syn_waves,
            innovation_std=self.syn_innovation,
            ar_phi=self.syn_ar_phi,
            leaders=self.syn_leaders,
            split_fractions=(self.split_train, self.split_val),
        )


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(name, kind, raw):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw.replace("_", ""))
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        return raw
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as {kind.__name__}") from None


_FIELD_TYPES = {f.name: type(f.default) for f in fields(ExperimentConfig)}


def parse_overrides(pairs, base=None):
    """Apply ``key=value`` strings (or (key, value) pairs) to ``base``."""
    base = base or ExperimentConfig()
    updates = {}
    for item in pairs:
        key, value = item if isinstance(item, tuple) else _split_pair(item)
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _parse_value(key, _FIELD_TYPES[key], value)
    return replace(base, **updates)


def _split_pair(text):
    key, eq, value = text.partition("=")
    if not eq:
        raise ConfigError(f"expected 'key = value', got {text!r}")
    return key.strip(), value.strip()


def parse_config_text(text, base=None):
    pairs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            pairs.append(_split_pair(line))
        except ConfigError as exc:
            raise ConfigError(f"line {line_no}: {exc}") from None
    return parse_overrides(pairs, base)


def load_config(path, overrides=()):
    cfg = parse_config_text(Path(path).read_text()) if path else ExperimentConfig()
    return parse_overrides(overrides, cfg)


# ------------------------------------------------------------------------------------


@dataclass
class Prepared:
    """Everything that does not depend on the seed, mode or K."""

    config: ExperimentConfig
    dataset: object
    normalizer: object
    correlation: object
    label: str


def prepare(config):
    if config.dataset == "synthetic":
        dataset = generate_synthetic(config.synthetic_spec())
        label = f"synthetic-M{config.syn_M}-T{config.syn_T}-seed{config.syn_seed}"
    else:
        dataset = load_csv(config.dataset, (config.split_train, config.split_val))
        label = Path(config.dataset).stem
    workers = config.workers or None
    corr = pearson_matrix(dataset, "train", workers=workers)
    return Prepared(config, dataset, fit_normalizer(dataset), corr, label)


def select_neighbors(prepared, mode, K):
    """Neighbour table for an ablation mode (``none`` forces K = 0)."""
    if mode == "none":
        K = 0
    if mode == "unrelated":
        return bottom_k_neighbors(prepared.correlation, K, prepared.config.score)
    return top_k_neighbors(prepared.correlation, K, prepared.config.score)


class EarlyStopper:
    """Stops when the validation improvement falls below ``delta``.

    ``mode="previous"`` measures improvement against the previous epoch,
    ``mode="best"`` against the best epoch so far.
    """

    def __init__(self, delta=1e-7, patience=1, mode="previous"):
        self.delta = delta
        self.patience = patience
        self.mode = mode
        self.reference = None
        self.bad_epochs = 0

    def update(self, val_loss):
        if self.reference is None:
            self.reference = val_loss
            return False
        improvement = self.reference - val_loss
        self.bad_epochs = self.bad_epochs + 1 if improvement < self.delta else 0
        if self.mode == "previous":
            self.reference = val_loss
        else:
            self.reference = min(self.reference, val_loss)
        return self.bad_epochs >= self.patience


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: SthdModel
    neighbors: object
    log: list
    best_epoch: int
    best_val_loss: float
    stopped_early: bool
    steps: int
    mode: str
    K: int
    horizon: int
    seed: int


def dataset_loss(model, assembler, dataset, spec, range_name, batch_size):
    """Mean squared error over every window of a range (normalized units)."""
    index = build_index(dataset, spec, range_name, shuffle=False)
    total, count = 0.0, 0
    for batch in iter_batches(index, batch_size, assembler):
        pred = model.predict(batch.inputs)
        total += float(np.sum((pred - batch.targets) ** 2))
        count += batch.targets.size
    return total / count


def train(config, seed=None, prepared=None, mode=None, K=None, horizon=None, checkpoint_dir=None, validation=None, restore_best=True):
    """Train one STHD model; returns the best-validation model and the epoch log.

    ``validation`` may replace the validation-loss computation (a callable
    taking the model); it exists so the stopping rule can be scripted.
    With ``restore_best=False`` the final weights are kept instead.
    """
    prepared = prepared or prepare(config)
    seed = config.seeds[0] if seed is None else seed
    mode = mode or config.mode
    K = config.K if K is None else K
    horizon = horizon or config.horizon
    neighbors = select_neighbors(prepared, mode, K)
    K = neighbors.K
    dataset = prepared.dataset
    spec = config.window_spec(horizon)
    model = SthdModel(config.model_config(K, horizon), seed=seed)
    assembler = BatchAssembler(dataset, neighbors, prepared.normalizer, spec)
    if mode == "reindex_off":
        elements = legacy_batch_shape(dataset.M, config.batch_size, K, config.input_length)
        if elements > config.legacy_element_ceiling:
            raise ConfigError(
                f"reindex_off batch would hold {elements} elements, above the ceiling "
                f"legacy_element_ceiling={config.legacy_element_ceiling}"
            )
    if validation is None:
        def validation(m):
            return dataset_loss(m, assembler, dataset, spec, "val", config.eval_batch_size)

    opt = Adam(model.parameters(), lr=config.lr)
    stopper = EarlyStopper(config.early_stop_delta, config.early_stop_patience, config.early_stop_mode)
    history, steps = [], 0
    best_state, best_val, best_epoch = model.state_dict(), math.inf, 0
    stopped_early = False
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        if mode == "reindex_off":
            batches = legacy_batches(dataset, spec, "train", config.batch_size, assembler, seed, epoch)
        else:
            index = build_index(dataset, spec, "train", seed, epoch)
            batches = iter_batches(index, config.batch_size, assembler, config.drop_last)
        total, count = 0.0, 0
        for batch in batches:
            opt.zero_grad()
            loss = forward_loss(batch, model)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"epoch {epoch}, step {steps + 1}: training loss is {value}")
            loss.backward()
            opt.step()
            steps += 1
            total += value * len(batch)
            count += len(batch)
            if config.max_steps and steps >= config.max_steps:
                break
        val = float(validation(model))
        if not math.isfinite(val):
            raise TrainingDiverged(f"epoch {epoch}: validation loss is {val}")
        history.append({"epoch": epoch, "train_loss": total / max(count, 1), "val_loss": val, "steps": steps})
        log.info("seed %d epoch %d train %.6g val %.6g", seed, epoch, total / max(count, 1), val)
        if val < best_val:
            best_state, best_val, best_epoch = model.state_dict(), val, epoch
        if stopper.update(val):
            stopped_early = True
            break
        if config.max_steps and steps >= config.max_steps:
            break
    if restore_best:
        model.load_state_dict(best_state)
    model.eval()
    if checkpoint_dir is not None:
        meta = {"config_hash": config.config_hash(), "seed": seed, "mode": mode, "best_epoch": best_epoch}
        meta.update({f"model.{k}": v for k, v in model.cfg.to_dict().items()})
        save_checkpoint(checkpoint_dir, model.state_dict(), meta)
        Path(checkpoint_dir, "neighbors.txt").write_text(neighbors.to_text())
    return TrainResult(model, neighbors, history, best_epoch, best_val, stopped_early, steps, mode, K, horizon, seed)


def forecast(model, prepared, neighbors, spec, range_name="test", batch_size=512):
    """Denormalized forecasts for every window of ``range_name``."""
    assembler = BatchAssembler(prepared.dataset, neighbors, prepared.normalizer, spec)
    index = build_index(prepared.dataset, spec, range_name, shuffle=False)
    preds, truths = [], []
    for batch in iter_batches(index, batch_size, assembler):
        ch = batch.provenance[:, 0]
        preds.append(prepared.normalizer.denormalize(model.predict(batch.inputs), ch))
        t = batch.provenance[:, 1][:, None] + spec.input_length + np.arange(spec.horizon)
        truths.append(prepared.dataset.values[ch[:, None], t])
    return ForecastSet(np.concatenate(preds), np.concatenate(truths), index.entries)


def metric_record(config, prepared, model_name, mode, horizon, K, seed, fs, wall_time, **extra):
    rec = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "dataset": prepared.label,
        "model": model_name,
        "mode": mode,
        "horizon": int(horizon),
        "K": int(K),
        "seed": int(seed),
        "config_hash": config.config_hash(),
    }
    rec.update(all_metrics(fs))
    rec["wall_time"] = wall_time
    rec.update(extra)
    return rec


def run_one(config, prepared, seed, mode, K, horizon, checkpoint_dir=None):
    t0 = time.perf_counter()
    result = train(config, seed, prepared, mode, K, horizon, checkpoint_dir)
    fs = forecast(result.model, prepared, result.neighbors, config.window_spec(horizon), "test", config.eval_batch_size)
    rec = metric_record(
        config, prepared, "STHD", mode, horizon, result.K, seed, fs, time.perf_counter() - t0,
        epochs_run=len(result.log), best_epoch=result.best_epoch, steps=result.steps,
    )
    return rec, result


def run_training(config, out_dir=None, prepared=None):
    """``train`` subcommand: every seed x horizon with the configured mode and K."""
    prepared = prepared or prepare(config)
    records, logs = [], []
    for horizon in config.horizon_list:
        for seed in config.seeds:
            ckpt = None if out_dir is None else Path(out_dir) / f"h{horizon}_seed{seed}"
            rec, result = run_one(config, prepared, seed, config.mode, config.K, horizon, ckpt)
            records.append(rec)
            logs.append({"seed": seed, "horizon": horizon, "epochs": result.log})
    return report(config, records, logs=logs)


def run_ablation(config, modes=("related", "unrelated", "none"), prepared=None):
    """One record per (mode, seed, horizon)."""
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown ablation mode {m!r}; expected one of {MODES}")
    prepared = prepared or prepare(config)
    records = []
    for mode in modes:
        for horizon in config.horizon_list:
            for seed in config.seeds:
                rec, _ = run_one(config, prepared, seed, mode, config.K, horizon)
                records.append(rec)
    return report(config, records)


def run_k_sweep(config, k_values, prepared=None):
    prepared = prepared or prepare(config)
    M = prepared.dataset.M
    for k in k_values:
        if not 0 <= k < M:
            raise ConfigError(f"K={k} must satisfy 0 <= K < M={M}")
    records = []
    for k in k_values:
        mode = "none" if k == 0 else "related"
        for horizon in config.horizon_list:
            for seed in config.seeds:
                rec, _ = run_one(config, prepared, seed, mode, k, horizon)
                records.append(rec)
    return report(config, records)


def plot_rows(records):
    return [[r["K"], r["seed"], r["horizon"]] + [r[m] for m in METRICS] for r in records]


def plot_csv(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_COLUMNS)
    writer.writerows(plot_rows(records))
    return buf.getvalue()


def report(config, records, **extra):
    out = {"schema_version": REPORT_SCHEMA_VERSION, "config_hash": config.config_hash(), "records": records}
    out.update(extra)
    return out


def evaluate_checkpoint(config, checkpoint_dir, prepared=None, baselines=False, seed=0):
    """Reload a saved model and score it (and optionally the baselines) on the test range."""
    from .correlation import NeighborIndex
    from .metrics import linear_forecast, naive_forecast
    from .model import SthdConfig

    prepared = prepared or prepare(config)
    state, meta = load_checkpoint(checkpoint_dir)
    model_cfg = SthdConfig.from_dict({k[6:]: v for k, v in meta.items() if k.startswith("model.")})
    model = SthdModel(model_cfg)
    model.load_state_dict(state)
    text = Path(checkpoint_dir, "neighbors.txt").read_text()
    neighbors = NeighborIndex.from_text(text, prepared.dataset.channel_ids)
    spec = config.window_spec(model_cfg.horizon)
    t0 = time.perf_counter()
    fs = forecast(model, prepared, neighbors, spec, "test", config.eval_batch_size)
    seed = int(meta.get("seed", seed))
    records = [
        metric_record(config, prepared, "STHD", meta.get("mode", config.mode), model_cfg.horizon, model_cfg.K, seed, fs, time.perf_counter() - t0)
    ]
    if baselines:
        t0 = time.perf_counter()
        naive = naive_forecast(prepared.dataset, spec, "test")
        records.append(metric_record(config, prepared, "Naive", "none", spec.horizon, 0, seed, naive, time.perf_counter() - t0))
        t0 = time.perf_counter()
        lin, _ = linear_forecast(prepared.dataset, prepared.normalizer, spec, "test", seed=seed)
        records.append(metric_record(config, prepared, "Linear", "none", spec.horizon, 0, seed, lin, time.perf_counter() - t0))
    return report(config, records)
