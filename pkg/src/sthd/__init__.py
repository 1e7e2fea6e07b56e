"""Sparse-correlation transformer toolkit for high-dimensional multivariate forecasting."""
from .correlation import (
    CorrelationMatrix,
    NeighborIndex,
    benchmark_correlation,
    bottom_k_neighbors,
    naive_pearson,
    pearson_matrix,
    top_k_neighbors,
)
from .data import (
    MtsDataset,
    NormalizationState,
    Sample,
    SyntheticSpec,
    WindowSpec,
    assemble_sample,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    make_windows,
    save_csv,
)
from .metrics import ForecastSet, mae, naive_forecast, rmse, wape, wrmspe
from .model import SthdConfig, SthdModel, forward_loss, make_patches
from .reindex import build_index, legacy_batch_shape, next_batch

__version__ = "0.1.0"
