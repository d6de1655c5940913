"""Fairness-aware tabular augmentation toolkit.

Train a diffusion model over a mixed table, sample synthetic rows,
reweigh by protected-group frequencies, train weighted classifiers, and
report balanced accuracy alongside group-fairness metrics.
"""

__version__ = "0.1.0"

from .dataset import (
    CATEGORICAL,
    NUMERICAL,
    ColumnSpec,
    DataTable,
    EncodedMatrix,
    QuantileTransform,
    TableSchema,
    concat_tables,
    decode,
    encode,
    encode_features,
    fit_quantile_transform,
    load_csv,
    load_schema,
    save_csv,
    save_schema,
    split_table,
)
from .errors import (
    DecodeError,
    DegenerateGroupError,
    FairtabError,
    ModelFormatError,
    ParseError,
    SchemaError,
    TrainingError,
)
from .classifiers import (
    PredictionSet,
    fit_classifier,
    load_classifier,
    make_classifier,
    save_classifier,
    uniform_threshold_grid,
)
from .diffusion import DiffusionConfig, DiffusionModel, load_model, sample, save_model, train
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    compare_marginals,
    emit_curves,
    emit_tables,
    load_experiment_config,
    run_experiment,
)
from .metrics import FAIRNESS_RANGES, METRIC_NAMES, FairnessReport, evaluate_predictions
from .reweighing import compute_weights, count_groups, reweigh

__all__ = [
    "CATEGORICAL",
    "NUMERICAL",
    "ColumnSpec",
    "DataTable",
    "EncodedMatrix",
    "QuantileTransform",
    "TableSchema",
    "concat_tables",
    "decode",
    "encode",
    "encode_features",
    "fit_quantile_transform",
    "load_csv",
    "load_schema",
    "save_csv",
    "save_schema",
    "split_table",
    "DecodeError",
    "DegenerateGroupError",
    "FairtabError",
    "ModelFormatError",
    "ParseError",
    "SchemaError",
    "TrainingError",
    "PredictionSet",
    "fit_classifier",
    "load_classifier",
    "make_classifier",
    "save_classifier",
    "uniform_threshold_grid",
    "DiffusionConfig",
    "DiffusionModel",
    "load_model",
    "sample",
    "save_model",
    "train",
    "ExperimentConfig",
    "ExperimentResult",
    "compare_marginals",
    "emit_curves",
    "emit_tables",
    "load_experiment_config",
    "run_experiment",
    "FAIRNESS_RANGES",
    "METRIC_NAMES",
    "FairnessReport",
    "evaluate_predictions",
    "compute_weights",
    "count_groups",
    "reweigh",
    "__version__",
]
