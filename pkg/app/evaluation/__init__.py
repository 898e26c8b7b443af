from .metrics import (
    Metrics,
    evaluate,
    metrics_row,
    pearson_cc,
    per_class_frame,
    predict_dataset,
    rms_error,
    summarize,
    write_metrics_csv,
    write_per_class_csv,
)
from .baselines import (
    DEFAULT_ENTROPY_WEIGHT,
    METHODS,
    ComparisonResult,
    run_comparison,
    train_em_baseline,
    train_method,
    train_supervised_baseline,
    train_vae_r,
)

__all__ = [
    "ComparisonResult",
    "DEFAULT_ENTROPY_WEIGHT",
    "METHODS",
    "Metrics",
    "evaluate",
    "metrics_row",
    "pearson_cc",
    "per_class_frame",
    "predict_dataset",
    "rms_error",
    "run_comparison",
    "summarize",
    "train_em_baseline",
    "train_method",
    "train_supervised_baseline",
    "train_vae_r",
    "write_metrics_csv",
    "write_per_class_csv",
]
