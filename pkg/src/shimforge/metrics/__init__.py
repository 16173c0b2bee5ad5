from shimforge.metrics.benchmark import BenchmarkConfig, run_benchmark
from shimforge.metrics.detection import (
    MIN_NULL,
    ROCCurve,
    acc_rule,
    bit_accuracy,
    calibrate_threshold,
    roc_curve,
    tpr_at_fpr,
)
from shimforge.metrics.quality import dct_features, frechet_dct, frechet_distance, psnr, ssim
from shimforge.metrics.report import COLUMNS, AmbiguityCell, Cell, MetricsReport

__all__ = [
    "AmbiguityCell",
    "BenchmarkConfig",
    "COLUMNS",
    "Cell",
    "MIN_NULL",
    "MetricsReport",
    "ROCCurve",
    "acc_rule",
    "bit_accuracy",
    "calibrate_threshold",
    "dct_features",
    "frechet_dct",
    "frechet_distance",
    "psnr",
    "roc_curve",
    "run_benchmark",
    "ssim",
    "tpr_at_fpr",
]
