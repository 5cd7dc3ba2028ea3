from .ablation import AblationVariant, build_variant, parse_variant
from .bench import TimingReport, benchmark
from .metrics import (ClassMetrics, PixelErrorReport, classification_metrics, confusion_matrix,
                      fingertip_distances, pixel_error)
from .report import ablation_table, classification_table, evaluate, pixel_error_table, timing_table

__all__ = [
    "AblationVariant", "build_variant", "parse_variant", "TimingReport", "benchmark",
    "ClassMetrics", "PixelErrorReport", "classification_metrics", "confusion_matrix",
    "fingertip_distances", "pixel_error", "ablation_table", "classification_table", "evaluate",
    "pixel_error_table", "timing_table",
]
