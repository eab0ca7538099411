from .metrics import MetricsReport, error_sd, mae, r2, rmse
from .plots import band_half_width, emit_plots
from .report import (
    AGE_BRACKETS,
    TABLE_COLUMNS,
    AblationRow,
    StratifiedReport,
    ablation_table_rows,
    ablation_to_dict,
    bracket_of,
    format_ablation_table,
    run_ablation,
    stratify,
)

__all__ = [
    "AGE_BRACKETS",
    "AblationRow",
    "MetricsReport",
    "StratifiedReport",
    "TABLE_COLUMNS",
    "ablation_table_rows",
    "ablation_to_dict",
    "band_half_width",
    "bracket_of",
    "emit_plots",
    "error_sd",
    "format_ablation_table",
    "mae",
    "r2",
    "rmse",
    "run_ablation",
    "stratify",
]
