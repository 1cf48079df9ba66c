from tega.evaluation.metrics import (
    REPORT_HEADER,
    TOP_K,
    EvalReport,
    class_embeddings,
    class_prompts,
    evaluate,
    rank_classes,
    report_from_rankings,
    reports_csv,
    write_confusion_csv,
    write_report_csv,
    zero_shot_classify,
)
from tega.evaluation.sweep import AXES, SweepConfig, SweepRow, parse_axis_value, run_sweep, sweep_table_csv

__all__ = [
    "AXES",
    "REPORT_HEADER",
    "TOP_K",
    "EvalReport",
    "SweepConfig",
    "SweepRow",
    "class_embeddings",
    "class_prompts",
    "evaluate",
    "parse_axis_value",
    "rank_classes",
    "report_from_rankings",
    "reports_csv",
    "run_sweep",
    "sweep_table_csv",
    "write_confusion_csv",
    "write_report_csv",
    "zero_shot_classify",
]
