from tega.filtering.backends import (
    CAPTION_TEMPLATE,
    EMPTY_IMAGE_CAPTION,
    JUDGE_SYSTEM_PROMPT,
    JUDGE_USER_TEMPLATE,
    FallbackMerger,
    FilterBackends,
    FixedJudge,
    OracleCaptioner,
    RemoteCaptioner,
    RemoteJudge,
    RemoteMerger,
    StubJudge,
    judge_request,
    parse_judge_score,
)
from tega.filtering.core import (
    DEFAULT_THRESHOLD,
    ClassPassRate,
    ConsistencyReport,
    FilterSummary,
    consistency_filter,
    filter_dataset,
    merge_captions,
    read_filter_report,
    score_semantic,
    select_filter_views,
    write_filter_report,
)
from tega.filtering.text import normalize_text, score_text, stub_semantic_score

__all__ = [
    "CAPTION_TEMPLATE",
    "DEFAULT_THRESHOLD",
    "EMPTY_IMAGE_CAPTION",
    "JUDGE_SYSTEM_PROMPT",
    "JUDGE_USER_TEMPLATE",
    "ClassPassRate",
    "ConsistencyReport",
    "FallbackMerger",
    "FilterBackends",
    "FilterSummary",
    "FixedJudge",
    "OracleCaptioner",
    "RemoteCaptioner",
    "RemoteJudge",
    "RemoteMerger",
    "StubJudge",
    "consistency_filter",
    "filter_dataset",
    "judge_request",
    "merge_captions",
    "normalize_text",
    "parse_judge_score",
    "read_filter_report",
    "score_semantic",
    "score_text",
    "select_filter_views",
    "stub_semantic_score",
    "write_filter_report",
]
