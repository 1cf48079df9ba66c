from tega.datasetio.manifest import (
    SCHEMA,
    DatasetManifest,
    LazyViews,
    ManifestRecord,
    load_sample,
    read_manifest,
    record_from_json,
    write_manifest,
)
from tega.datasetio.mixing import allocate, corrupt_labels, draw_stratified, merge_expand, replace_mix
from tega.datasetio.store import (
    IngestError,
    IngestItem,
    cloud_path,
    ingest_real,
    read_cloud_file,
    read_ingest_index,
    save_sample,
    view_paths,
)

__all__ = [
    "SCHEMA",
    "DatasetManifest",
    "IngestError",
    "IngestItem",
    "LazyViews",
    "ManifestRecord",
    "allocate",
    "cloud_path",
    "corrupt_labels",
    "draw_stratified",
    "ingest_real",
    "load_sample",
    "merge_expand",
    "read_cloud_file",
    "read_ingest_index",
    "read_manifest",
    "record_from_json",
    "replace_mix",
    "save_sample",
    "view_paths",
    "write_manifest",
]
