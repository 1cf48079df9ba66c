from tega.generation.core import (
    DEFAULT_GUIDANCE,
    DEFAULT_POINTS,
    GenerationRequest,
    Generator,
    ProceduralGenerator,
    canonical_template,
    chamfer_distance,
    chamfer_oracle,
    generate,
    text_adherence,
)
from tega.generation.pipeline import (
    PipelineReport,
    SampleFailure,
    TripletSample,
    generate_batch,
    mesh_cloud,
    synthesize_sample,
)
from tega.generation.remote import RemoteGenerator

procedural_generate = ProceduralGenerator().generate

__all__ = [
    "DEFAULT_GUIDANCE",
    "DEFAULT_POINTS",
    "GenerationRequest",
    "Generator",
    "PipelineReport",
    "ProceduralGenerator",
    "RemoteGenerator",
    "SampleFailure",
    "TripletSample",
    "canonical_template",
    "chamfer_distance",
    "chamfer_oracle",
    "generate",
    "generate_batch",
    "mesh_cloud",
    "procedural_generate",
    "synthesize_sample",
    "text_adherence",
]
