from tega.trainer.fit import (
    LossTrace,
    TraceRow,
    TrainConfig,
    build_stack,
    effective_lr,
    export_embeddings,
    fit,
    load_checkpoint,
    lr_at,
    point_embeddings,
    save_checkpoint,
    write_embeddings_csv,
)
from tega.trainer.model import (
    FULL_PAIR_SET,
    EncoderStack,
    PointEncoder,
    StackConfig,
    contrastive_loss,
    pair_set_label,
    parse_pair_set,
    stack_clouds,
)
from tega.trainer.providers import ConvImageFeatures, HashedTextFeatures, RemoteImageFeatures, RemoteTextFeatures

__all__ = [
    "FULL_PAIR_SET",
    "ConvImageFeatures",
    "EncoderStack",
    "HashedTextFeatures",
    "LossTrace",
    "PointEncoder",
    "RemoteImageFeatures",
    "RemoteTextFeatures",
    "StackConfig",
    "TraceRow",
    "TrainConfig",
    "build_stack",
    "contrastive_loss",
    "effective_lr",
    "export_embeddings",
    "fit",
    "load_checkpoint",
    "lr_at",
    "pair_set_label",
    "parse_pair_set",
    "point_embeddings",
    "save_checkpoint",
    "stack_clouds",
    "write_embeddings_csv",
]
