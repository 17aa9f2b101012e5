"""cirlab: a desk-scale continual-learning lab for class-incremental streams
with repetition, pairing labeled and unlabeled data in each experience.

Core pieces: a deterministic stream generator (three unlabeled-composition
scenarios), an MLP classifier with from-scratch reverse-mode gradients, the
distillation / feature-drift / pseudo-label loss family, a prototype buffer
for cosine-similarity pseudo-labeling, an Adam + step-LR trainer with early
stopping, and an evaluation harness producing per-cohort accuracy matrices.
"""

from .errors import (
    BufferCapacityError,
    CirlabError,
    ConfigError,
    EvaluationError,
    ExperienceError,
    NumericalError,
    ShapeError,
    StreamGenerationError,
    StreamValidationError,
)
from .losses import LossBreakdown, LossWeights, kd_loss, lfl_loss, lwf_loss, pseudo_loss, sup_loss, total_loss
from .metrics import (
    MetricsReport,
    evaluate,
    forgetting_summary,
    mean_forgetting,
    scenario_average,
)
from .model import (
    ModelState,
    compute_gradients,
    expand_head,
    forward_features,
    forward_logits,
    init_model,
    load_model,
    save_model,
    snapshot,
)
from .prototypes import PrototypeBuffer, assign_pseudo_labels, compute_class_prototypes, update_buffer
from .stream import (
    Dataset,
    Experience,
    StreamConfig,
    TestSet,
    build_stream,
    build_test_set,
    generate_synthetic_dataset,
    ingest_directory,
    load_stream,
    make_dataset,
    stream_statistics,
    validate_stream,
    write_stream_manifest,
)
from .trainer import (
    AdamState,
    EpochRecord,
    RunResult,
    TrainConfig,
    TrainerHooks,
    TrainerState,
    adam_step,
    init_trainer,
    run_finetune_baseline,
    run_stream,
    scheduler_lr,
    train_experience,
)

__version__ = "0.1.0"
