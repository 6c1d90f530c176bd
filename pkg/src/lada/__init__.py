"""Continual-learning engine operating entirely in embedding space.

Per-class memory blocks over frozen image embeddings, a trainable text-vector
head with a frozen-prefix schedule, Gaussian-mixture prototype replay, and a
two-stage seen/unseen inference path, plus accuracy-matrix metrics and a
benchmark CLI.
"""

from .adapter import (
    AdapterConfig,
    AdapterState,
    LabelMemoryBlock,
    expand_for_task,
    freeze_task,
    init_block,
    lada_logits,
    lada_logits_batch,
    phi_map,
)
from .errors import LadaError
from .inference import InferenceConfig, Prediction, batch_eval, predict
from .metrics import AccuracyMatrix, average, last, summary, transfer
from .prototypes import ClassPrototypes, PrototypeSet, augment, distill_class, replay_batch
from .stats import GmmModel, KMeansResult, gmm_fit_spherical, kmeans
from .store import (
    ClassRegistry,
    EmbeddingRecord,
    EmbeddingSet,
    TaskDescriptor,
    gen_synthetic_stream,
    load_lse,
    load_registry,
    normalize_set,
    save_lse,
    save_registry,
    validate_against_registry,
)
from .text_head import (
    TextClassifier,
    UnseenBank,
    build_unseen_bank,
    complete_task,
    init_from_embeddings,
    text_logits,
    text_logits_batch,
)
from .trainer import (
    CheckpointBundle,
    LossBreakdown,
    OptimizerState,
    TrainConfig,
    combined_logits,
    finite_difference_gradients,
    grad_step,
    load_checkpoint,
    loss_and_grads,
    loss_current,
    loss_replay,
    max_relative_error,
    save_checkpoint,
    total_loss,
    train_task,
)

__version__ = "0.1.0"
