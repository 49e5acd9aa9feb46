"""Cross-modal deepfake detection on precomputed embeddings.

Two stages: per-modality projection into a shared latent space with a
contrastive alignment loss, then transformer refinement of the three
modality tokens, fusion, and a sigmoid classifier. Ships with a
synthetic data generator, an EER/AUC/ACC scoring suite, an ablation
harness, a FastAPI service, and a CLI.
"""

__version__ = "0.1.0"

from .dataio import (  # noqa: F401
    EmbeddingBundle,
    ModalityKind,
    Sample,
    SynthConfig,
    batch_iter,
    read_bundle,
    split,
    synth_generate,
    write_bundle,
)
from .metrics import ScoreSet, accuracy, auc, eer, roc_points  # noqa: F401
from .tensor import Tensor, attention, backward, softmax_rows  # noqa: F401
from .trainer import TrainConfig, TrainedModel, load_checkpoint, save_checkpoint, train  # noqa: F401
