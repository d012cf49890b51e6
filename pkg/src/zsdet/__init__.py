"""Zero-shot detection and instance segmentation with embedding-aware heads.

Classifier, box regressor and mask head all project proposal features into
a semantic embedding space, so the same learned matrices score categories
that had no training annotations.
"""

from .embed import BackgroundMode, CategorySplit, EmbeddingTable, load_embeddings, load_split
from .heads import HeadParams, TransferVariant, init_params
from .infer import InferConfig, TaskMode, predict
from .losses import LossKind
from .metrics import EvalReport, evaluate, harmonic_mean
from .synthgen import SynthConfig, generate
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_heads

__version__ = "0.1.0"
