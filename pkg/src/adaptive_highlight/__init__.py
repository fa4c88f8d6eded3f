"""User-adaptive video highlight detection with temporal-adaptive instance normalization."""

from .autograd import Value
from .data import Sample, generate_synthetic, load_dataset, restrict_history, save_dataset, union_ground_truth
from .evaluation import EvalReport, average_precision, evaluate
from .networks import VARIANTS, HighlightDetector, ModelConfig
from .training import TrainConfig, highlight_loss, train

__all__ = [
    "Value", "Sample", "generate_synthetic", "load_dataset", "save_dataset", "restrict_history",
    "union_ground_truth", "EvalReport", "average_precision", "evaluate", "VARIANTS",
    "HighlightDetector", "ModelConfig", "TrainConfig", "highlight_loss", "train",
]

__version__ = "0.1.0"
