"""Open-set semi-supervised learning engine: prototype-based clustering and
identification of ID/OOD unlabeled samples, plus importance-based cascading
sample pools, around a minimal FixMatch-style pseudo-labeling trainer."""

from .config import TrainConfig, load_config, save_config
from .synthdata import DatasetSpec, OpenSetDataset, generate_open_set, load_csv, save_csv
from .trainer import ablate, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "DatasetSpec",
    "OpenSetDataset",
    "generate_open_set",
    "load_csv",
    "save_csv",
    "load_config",
    "save_config",
    "train",
    "evaluate",
    "ablate",
    "__version__",
]
