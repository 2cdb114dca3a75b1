"""Cascaded early-exit networks trained block by block.

Blocks learn sequentially: each one trains only on the samples its
predecessors failed to learn, gets a classifier exit plus a commitment head
deciding whether to trust that exit, and freezes before the next block
starts. Inference leaves at the first confident, committed exit and pays
only for the layers it visited.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, load_idx, save_idx, split, synth_blobs, synth_image_blobs
from .errors import ConfigError, ContractError, DataError, ShapeError
from .exits import (
    ExitDecision,
    choose_exit,
    confidence,
    decide_and_infer,
    evaluate_policy,
    threshold_sweep,
)
from .model import QuickNet, cnn_arch, load_arch, mlp_arch, validate_arch
from .rng import RandomStream
from .tensor import Parameter, Tensor, backward
from .training import (
    TrainConfig,
    TrainingPool,
    identify_learned,
    pool_from_dataset,
    shrink_pool,
    train_block,
    train_commitment,
    train_end2end,
    train_quicknet,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DataError", "Dataset", "ExitDecision",
    "Parameter", "QuickNet", "RandomStream", "ShapeError", "Tensor",
    "TrainConfig", "TrainingPool", "backward", "choose_exit", "cnn_arch",
    "confidence", "decide_and_infer", "evaluate_policy", "identify_learned",
    "load_arch", "load_checkpoint", "load_idx", "mlp_arch",
    "pool_from_dataset", "save_checkpoint", "save_idx", "shrink_pool",
    "split", "synth_blobs", "synth_image_blobs", "threshold_sweep",
    "train_block", "train_commitment", "train_end2end", "train_quicknet",
    "validate_arch",
]
