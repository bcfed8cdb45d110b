from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .layers import grl_backward, grl_forward, stat_pool
from .model import Bam, BlockSpec, MicroNetConfig, MicroResNetBam, bam_forward, dat_loss
from .train import Dataset, TrainConfig, extract_embedding, train

__all__ = [
    "Bam", "BlockSpec", "Dataset", "MicroNetConfig", "MicroResNetBam", "TrainConfig", "bam_forward",
    "dat_loss", "extract_embedding", "grl_backward", "grl_forward", "load_checkpoint", "read_checkpoint",
    "save_checkpoint", "stat_pool", "train",
]
