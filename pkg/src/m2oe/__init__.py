"""Multimodal peptide property model: sequence and graph encoders fused by a
sparse cross mixture-of-experts block, on a small numpy autodiff engine."""

from .config import ModelConfig, load_config
from .data import Dataset, PeptideRecord, load_csv_dataset, split_dataset, synth_dataset
from .model import M2oE, Metrics, compute_metrics, evaluate, fit
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "load_config", "Dataset", "PeptideRecord", "load_csv_dataset",
    "split_dataset", "synth_dataset", "M2oE", "Metrics", "compute_metrics", "evaluate", "fit",
    "load_checkpoint", "save_checkpoint",
]
