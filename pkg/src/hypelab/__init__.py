"""
Desk-scale transformer fine-tuning lab: hidden-representation perturbation
(noise injected into the input of every encoder layer during training), its
ablations and the layer-wise analysis probes, driven by experiment configs.
"""

from ._version import __author__, __version__
from .cli import cli
from .config import ExperimentConfig, load_config, parse_config
from .data import Dataset, Example, TokenizerSpec, load_dataset, remap_labels, subsample, tokenize
from .model import ModelConfig, ModelState, encode, init_params
from .optim import AdamW, ScheduleSpec, lr_at
from .perturb import DropoutSpec, NoiseSpec, apply_perturbation, sample_noise, technique
from .pretrain import pretrain_synthetic
from .probe import linear_probe, probe_layers, similarity_curve, token_similarity
from .report import MetricReport, emit_report
from .rng import RngStream
from .runner import Runner, run_experiment
from .synthetic import generate_synthetic_suite
from .trainer import RunRecord, TrainRunConfig, finetune, grid_search

__all__ = [
    "cli",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "Dataset",
    "Example",
    "TokenizerSpec",
    "load_dataset",
    "remap_labels",
    "subsample",
    "tokenize",
    "ModelConfig",
    "ModelState",
    "encode",
    "init_params",
    "AdamW",
    "ScheduleSpec",
    "lr_at",
    "DropoutSpec",
    "NoiseSpec",
    "apply_perturbation",
    "sample_noise",
    "technique",
    "pretrain_synthetic",
    "linear_probe",
    "probe_layers",
    "similarity_curve",
    "token_similarity",
    "MetricReport",
    "emit_report",
    "RngStream",
    "Runner",
    "run_experiment",
    "generate_synthetic_suite",
    "RunRecord",
    "TrainRunConfig",
    "finetune",
    "grid_search",
    "__version__",
    "__author__",
]
