"""Weakly supervised adaptive graph convolutional network for video anomaly detection."""

from .data import SynthConfig, load_manifest, read_tensor, synth_generate, uniform_sample, write_tensor
from .graph import GraphConfig, build_feature_adjacency, build_temporal_adjacency, combine
from .loss import batch_loss, compute_k, kmax_bce, kmax_bce_logits
from .metrics import dataset_eval, expand_scores, export_curves, roc_auc
from .model import ModelConfig, ModelParams, forward, init_params, score_video
from .optim import AdamState, adam_step
from .trainer import TrainConfig, run_ablation, sweep_sampling_length, train

__version__ = "0.1.0"
