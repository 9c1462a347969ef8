"""Interaction classifiers (SVM, MLP), metrics and evaluation protocols."""
from .dataset import LabeledDataset, stratified_split
from .metrics import Metrics, compute_metrics, confusion_matrix, metrics_from_confusion
from .mlp import MlpModel, gradient_check, train_mlp
from .protocols import (FINETUNE_SIZES, ModelConfig, aggregated_split, evaluate, finetune, finetune_curve,
                        load_model, protocol_aggregated, protocol_loo, save_model, train_model)
from .svm import SvmModel, smo, train_svm

__all__ = [
    "LabeledDataset", "stratified_split", "Metrics", "compute_metrics", "confusion_matrix",
    "metrics_from_confusion", "MlpModel", "gradient_check", "train_mlp", "FINETUNE_SIZES", "ModelConfig",
    "aggregated_split", "evaluate", "finetune", "finetune_curve", "load_model", "protocol_aggregated",
    "protocol_loo", "save_model", "train_model", "SvmModel", "smo", "train_svm",
]
