"""Model configuration, training facade, serialization and evaluation protocols."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, InsufficientDataError, LayoutMismatchError
from .dataset import LabeledDataset, stratified_split
from .metrics import Metrics, compute_metrics
from .mlp import MlpModel, finetune_mlp, train_mlp
from .svm import SvmModel, finetune_svm, train_svm

FINETUNE_SIZES = (4, 8, 16, 32, 64)


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "svm"
    modality: str = "all"
    C: float = 10.0
    gamma: float | None = None
    tol: float = 1e-3
    hidden: tuple = (64, 32)
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    finetune_weight: float = 10.0
    finetune_epochs: int = 50
    finetune_lr_scale: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("svm", "mlp"):
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.modality not in ("all", "haptic", "visual"):
            raise ConfigurationError(f"unknown modality {self.modality!r}")
        if self.C <= 0 or self.tol <= 0 or self.lr <= 0 or self.epochs < 0:
            raise ConfigurationError("C, tol and lr must be positive and epochs non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def train_model(data: LabeledDataset, cfg: ModelConfig | None = None):
    cfg = cfg or ModelConfig()
    cfg.validate()
    if cfg.kind == "svm":
        return train_svm(data.X, data.y, data.layout, cfg.modality, cfg.C, cfg.gamma, cfg.tol)
    return train_mlp(data.X, data.y, data.layout, cfg.modality, cfg.hidden, cfg.lr, cfg.epochs,
                     cfg.seed, cfg.batch_size)


def _check_layout(model, data: LabeledDataset):
    if tuple(model.layout.names) != tuple(data.layout.names):
        raise LayoutMismatchError("dataset feature manifest differs from the model's")


def finetune(model, new_data: LabeledDataset, weight: float | None = None, cfg: ModelConfig | None = None):
    """Adapt a trained model to new samples (see :func:`finetune_svm` / :func:`finetune_mlp`)."""
    cfg = cfg or ModelConfig(kind=model.kind)
    weight = cfg.finetune_weight if weight is None else weight
    if len(new_data) == 0:
        return model
    _check_layout(model, new_data)
    if model.kind == "svm":
        return finetune_svm(model, new_data.X, new_data.y, weight)
    return finetune_mlp(model, new_data.X, new_data.y, weight, cfg.finetune_lr_scale, cfg.finetune_epochs,
                        cfg.seed)


def evaluate(model, data: LabeledDataset) -> Metrics:
    if len(data) == 0:
        raise InsufficientDataError("cannot evaluate on an empty dataset")
    _check_layout(model, data)
    pred, _ = model.predict_batch(data.X)
    return compute_metrics(data.y, pred)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")


def load_model(path):
    d = json.loads(Path(path).read_text())
    kind = d.get("kind")
    if kind == "svm":
        return SvmModel.from_dict(d)
    if kind == "mlp":
        return MlpModel.from_dict(d)
    raise ConfigurationError(f"{path}: unknown model kind {kind!r}")


def aggregated_split(data: LabeledDataset, seed: int, train_fraction: float = 0.8):
    """Per-participant stratified split; returns global train and test indices."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for p in data.participants:
        idx = np.flatnonzero(data.participant == p)
        tr, te = stratified_split(data.y[idx], rng, train_fraction)
        train.append(idx[tr])
        test.append(idx[te])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def protocol_aggregated(data: LabeledDataset, cfg: ModelConfig | None = None, seed: int = 0) -> Metrics:
    """Train on every participant's 80% shard, test on the pooled 20% shards."""
    train, test = aggregated_split(data, seed)
    model = train_model(data.subset(train), cfg)
    return evaluate(model, data.subset(test))


def protocol_loo(data: LabeledDataset, cfg: ModelConfig | None = None) -> list:
    """Leave-one-participant-out: one Metrics per held-out participant, in participant order."""
    out = []
    for p in data.participants:
        held = data.participant == p
        model = train_model(data.subset(np.flatnonzero(~held)), cfg)
        out.append(evaluate(model, data.subset(np.flatnonzero(held))))
    return out


def nested_finetune_subsets(labels, pool, sizes, rng: np.random.Generator) -> dict:
    """Class-balanced subsets of ``pool`` for each size, each containing the smaller ones."""
    labels = np.asarray(labels)
    classes = np.unique(labels[pool])
    per_class = {c: pool[labels[pool] == c][rng.permutation(np.sum(labels[pool] == c))] for c in classes}
    out = {}
    for size in sizes:
        if size % len(classes):
            raise ConfigurationError(f"finetune size {size} is not a multiple of {len(classes)} classes")
        k = size // len(classes)
        if any(len(v) < k for v in per_class.values()):
            raise InsufficientDataError(f"not enough samples per class for finetune size {size}")
        out[size] = np.sort(np.concatenate([per_class[c][:k] for c in classes]))
    return out


def finetune_curve(data: LabeledDataset, cfg: ModelConfig | None = None, sizes=FINETUNE_SIZES,
                   seeds=(0, 1, 2, 3, 4), participants=None) -> dict:
    """Novel-participant finetuning curve.

    For every held-out participant the base model is trained on the others.
    The participant's data is split 80:20. Nested class-balanced subsets of
    the 80% part are used for finetuning, and the 20% part is the test set.
    Returns mean macro-F1 per size (0 = no finetuning) plus per-run rows.
    """
    cfg = cfg or ModelConfig()
    participants = data.participants if participants is None else np.asarray(participants)
    rows = []
    for p in participants:
        held = np.flatnonzero(data.participant == p)
        base = train_model(data.subset(np.flatnonzero(data.participant != p)), cfg)
        for seed in seeds:
            rng = np.random.default_rng([int(seed), int(p)])
            tr, te = stratified_split(data.y[held], rng)
            pool, test = held[tr], data.subset(held[te])
            rows.append({"participant": int(p), "seed": int(seed), "size": 0,
                         "macro_f1": evaluate(base, test).macro_f1})
            subsets = nested_finetune_subsets(data.y, pool, sizes, rng)
            for size in sizes:
                tuned = finetune(base, data.subset(subsets[size]), cfg=cfg)
                rows.append({"participant": int(p), "seed": int(seed), "size": int(size),
                             "macro_f1": evaluate(tuned, test).macro_f1})
    all_sizes = [0, *sizes]
    mean = {s: float(np.mean([r["macro_f1"] for r in rows if r["size"] == s])) for s in all_sizes}
    return {"sizes": all_sizes, "mean_macro_f1": [mean[s] for s in all_sizes], "rows": rows}
