"""Small tanh MLP classifier with softmax output, trained by minibatch Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, InsufficientDataError, LayoutMismatchError
from ..features import FeatureLayout, Standardizer, fit_standardizer
from ..labels import N_CLASSES


def init_params(sizes, rng: np.random.Generator) -> list:
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        params.append([rng.uniform(-lim, lim, (fan_in, fan_out)), np.zeros(fan_out)])
    return params


def forward(params, X):
    """Return class probabilities and the per-layer activations (input first)."""
    acts = [X]
    h = X
    for W, b in params[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = params[-1]
    z = h @ W + b
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True), acts


def loss_and_grads(params, X, y, weight=None):
    """Weighted mean cross-entropy and its gradient with respect to every parameter."""
    n = len(y)
    w = np.ones(n) if weight is None else np.asarray(weight, float)
    wn = w / w.sum()
    probs, acts = forward(params, X)
    loss = -float(np.sum(wn * np.log(np.maximum(probs[np.arange(n), y], 1e-300))))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta *= wn[:, None]
    grads = [None] * len(params)
    for k in range(len(params) - 1, -1, -1):
        W, _ = params[k]
        grads[k] = [acts[k].T @ delta, delta.sum(axis=0)]
        if k > 0:
            delta = (delta @ W.T) * (1.0 - acts[k] ** 2)
    return loss, grads


def _flat(params) -> np.ndarray:
    return np.concatenate([p.ravel() for layer in params for p in layer])


def gradient_check(params, X, y, n_coords: int = 20, eps: float = 1e-6, seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Checks ``n_coords`` randomly chosen parameter coordinates.
    """
    _, grads = loss_and_grads(params, X, y)
    analytic = _flat(grads)
    slots = [(k, j) for k in range(len(params)) for j in range(2)]
    sizes = [params[k][j].size for k, j in slots]
    offsets = np.cumsum([0] + sizes)
    rng = np.random.default_rng(seed)
    coords = rng.choice(offsets[-1], size=n_coords, replace=False)
    worst = 0.0
    for c in coords:
        s = int(np.searchsorted(offsets, c, side="right") - 1)
        k, j = slots[s]
        arr = params[k][j].reshape(-1)
        old = arr[c - offsets[s]]
        arr[c - offsets[s]] = old + eps
        lp, _ = loss_and_grads(params, X, y)
        arr[c - offsets[s]] = old - eps
        lm, _ = loss_and_grads(params, X, y)
        arr[c - offsets[s]] = old
        numeric = (lp - lm) / (2 * eps)
        a = analytic[c]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-12))
    return worst


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [[np.zeros_like(p) for p in layer] for layer in params]
        self.v = [[np.zeros_like(p) for p in layer] for layer in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for layer, glayer, mlayer, vlayer in zip(params, grads, self.m, self.v):
            for p, g, m, v in zip(layer, glayer, mlayer, vlayer):
                m *= self.b1
                m += (1 - self.b1) * g
                v *= self.b2
                v += (1 - self.b2) * g * g
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _fit(params, Z, y, weight, lr, epochs, batch_size, rng):
    opt = _Adam(params, lr)
    n = len(y)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_grads(params, Z[idx], y[idx], None if weight is None else weight[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"MLP loss became non-finite; reduce the learning rate (lr={lr})")
            opt.step(params, grads)
            total += loss * len(idx)
        history.append(total / n)
    return history


@dataclass
class MlpModel:
    standardizer: Standardizer
    feature_mask: np.ndarray
    layout: FeatureLayout
    modality: str
    sizes: list
    params: list
    lr: float
    history: list = field(default_factory=list)

    kind = "mlp"

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[1] != self.layout.size:
            raise LayoutMismatchError(f"expected {self.layout.size} features, got {X.shape[1]}")
        return self.standardizer.apply(X)[:, self.feature_mask]

    def predict_proba(self, X) -> np.ndarray:
        return forward(self.params, self.transform(X))[0]

    def predict_batch(self, X):
        probs = self.predict_proba(X)
        return np.argmax(probs, axis=1), probs

    def predict(self, fv):
        values = getattr(fv, "values", fv)
        labels, probs = self.predict_batch(np.asarray(values, float)[None])
        return int(labels[0]), probs[0]

    def to_dict(self) -> dict:
        return {
            "kind": "mlp", "version": "mlp-v1", "modality": self.modality, "sizes": list(self.sizes),
            "lr": self.lr, "standardizer": self.standardizer.to_dict(),
            "feature_mask": self.feature_mask.astype(int).tolist(),
            "manifest": self.layout.manifest(),
            "params": [[W.tolist(), b.tolist()] for W, b in self.params],
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        from .dataset import layout_from_manifest
        params = [[np.asarray(W, float), np.asarray(b, float)] for W, b in d["params"]]
        return cls(Standardizer.from_dict(d["standardizer"]), np.asarray(d["feature_mask"], bool),
                   layout_from_manifest(d["manifest"]), d["modality"], list(d["sizes"]), params, float(d["lr"]))


def train_mlp(X, y, layout: FeatureLayout, modality: str = "all", hidden=(64, 32), lr: float = 1e-3,
              epochs: int = 200, seed: int = 0, batch_size: int = 64) -> MlpModel:
    X = np.asarray(X, float)
    y = np.asarray(y, int)
    if len(y) == 0:
        raise InsufficientDataError("cannot train on an empty set")
    mask = layout.modality_mask(modality)
    standardizer = fit_standardizer(X)
    Z = standardizer.apply(X)[:, mask]
    rng = np.random.default_rng(seed)
    sizes = [int(mask.sum()), *hidden, N_CLASSES]
    params = init_params(sizes, rng)
    history = _fit(params, Z, y, None, lr, epochs, batch_size, rng)
    return MlpModel(standardizer, mask, layout, modality, sizes, params, lr, history)


def finetune_mlp(model: MlpModel, X_new, y_new, weight: float = 1.0, lr_scale: float = 0.1,
                 epochs: int = 50, seed: int = 0, batch_size: int = 16) -> MlpModel:
    """Continue training on the new samples only, at a reduced learning rate."""
    y_new = np.asarray(y_new, int)
    if len(y_new) == 0:
        return model
    Z = model.transform(X_new)
    params = [[W.copy(), b.copy()] for W, b in model.params]
    rng = np.random.default_rng(seed)
    lr = model.lr * lr_scale * weight
    history = _fit(params, Z, y_new, None, lr, epochs, batch_size, rng)
    return MlpModel(model.standardizer, model.feature_mask, model.layout, model.modality, list(model.sizes),
                    params, model.lr, model.history + history)
