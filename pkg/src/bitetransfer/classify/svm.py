"""RBF support vector machine trained by SMO, one-vs-one over the four labels.

The binary solver follows the second-order working-set selection of Fan,
Chen and Lin (2005) with per-sample box constraints ``0 <= alpha_i <= C_i``,
which is what the weighted finetune needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..errors import ConvergenceError, InsufficientDataError, LayoutMismatchError
from ..features import FeatureLayout, Standardizer, fit_standardizer
from ..labels import N_CLASSES

TAU = 1e-12
PAIRS = tuple(combinations(range(N_CLASSES), 2))


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    iterations: int
    violation: float


def smo(K, y, C, tol: float = 1e-3, alpha0=None, max_iter: int = 1_000_000) -> SmoResult:
    """Solve the binary soft-margin dual for labels ``y`` in {-1, +1}.

    ``C`` is a scalar or a per-sample upper bound. ``alpha0`` must be feasible
    (within bounds and ``y @ alpha0 == 0``); it warm-starts the solver.
    Stops when the maximal KKT violation ``m - M`` drops below ``tol``.
    """
    y = np.asarray(y, float)
    n = len(y)
    Cv = np.broadcast_to(np.asarray(C, float), (n,)).copy()
    alpha = np.zeros(n) if alpha0 is None else np.asarray(alpha0, float).copy()
    diagK = np.diag(K).copy()
    # gradient of 0.5 a'Qa - e'a with Q = yy' * K
    G = y * (K @ (alpha * y)) - 1.0
    pos = y > 0
    it = 0
    gap = np.inf
    while it < max_iter:
        up = np.where(pos, alpha < Cv, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < Cv)
        f = -y * G
        if not up.any() or not low.any():
            gap = 0.0
            break
        fu = np.where(up, f, -np.inf)
        i = int(np.argmax(fu))
        m = fu[i]
        M = np.min(np.where(low, f, np.inf))
        gap = m - M
        if gap < tol:
            break
        Ki = K[i]
        b = m - f
        cand = low & (b > 0)
        a = diagK[i] + diagK - 2.0 * Ki
        a = np.where(a > 0, a, TAU)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))
        Kj = K[j]
        ai_old, aj_old = alpha[i], alpha[j]
        Ci, Cj = Cv[i], Cv[j]
        if y[i] != y[j]:
            quad = diagK[i] + diagK[j] + 2.0 * (y[i] * y[j] * Ki[j])
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai, aj = Ci, Ci - diff
            elif aj > Cj:
                aj, ai = Cj, Cj + diff
        else:
            quad = diagK[i] + diagK[j] - 2.0 * (y[i] * y[j] * Ki[j])
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > Ci:
                if ai > Ci:
                    ai, aj = Ci, total - Ci
            elif aj < 0:
                aj, ai = 0.0, total
            if total > Cj:
                if aj > Cj:
                    aj, ai = Cj, total - Cj
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += y * (y[i] * (ai - ai_old) * Ki + y[j] * (aj - aj_old) * Kj)
        it += 1
    else:
        raise ConvergenceError(f"SMO did not reach tol={tol} in {max_iter} iterations "
                               f"(max KKT violation {gap:.3g}, n={n})")
    return SmoResult(alpha, -_rho(alpha, y, G, Cv), it, float(gap))


def _rho(alpha, y, G, Cv) -> float:
    yG = y * G
    free = (alpha > 0) & (alpha < Cv)
    if free.any():
        return float(yG[free].mean())
    pos = y > 0
    at_upper = alpha >= Cv
    at_lower = alpha <= 0
    # bounds on rho from the non-free variables
    ub_mask = (pos & at_lower) | (~pos & at_upper)
    lb_mask = (pos & at_upper) | (~pos & at_lower)
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isfinite(ub) and np.isfinite(lb):
        return float((ub + lb) / 2.0)
    return float(ub if np.isfinite(ub) else lb)


@dataclass
class _TrainState:
    """Training set kept in memory so the model can be finetuned by warm start."""
    Z: np.ndarray               # standardized, modality-masked features
    y: np.ndarray
    sample_C: np.ndarray
    alphas: dict                # pair -> alpha over that pair's samples


@dataclass
class SvmModel:
    standardizer: Standardizer
    feature_mask: np.ndarray
    layout: FeatureLayout
    modality: str
    C: float
    gamma: float
    tol: float
    support: np.ndarray                     # (n_sv, F_used) standardized support vectors
    pair_index: dict = field(default_factory=dict)   # pair -> indices into support
    pair_coef: dict = field(default_factory=dict)    # pair -> alpha*y on those vectors
    pair_bias: dict = field(default_factory=dict)
    _train: _TrainState | None = field(default=None, repr=False)

    kind = "svm"

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[1] != self.layout.size:
            raise LayoutMismatchError(f"expected {self.layout.size} features, got {X.shape[1]}")
        return self.standardizer.apply(X)[:, self.feature_mask]

    def decision_pairs(self, X) -> np.ndarray:
        """Pairwise decision values, one column per class pair (positive favours the lower code)."""
        Z = self.transform(X)
        Kx = rbf_kernel(Z, self.support, self.gamma)
        out = np.empty((len(Z), len(PAIRS)))
        for p, pair in enumerate(PAIRS):
            out[:, p] = Kx[:, self.pair_index[pair]] @ self.pair_coef[pair] + self.pair_bias[pair]
        return out

    def predict_batch(self, X):
        D = self.decision_pairs(X)
        votes = np.zeros((len(D), N_CLASSES))
        margin = np.zeros((len(D), N_CLASSES))
        for p, (a, b) in enumerate(PAIRS):
            win_a = D[:, p] > 0
            votes[:, a] += win_a
            votes[:, b] += ~win_a
            margin[:, a] += D[:, p]
            margin[:, b] -= D[:, p]
        # votes decide, summed margins break ties; the margin term stays inside (-0.5, 0.5)
        scores = votes + 0.5 * np.tanh(margin / N_CLASSES) * (1 - 1e-9)
        tied = votes == votes.max(axis=1, keepdims=True)
        labels = np.argmax(np.where(tied, margin, -np.inf), axis=1)
        return labels, scores

    def predict(self, fv):
        values = getattr(fv, "values", fv)
        labels, scores = self.predict_batch(np.asarray(values, float)[None])
        return int(labels[0]), scores[0]

    def to_dict(self) -> dict:
        return {
            "kind": "svm", "version": "svm-v1", "modality": self.modality,
            "C": self.C, "gamma": self.gamma, "tol": self.tol,
            "standardizer": self.standardizer.to_dict(),
            "feature_mask": self.feature_mask.astype(int).tolist(),
            "manifest": self.layout.manifest(),
            "support": self.support.tolist(),
            "pairs": [{"classes": list(pair), "index": self.pair_index[pair].tolist(),
                       "coef": self.pair_coef[pair].tolist(), "bias": self.pair_bias[pair]}
                      for pair in PAIRS],
        }

    @classmethod
    def from_dict(cls, d) -> "SvmModel":
        from .dataset import layout_from_manifest
        pairs = {tuple(p["classes"]): p for p in d["pairs"]}
        support = np.asarray(d["support"], float).reshape(-1, int(np.sum(d["feature_mask"])))
        return cls(Standardizer.from_dict(d["standardizer"]), np.asarray(d["feature_mask"], bool),
                   layout_from_manifest(d["manifest"]), d["modality"], float(d["C"]), float(d["gamma"]),
                   float(d["tol"]), support,
                   {k: np.asarray(v["index"], int) for k, v in pairs.items()},
                   {k: np.asarray(v["coef"], float) for k, v in pairs.items()},
                   {k: float(v["bias"]) for k, v in pairs.items()})


def _check_counts(y):
    counts = np.bincount(y, minlength=N_CLASSES)
    if np.any(counts < 2):
        raise InsufficientDataError(f"every class needs at least 2 samples, got counts {counts.tolist()}")


def _solve_pairs(Z, y, sample_C, gamma, tol, max_iter=1_000_000):
    alphas, coefs, biases, index = {}, {}, {}, {}
    for pair in PAIRS:
        a, b = pair
        idx = np.flatnonzero((y == a) | (y == b))
        yy = np.where(y[idx] == a, 1.0, -1.0)
        K = rbf_kernel(Z[idx], Z[idx], gamma)
        res = smo(K, yy, sample_C[idx], tol, max_iter=max_iter)
        alphas[pair] = res.alpha
        sv = res.alpha > 0
        index[pair] = idx[sv]
        coefs[pair] = res.alpha[sv] * yy[sv]
        biases[pair] = res.bias
    return alphas, index, coefs, biases


def _assemble(standardizer, mask, layout, modality, C, gamma, tol, state: _TrainState, index, coefs, biases):
    used = np.unique(np.concatenate([index[p] for p in PAIRS]))
    remap = {int(g): k for k, g in enumerate(used)}
    pair_index = {p: np.array([remap[int(g)] for g in index[p]], int) for p in PAIRS}
    return SvmModel(standardizer, mask, layout, modality, C, gamma, tol, state.Z[used].copy(),
                    pair_index, coefs, biases, state)


def train_svm(X, y, layout: FeatureLayout, modality: str = "all", C: float = 10.0,
              gamma: float | None = None, tol: float = 1e-3, sample_weight=None,
              max_iter: int = 1_000_000) -> SvmModel:
    """Fit the standardizer, mask features by modality and train the 6 pairwise SVMs.

    ``gamma`` defaults to 1 / (number of features used).
    """
    X = np.asarray(X, float)
    y = np.asarray(y, int)
    _check_counts(y)
    mask = layout.modality_mask(modality)
    standardizer = fit_standardizer(X)
    Z = standardizer.apply(X)[:, mask]
    gamma = 1.0 / mask.sum() if gamma is None else float(gamma)
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
    sample_C = C * w
    alphas, index, coefs, biases = _solve_pairs(Z, y, sample_C, gamma, tol, max_iter=max_iter)
    state = _TrainState(Z, y, sample_C, alphas)
    return _assemble(standardizer, mask, layout, modality, C, gamma, tol, state, index, coefs, biases)


def finetune_svm(model: SvmModel, X_new, y_new, weight: float = 1.0, max_iter: int = 1_000_000) -> SvmModel:
    """Retrain on the original training set plus new samples weighted by ``weight``.

    The original standardizer is kept and the solver is warm-started from the
    previous dual solution (new samples start at alpha = 0, which is feasible).
    """
    X_new = np.atleast_2d(np.asarray(X_new, float))
    y_new = np.asarray(y_new, int)
    if len(y_new) == 0:
        return model
    if model._train is None:
        raise InsufficientDataError("this SVM was loaded from disk and has no training set to finetune on")
    if X_new.shape[1] != model.layout.size:
        raise LayoutMismatchError(f"new data has {X_new.shape[1]} features, model expects {model.layout.size}")
    st = model._train
    Zn = model.transform(X_new)
    # new samples are appended, so each pair block stays old-then-new and the warm start lines up
    Z = np.vstack([st.Z, Zn])
    y = np.concatenate([st.y, y_new])
    sample_C = np.concatenate([st.sample_C, np.full(len(y_new), model.C * weight)])
    alphas, coefs, biases, index = {}, {}, {}, {}
    for pair in PAIRS:
        a, b = pair
        old = np.flatnonzero((st.y == a) | (st.y == b))
        new = len(st.y) + np.flatnonzero((y_new == a) | (y_new == b))
        idx = np.concatenate([old, new])
        yy = np.where(y[idx] == a, 1.0, -1.0)
        K = rbf_kernel(Z[idx], Z[idx], model.gamma)
        a0 = np.concatenate([st.alphas[pair], np.zeros(len(new))])
        res = smo(K, yy, sample_C[idx], model.tol, a0, max_iter)
        alphas[pair] = res.alpha
        sv = res.alpha > 0
        index[pair] = idx[sv]
        coefs[pair] = res.alpha[sv] * yy[sv]
        biases[pair] = res.bias
    state = _TrainState(Z, y, sample_C, alphas)
    return _assemble(model.standardizer, model.feature_mask, model.layout, model.modality, model.C,
                     model.gamma, model.tol, state, index, coefs, biases)

