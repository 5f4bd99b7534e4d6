"""Feature selection, Gaussian-process narcolepsy classifier, HLA gating, ROC.

The classifier is a binary GP with a squared-exponential kernel and constant
mean, fit by Laplace approximation with a probit likelihood; predictive
scores are mapped to [-1, 1].  Recursive feature elimination ranks features
by the absolute weights of an L2-regularized linear classifier refit after
each removal, with per-fold selection frequencies thresholded at 0.40.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import ndtr, ndtri

from .errors import (
    CholeskyFailure,
    DimensionMismatch,
    SingleClass,
    TooFewSamples,
)

RFE_CUTOFF = 0.40
RFE_TARGET_COUNT = 38
THRESHOLD_NO_HLA = -0.03
THRESHOLD_WITH_HLA = -0.53

LENGTH_SCALE_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)
SIGNAL_STD_GRID = (0.5, 1.0, 2.0)
NOISE_GRID = (1e-4, 1e-2, 1e-1)
MAX_LAPLACE_ITERS = 100
RIDGE_LAMBDA = 1e-2


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray      # constant columns are dropped

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        keep = std > 1e-12
        std = np.where(keep, std, 1.0)
        return cls(mean=mean, std=std, keep=keep)

    def apply(self, X: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(X) - self.mean) / self.std
        return Z[:, self.keep]


@dataclass
class SelectionResult:
    frequency: np.ndarray      # per-feature selection frequency in [0,1]
    selected: np.ndarray       # indices with frequency >= cutoff
    target_count: int
    cutoff: float = RFE_CUTOFF


def _ridge_weights(X: np.ndarray, y: np.ndarray, lam: float = RIDGE_LAMBDA):
    d = X.shape[1]
    A = X.T @ X + lam * np.eye(d)
    return np.linalg.solve(A, X.T @ y)


def rfe(X: np.ndarray, y: np.ndarray, folds: int = 5, seed: int = 0,
        target_count: int = RFE_TARGET_COUNT,
        cutoff: float = RFE_CUTOFF) -> SelectionResult:
    """Recursive feature elimination under cross-validation.

    Per fold, the lowest |weight| feature of a refit ridge classifier is
    removed until ``target_count`` remain; a feature's frequency is the
    fraction of folds that kept it.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < 20:
        raise TooFewSamples(f"need >= 20 samples, got {n}")
    if len(np.unique(y)) < 2:
        raise SingleClass("both classes required")
    target = min(target_count, d)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold_ids = np.array_split(order, folds)
    counts = np.zeros(d)
    for held in fold_ids:
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        if len(np.unique(y[mask])) < 2:
            continue
        std = Standardizer.fit(X[mask])
        Z = std.apply(X[mask])
        active = np.flatnonzero(std.keep)
        while len(active) > target:
            w = _ridge_weights(Z, y[mask])
            drop = int(np.argmin(np.abs(w)))
            active = np.delete(active, drop)
            Z = np.delete(Z, drop, axis=1)
        counts[active] += 1
    freq = counts / folds
    selected = np.flatnonzero(freq >= cutoff)
    return SelectionResult(frequency=freq, selected=selected,
                           target_count=target, cutoff=cutoff)


@dataclass
class GPModel:
    X: np.ndarray              # standardized training inputs
    y: np.ndarray              # labels in {-1, +1}
    length_scale: float
    signal_std: float
    noise: float               # jitter variance on the kernel diagonal
    mean_const: float          # constant latent mean
    standardizer: Standardizer
    f_hat: np.ndarray = field(default=None, repr=False)   # latent mode
    grad_ll: np.ndarray = field(default=None, repr=False)  # d log p(y|f) at mode
    W_sqrt: np.ndarray = field(default=None, repr=False)
    L: np.ndarray = field(default=None, repr=False)        # chol(I + W^1/2 K W^1/2)
    log_marginal: float = 0.0

    def save(self, directory: str, name: str = "gp") -> str:
        os.makedirs(directory, exist_ok=True)
        mats = {"X": self.X, "y": self.y, "f_hat": self.f_hat,
                "grad_ll": self.grad_ll, "W_sqrt": self.W_sqrt, "L": self.L,
                "std_mean": self.standardizer.mean,
                "std_std": self.standardizer.std,
                "std_keep": self.standardizer.keep.astype(float)}
        manifest = {
            "length_scale": self.length_scale, "signal_std": self.signal_std,
            "noise": self.noise, "mean_const": self.mean_const,
            "log_marginal": self.log_marginal, "tensors": {},
        }
        for key, arr in mats.items():
            blob = f"{name}.{key}.f32le"
            np.asarray(arr, dtype="<f4").tofile(os.path.join(directory, blob))
            manifest["tensors"][key] = {"shape": list(np.shape(arr)), "blob": blob}
        path = os.path.join(directory, f"{name}.gp.json")
        with open(path, "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
        return path

    @classmethod
    def load(cls, path: str) -> "GPModel":
        with open(path) as f:
            manifest = json.load(f)
        base = os.path.dirname(path)
        mats = {}
        for key, info in manifest["tensors"].items():
            arr = np.fromfile(os.path.join(base, info["blob"]), dtype="<f4")
            mats[key] = arr.astype(np.float64).reshape(info["shape"])
        std = Standardizer(mean=mats["std_mean"], std=mats["std_std"],
                           keep=mats["std_keep"] > 0.5)
        return cls(X=mats["X"], y=mats["y"],
                   length_scale=manifest["length_scale"],
                   signal_std=manifest["signal_std"], noise=manifest["noise"],
                   mean_const=manifest["mean_const"],
                   standardizer=std, f_hat=mats["f_hat"],
                   grad_ll=mats["grad_ll"], W_sqrt=mats["W_sqrt"], L=mats["L"],
                   log_marginal=manifest["log_marginal"])


def _kernel(Xa, Xb, ell, sf):
    d2 = (np.sum(Xa ** 2, axis=1)[:, None] + np.sum(Xb ** 2, axis=1)[None, :]
          - 2.0 * Xa @ Xb.T)
    return sf ** 2 * np.exp(-np.maximum(d2, 0.0) / (2.0 * ell ** 2))


def _probit_ll(y, f):
    z = y * f
    return np.log(np.clip(ndtr(z), 1e-300, None)).sum()


def _probit_derivs(y, f):
    z = y * f
    phi = np.exp(-0.5 * z ** 2) / np.sqrt(2 * np.pi)
    Phi = np.clip(ndtr(z), 1e-300, None)
    r = phi / Phi
    grad = y * r
    W = r ** 2 + z * r          # -d2 log lik / df2, positive
    return grad, np.maximum(W, 1e-12)


def _laplace_mode(K, y, mean):
    """Newton iteration for the latent posterior mode (RW alg. 3.1 with a
    nonzero constant mean); returns mode, grad, W_sqrt, chol, log marginal."""
    n = len(y)
    f = np.full(n, mean, dtype=float)
    prev_obj = -np.inf
    for _ in range(MAX_LAPLACE_ITERS):
        grad, W = _probit_derivs(y, f)
        sw = np.sqrt(W)
        B = np.eye(n) + sw[:, None] * K * sw[None, :]
        try:
            Lc = cholesky(B, lower=True)
        except np.linalg.LinAlgError as e:
            raise CholeskyFailure(str(e)) from e
        b = W * (f - mean) + grad
        a = b - sw * cho_solve((Lc, True), sw * (K @ b))
        f = mean + K @ a
        obj = _probit_ll(y, f) - 0.5 * float(a @ (f - mean))
        if abs(obj - prev_obj) < 1e-9:
            break
        prev_obj = obj
    grad, W = _probit_derivs(y, f)
    sw = np.sqrt(W)
    B = np.eye(n) + sw[:, None] * K * sw[None, :]
    Lc = cholesky(B, lower=True)
    a = None
    lml = (_probit_ll(y, f)
           - 0.5 * float((f - mean) @ np.linalg.solve(K, f - mean))
           - float(np.log(np.diag(Lc)).sum()))
    return f, grad, sw, Lc, lml


def _median_heuristic(X):
    n = len(X)
    if n > 200:
        X = X[:: max(1, n // 200)]
    d2 = (np.sum(X ** 2, axis=1)[:, None] + np.sum(X ** 2, axis=1)[None, :]
          - 2.0 * X @ X.T)
    vals = np.sqrt(np.maximum(d2[np.triu_indices(len(X), k=1)], 0.0))
    med = float(np.median(vals)) if len(vals) else 1.0
    return med if med > 0 else 1.0


def gp_fit(X: np.ndarray, y: np.ndarray, seed: int = 0) -> GPModel:
    """Fit the binary GP by Laplace approximation with a log-grid search
    over (length scale, signal std, jitter) maximizing the approximate
    marginal likelihood.  Labels must be in {-1, +1}."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DimensionMismatch("X must be (N, d) with d >= 1")
    if len(X) < 10:
        raise TooFewSamples("need N >= 10")
    if not set(np.unique(y)) <= {-1.0, 1.0} or len(np.unique(y)) < 2:
        raise SingleClass("labels must contain both -1 and +1")
    std = Standardizer.fit(X)
    Z = std.apply(X)
    base_ell = _median_heuristic(Z)
    frac_pos = float(np.clip((y > 0).mean(), 1e-3, 1 - 1e-3))
    mean_const = float(ndtri(frac_pos))
    best = None
    for mult in LENGTH_SCALE_GRID:
        for sf in SIGNAL_STD_GRID:
            for noise in NOISE_GRID:
                ell = mult * base_ell
                K = _kernel(Z, Z, ell, sf) + noise * np.eye(len(Z))
                try:
                    f, grad, sw, Lc, lml = _laplace_mode(K, y, mean_const)
                except CholeskyFailure:
                    continue
                if best is None or lml > best[0] + 1e-12:
                    best = (lml, ell, sf, noise, f, grad, sw, Lc)
    if best is None:
        raise CholeskyFailure("no hyperparameter setting produced a PD kernel")
    lml, ell, sf, noise, f, grad, sw, Lc = best
    return GPModel(X=Z, y=y, length_scale=ell, signal_std=sf, noise=noise,
                   mean_const=mean_const, standardizer=std, f_hat=f,
                   grad_ll=grad, W_sqrt=sw, L=Lc, log_marginal=lml)


def gp_predict(model: GPModel, x: np.ndarray):
    """(score in [-1, 1], latent predictive variance) for one or more points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != len(model.standardizer.mean):
        raise DimensionMismatch(
            f"expected {len(model.standardizer.mean)} features, got {x.shape[1]}")
    Zs = model.standardizer.apply(x)
    Ks = _kernel(Zs, model.X, model.length_scale, model.signal_std)
    mu = model.mean_const + Ks @ model.grad_ll
    v = solve_triangular(model.L, (model.W_sqrt[:, None] * Ks.T), lower=True)
    kss = model.signal_std ** 2 + model.noise
    var = np.maximum(kss - np.sum(v ** 2, axis=0), 1e-12)
    score = 2.0 * ndtr(mu / np.sqrt(1.0 + var)) - 1.0
    if score.shape[0] == 1:
        return float(score[0]), float(var[0])
    return score, var


@dataclass
class DiagnosisReport:
    score: float
    variance: float
    label: bool
    threshold: float
    hla_used: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "score": self.score, "variance": self.variance,
            "label": bool(self.label), "threshold": self.threshold,
            "hla_used": self.hla_used,
        }, indent=1)


def ensemble_diagnose(scores) -> DiagnosisReport:
    """Mean/variance of per-sleep-model GP scores, thresholded at -0.03."""
    s = np.asarray(list(scores), dtype=float)
    if s.size < 1:
        raise TooFewSamples("need at least one score")
    mean = float(s.mean())
    var = float(s.var())
    return DiagnosisReport(score=mean, variance=var,
                           label=mean >= THRESHOLD_NO_HLA,
                           threshold=THRESHOLD_NO_HLA, hla_used=False)


def apply_hla(report: DiagnosisReport, hla_positive: bool) -> DiagnosisReport:
    """HLA gate: negatives are absorbing; positives use the -0.53 threshold."""
    if not hla_positive:
        label = False
    else:
        label = report.score >= THRESHOLD_WITH_HLA
    return DiagnosisReport(score=report.score, variance=report.variance,
                           label=label, threshold=THRESHOLD_WITH_HLA,
                           hla_used=True)


def _wilson(k: int, n: int, z: float = 1.959963984540054):
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1 + z ** 2 / n
    center = (p + z ** 2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z ** 2 / (4 * n ** 2)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def evaluate(scores, truth, threshold: float = THRESHOLD_NO_HLA) -> dict:
    """ROC sweep plus sensitivity/specificity (with Wilson 95% CIs) at the
    chosen threshold.  ``truth`` holds booleans (True = positive class)."""
    s = np.asarray(scores, dtype=float)
    t = np.asarray(truth, dtype=bool)
    if t.all() or not t.any():
        raise SingleClass("both classes required")
    n_pos = int(t.sum())
    n_neg = int((~t).sum())
    cuts = np.concatenate([[np.inf], np.sort(np.unique(s))[::-1], [-np.inf]])
    points = []
    for c in cuts:
        pred = s >= c
        tp = int((pred & t).sum())
        fp = int((pred & ~t).sum())
        points.append((fp / n_neg, tp / n_pos))  # (1-specificity, sensitivity)
    points = np.array(points)
    auc = float(np.trapezoid(points[:, 1], points[:, 0]))
    pred = s >= threshold
    tp = int((pred & t).sum())
    tn = int((~pred & ~t).sum())
    sens = tp / n_pos
    spec = tn / n_neg
    return {
        "sensitivity": sens, "specificity": spec,
        "sensitivity_ci": _wilson(tp, n_pos),
        "specificity_ci": _wilson(tn, n_neg),
        "roc": points, "auc": auc, "threshold": threshold,
    }
