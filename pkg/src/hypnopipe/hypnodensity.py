"""Hypnodensity matrices, hypnogram collapse, and consensus/agreement metrics.

A hypnodensity is a T x 5 row-stochastic matrix over (W, N1, N2, N3, REM) at
a fixed segment resolution.  Tie-breaking everywhere is the fixed stage order
with the earliest stage winning.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import (
    IncompatibleResolution,
    ShapeMismatch,
    ZeroTotalWeight,
)
from .signal_io import STAGES, UNSCORED, HypnogramLabels

STAGE_INDEX = {s: i for i, s in enumerate(STAGES)}


@dataclass
class Hypnodensity:
    probs: np.ndarray          # (T, 5), rows sum to 1
    resolution_s: int
    recording_id: str = ""

    def validate(self) -> None:
        p = self.probs
        if p.ndim != 2 or p.shape[1] != 5:
            raise ShapeMismatch(f"expected (T,5), got {p.shape}")
        if np.any(p < -1e-9) or np.any(p > 1 + 1e-9):
            raise ValueError("probabilities outside [0,1]")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("rows must sum to 1")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_start_s"] + list(STAGES))
        for i, row in enumerate(self.probs):
            w.writerow([i * self.resolution_s] + [f"{v:.9g}" for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, recording_id: str = "") -> "Hypnodensity":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[:6] != ["t_start_s"] + list(STAGES):
            raise ValueError("bad hypnodensity CSV header")
        probs = np.array([[float(v) for v in r[1:6]] for r in body])
        if len(body) > 1:
            res = int(round(float(body[1][0]) - float(body[0][0])))
        else:
            res = 30
        return cls(probs=probs, resolution_s=res, recording_id=recording_id)


@dataclass
class EnsembleHypnodensity:
    mean: Hypnodensity
    variance: np.ndarray       # (T, 5), across-model population variance
    n_models: int
    relative_variance: np.ndarray | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_start_s"] + list(STAGES) + [f"var{s}" for s in STAGES])
        for i, (row, var) in enumerate(zip(self.mean.probs, self.variance)):
            w.writerow([i * self.mean.resolution_s]
                       + [f"{v:.9g}" for v in row] + [f"{v:.9g}" for v in var])
        return buf.getvalue()


def _argmax_stage(sums: np.ndarray) -> str:
    # np.argmax returns the first maximum: earliest stage wins ties
    return STAGES[int(np.argmax(sums))]


def to_hypnogram(hd: Hypnodensity, epoch_s: int = 30) -> HypnogramLabels:
    """Argmax of summed segment probabilities per epoch."""
    if epoch_s % hd.resolution_s != 0:
        raise IncompatibleResolution(f"{epoch_s} not a multiple of {hd.resolution_s}")
    block = epoch_s // hd.resolution_s
    n_epochs = len(hd.probs) // block
    if n_epochs == 0:
        raise IncompatibleResolution("hypnodensity shorter than one epoch")
    stages = []
    for e in range(n_epochs):
        sums = hd.probs[e * block:(e + 1) * block].sum(axis=0)
        stages.append(_argmax_stage(sums))
    return HypnogramLabels(stages=stages, epoch_s=epoch_s)


def aggregate_resolution(hd: Hypnodensity, target_s: int) -> Hypnodensity:
    """Block-mean rows down to a coarser resolution, then renormalize."""
    if target_s % hd.resolution_s != 0:
        raise IncompatibleResolution(f"{target_s} not a multiple of {hd.resolution_s}")
    block = target_s // hd.resolution_s
    n_out = len(hd.probs) // block
    if n_out == 0:
        raise IncompatibleResolution("hypnodensity shorter than one target block")
    trimmed = hd.probs[:n_out * block]
    means = trimmed.reshape(n_out, block, 5).mean(axis=1)
    means = means / means.sum(axis=1, keepdims=True)
    return Hypnodensity(probs=means, resolution_s=target_s,
                        recording_id=hd.recording_id)


def _scored_mask(a: list[str], b: list[str]) -> np.ndarray:
    return np.array([x != UNSCORED and y != UNSCORED for x, y in zip(a, b)])


def cohen_kappa(a: list[str], b: list[str]) -> float:
    """Chance-corrected agreement; UNSCORED epochs are excluded."""
    if len(a) != len(b) or len(a) < 1:
        raise ShapeMismatch("label sequences must be equal length >= 1")
    mask = _scored_mask(a, b)
    aa = [x for x, m in zip(a, mask) if m]
    bb = [x for x, m in zip(b, mask) if m]
    n = len(aa)
    if n == 0:
        raise ShapeMismatch("no jointly scored epochs")
    p_o = sum(x == y for x, y in zip(aa, bb)) / n
    p_e = sum((aa.count(s) / n) * (bb.count(s) / n) for s in STAGES)
    if p_e >= 1.0 - 1e-12:
        return 1.0 if p_o >= 1.0 - 1e-12 else 0.0
    return 1.0 - (1.0 - p_o) / (1.0 - p_e)


def _majority_vote(stacks: list[list[str]]) -> list[str]:
    """Unweighted per-epoch majority over scorers; stage-order tie-break."""
    n_epochs = len(stacks[0])
    out = []
    for e in range(n_epochs):
        counts = np.zeros(5)
        for sc in stacks:
            if sc[e] != UNSCORED:
                counts[STAGE_INDEX[sc[e]]] += 1
        out.append(_argmax_stage(counts))
    return out


def consensus_hypnogram(scorers: list[HypnogramLabels]) -> tuple[HypnogramLabels, list[float]]:
    """Kappa-weighted majority vote; returns (hypnogram, per-scorer kappas).

    Each scorer's kappa is computed leave-one-out against the unweighted
    majority of the remaining scorers.  Negative kappas are clamped to zero;
    if every kappa is zero the unweighted majority is used.
    """
    if len(scorers) < 2:
        raise ShapeMismatch("need at least 2 scorers")
    epoch_s = scorers[0].epoch_s
    n = len(scorers[0].stages)
    for sc in scorers:
        if sc.epoch_s != epoch_s or len(sc.stages) != n:
            raise ShapeMismatch("scorers must align in epoch_s and length")
    stacks = [sc.stages for sc in scorers]
    kappas = []
    for i in range(len(stacks)):
        others = [s for j, s in enumerate(stacks) if j != i]
        ref = _majority_vote(others)
        kappas.append(max(cohen_kappa(stacks[i], ref), 0.0))
    if sum(kappas) == 0.0:
        return HypnogramLabels(_majority_vote(stacks), epoch_s), kappas
    out = []
    total = sum(kappas)
    for e in range(n):
        weights = np.zeros(5)
        for sc, k in zip(stacks, kappas):
            if sc[e] != UNSCORED:
                weights[STAGE_INDEX[sc[e]]] += k
        out.append(_argmax_stage(weights / total))
    return HypnogramLabels(out, epoch_s), kappas


def epoch_weight(vote_fractions: np.ndarray) -> float:
    """Consensus weight: top vote fraction minus the runner-up fraction."""
    v = np.sort(np.asarray(vote_fractions, dtype=float))[::-1]
    return float(v[0] - v[1])


def scorer_vote_fractions(scorers: list[HypnogramLabels]) -> np.ndarray:
    """(T, 5) matrix of per-epoch scorer vote fractions (UNSCORED excluded)."""
    n = len(scorers[0].stages)
    out = np.zeros((n, 5))
    for e in range(n):
        votes = np.zeros(5)
        for sc in scorers:
            if sc.stages[e] != UNSCORED:
                votes[STAGE_INDEX[sc.stages[e]]] += 1
        total = votes.sum()
        out[e] = votes / total if total > 0 else votes
    return out


def weighted_accuracy(model: HypnogramLabels, scorers: list[HypnogramLabels]) -> float:
    """Accuracy against scorer consensus, weighted by per-epoch consensus."""
    fractions = scorer_vote_fractions(scorers)
    if len(model.stages) != len(fractions):
        raise ShapeMismatch("model and scorers must align")
    total_w = 0.0
    agree_w = 0.0
    for e, row in enumerate(fractions):
        w = epoch_weight(row)
        consensus = _argmax_stage(row)
        total_w += w
        if model.stages[e] == consensus:
            agree_w += w
    if total_w == 0.0:
        raise ZeroTotalWeight("all epochs are perfectly split")
    return agree_w / total_w


def confusion(model: HypnogramLabels, reference: HypnogramLabels) -> dict:
    """5x5 confusion fractions (model rows, reference columns), accuracy, kappa."""
    if len(model.stages) != len(reference.stages):
        raise ShapeMismatch("sequences must align")
    mask = _scored_mask(model.stages, reference.stages)
    m = np.zeros((5, 5))
    for x, y, keep in zip(model.stages, reference.stages, mask):
        if keep:
            m[STAGE_INDEX[x], STAGE_INDEX[y]] += 1
    total = m.sum()
    acc = float(np.trace(m) / total) if total else 0.0
    return {
        "matrix": m / total if total else m,
        "accuracy": acc,
        "kappa": cohen_kappa(model.stages, reference.stages),
    }


def ensemble_hypnodensity(models: list[Hypnodensity],
                          labels: HypnogramLabels | None = None
                          ) -> EnsembleHypnodensity:
    """Elementwise mean and population variance across per-model matrices.

    When reference labels are given, the variance is additionally reported
    relative to the mean variance of correct wake predictions (stored on the
    returned object as ``relative_variance``).
    """
    shapes = {m.probs.shape for m in models}
    res = {m.resolution_s for m in models}
    if len(shapes) != 1 or len(res) != 1:
        raise ShapeMismatch("all models must share shape and resolution")
    stack = np.stack([m.probs for m in models])
    mean = stack.mean(axis=0)
    var = stack.var(axis=0)  # population variance
    ens = EnsembleHypnodensity(
        mean=Hypnodensity(probs=mean, resolution_s=models[0].resolution_s,
                          recording_id=models[0].recording_id),
        variance=var,
        n_models=len(models),
    )
    if labels is not None:
        hyp = to_hypnogram(ens.mean, epoch_s=labels.epoch_s)
        wake_vars = [var[i].mean() for i, (p, t) in
                     enumerate(zip(hyp.stages, labels.stages))
                     if p == t == "W"]
        base = float(np.mean(wake_vars)) if wake_vars else 1.0
        ens.relative_variance = var / base if base > 0 else var
    return ens
