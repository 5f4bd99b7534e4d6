"""The 481-dimensional narcolepsy feature vector.

Layout: 31 stage combinations x 15 descriptors (465), 7 sleep sequencing
scalars, and 9 stage-transition peak features.  Names are stable across runs
and serialization round-trips via CSV or JSON.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .hypnodensity import Hypnodensity
from .signal_io import STAGES, UNSCORED, HypnogramLabels

# 31 nonempty stage subsets: sizes ascending, lexicographic in stage order
STAGE_COMBOS: tuple[tuple[str, ...], ...] = tuple(
    combo
    for k in range(1, 6)
    for combo in itertools.combinations(STAGES, k)
)

DESCRIPTOR_NAMES = (
    "mean", "max", "std", "mean_abs_diff", "max_abs_diff", "entropy",
    "t5w", "t10w", "t30w", "t50w", "t70w", "t90w",
    "total", "frac_above_half_max", "upcross_per_h",
)

CUMSUM_PERCENTS = (5, 10, 30, 50, 70, 90)

SEQUENCING_NAMES = (
    "rem_latency_min", "sleep_latency_min", "soremp_count",
    "soremp_total_min", "nrem_frag_count", "wn1_long_bout_count",
    "wn1_short_cum_min",
)

# Merged peak types: W and N1 fuse; 9 transition types retained
MERGED_TYPES = ("WN1", "N2", "N3", "REM")
TRANSITION_TYPES = (
    ("WN1", "N2"), ("WN1", "REM"),
    ("N2", "WN1"), ("N2", "N3"), ("N2", "REM"),
    ("N3", "WN1"), ("N3", "N2"),
    ("REM", "WN1"), ("REM", "N2"),
)
PEAK_MASS_FLOOR = 10.0       # in 30 s epoch-units of probability mass

SOREMP_WAKE_MIN = 2.5        # minutes of W/N1 required before REM
FRAG_NREM_S = 90             # sustained N2/N3 run
FRAG_BREAK_S = 60            # breaking N1/W run
LONG_BOUT_MIN = 3.0          # W/N1 long bout
SHORT_WAKE_MIN = 15.0        # W/N1 bouts below this accumulate
SOREM_INDICATOR_MIN = 15.0   # REM latency for nightly SOREMP presence


@dataclass
class FeatureVector:
    names: list[str]
    values: np.ndarray
    recording_id: str = ""
    hla_positive: bool | None = None

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.values)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.names)
        w.writerow([f"{v:.12g}" for v in self.values])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "recording_id": self.recording_id,
            "hla_positive": self.hla_positive,
            "features": self.as_dict(),
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FeatureVector":
        d = json.loads(text)
        names = list(d["features"].keys())
        return cls(names=names,
                   values=np.array([d["features"][n] for n in names]),
                   recording_id=d.get("recording_id", ""),
                   hla_positive=d.get("hla_positive"))


def feature_names() -> list[str]:
    names = []
    for combo in STAGE_COMBOS:
        tag = "+".join(combo)
        names.extend(f"{tag}.{d}" for d in DESCRIPTOR_NAMES)
    names.extend(SEQUENCING_NAMES)
    names.extend(f"trans_{a}_to_{b}" for a, b in TRANSITION_TYPES)
    return names


def proto_series(hd: Hypnodensity, combo: tuple[str, ...]) -> np.ndarray:
    """Per-segment product of the stage probabilities in the combination."""
    idx = [STAGES.index(s) for s in combo]
    return np.prod(hd.probs[:, idx], axis=1)


def combo_descriptors(series: np.ndarray, resolution_s: int) -> np.ndarray:
    """The 15 descriptors in DESCRIPTOR_NAMES order."""
    s = np.asarray(series, dtype=float)
    if len(s) == 0:
        raise ShapeMismatch("empty series")
    out = np.zeros(15)
    out[0] = s.mean()
    out[1] = s.max()
    out[2] = s.std()
    if len(s) > 1:
        d = np.abs(np.diff(s))
        out[3] = d.mean()
        out[4] = d.max()
    total = s.sum()
    if total > 0:
        q = s / total
        nz = q[q > 0]
        out[5] = float(-(nz * np.log(nz)).sum())
    for j, p in enumerate(CUMSUM_PERCENTS):
        if total > 0:
            t_min = _time_to_fraction(s, p / 100.0) * resolution_s / 60.0
            out[6 + j] = t_min * total
    out[12] = total
    if out[1] > 0:
        out[13] = float(np.mean(s > 0.5 * out[1]))
    if len(s) > 1:
        centered = s - out[0]
        ups = (centered[1:] > 0) & (centered[:-1] <= 0)
        hours = len(s) * resolution_s / 3600.0
        out[14] = float(ups.sum()) / hours
    return out


def _time_to_fraction(series: np.ndarray, frac: float) -> float:
    """Fractional segment count at which the running sum first crosses
    ``frac`` of the total, with linear accumulation inside a segment."""
    cum = np.cumsum(series)
    target = frac * cum[-1]
    i = int(np.searchsorted(cum, target))
    prev = cum[i - 1] if i > 0 else 0.0
    within = (target - prev) / series[i] if series[i] > 0 else 0.0
    return i + within


def dissociation_onset_mass(hd: Hypnodensity) -> float:
    """Minutes to accumulate 5% of the W/N2/REM pairwise-product mass,
    weighted by that total mass."""
    w = hd.probs[:, 0]
    n2 = hd.probs[:, 2]
    rem = hd.probs[:, 4]
    pi = w * n2 + w * rem + n2 * rem
    total = pi.sum()
    if total <= 0:
        return 0.0
    t_min = _time_to_fraction(pi, 0.05) * hd.resolution_s / 60.0
    return t_min * float(total)


@dataclass
class SoremReport:
    count: int
    total_duration_min: float
    rem_latency_min: float
    sleep_latency_min: float


def _runs(labels: list[str]) -> list[tuple[str, int, int]]:
    """Maximal runs as (label, start_index, length)."""
    runs = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            runs.append((labels[start], start, i - start))
            start = i
    return runs


def _merged(stage: str) -> str:
    if stage in ("W", "N1"):
        return "WN1"
    if stage in ("N2", "N3"):
        return "NREM"
    return stage  # REM or UNSCORED


def sorem_analysis(hyp: HypnogramLabels) -> SoremReport:
    """Sleep/REM latencies and sleep-onset REM period statistics."""
    epoch_min = hyp.epoch_s / 60.0
    n = len(hyp.stages)
    duration_min = n * epoch_min
    sleep_idx = next((i for i, s in enumerate(hyp.stages)
                      if s not in ("W", UNSCORED)), None)
    if sleep_idx is None:
        return SoremReport(count=0, total_duration_min=0.0,
                           rem_latency_min=duration_min,
                           sleep_latency_min=duration_min)
    sleep_latency = sleep_idx * epoch_min
    rem_idx = next((i for i, s in enumerate(hyp.stages) if s == "REM"), None)
    rem_latency = ((rem_idx - sleep_idx) * epoch_min
                   if rem_idx is not None else duration_min)

    # REM runs immediately preceded by >= 2.5 min of contiguous W/N1
    merged = [_merged(s) for s in hyp.stages]
    runs = _runs(merged)
    count = 0
    total = 0.0
    for j, (label, start, length) in enumerate(runs):
        if label != "REM":
            continue
        if j > 0 and runs[j - 1][0] == "WN1":
            prev_min = runs[j - 1][2] * epoch_min
            if prev_min >= SOREMP_WAKE_MIN:
                count += 1
                total += length * epoch_min
    return SoremReport(count=count, total_duration_min=total,
                       rem_latency_min=rem_latency,
                       sleep_latency_min=sleep_latency)


def fragmentation_features(hyp: HypnogramLabels) -> np.ndarray:
    """(frag_count, long_bout_count, short_wake_cum_min, rem_after_wake_min,
    soremp_presence)."""
    epoch_min = hyp.epoch_s / 60.0
    merged = [_merged(s) for s in hyp.stages]
    runs = _runs(merged)
    frag = 0
    long_bouts = 0
    short_wake = 0.0
    rem_after_wake = 0.0
    for j, (label, start, length) in enumerate(runs):
        minutes = length * epoch_min
        if label == "NREM" and minutes >= FRAG_NREM_S / 60.0:
            if j + 1 < len(runs) and runs[j + 1][0] == "WN1" \
                    and runs[j + 1][2] * epoch_min >= FRAG_BREAK_S / 60.0:
                frag += 1
        if label == "WN1":
            if minutes >= LONG_BOUT_MIN:
                long_bouts += 1
            if minutes < SHORT_WAKE_MIN:
                short_wake += minutes
        if label == "REM" and j > 0 and runs[j - 1][0] == "WN1" \
                and runs[j - 1][2] * epoch_min >= SOREMP_WAKE_MIN:
            rem_after_wake += minutes
    rep = sorem_analysis(hyp)
    presence = 1.0 if rep.rem_latency_min <= SOREM_INDICATOR_MIN else 0.0
    return np.array([frag, long_bouts, short_wake, rem_after_wake, presence],
                    dtype=float)


def hypnodensity_peaks(hd: Hypnodensity) -> list[tuple[str, float]]:
    """Probability-mass peaks of merged-type dominance runs, in 30 s units.

    Peaks below the mass floor are discarded, then adjacent same-type peaks
    merge with summed mass.
    """
    merged_probs = np.column_stack([
        hd.probs[:, 0] + hd.probs[:, 1],   # W + N1
        hd.probs[:, 2],                    # N2
        hd.probs[:, 3],                    # N3
        hd.probs[:, 4],                    # REM
    ])
    dominant = np.argmax(merged_probs, axis=1)
    unit = hd.resolution_s / 30.0
    peaks: list[tuple[str, float]] = []
    start = 0
    for i in range(1, len(dominant) + 1):
        if i == len(dominant) or dominant[i] != dominant[start]:
            t = MERGED_TYPES[dominant[start]]
            mass = float(merged_probs[start:i, dominant[start]].sum()) * unit
            peaks.append((t, mass))
            start = i
    peaks = [(t, m) for t, m in peaks if m >= PEAK_MASS_FLOOR]
    fused: list[tuple[str, float]] = []
    for t, m in peaks:
        if fused and fused[-1][0] == t:
            fused[-1] = (t, fused[-1][1] + m)
        else:
            fused.append((t, m))
    return fused


def transition_sums(peaks: list[tuple[str, float]]) -> np.ndarray:
    """Sum sqrt(mass_n * mass_n+1) per enumerated transition type."""
    sums = dict.fromkeys(TRANSITION_TYPES, 0.0)
    for (t1, m1), (t2, m2) in zip(peaks, peaks[1:]):
        key = (t1, t2)
        if key in sums:
            sums[key] += float(np.sqrt(m1 * m2))
    return np.array([sums[k] for k in TRANSITION_TYPES])


def transition_features(hd: Hypnodensity) -> np.ndarray:
    return transition_sums(hypnodensity_peaks(hd))


def assemble(hd: Hypnodensity, hyp: HypnogramLabels,
             hla: bool | None = None) -> FeatureVector:
    """Build the full 481-value vector in canonical name order."""
    hd.validate()
    values = []
    for combo in STAGE_COMBOS:
        values.extend(combo_descriptors(proto_series(hd, combo), hd.resolution_s))
    rep = sorem_analysis(hyp)
    frag = fragmentation_features(hyp)
    values.extend([rep.rem_latency_min, rep.sleep_latency_min,
                   float(rep.count), rep.total_duration_min,
                   frag[0], frag[1], frag[2]])
    values.extend(transition_features(hd))
    vec = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(vec)):
        raise ValueError("non-finite feature value")
    return FeatureVector(names=feature_names(), values=vec,
                         recording_id=hd.recording_id, hla_positive=hla)
