"""Synthetic ECG generation, feature extraction, and rule-based diagnosis.

The generator places a Gaussian bump at every heartbeat on top of a constant
baseline shift, with optional beat-to-beat jitter and measurement noise. The
extractor recovers beat statistics, the dominant spectral component, and the
baseline deviation; a fixed-order rule table maps those features to one of
four outcomes. All randomness is seeded.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .errors import NoBeatsDetected

#: Width of one synthetic beat bump, seconds.
BEAT_SIGMA = 0.02

#: Spectral scan grid, Hz. Covers well below resting heart rate up to above
#: any plausible fibrillation rate.
FREQ_MIN = 0.5
FREQ_MAX = 10.0
FREQ_STEP = 0.1


@dataclass(frozen=True)
class Thresholds:
    fibrillation_freq: float = 4.0
    ischemia_st: float = 0.15
    arrhythmia_rr: float = 0.12


@dataclass
class EcgSignal:
    values: np.ndarray
    rate: float  # samples per second

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) / self.rate

    @property
    def duration(self) -> float:
        return len(self.values) / self.rate


@dataclass(frozen=True)
class EcgFeatures:
    rr_mean: float
    rr_std: float
    dominant_freq: float
    st_deviation: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.rr_mean, self.rr_std, self.dominant_freq, self.st_deviation)


def synthesize_ecg(
    bpm: float,
    irregularity: float = 0.0,
    st_offset: float = 0.0,
    noise: float = 0.0,
    duration: float = 30.0,
    rate: float = 250.0,
    seed: int = 0,
) -> EcgSignal:
    """Generate a beat train with the requested rhythm characteristics.

    ``irregularity`` scales uniform beat-to-beat jitter of the RR interval,
    ``st_offset`` shifts the baseline between beats, ``noise`` is the sigma
    of additive Gaussian sample noise.
    """
    if bpm <= 0:
        raise ValueError("bpm must be positive")
    if not 0 <= irregularity < 1:
        raise ValueError("irregularity must be in [0, 1)")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    if duration <= 0 or rate <= 0:
        raise ValueError("duration and rate must be positive")

    rng = random.Random(seed)
    rr_base = 60.0 / bpm
    beats = []
    t = rr_base
    while t < duration:
        beats.append(t)
        t += rr_base * (1.0 + irregularity * rng.uniform(-1.0, 1.0))

    n = int(round(duration * rate))
    times = np.arange(n) / rate
    values = np.full(n, st_offset, dtype=float)
    for beat in beats:
        lo = max(0, int((beat - 4 * BEAT_SIGMA) * rate))
        hi = min(n, int((beat + 4 * BEAT_SIGMA) * rate) + 1)
        window = times[lo:hi]
        values[lo:hi] += np.exp(-((window - beat) ** 2) / (2 * BEAT_SIGMA**2))
    if noise > 0:
        values += np.array([rng.gauss(0.0, noise) for _ in range(n)])
    return EcgSignal(values=values, rate=float(rate))


def detect_beats(signal: EcgSignal) -> np.ndarray:
    """Beat instants: peaks of contiguous runs above half the global maximum."""
    values = signal.values
    peak = float(values.max(initial=0.0)) if len(values) else 0.0
    if peak <= 0:
        raise NoBeatsDetected("signal has no positive excursion")
    above = values >= 0.5 * peak
    beats = []
    i = 0
    n = len(values)
    while i < n:
        if not above[i]:
            i += 1
            continue
        j = i
        while j < n and above[j]:
            j += 1
        run = values[i:j]
        beats.append((i + int(np.argmax(run))) / signal.rate)
        i = j
    if len(beats) < 2:
        raise NoBeatsDetected(f"found {len(beats)} beat(s), need at least 2")
    return np.asarray(beats)


def dominant_frequency(signal: EcgSignal) -> float:
    """Frequency of maximal spectral power on the fixed scan grid.

    Single-bin transform of the mean-removed signal; the lowest frequency
    wins a tie.
    """
    x = signal.values - signal.values.mean()
    t = signal.times
    steps = int(round((FREQ_MAX - FREQ_MIN) / FREQ_STEP)) + 1
    best_f = FREQ_MIN
    best_p = -1.0
    for k in range(steps):
        f = FREQ_MIN + k * FREQ_STEP
        angle = -2.0 * math.pi * f * t
        power = float(np.dot(x, np.cos(angle)) ** 2 + np.dot(x, np.sin(angle)) ** 2)
        if power > best_p:
            best_p = power
            best_f = f
    return round(best_f, 10)


def extract_features(signal: EcgSignal) -> EcgFeatures:
    """Recover rhythm and baseline features from a raw signal."""
    beats = detect_beats(signal)
    rr = np.diff(beats)
    rr_mean = float(rr.mean())
    rr_std = float(rr.std())  # population spread

    # Baseline deviation: everything further than 3 sigma from any beat.
    times = signal.times
    outside = np.ones(len(times), dtype=bool)
    for beat in beats:
        outside &= np.abs(times - beat) > 3 * BEAT_SIGMA
    st_dev = float(signal.values[outside].mean()) if outside.any() else 0.0

    return EcgFeatures(
        rr_mean=rr_mean,
        rr_std=rr_std,
        dominant_freq=dominant_frequency(signal),
        st_deviation=st_dev,
    )


#: Diagnosis outcomes, in rule order.
DISEASES = ("fibrillation", "ischemia", "arrhythmia", "normal")


def estimate_disease(features: EcgFeatures, thresholds: Thresholds = Thresholds()) -> str:
    """First matching rule wins: racing rhythm, then baseline shift, then
    irregular RR spread relative to the mean."""
    if features.dominant_freq > thresholds.fibrillation_freq:
        return "fibrillation"
    if abs(features.st_deviation) > thresholds.ischemia_st:
        return "ischemia"
    if features.rr_mean > 0 and features.rr_std / features.rr_mean > thresholds.arrhythmia_rr:
        return "arrhythmia"
    return "normal"


def feature_distance(candidate: EcgFeatures, reference: EcgFeatures) -> float:
    """Normalized Euclidean distance between feature vectors.

    Each component is scaled by the reference magnitude, floored at 0.1 so
    near-zero features cannot blow up the distance.
    """
    total = 0.0
    for c, r in zip(candidate.as_tuple(), reference.as_tuple()):
        scale = max(abs(r), 0.1)
        total += ((c - r) / scale) ** 2
    return math.sqrt(total)
