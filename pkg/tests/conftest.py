import numpy as np
import pytest

from hypnopipe.hypnodensity import Hypnodensity
from hypnopipe.signal_io import Channel, PolySignalSet


def make_montage(duration_s=600.0, seed=0, fs=100.0):
    """A ready-to-encode 5-channel montage recording at 100 Hz."""
    rng = np.random.default_rng(seed)
    n = round(fs * duration_s)
    t = np.arange(n) / fs

    def ch(freq, amp, sigma):
        return Channel(samples=amp * np.sin(2 * np.pi * freq * t)
                       + sigma * rng.standard_normal(n), fs=fs)

    channels = {
        "EEG_C": ch(10, 30, 5),
        "EEG_O": ch(9, 20, 5),
        "EOG_L": ch(0.5, 60, 5),
        "EOG_R": ch(0.5, 60, 5),
        "EMG_CHIN": ch(30, 10, 8),
    }
    return PolySignalSet(channels=channels, duration_s=duration_s,
                         recording_id=f"m{seed}")


def random_hypnodensity(rng, n_rows, resolution_s=30, recording_id="r"):
    p = rng.random((n_rows, 5)) + 1e-3
    p = p / p.sum(axis=1, keepdims=True)
    return Hypnodensity(probs=p, resolution_s=resolution_s,
                        recording_id=recording_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
