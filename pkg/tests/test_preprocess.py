import numpy as np
import pytest

from hypnopipe import preprocess, signal_io
from hypnopipe.errors import (
    AllDegenerate,
    DegenerateSegment,
    SingularCovariance,
    UnsupportedRate,
)


def tone(freq, fs, duration_s, amp=1.0):
    t = np.arange(round(fs * duration_s)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


def projected_amplitude(x, freq, fs):
    """Amplitude of the `freq` component, robust to sample phase."""
    t = np.arange(len(x)) / fs
    c = x @ np.exp(-2j * np.pi * freq * t)
    return 2 * abs(c) / len(x)


def interior(x):
    q = len(x) // 4
    return x[q:-q]


def test_dc_is_rejected():
    y = preprocess.bandlimit(np.full(12000, 100.0), 200.0)
    assert np.max(np.abs(interior(y))) < 1e-3


def test_passband_tone_preserved():
    y = preprocess.bandlimit(tone(10, 200, 60), 200.0)
    assert abs(np.max(np.abs(interior(y))) - 1.0) < 0.01


def test_stopband_70hz_attenuated_30db():
    y = preprocess.bandlimit(tone(70, 200, 60), 200.0)
    residual = np.max(np.abs(interior(y)))
    assert 20 * np.log10(residual) < -30


def test_filtering_is_zero_phase():
    x = tone(10, 200, 60)
    y = preprocess.bandlimit(x, 200.0)
    a, b = interior(x), interior(y)
    xc = np.correlate(a, b, mode="full")
    assert np.argmax(xc) == len(a) - 1


def test_bandlimit_is_linear():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(4000), rng.standard_normal(4000)
    lhs = preprocess.bandlimit(2.0 * x + 3.0 * y, 200.0)
    rhs = 2.0 * preprocess.bandlimit(x, 200.0) + 3.0 * preprocess.bandlimit(y, 200.0)
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)) < 1e-9


def test_bandlimit_rejects_low_rate():
    with pytest.raises(UnsupportedRate):
        preprocess.bandlimit(np.zeros(1000), 80.0)


def test_resample_preserves_tone_amplitude():
    y = preprocess.resample(tone(10, 200, 60), 200, 100)
    assert abs(projected_amplitude(interior(y), 10, 100) - 1.0) < 0.02


def test_resample_identity_at_target_rate():
    x = tone(10, 100, 10)
    assert np.array_equal(preprocess.resample(x, 100, 100), x)


def test_resample_length_arithmetic():
    y = preprocess.resample(tone(5, 256, 60), 256, 100)
    assert len(y) == 6000


def test_resample_refuses_upsampling():
    with pytest.raises(UnsupportedRate):
        preprocess.resample(np.zeros(100), 50, 100)


def test_hjorth_of_sine():
    h = preprocess.hjorth(2.0 * tone(5, 100, 30))
    assert abs(h.activity - 2.0) < 0.01
    assert abs(h.mobility - 2 * np.sin(np.pi * 5 / 100)) < 1e-3


def test_hjorth_white_noise_complexity_above_one():
    for seed in range(10):
        x = np.random.default_rng(seed).standard_normal(3000)
        assert preprocess.hjorth(x).complexity > 1.0


def test_hjorth_rejects_constant():
    with pytest.raises(DegenerateSegment):
        preprocess.hjorth(np.full(100, 3.0))


def _clean(seed, duration_s=600, fs=100.0):
    rng = np.random.default_rng(seed)
    n = round(fs * duration_s)
    t = np.arange(n) / fs
    return (30 * np.sin(2 * np.pi * 10 * t) + 5 * rng.standard_normal(n))


def _ref_from_clean(n=8):
    recs = []
    for seed in range(n):
        recs.append(signal_io.PolySignalSet(
            channels={"EEG_C_LEFT": signal_io.Channel(_clean(seed), 100.0)},
            duration_s=600, recording_id=f"r{seed}"))
    return preprocess.fit_reference(recs)


def test_fit_reference_needs_four_recordings():
    with pytest.raises(SingularCovariance):
        preprocess.fit_reference([])


def test_reference_covariance_is_cholesky_factorable():
    ref = _ref_from_clean()
    np.linalg.cholesky(ref.covariance)


def test_reference_json_round_trip():
    ref = _ref_from_clean()
    back = preprocess.ReferenceDistribution.from_json(ref.to_json())
    assert np.allclose(back.mean, ref.mean)
    assert np.allclose(back.covariance, ref.covariance)


def test_selection_prefers_clean_channel():
    ref = _ref_from_clean()
    clean = _clean(99)
    noisy = 5.0 * _clean(98) + 50 * np.random.default_rng(1).standard_normal(len(clean))
    chosen = preprocess.select_eeg_channel(
        [("LEFT", noisy), ("RIGHT", clean)], ref)
    assert chosen == "RIGHT"


def test_flatline_is_worse_than_any_clean_channel():
    ref = _ref_from_clean()
    # a flat channel never yields a usable statistic vector at all
    with pytest.raises(AllDegenerate):
        preprocess.select_eeg_channel([("A", np.zeros(60000))], ref)


def test_single_candidate_wins_by_default():
    ref = _ref_from_clean()
    assert preprocess.select_eeg_channel([("ONLY", _clean(5))], ref) == "ONLY"


def test_selection_at_mean_has_zero_distance():
    ref = _ref_from_clean()
    assert ref.mahalanobis(ref.mean) == 0.0


def test_preprocess_recording_builds_montage():
    spec = {
        "EEG_C_LEFT": {"fs": 128, "sinusoids": [(10, 30)], "noise_sigma": 5},
        "EEG_C_RIGHT": {"fs": 128, "sinusoids": [(10, 30)], "noise_sigma": 5},
        "EEG_O_LEFT": {"fs": 128, "sinusoids": [(9, 20)], "noise_sigma": 5},
        "EOG_L": {"fs": 128, "sinusoids": [(0.5, 60)], "noise_sigma": 5},
        "EOG_R": {"fs": 128, "sinusoids": [(0.5, 60)], "noise_sigma": 5},
        "EMG_CHIN": {"fs": 128, "noise_sigma": 8},
    }
    psg = signal_io.synth_recording(spec, seed=0, duration_s=60)
    montage, report = preprocess.preprocess_recording(psg)
    assert set(montage.channels) == {"EEG_C", "EEG_O", "EOG_L", "EOG_R", "EMG_CHIN"}
    assert all(c.fs == 100.0 for c in montage.channels.values())
    assert report["EEG_C"] in ("EEG_C_LEFT", "EEG_C_RIGHT")
