import json
from pathlib import Path

import numpy as np
import pytest

from mutualshot import features as ft
from mutualshot.features import EegWindow, InvalidInputError

from .oracles import feature_oracle as oracle

DATA = Path(__file__).parent / "data"


def seed7(n=256):
    return np.random.default_rng(7).standard_normal(n)


def sine(freq, n=256, fs=256.0, amp=1.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / fs)


# temporal ------------------------------------------------------------------
@pytest.mark.parametrize("x, expected", [([5, 5, 5, 5], 0.0), ([0, 1, 2, 3], 3.0),
                                         ([0, 1, 0, 1], 3.0)])
def test_curve_length_examples(x, expected):
    assert ft.curve_length(x) == expected


def test_curve_length_too_short():
    with pytest.raises(InvalidInputError):
        ft.curve_length([1.0])


def test_nonlinear_energy_examples():
    assert ft.avg_nonlinear_energy([2.5, 2.5, 2.5, 2.5]) == 0.0
    assert ft.avg_nonlinear_energy([0, 1, 0, 1, 0]) == 1.0
    with pytest.raises(InvalidInputError):
        ft.avg_nonlinear_energy([1.0, 2.0])


def test_nonlinear_energy_seed7_frozen():
    assert ft.avg_nonlinear_energy(seed7()) == pytest.approx(1.188843538312018, rel=1e-12)


def test_temporal_stats_examples():
    s = ft.temporal_stats([1, -1, 1, -1])
    assert s.zcr == 3 and s.rms == 1.0
    s = ft.temporal_stats([3, 3, 3, 3])
    assert s == (3.0, 0, 0, 0.0, 0.0)


def test_temporal_stats_seed7_frozen():
    s = ft.temporal_stats(seed7())
    assert s.rms == pytest.approx(0.9375017628625767, rel=1e-12)
    assert (s.n_extrema, s.zcr) == (178, 135)
    assert s.kurtosis == pytest.approx(2.9873849185826957, rel=1e-12)
    assert s.skewness == pytest.approx(-0.11756573476502587, rel=1e-10)


def test_hjorth_constant_and_scaling():
    assert ft.hjorth(np.full(40, 1.5)) == (0.0, 0.0, 0.0)
    x = seed7()
    a, b = ft.hjorth(x), ft.hjorth(3.0 * x)
    assert b.activity == pytest.approx(9.0 * a.activity, rel=1e-12)
    assert b.mobility == pytest.approx(a.mobility, rel=1e-12)
    assert b.complexity == pytest.approx(a.complexity, rel=1e-12)


def test_hjorth_sine_frozen():
    h = ft.hjorth(sine(8.0))
    assert h.activity == pytest.approx(0.5, rel=1e-12)
    assert h.mobility == pytest.approx(0.19565393071842174, rel=1e-12)
    assert h.complexity == pytest.approx(1.0076859069255373, rel=1e-12)


def test_nonnegative_on_random_inputs():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.standard_normal(64) * rng.uniform(0.01, 100)
        assert ft.curve_length(x) >= 0
        assert ft.avg_nonlinear_energy(x) >= 0
        assert ft.temporal_stats(x).rms >= 0


# spectral ------------------------------------------------------------------
def test_spectral_single_bin_sine():
    s = ft.spectral_features(sine(8.0), 256.0)
    assert s.max_pf == 8.0
    assert s.mean_pf == pytest.approx(8.0, abs=1e-9)


@pytest.mark.parametrize("amp", [0.5, 1.0, 3.0])
def test_total_power_parseval(amp):
    s = ft.spectral_features(sine(8.0, amp=amp), 256.0)
    assert s.total_power == pytest.approx(amp**2 / 2, rel=1e-9)


def test_spectral_two_sines_picks_larger():
    assert ft.spectral_features(sine(5.0) + sine(20.0, amp=2.0), 256.0).max_pf == 20.0


def test_spectral_zero_signal_and_bad_length():
    assert ft.spectral_features(np.zeros(64), 128.0) == (0.0, 0.0, 0.0, 0.0)
    with pytest.raises(InvalidInputError):
        ft.spectral_features(np.ones(96), 128.0)


def test_spectral_seed7_against_direct_dft():
    got = ft.spectral_features(seed7(), 256.0)
    np.testing.assert_allclose(got, oracle.spectral(list(seed7()), 256.0), rtol=1e-10)


# time-frequency ------------------------------------------------------------
def test_timefreq_constant_signal():
    out = ft.timefreq_features(np.full(256, 2.0))
    assert out.shape == (24,)
    assert np.all(out[6:] == 0.0)
    # A3 halves: std and kurtosis are zero, means carry the level
    assert np.all(out[[1, 2, 4, 5]] == 0.0)


def test_timefreq_seed7_frozen():
    out = ft.timefreq_features(seed7())
    np.testing.assert_allclose(out[:6], [-0.5651358952923399, 0.9272899778924677,
                                         2.060959422786656, -0.4054266422040904,
                                         0.9071187906744879, 3.0062905421686428], rtol=1e-10)
    assert out[-1] == pytest.approx(2.4616597938908162, rel=1e-10)


def test_timefreq_rejects_bad_length():
    with pytest.raises(InvalidInputError):
        ft.timefreq_features(np.ones(100))


# nonlinear -----------------------------------------------------------------
def test_entropies_of_constant_signal():
    assert ft.approximate_entropy(np.full(80, 4.0)) == 0.0
    assert ft.sample_entropy(np.full(80, 4.0)) == 0.0
    assert ft.nonlinear_features(np.full(80, 4.0)) == (0.0, 0.0, 0.5)


def test_sampen_apen_against_brute_force():
    x = seed7()
    assert ft.sample_entropy(x) == pytest.approx(2.4079456086518722, abs=1e-6)
    assert ft.approximate_entropy(x) == pytest.approx(1.0347187304435712, abs=1e-6)
    y = np.random.default_rng(11).standard_normal(100).cumsum()
    assert ft.sample_entropy(y) == pytest.approx(oracle.sampen(list(y)), abs=1e-9)
    assert ft.approximate_entropy(y) == pytest.approx(oracle.apen(list(y)), abs=1e-9)


def test_sampen_saturates_without_matches():
    # distinct values spaced 1 apart while r = 0.2 sd is about 0.57: nothing matches
    x = np.random.default_rng(2).permutation(10).astype(float)
    n = 10 - 2
    assert ft.sample_entropy(x) == pytest.approx(np.log(n * (n - 1) / 2))


def test_hurst_white_noise_in_band():
    h = ft.hurst_rs(np.random.default_rng(7).standard_normal(1024))
    assert 0.4 <= h <= 0.6


def test_hurst_trending_signal_is_persistent():
    assert ft.hurst_rs(np.random.default_rng(7).standard_normal(1024).cumsum()) > 0.8


def test_hurst_matches_loop_oracle():
    x = seed7(512)
    assert ft.hurst_rs(x) == pytest.approx(oracle.hurst(list(x)), abs=1e-10)


@pytest.mark.parametrize("n", [8, 64, 512, 4096])
def test_expected_rs_matches_gamma_formula(n):
    assert ft.expected_rs(n) == pytest.approx(oracle.expected_rs(n), rel=1e-10)


# assembly ------------------------------------------------------------------
def test_extract_shape_and_channel_permutation():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((3, 256))
    v = ft.extract_features(EegWindow(w, 256.0)).values
    assert v.shape == (123,)
    p = ft.extract_features(EegWindow(w[[2, 0, 1]], 256.0)).values.reshape(3, 41)
    np.testing.assert_array_equal(p, v.reshape(3, 41)[[2, 0, 1]])


def test_extract_matches_golden_vector():
    golden = json.loads((DATA / "golden_features.json").read_text())
    w = oracle.golden_window(golden["seed"])
    v = ft.extract_features(EegWindow(w, golden["fs"])).values
    np.testing.assert_allclose(v, golden["values"], rtol=1e-9, atol=1e-12)


def test_degenerate_window_is_finite():
    w = np.zeros((2, 256))
    w[1] = 7.0
    v = ft.extract_features(EegWindow(w, 256.0)).values
    assert np.isfinite(v).all()


def test_amplitude_scaling_invariants():
    x = seed7()
    a = dict(zip(ft.FEATURE_NAMES, ft.channel_features(x, 256.0)))
    b = dict(zip(ft.FEATURE_NAMES, ft.channel_features(2.5 * x, 256.0)))
    for name in ("zcr", "n_extrema", "hjorth_mobility", "hjorth_complexity", "hurst",
                 "mean_pf", "max_pf"):
        assert b[name] == pytest.approx(a[name], rel=1e-9), name
    assert b["rms"] == pytest.approx(2.5 * a["rms"], rel=1e-12)
    for name in ("hjorth_activity", "total_power"):
        assert b[name] == pytest.approx(6.25 * a[name], rel=1e-12)


def test_window_validation():
    with pytest.raises(InvalidInputError):
        EegWindow(np.zeros((2, 8)), 256.0)
    with pytest.raises(InvalidInputError):
        EegWindow(np.full((1, 32), np.nan), 256.0)
    with pytest.raises(InvalidInputError):
        EegWindow(np.zeros((1, 32)), 0.0)


def test_feature_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((4, 82))
    path = tmp_path / "f.csv"
    ft.write_feature_csv(path, [0, 1, 2, 3], [0, 1, -1, 2], feats, config={"seed": 3})
    lines = path.read_text().splitlines()
    assert lines[0] == '# {"seed": 3}'
    assert lines[1].split(",")[:3] == ["subject", "label", "f000"]
    subj, lab, back = ft.read_feature_csv(path)
    assert list(lab) == [0, 1, -1, 2]
    np.testing.assert_array_equal(back, feats)
