import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hnpsim.blueprint import g2_zero_model
from hnpsim.errors import ConfigurationError, EstimationError
from hnpsim.levels import ExcitationSpec
from hnpsim.photons import (
    ClickStream,
    DetectorSpec,
    _dead_time_mask,
    background_rate_for_signal_fraction,
    camera_image,
    g2_with_background,
    image_to_csv,
    image_to_pgm,
    local_maxima,
    localize_centroid,
    pulsed_g2,
    signal_fraction_for_g2,
    simulate_stream,
)

TAU = 1e-6
PERIOD = 20e-6


def stream(n, p, eff, pulses, seed, **kw):
    return simulate_stream(n, p, TAU, kw.pop("det", DetectorSpec(eff)), pulses, PERIOD, seed=seed, **kw)


def test_empty_stream():
    s = simulate_stream(3, 1.0, TAU, DetectorSpec(0.0), 1000, PERIOD, seed=1)
    assert len(s) == 0
    with pytest.raises(EstimationError):
        pulsed_g2(s)


def test_single_photon_constraint():
    s = stream(1, 1.0, 1.0, 5000, 2)
    idx = (s.timestamps - s.sync_offset + s.pulse_period // 2) // s.pulse_period
    assert np.array_equal(np.bincount(idx), np.ones(5000))


def test_mean_clicks_per_pulse_binomial():
    exc = ExcitationSpec(photon_flux=1e20, cross_section=5e-17, pulse_width=math.log(2) / 5e3)
    assert exc.pulse_probability == pytest.approx(0.5)
    n = 10**6
    s = simulate_stream(1, exc, TAU, DetectorSpec(0.1), n, PERIOD, seed=3)
    sigma = math.sqrt(0.05 * 0.95 / n)
    assert abs(len(s) / n - 0.05) < 3 * sigma


def test_seed_required_and_deterministic():
    with pytest.raises(ConfigurationError):
        simulate_stream(1, 0.5, TAU, DetectorSpec(0.5), 10, PERIOD)
    det = DetectorSpec(0.3, dark_rate=2e3, dead_time=50e-9, jitter_sigma=40e-12)
    a = stream(2, 0.7, 0, 20000, 9, det=det, background_rate=1e3)
    b = stream(2, 0.7, 0, 20000, 9, det=det, background_rate=1e3)
    c = stream(2, 0.7, 0, 20000, 10, det=det, background_rate=1e3)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv() != c.to_csv()


def test_short_period_warns():
    with pytest.warns(UserWarning):
        simulate_stream(1, 0.5, TAU, DetectorSpec(0.5), 10, 2 * TAU, seed=0)


def brute_force_g2_counts(s, max_k):
    idx = np.floor((s.timestamps - s.sync_offset) / s.pulse_period + 0.5).astype(int)
    counts = np.zeros(2 * max_k + 1)
    for i in range(len(s)):
        for j in range(len(s)):
            if s.channels[i] == 0 and s.channels[j] == 1:
                k = idx[j] - idx[i]
                if abs(k) <= max_k:
                    counts[k + max_k] += 1
    return counts


def test_histogram_matches_pair_enumeration():
    s = stream(3, 0.6, 0.4, 300, 5, background_rate=5e3)
    h = pulsed_g2(s, max_k=5)
    np.testing.assert_array_equal(h.counts, brute_force_g2_counts(s, 5))


def test_ideal_single_emitter():
    h = pulsed_g2(stream(1, 1.0, 0.1, 200000, 6))
    assert h.g2_zero == 0.0
    assert h.g2_error > 0


@pytest.mark.parametrize("n", [2, 6])
def test_emitter_number_law(n):
    h = pulsed_g2(stream(n, 0.8, 0.1, 10**6, 100 + n))
    assert abs(h.g2_zero - g2_zero_model(n)) < 3 * h.g2_error


def test_single_channel_estimator():
    s = stream(2, 0.8, 0.2, 300000, 7, n_channels=1)
    h = pulsed_g2(s)
    assert abs(h.g2_zero - 0.5) < 3 * h.g2_error


def test_translation_invariance():
    s = stream(3, 0.5, 0.2, 20000, 8, background_rate=2e3)
    h = pulsed_g2(s)
    for delta in (1, 12345, 7 * s.pulse_period + 3):
        h2 = pulsed_g2(s.shifted(delta))
        assert h2.g2_zero == h.g2_zero
        np.testing.assert_array_equal(h2.counts, h.counts)
    # whole-period shifts leave the assignment unchanged even without moving the clock
    moved = ClickStream(s.timestamps + 4 * s.pulse_period, s.channels, s.pulse_period, s.n_pulses)
    assert pulsed_g2(moved).g2_zero == h.g2_zero


def test_side_peaks_flat():
    h = pulsed_g2(stream(4, 0.9, 0.1, 10**6, 11))
    side = h.counts[np.abs(h.k) >= 1]
    assert np.max(np.abs(side - side.mean())) < 4 * math.sqrt(side.mean())


def test_background_closed_form():
    assert g2_with_background(1, 1.0) == 0.0
    assert g2_with_background(5, 0.0) == 1.0
    rho = signal_fraction_for_g2(1, 0.25)
    assert rho == pytest.approx(math.sqrt(0.75), abs=1e-12)
    assert rho == pytest.approx(0.866, abs=1e-3)
    with pytest.raises(ConfigurationError):
        signal_fraction_for_g2(2, 0.3)


@settings(max_examples=200)
@given(n=st.integers(1, 20), rho=st.floats(0, 1))
def test_background_model_bounds(n, rho):
    g = g2_with_background(n, rho)
    assert g2_zero_model(n) - 1e-12 <= g <= 1 + 1e-12
    if 0 < rho < 1:
        # g = 1 - rho^2/N, so one ulp in g moves rho by about N * eps / rho
        tol = 1e-9 + 4 * n * np.finfo(float).eps / max(rho, 1e-300)
        assert signal_fraction_for_g2(n, g) == pytest.approx(rho, abs=tol)


def test_background_simulation_matches_model():
    p, eff = 0.9, 0.1
    rho = 0.7
    bg = background_rate_for_signal_fraction(rho, 2, p, eff, PERIOD)
    h = pulsed_g2(stream(2, p, eff, 10**6, 12, background_rate=bg))
    assert abs(h.g2_zero - g2_with_background(2, rho)) < 3 * h.g2_error


def test_dark_counts_add_background():
    det = DetectorSpec(0.1, dark_rate=0.5 * 0.09 / PERIOD / 2)
    h = pulsed_g2(stream(1, 0.9, 0, 10**6, 13, det=det))
    rho = 0.09 / (0.09 + 0.045)
    assert abs(h.g2_zero - g2_with_background(1, rho)) < 3 * h.g2_error


def naive_dead_time(times, dead):
    kept = []
    for t in times:
        if not kept or t - kept[-1] >= dead:
            kept.append(t)
    return kept


@settings(max_examples=200)
@given(st.lists(st.integers(0, 10**6), max_size=60), st.integers(0, 50000))
def test_dead_time_against_naive(times, dead):
    t = np.sort(np.array(times, dtype=np.int64))
    kept = t[_dead_time_mask(t, dead)]
    assert kept.tolist() == naive_dead_time(t.tolist(), dead)


def test_dead_time_applied_per_channel():
    det = DetectorSpec(1.0, dead_time=5e-6)
    s = simulate_stream(10, 1.0, TAU, det, 2000, PERIOD, seed=14)
    for ch in (0, 1):
        t = s.timestamps[s.channels == ch]
        assert np.all(np.diff(t) >= 5e-6 / 1e-12)


def test_jitter_keeps_order_and_spreads():
    det = DetectorSpec(1.0, jitter_sigma=100e-12)
    a = simulate_stream(1, 1.0, TAU, DetectorSpec(1.0), 5000, PERIOD, seed=15)
    b = simulate_stream(1, 1.0, TAU, det, 5000, PERIOD, seed=15)
    assert np.all(np.diff(b.timestamps) >= 0)
    diff = (b.timestamps - a.timestamps).astype(float)
    assert diff.std() == pytest.approx(100, rel=0.05)


def test_csv_round_trip(tmp_path):
    s = stream(2, 0.5, 0.3, 1000, 16, background_rate=1e3)
    path = tmp_path / "clicks.csv"
    s.to_csv(path)
    back = ClickStream.from_csv(path)
    assert np.array_equal(back.timestamps, s.timestamps)
    assert np.array_equal(back.channels, s.channels)
    assert (back.pulse_period, back.n_pulses) == (s.pulse_period, s.n_pulses)
    h = pulsed_g2(s, 3)
    assert h.to_csv().splitlines()[0] == "k,counts"
    assert len(h.to_csv().splitlines()) == 8


def test_stream_validation():
    with pytest.raises(ValueError):
        ClickStream([5, 3], [0, 0], 100, 1)
    with pytest.raises(ValueError):
        ClickStream([-1, 3], [0, 0], 100, 1)
    with pytest.raises(ConfigurationError):
        DetectorSpec(efficiency=1.5)


def test_camera_centroid_single_emitter():
    pitch = 50.0
    centre = (10.5 * pitch, 10.5 * pitch)
    img = camera_image([centre], 120.0, pitch, 10**5, (21, 21), seed=17)
    x, y = localize_centroid(img, pitch)
    assert abs(x - centre[0]) < 0.1 * pitch and abs(y - centre[1]) < 0.1 * pitch
    assert img.sum() <= 10**5


def test_camera_zero_photons():
    img = camera_image([(100.0, 100.0)], 50.0, 20.0, 0, (10, 10), seed=1)
    assert not img.any()
    assert not camera_image([(100.0, 100.0)], 50.0, 20.0, 0, (10, 10)).any()


def test_camera_two_emitters_resolved():
    pitch = 60.0
    pts = [(5.5 * pitch, 8.5 * pitch), (8.5 * pitch, 8.5 * pitch)]
    img = camera_image(pts, 40.0, pitch, 1000, (16, 16))
    assert len(local_maxima(img)) == 2


def test_expected_image_mass_and_sampling():
    pitch = 40.0
    expected = camera_image([(400.0, 400.0)], 60.0, pitch, 5000, (20, 20))
    assert expected.sum() == pytest.approx(5000, rel=1e-9)
    draws = np.mean([camera_image([(400.0, 400.0)], 60.0, pitch, 5000, (20, 20), seed=s)
                     for s in range(40)], axis=0)
    assert np.max(np.abs(draws - expected)) < 5 * math.sqrt(expected.max() / 40)


def test_localization_precision_scales():
    pitch, sigma, n = 20.0, 80.0, 400
    xs = [localize_centroid(camera_image([(500.0, 500.0)], sigma, pitch, n, (50, 50), seed=s),
                            pitch)[0] for s in range(300)]
    predicted = math.sqrt((sigma**2 + pitch**2 / 12) / n)
    assert np.std(xs) == pytest.approx(predicted, rel=0.15)


def test_image_writers():
    img = np.array([[0, 3], [70000, 1]])
    pgm = image_to_pgm(img).splitlines()
    assert pgm[:3] == ["P2", "2 2", "65535"]
    assert image_to_csv([[1.5, 2]]) == "1.5,2\n"
    with pytest.raises(ConfigurationError):
        camera_image([(0, 0)], 1.0, 0.0, 10, (3, 3))
