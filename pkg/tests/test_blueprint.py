import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hnpsim.blueprint import (
    ArrayGeometry,
    ExcitationSpot,
    OccupancyModel,
    annulus_area_cm2,
    calibrate_loss_factor,
    emitter_number_from_g2,
    expected_ions,
    g2_zero_model,
    hnps_in_spot,
    occupancy_pmf,
    sidewall_capture_area,
    spot_footprint,
)
from hnpsim.errors import DomainError


def brute_force_count(geom, spot):
    # every lattice point, plain python distance test
    cx, cy = spot.center
    r = spot.diameter / 2
    n = 0
    for i in range(geom.cols):
        for j in range(geom.rows):
            if math.hypot(i * geom.pitch - cx, j * geom.pitch - cy) <= r * (1 + 1e-12):
                n += 1
    return n


def test_twelve_pillars_in_one_micron_spot():
    geom = ArrayGeometry(250, 1000, 1000, 25, 4.8, 100)
    # midway between two neighbouring sites -> 4x3 block
    spot = ExcitationSpot((500.5 * 250, 500 * 250), 1000)
    assert hnps_in_spot(geom, spot) == 12
    assert spot_footprint(geom, spot) == (4, 3)
    # centre of a lattice cell also gives 12
    assert hnps_in_spot(geom, ExcitationSpot((500.5 * 250, 500.5 * 250), 1000)) == 12
    default = ExcitationSpot.diffraction_limited((500.5 * 250, 500 * 250), wavelength=1534)
    assert default.diameter == pytest.approx(1000)
    assert hnps_in_spot(geom, default) == 12


def test_small_spot_hits_only_centred_pillar():
    geom = ArrayGeometry(250, 20, 20, 25, 5, 100)
    assert hnps_in_spot(geom, ExcitationSpot((2500, 2500), 100)) == 1


def test_760nm_spot_matches_enumeration():
    geom = ArrayGeometry(250, 21, 21, 25, 5, 100)
    spot = ExcitationSpot((10 * 250, 10 * 250), 760)
    assert hnps_in_spot(geom, spot) == brute_force_count(geom, spot) == 9


def test_empty_array_and_far_spot():
    geom = ArrayGeometry(250, 0, 0, 25, 5, 100)
    assert hnps_in_spot(geom, ExcitationSpot((0, 0), 1000)) == 0
    geom = ArrayGeometry(250, 4, 4, 25, 5, 100)
    assert hnps_in_spot(geom, ExcitationSpot((1e6, 1e6), 1000)) == 0


def test_random_triples_match_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        pitch = rng.uniform(80, 400)
        geom = ArrayGeometry(pitch, 12, 12, 10, 3, 50)
        diameter = rng.uniform(10, 2500)
        center = tuple(rng.uniform(-500, 12 * pitch + 500, size=2))
        spot = ExcitationSpot(center, diameter)
        assert hnps_in_spot(geom, spot) == brute_force_count(geom, spot)


def test_geometry_invariants():
    with pytest.raises(DomainError):
        ArrayGeometry(50, 2, 2, 25, 5, 100)  # pitch < outer diameter
    with pytest.raises(DomainError):
        ArrayGeometry(250, 2, 2, 25, 0, 100)
    with pytest.raises(DomainError):
        ArrayGeometry(250, 2, 2, 25, float("inf"), 100)
    with pytest.raises(DomainError):
        ExcitationSpot((0, 0), 0)


def test_sidewall_area():
    assert annulus_area_cm2(25, 0) == 0
    geom = ArrayGeometry(250, 1, 1, 25, 5, 100)
    area = sidewall_capture_area(geom)
    assert area == pytest.approx(8.639e-12, rel=1e-4)
    # numeric ring integral on a polar grid
    rr = np.linspace(25, 30, 20001)
    numeric = np.trapezoid(2 * np.pi * rr, rr) * 1e-14
    assert area == pytest.approx(numeric, rel=1e-10)
    doubled = sidewall_capture_area(ArrayGeometry(250, 1, 1, 25, 10, 100))
    assert doubled / area == pytest.approx(600 / 275, rel=1e-14)


def test_expected_ions_single_ion_calibration():
    assert expected_ions(OccupancyModel(0, 8.639e-12, 0.5, 0.5), 12) == 0
    lam = expected_ions(OccupancyModel(1e12, 8.639e-12, 0.0096, 1.0), 12)
    assert lam == pytest.approx(1.0, abs=0.01)
    factor = calibrate_loss_factor(1.0, 1e12, 8.639e-12, 12)
    assert factor == pytest.approx(1 / (12 * 8.639), rel=1e-12)
    assert expected_ions(OccupancyModel(1e12, 8.639e-12, factor, 1.0), 12) == pytest.approx(1.0, rel=1e-14)


def test_dose_ratio_hundred():
    lo = expected_ions(OccupancyModel(1e12, 8.639e-12, 0.0096, 1.0), 12)
    hi = expected_ions(OccupancyModel(1e14, 8.639e-12, 0.0096, 1.0), 12)
    # decimal ratios carry at most one rounding of the final product
    assert abs(hi / lo - 100) <= 100 * 2 * np.finfo(float).eps


@given(
    dose=st.floats(1e8, 1e16),
    power=st.integers(-10, 10),
    n=st.integers(0, 10_000),
)
def test_expected_ions_exactly_linear(dose, power, n):
    model = OccupancyModel(dose, 8.639e-12, 0.3, 0.7)
    scaled = OccupancyModel(dose * 2.0**power, 8.639e-12, 0.3, 0.7)
    assert expected_ions(scaled, n) == expected_ions(model, n) * 2.0**power
    assert expected_ions(model, 2 * n) == 2 * expected_ions(model, n)


def test_pmf_values():
    p = occupancy_pmf(1.0, 50)
    assert p[1] == pytest.approx(math.exp(-1), rel=1e-14)
    assert abs(p.sum() - 1) < 1e-12
    mpmath.mp.dps = 40
    p2 = occupancy_pmf(2.0, 5)
    for k in range(6):
        exact = mpmath.mpf(2) ** k * mpmath.e ** (-2) / mpmath.factorial(k)
        assert p2[k] == pytest.approx(float(exact), rel=1e-13)
    assert occupancy_pmf(0.0, 3).tolist() == [1, 0, 0, 0]
    with pytest.raises(DomainError):
        occupancy_pmf(-0.1, 5)


@settings(max_examples=200)
@given(lam=st.floats(0, 30))
def test_pmf_normalised(lam):
    assert abs(occupancy_pmf(lam, 200).sum() - 1) < 1e-12


def test_g2_model():
    assert g2_zero_model(1) == 0
    assert g2_zero_model(2) == 0.5
    assert g2_zero_model(6) == pytest.approx(0.8333, abs=1e-4)
    # measured 0.84 at a ~6 emitter site
    assert abs(g2_zero_model(6) - 0.84) < 0.01
    with pytest.raises(DomainError):
        g2_zero_model(0)
    vals = [g2_zero_model(n) for n in range(1, 200)]
    assert all(0 <= v < 1 for v in vals)
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert emitter_number_from_g2(0.5) == pytest.approx(2)
