import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import voigt_profile

from hnpsim.errors import ConfigurationError, EstimationError
from hnpsim.fitting import fit, model_spec
from hnpsim.lineshape import (
    GAUSS_FWHM_PER_SIGMA,
    gaussian,
    half_max_width,
    lineshape_convolved,
    lorentzian,
    measure_fwhm,
    voigt_fwhm_estimate,
)

MHZ = 1e6


def voigt_oracle(nu, fl, fg):
    shape = voigt_profile(nu, fg / GAUSS_FWHM_PER_SIGMA, fl / 2)
    return shape / voigt_profile(0.0, fg / GAUSS_FWHM_PER_SIGMA, fl / 2)


def test_unit_area_shapes():
    assert integrate.quad(lambda v: lorentzian(v, 3.0), -np.inf, np.inf)[0] == pytest.approx(1)
    assert integrate.quad(lambda v: gaussian(v, 3.0), -np.inf, np.inf)[0] == pytest.approx(1)


def test_pure_lorentzian_limit():
    nu = np.linspace(-30, 30, 6001)
    y = lineshape_convolved(nu, 5.0, 0.0)
    assert y.max() == pytest.approx(1.0)
    assert measure_fwhm(nu, y) == pytest.approx(5.0, abs=nu[1] - nu[0])


def test_equal_widths_against_voigt():
    nu = np.linspace(-60, 60, 4001)
    y = lineshape_convolved(nu, 10.0, 10.0)
    np.testing.assert_allclose(y, voigt_oracle(nu, 10.0, 10.0), atol=2e-4)
    oracle = half_max_width(lambda v: voigt_profile(v, 10 / GAUSS_FWHM_PER_SIGMA, 5.0), 10.0)
    assert measure_fwhm(nu, y) == pytest.approx(oracle, rel=5e-3)
    assert oracle == pytest.approx(voigt_fwhm_estimate(10, 10), rel=1e-3)


@pytest.mark.parametrize("laser", [67 * MHZ, 37 * MHZ])
def test_laser_limited_width(laser):
    nu = np.linspace(-4 * laser, 4 * laser, 1601)
    y = lineshape_convolved(nu, 10e3, laser)
    assert measure_fwhm(nu, y) == pytest.approx(laser, rel=0.01)
    spec = model_spec("lineshape_convolved", p0=[0.8, 2 * MHZ, 10e3, 0.8 * laser],
                      fixed={"lorentz_fwhm"})
    res = fit(spec, nu, y)
    assert res.converged
    width = voigt_fwhm_estimate(res["lorentz_fwhm"], res["gauss_fwhm"])
    assert width == pytest.approx(laser, rel=0.01)


def test_tophat_kernel():
    nu = np.linspace(-40, 40, 8001)
    y = lineshape_convolved(nu, 0.01, 20.0, kernel="tophat")
    assert measure_fwhm(nu, y) == pytest.approx(20.0, rel=0.01)


def test_bad_arguments():
    with pytest.raises(ConfigurationError):
        lineshape_convolved([0.0], 0.0, 0.0)
    with pytest.raises(ConfigurationError):
        lineshape_convolved([0.0], 1.0, 1.0, kernel="sinc")
    with pytest.raises(EstimationError):
        measure_fwhm([0, 1, 2], [1, 1, 1])
