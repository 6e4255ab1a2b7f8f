"""Laser-broadened optical lineshapes.

An emitter line (Lorentzian, FWHM ``lorentz_fwhm``) seen through a laser
whose frequency jitters with a Gaussian (or top-hat) distribution of FWHM
``laser_fwhm``. The convolution is done numerically: the narrower of the two
shapes becomes a discrete kernel of exact per-cell masses, the wider one is
sampled on a uniform grid, and the result is interpolated back to the
requested frequencies.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq
from scipy.signal import fftconvolve
from scipy.special import erf

from .errors import ConfigurationError, EstimationError

GAUSS_FWHM_PER_SIGMA = 2 * math.sqrt(2 * math.log(2))


def lorentzian(nu, fwhm: float) -> np.ndarray:
    """Unit-area Lorentzian."""
    g = fwhm / 2
    return (g / math.pi) / (np.asarray(nu, dtype=float) ** 2 + g * g)


def gaussian(nu, fwhm: float) -> np.ndarray:
    """Unit-area Gaussian."""
    s = fwhm / GAUSS_FWHM_PER_SIGMA
    return np.exp(-0.5 * (np.asarray(nu, dtype=float) / s) ** 2) / (s * math.sqrt(2 * math.pi))


def tophat(nu, fwhm: float) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    return np.where(np.abs(nu) <= fwhm / 2, 1.0 / fwhm, 0.0)


def _cdf(kind: str, fwhm: float, x):
    x = np.asarray(x, dtype=float)
    if kind == "lorentzian":
        return 0.5 + np.arctan(2 * x / fwhm) / math.pi
    if kind == "gaussian":
        s = fwhm / GAUSS_FWHM_PER_SIGMA
        return 0.5 * (1 + erf(x / (s * math.sqrt(2))))
    return np.clip(x / fwhm + 0.5, 0.0, 1.0)


_DENSITY = {"lorentzian": lorentzian, "gaussian": gaussian, "tophat": tophat}


def lineshape_convolved(nu, lorentz_fwhm: float, laser_fwhm: float, kernel: str = "gaussian",
                        points_per_width: int = 200) -> np.ndarray:
    """Peak-normalised Lorentzian convolved with the laser kernel.

    Parameters
    ----------
    nu : array_like
        Detuning from line centre [Hz].
    lorentz_fwhm : float
        Homogeneous linewidth [Hz].
    laser_fwhm : float
        Laser jitter width [Hz]; 0 gives the bare Lorentzian.
    kernel : {"gaussian", "tophat"}
    points_per_width : int
        Internal grid points per FWHM of the wider shape.
    """
    if kernel not in ("gaussian", "tophat"):
        raise ConfigurationError(f"unknown laser kernel {kernel!r}")
    if lorentz_fwhm < 0 or laser_fwhm < 0 or lorentz_fwhm + laser_fwhm == 0:
        raise ConfigurationError("linewidths must be non-negative and not both zero")
    nu = np.asarray(nu, dtype=float)
    shapes = [("lorentzian", lorentz_fwhm), (kernel, laser_fwhm)]
    (wide_kind, wide), (narrow_kind, narrow) = sorted(shapes, key=lambda s: -s[1])
    if narrow == 0:
        f = _DENSITY[wide_kind]
        return f(nu, wide) / f(0.0, wide)

    h = wide / points_per_width
    reach = float(np.max(np.abs(nu), initial=0.0)) + 10 * wide
    n_k = int(math.ceil(reach / h))
    edges = h * (np.arange(-n_k, n_k + 2) - 0.5)
    masses = np.diff(_cdf(narrow_kind, narrow, edges))
    n_out = n_k
    grid = h * np.arange(-(n_out + n_k), n_out + n_k + 1)
    sampled = _DENSITY[wide_kind](grid, wide)
    conv = fftconvolve(sampled, masses, mode="valid")
    out_grid = h * np.arange(-n_out, n_out + 1)
    conv = conv / conv[n_out]
    return np.interp(nu, out_grid, conv)


def measure_fwhm(nu, y) -> float:
    """Full width at half maximum by linear interpolation of the crossings."""
    nu = np.asarray(nu, dtype=float)
    y = np.asarray(y, dtype=float)
    i = int(np.argmax(y))
    half = y[i] / 2
    left = np.flatnonzero(y[:i] < half)
    right = np.flatnonzero(y[i:] < half)
    if left.size == 0 or right.size == 0:
        raise EstimationError("profile does not fall below half maximum on both sides")
    a = left[-1]
    b = i + right[0]
    x_lo = np.interp(half, [y[a], y[a + 1]], [nu[a], nu[a + 1]])
    x_hi = np.interp(half, [y[b], y[b - 1]], [nu[b], nu[b - 1]])
    return float(x_hi - x_lo)


def voigt_fwhm_estimate(lorentz_fwhm: float, gauss_fwhm: float) -> float:
    """Olivero-Longbothum approximation, accurate to about 0.02%."""
    fl, fg = lorentz_fwhm, gauss_fwhm
    return 0.5346 * fl + math.sqrt(0.2166 * fl * fl + fg * fg)


def half_max_width(func, scale: float) -> float:
    """FWHM of a symmetric function peaked at 0, by root finding."""
    peak = func(0.0)
    x = brentq(lambda v: func(v) - peak / 2, 0.0, 50 * scale, xtol=1e-12 * scale)
    return 2 * x
