"""Photon-counting simulation and pulsed g2 analysis.

Timestamps are integer picoseconds. Pulse ``j`` fires at
``sync_offset + j * pulse_period``. Detected photons are split 50/50 between
two detectors (Hanbury Brown-Twiss arrangement) unless ``n_channels=1``.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .errors import ConfigurationError, EstimationError
from .levels import ExcitationSpec
from .rng import make_rng

PS = 1e-12


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 1.0
    dark_rate: float = 0.0
    dead_time: float = 0.0
    jitter_sigma: float = 0.0

    def __post_init__(self):
        if min(self.efficiency, self.dark_rate, self.dead_time, self.jitter_sigma) < 0:
            raise ConfigurationError("detector parameters must be non-negative")
        if self.efficiency > 1:
            raise ConfigurationError("detector efficiency cannot exceed 1")


@dataclass
class ClickStream:
    timestamps: np.ndarray
    channels: np.ndarray
    pulse_period: int
    n_pulses: int
    sync_offset: int = 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.int64)
        if self.timestamps.shape != self.channels.shape:
            raise ValueError("timestamps and channels differ in length")
        if self.timestamps.size and (self.timestamps[0] < 0 or np.any(np.diff(self.timestamps) < 0)):
            raise ValueError("timestamps must be non-negative and sorted")
        if self.pulse_period <= 0:
            raise ValueError("pulse period must be positive")

    def __len__(self):
        return int(self.timestamps.size)

    def shifted(self, delta_ps: int) -> "ClickStream":
        """Same stream with every time, including the pulse clock, moved by ``delta_ps``."""
        return ClickStream(self.timestamps + delta_ps, self.channels.copy(), self.pulse_period,
                           self.n_pulses, self.sync_offset + delta_ps)

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        buf.write(f"# pulse_period_ps={self.pulse_period}\n")
        buf.write(f"# n_pulses={self.n_pulses}\n")
        buf.write(f"# sync_offset_ps={self.sync_offset}\n")
        buf.write("timestamp_ps,channel\n")
        for t, c in zip(self.timestamps.tolist(), self.channels.tolist()):
            buf.write(f"{t},{c}\n")
        return _emit(buf.getvalue(), target)

    @classmethod
    def from_csv(cls, source) -> "ClickStream":
        text = _read(source)
        meta = {}
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = int(val)
            elif line and not line.startswith("timestamp"):
                t, c = line.split(",")
                rows.append((int(t), int(c)))
        arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], meta["pulse_period_ps"], meta["n_pulses"],
                   meta.get("sync_offset_ps", 0))


def _read(source):
    if hasattr(source, "read"):
        return source.read()
    if isinstance(source, Path) or ("\n" not in str(source) and Path(source).exists()):
        return Path(source).read_text()
    return str(source)


def _emit(text, target):
    if target is not None:
        if hasattr(target, "write"):
            target.write(text)
        else:
            Path(target).write_text(text)
    return text


def _dead_time_mask(times, dead):
    """Non-paralyzable dead time: a click is lost if it falls within ``dead`` of the last kept one."""
    keep = np.ones(times.size, dtype=bool)
    if dead <= 0 or times.size < 2:
        return keep
    if np.all(np.diff(times) >= dead):
        return keep
    last = times[0]
    for i in range(1, times.size):
        t = times[i]
        if t - last < dead:
            keep[i] = False
        else:
            last = t
    return keep


def simulate_stream(n_emitters: int, exc, lifetime: float, det: DetectorSpec, n_pulses: int,
                    period: float, background_rate: float = 0.0, seed: int | None = None,
                    n_channels: int = 2) -> ClickStream:
    """Monte-Carlo click stream for ``n_emitters`` independent emitters.

    Parameters
    ----------
    n_emitters : int
    exc : ExcitationSpec or float
        Excitation per pulse; a float is taken directly as the per-pulse
        excitation probability. Each emitter is excited at most once per pulse.
    lifetime : float
        Radiative lifetime [s]; emission delays are exponential.
    det : DetectorSpec
        Dark rate applies per channel, dead time per channel.
    n_pulses : int
    period : float
        Pulse period [s].
    background_rate : float
        Uncorrelated background [counts/s] summed over channels, arriving
        uniformly in time.
    seed : int
        Required.
    n_channels : {1, 2}
    """
    if seed is None:
        raise ConfigurationError("simulate_stream needs an explicit seed")
    if n_emitters < 0 or n_pulses < 0 or period <= 0 or lifetime <= 0 or background_rate < 0:
        raise ConfigurationError("invalid stream parameters")
    if n_channels not in (1, 2):
        raise ConfigurationError("n_channels must be 1 or 2")
    if period < 5 * lifetime:
        warnings.warn("pulse period is shorter than five lifetimes; emission leaks into later pulses",
                      stacklevel=2)
    p_exc = exc.pulse_probability if isinstance(exc, ExcitationSpec) else float(exc)
    if not 0 <= p_exc <= 1:
        raise ConfigurationError("excitation probability must lie in [0, 1]")

    period_ps = int(round(period / PS))
    span = n_pulses * period_ps

    rng = make_rng(seed, "photons.signal")
    per_pulse = rng.binomial(n_emitters, p_exc * det.efficiency, n_pulses)
    pulse_idx = np.repeat(np.arange(n_pulses, dtype=np.int64), per_pulse)
    delays = np.rint(rng.exponential(lifetime / PS, pulse_idx.size)).astype(np.int64)
    sig_t = pulse_idx * period_ps + delays
    sig_c = rng.integers(0, n_channels, sig_t.size)

    rng = make_rng(seed, "photons.background")
    n_bg = rng.poisson(background_rate * span * PS) if span else 0
    bg_t = rng.integers(0, max(span, 1), n_bg)
    bg_c = rng.integers(0, n_channels, n_bg)

    rng = make_rng(seed, "photons.dark")
    dark_t, dark_c = [], []
    for ch in range(n_channels):
        n_dark = rng.poisson(det.dark_rate * span * PS) if span else 0
        dark_t.append(rng.integers(0, max(span, 1), n_dark))
        dark_c.append(np.full(n_dark, ch))

    t = np.concatenate([sig_t, bg_t, *dark_t]).astype(np.int64)
    c = np.concatenate([sig_c, bg_c, *dark_c]).astype(np.int64)
    order = np.lexsort((c, t))
    t, c = t[order], c[order]

    dead_ps = int(round(det.dead_time / PS))
    keep = np.ones(t.size, dtype=bool)
    for ch in range(n_channels):
        sel = np.flatnonzero(c == ch)
        keep[sel] = _dead_time_mask(t[sel], dead_ps)
    t, c = t[keep], c[keep]

    if det.jitter_sigma > 0 and t.size:
        rng = make_rng(seed, "photons.jitter")
        t = t + np.rint(rng.normal(0.0, det.jitter_sigma / PS, t.size)).astype(np.int64)
        t = np.maximum(t, 0)
        order = np.lexsort((c, t))
        t, c = t[order], c[order]
    return ClickStream(t, c, period_ps, n_pulses)


@dataclass
class G2Histogram:
    k: np.ndarray
    counts: np.ndarray
    normalization: float
    g2_zero: float
    g2_error: float
    n_clicks: int

    @property
    def normalized(self) -> np.ndarray:
        return self.counts / self.normalization

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        buf.write("k,counts\n")
        for k, n in zip(self.k.tolist(), self.counts.tolist()):
            buf.write(f"{k},{n:.12g}\n")
        return _emit(buf.getvalue(), target)


def pulsed_g2(stream: ClickStream, max_k: int = 20) -> G2Histogram:
    """Pulsed second-order correlation from a click stream.

    Each click is assigned to the nearest pulse. With two channels,
    ``C_k = sum_j a_j b_{j+k}``; with one channel, ``C_0 = sum_j n_j (n_j - 1)``
    and ``C_k = sum_j n_j n_{j+k}``. Every ``C_k`` is scaled to the overlap
    length of the zero-delay sum, and

        g2(0) = C_0 / mean(C_k, 1 <= |k| <= max_k)

    The error combines Poisson noise on ``C_0`` and on the side-peak mean.
    """
    if len(stream) < 2:
        raise EstimationError("pulsed g2 needs at least two clicks")
    if max_k < 1:
        raise ConfigurationError("max_k must be at least 1")
    rel = stream.timestamps - stream.sync_offset
    idx = np.floor_divide(2 * rel + stream.pulse_period, 2 * stream.pulse_period)
    idx -= idx.min()
    m = int(idx.max()) + 1
    chans = np.unique(stream.channels)
    if chans.size > 2:
        raise EstimationError("pulsed g2 handles one or two channels")
    a = np.bincount(idx[stream.channels == chans[0]], minlength=m).astype(float)
    two = chans.size == 2
    b = np.bincount(idx[stream.channels == chans[-1]], minlength=m).astype(float) if two else a

    ks = np.arange(-max_k, max_k + 1)
    counts = np.empty(ks.size)
    overlap = np.empty(ks.size)
    for i, k in enumerate(ks):
        if k >= 0:
            counts[i] = a[: m - k] @ b[k:] if k < m else 0.0
        else:
            counts[i] = a[-k:] @ b[: m + k] if -k < m else 0.0
        overlap[i] = max(m - abs(k), 0)
    if not two:
        counts[max_k] = float(a @ (a - 1))
    side = np.abs(ks) >= 1
    valid = side & (overlap > 0)
    scaled = counts[valid] * m / overlap[valid]
    mean_side = float(scaled.mean())
    if mean_side <= 0:
        raise EstimationError("no side-peak coincidences; cannot normalise g2")
    c0 = counts[max_k]
    g = c0 / mean_side
    var = max(c0, 1.0) / mean_side**2 + c0**2 / mean_side**4 * mean_side / valid.sum()
    return G2Histogram(ks, counts, mean_side, float(g), float(math.sqrt(var)), len(stream))


def g2_with_background(n_emitters: int, signal_fraction: float) -> float:
    """Pulsed g2(0) of N emitters plus uncorrelated Poissonian background."""
    rho = signal_fraction
    if not 0 <= rho <= 1:
        raise ConfigurationError("signal fraction must lie in [0, 1]")
    if n_emitters < 1:
        raise ConfigurationError("need at least one emitter")
    return rho**2 * (n_emitters - 1) / n_emitters + 2 * rho * (1 - rho) + (1 - rho) ** 2


def signal_fraction_for_g2(n_emitters: int, g2_target: float) -> float:
    """Invert ``g2_with_background`` for the signal fraction."""
    floor = g2_with_background(n_emitters, 1.0)
    if not floor <= g2_target <= 1.0:
        raise ConfigurationError(f"g2 target must lie in [{floor:g}, 1] for N={n_emitters}")
    if g2_target == floor:
        return 1.0
    if g2_target == 1.0:
        return 0.0
    return brentq(lambda r: g2_with_background(n_emitters, r) - g2_target, 0.0, 1.0, xtol=1e-15)


def background_rate_for_signal_fraction(signal_fraction: float, n_emitters: int,
                                        excitation_probability: float, efficiency: float,
                                        period: float) -> float:
    """Background rate [counts/s] that gives the requested signal fraction per pulse."""
    if not 0 < signal_fraction <= 1:
        raise ConfigurationError("signal fraction must lie in (0, 1]")
    signal = n_emitters * excitation_probability * efficiency
    return signal * (1 - signal_fraction) / signal_fraction / period


def camera_image(positions, psf_sigma: float, pixel_pitch: float, photons, shape,
                 origin=(0.0, 0.0), seed: int | None = None) -> np.ndarray:
    """Camera frame of point emitters blurred by a Gaussian PSF.

    Parameters
    ----------
    positions : array_like, shape (M, 2)
        Emitter (x, y) coordinates, same length unit as ``pixel_pitch``.
    psf_sigma, pixel_pitch : float
    photons : int or array_like of int
        Detected photons per emitter.
    shape : (ny, nx)
    origin : (x0, y0)
        Corner of pixel (0, 0).
    seed : int, optional
        With a seed, every photon is drawn from the PSF and binned (integer
        counts). Without one, the expected image is returned.
    """
    if pixel_pitch <= 0:
        raise ConfigurationError("pixel pitch must be positive")
    if psf_sigma < 0:
        raise ConfigurationError("PSF width must be non-negative")
    pos = np.atleast_2d(np.asarray(positions, dtype=float)).reshape(-1, 2)
    counts = np.broadcast_to(np.asarray(photons), (pos.shape[0],))
    ny, nx = shape
    xe = origin[0] + pixel_pitch * np.arange(nx + 1)
    ye = origin[1] + pixel_pitch * np.arange(ny + 1)
    if seed is not None:
        rng = make_rng(seed, "photons.camera")
        img = np.zeros((ny, nx))
        for (x, y), n in zip(pos, counts):
            pts = rng.normal((x, y), psf_sigma, size=(int(n), 2))
            h, _, _ = np.histogram2d(pts[:, 1], pts[:, 0], bins=(ye, xe))
            img += h
        return img.astype(np.int64)

    def cell_mass(edges, c):
        if psf_sigma == 0:
            return -np.diff((edges <= c).astype(float))
        return np.diff(0.5 * erf((edges - c) / (psf_sigma * math.sqrt(2))))

    img = np.zeros((ny, nx))
    for (x, y), n in zip(pos, counts):
        img += n * np.outer(cell_mass(ye, y), cell_mass(xe, x))
    return img


def localize_centroid(image, pixel_pitch: float, origin=(0.0, 0.0)) -> tuple[float, float]:
    """Intensity-weighted centroid (x, y) in physical units."""
    img = np.asarray(image, dtype=float)
    total = img.sum()
    if total <= 0:
        raise EstimationError("empty image has no centroid")
    ny, nx = img.shape
    xc = origin[0] + pixel_pitch * (np.arange(nx) + 0.5)
    yc = origin[1] + pixel_pitch * (np.arange(ny) + 0.5)
    return float(img.sum(axis=0) @ xc / total), float(img.sum(axis=1) @ yc / total)


def local_maxima(image) -> list[tuple[int, int]]:
    """Pixels strictly above all eight neighbours, as (row, col)."""
    img = np.asarray(image, dtype=float)
    pad = np.pad(img, 1, constant_values=-np.inf)
    ny, nx = img.shape
    peak = np.ones_like(img, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                peak &= img > pad[1 + dy: 1 + dy + ny, 1 + dx: 1 + dx + nx]
    return [tuple(map(int, rc)) for rc in np.argwhere(peak)]


def image_to_pgm(image, target=None) -> str:
    """Plain (P2) PGM; values are rounded and scaled down only if above 65535."""
    img = np.rint(np.asarray(image, dtype=float))
    top = max(1.0, float(img.max(initial=0.0)))
    if top > 65535:
        img = np.rint(img * 65535 / top)
        top = 65535.0
    ny, nx = img.shape
    lines = ["P2", f"{nx} {ny}", str(int(top))]
    lines += [" ".join(str(int(v)) for v in row) for row in img]
    return _emit("\n".join(lines) + "\n", target)


def image_to_csv(image, target=None) -> str:
    rows = [",".join(f"{v:.12g}" for v in row) for row in np.asarray(image, dtype=float)]
    return _emit("\n".join(rows) + "\n", target)
