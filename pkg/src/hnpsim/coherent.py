"""Optical Bloch equations and Rabi / Ramsey / photon-echo sequences.

Bloch vector (u, v, w) with w = -1 in the ground state; excited population is
(1 + w) / 2. Equations of motion, with Omega non-zero only while driving::

    du/dt = -u/T2 + delta v
    dv/dt = -v/T2 - delta u + Omega w
    dw/dt = -(w + 1)/T1 - Omega v

Omega and delta are angular frequencies [rad/s]; times in seconds. A negative
Omega is a pulse of opposite phase (-x instead of +x).

Ramsey and echo signals are reported as phase-cycled projection amplitudes:
the first and last pulses are each run with both phases and combined so that
only the coherence created by the first pulse survives. Population offsets
from T1 relaxation cancel exactly, leaving the pure coherence envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError
from .rng import make_rng

GROUND_STATE = (0.0, 0.0, -1.0)


def _inv(t):
    return 0.0 if math.isinf(t) else 1.0 / t


@dataclass(frozen=True)
class CoherenceParams:
    rabi_angular_frequency: float
    detuning: float = 0.0
    T1: float = math.inf
    T2: float = math.inf
    T2_star: float = math.inf

    def __post_init__(self):
        for name in ("T1", "T2", "T2_star"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if math.isfinite(self.T1) and math.isfinite(self.T2) and self.T2 > 2 * self.T1 * (1 + 1e-12):
            raise ConfigurationError("T2 cannot exceed 2 T1")

    @property
    def detuning_spread(self) -> float:
        """Gaussian standard deviation of static detuning giving this T2*."""
        return 0.0 if math.isinf(self.T2_star) else math.sqrt(2.0) / self.T2_star


@dataclass(frozen=True)
class Segment:
    kind: str
    duration: float
    omega: float = 0.0
    t2: float | None = None  # overrides CoherenceParams.T2 inside this segment

    def __post_init__(self):
        if self.kind not in ("drive", "free"):
            raise ConfigurationError(f"segment kind must be 'drive' or 'free', not {self.kind!r}")
        if not self.duration > 0:
            raise ConfigurationError("segment durations must be positive")
        if self.kind == "free" and self.omega != 0:
            raise ConfigurationError("free segments carry no drive")


def pulse(theta: float, omega: float) -> Segment:
    """Drive segment rotating by ``theta`` at Rabi rate ``omega`` (sign = phase)."""
    if omega == 0:
        raise ConfigurationError("a pulse needs a non-zero Rabi frequency")
    return Segment("drive", abs(theta) / abs(omega), omega)


def pulse_width(theta: float, omega: float) -> float:
    return abs(theta / omega)


def rabi_from_width(theta: float, width: float) -> float:
    return theta / width


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ConfigurationError("pulse sequence is empty")

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    @classmethod
    def from_entries(cls, entries, omega: float):
        """Build from ``{kind, duration}`` / ``{kind: drive, theta}`` mappings."""
        segs = []
        for e in entries:
            if e["kind"] == "drive" and "theta" in e:
                segs.append(pulse(e["theta"], e.get("omega", omega)))
            elif e["kind"] == "drive":
                segs.append(Segment("drive", e["duration"], e.get("omega", omega)))
            else:
                segs.append(Segment("free", e["duration"], 0.0, e.get("t2")))
        return cls(tuple(segs))


@dataclass
class BlochResult:
    final: np.ndarray
    times: np.ndarray | None = None
    trajectory: np.ndarray | None = None

    @property
    def excited_population(self):
        return 0.5 * (1.0 + self.final[..., 2])


def _segment_limit(seg: Segment, params: CoherenceParams, delta_max: float) -> float:
    t2 = params.T2 if seg.t2 is None else seg.t2
    scales = [t2, params.T1]
    if seg.omega:
        scales.append(1.0 / abs(seg.omega))
    if delta_max:
        scales.append(1.0 / delta_max)
    return min(scales) / 50


def _rhs(x, omega, delta, g1, g2):
    u, v, w = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([
        -g2 * u + delta * v,
        -g2 * v - delta * u + omega * w,
        -g1 * (w + 1.0) - omega * v,
    ], axis=-1)


def _rk4_segment(x, h, n, omega, delta, g1, g2, keep=None):
    h = np.asarray(h)[..., None] if np.ndim(h) else h
    for _ in range(n):
        k1 = _rhs(x, omega, delta, g1, g2)
        k2 = _rhs(x + 0.5 * h * k1, omega, delta, g1, g2)
        k3 = _rhs(x + 0.5 * h * k2, omega, delta, g1, g2)
        k4 = _rhs(x + h * k3, omega, delta, g1, g2)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if keep is not None:
            keep.append(x)
    return x


def _exact_segment(x, duration, omega, delta, g1, g2):
    delta = np.broadcast_to(np.asarray(delta, dtype=float), x.shape[:-1])
    m = np.zeros(x.shape[:-1] + (4, 4))
    m[..., 0, 0] = -g2
    m[..., 0, 1] = delta
    m[..., 1, 0] = -delta
    m[..., 1, 1] = -g2
    m[..., 1, 2] = omega
    m[..., 2, 1] = -omega
    m[..., 2, 2] = -g1
    m[..., 2, 3] = -g1
    prop = expm(m * duration)
    aug = np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)
    return np.einsum("...ij,...j->...i", prop, aug)[..., :3]


def bloch_evolve(state, params: CoherenceParams, seq: PulseSequence, step=None,
                 method: str = "rk4", detuning=None, trajectory: bool = True) -> BlochResult:
    """Propagate Bloch vector(s) through a pulse sequence.

    Parameters
    ----------
    state : array_like, shape (3,) or (B, 3)
    params : CoherenceParams
        ``detuning`` applies unless ``detuning`` is given explicitly.
    seq : PulseSequence
    step : float, optional
        RK4 step [s]. Must satisfy ``step <= min(1/|Omega|, T2, T1, 1/|delta|)/50``
        in every segment; by default each segment uses its own limit.
    method : {"rk4", "exact"}
        "exact" uses the matrix exponential of each piecewise-constant segment.
    detuning : array_like, shape (B,), optional
        Per-member static detunings for ensemble propagation.
    trajectory : bool
        Keep every intermediate state (rk4 only).
    """
    x = np.array(state, dtype=float)
    if x.shape[-1] != 3:
        raise ConfigurationError("Bloch state must have three components")
    delta = params.detuning if detuning is None else np.asarray(detuning, dtype=float)
    if np.ndim(delta) and x.ndim == 1:
        x = np.broadcast_to(x, np.shape(delta) + (3,)).copy()
    delta_max = float(np.max(np.abs(delta))) if np.size(delta) else 0.0
    g1 = _inv(params.T1)

    if method == "exact":
        for seg in seq.segments:
            g2 = _inv(params.T2 if seg.t2 is None else seg.t2)
            x = _exact_segment(x, seg.duration, seg.omega, delta, g1, g2)
        return BlochResult(x)
    if method != "rk4":
        raise ConfigurationError(f"unknown method {method!r}")

    keep = [x] if trajectory else None
    times = [0.0] if trajectory else None
    t0 = 0.0
    for seg in seq.segments:
        limit = _segment_limit(seg, params, delta_max)
        if step is not None and step > limit * (1 + 1e-9):
            raise ConfigurationError(f"step {step:g} s exceeds limit {limit:g} s for a {seg.kind} segment")
        h_req = limit if step is None else step
        n = max(1, math.ceil(seg.duration / h_req - 1e-9)) if math.isfinite(h_req) else 1
        h = seg.duration / n
        g2 = _inv(params.T2 if seg.t2 is None else seg.t2)
        x = _rk4_segment(x, h, n, seg.omega, delta, g1, g2, keep)
        if trajectory:
            times.extend(t0 + h * np.arange(1, n + 1))
        t0 += seg.duration
    if trajectory:
        return BlochResult(x, np.asarray(times), np.stack(keep))
    return BlochResult(x)


def rabi_experiment(params: CoherenceParams, t_p, contrast: float = 1.0, offset: float = 0.0,
                    mode: str = "fit", step=None):
    """Rabi signal versus pulse width.

    ``mode="fit"`` returns ``contrast * sin(Omega t_p) + offset``, the form used
    to fit measured oscillations. ``mode="bloch"`` returns
    ``offset + contrast * P_e(t_p)`` from the Bloch equations, starting in the
    ground state.
    """
    t_p = np.asarray(t_p, dtype=float)
    omega = params.rabi_angular_frequency
    if mode == "fit":
        return contrast * np.sin(omega * t_p) + offset
    if mode != "bloch":
        raise ConfigurationError(f"unknown Rabi mode {mode!r}")
    if np.any(t_p < 0):
        raise ConfigurationError("pulse widths must be non-negative")
    seg = Segment("drive", 1.0, omega)
    limit = _segment_limit(seg, params, abs(params.detuning))
    if step is not None:
        if step > limit * (1 + 1e-9):
            raise ConfigurationError("step exceeds Bloch stability limit")
        limit = step
    # every width is integrated with the same number of (width-scaled) steps
    n = max(1, math.ceil(float(t_p.max(initial=0.0)) / limit))
    x = np.broadcast_to(np.array(GROUND_STATE), t_p.shape + (3,)).copy()
    x = _rk4_segment(x, t_p / n, n, omega, params.detuning, _inv(params.T1), _inv(params.T2))
    return offset + contrast * 0.5 * (1.0 + x[..., 2])


def _phase_cycled(params, first: Segment, middle, last: Segment, detuning, method, step):
    """Phase-cycled projection amplitude of first - middle - last (w in [-1, 1])."""
    total = 0.0
    for s1 in (1, -1):
        for s2 in (1, -1):
            segs = [Segment(first.kind, first.duration, s1 * first.omega)]
            segs += list(middle)
            segs.append(Segment(last.kind, last.duration, s2 * last.omega))
            res = bloch_evolve(GROUND_STATE, params, PulseSequence(segs), step=step,
                               method=method, detuning=detuning, trajectory=False)
            total = total + s1 * s2 * res.final[..., 2]
    return total / 4.0


def _check_width(omega, width, theta):
    if omega == 0 or abs(abs(omega) * width - theta) > 1e-3 * theta:
        raise ConfigurationError(
            f"pulse width {width:g} s is inconsistent with Omega = {omega:g} rad/s "
            f"(expected Omega * width = {theta:g})")


def _ensemble_detunings(params, n_shots, seed):
    rng = make_rng(seed, "coherent.ensemble")
    return params.detuning + params.detuning_spread * rng.standard_normal(n_shots)


def ramsey_experiment(params: CoherenceParams, tau_free, pi_half_width: float,
                      mode: str = "analytic", n_shots: int = 1000, seed: int = 0,
                      method: str = "rk4", step=None):
    """Ramsey projection amplitude versus free-evolution time.

    Modes
    -----
    analytic : exp(-tau / T2*)
    bloch : pi/2 - free(tau) - pi/2 with T2* acting as the dephasing time in
        the free interval
    ensemble : average over static Gaussian detunings of spread sqrt(2)/T2*,
        with the homogeneous T2 acting in the free interval
    """
    tau = np.asarray(tau_free, dtype=float)
    if np.any(tau < 0):
        raise ConfigurationError("free-evolution times must be non-negative")
    if mode == "analytic":
        return np.exp(-tau * _inv(params.T2_star))
    omega = params.rabi_angular_frequency
    _check_width(omega, pi_half_width, math.pi / 2)
    first = Segment("drive", pi_half_width, omega)
    if mode == "bloch":
        t2_free, detuning = params.T2_star, None
    elif mode == "ensemble":
        t2_free, detuning = None, _ensemble_detunings(params, n_shots, seed)
    else:
        raise ConfigurationError(f"unknown Ramsey mode {mode!r}")
    out = np.empty_like(tau)
    for i, t in enumerate(tau):
        middle = [Segment("free", t, 0.0, t2_free)] if t > 0 else []
        amp = _phase_cycled(params, first, middle, first, detuning, method, step)
        out[i] = np.mean(amp)
    return out


def echo_experiment(params: CoherenceParams, tau_free, pi_width: float,
                    mode: str = "analytic", n_shots: int = 1000, seed: int = 0,
                    method: str = "rk4", step=None):
    """Photon-echo amplitude for pi/2 - tau/2 - pi - tau/2 - pi/2.

    Modes as in ``ramsey_experiment``; in "bloch" mode the free intervals
    dephase with T2, in "ensemble" mode static detunings (spread sqrt(2)/T2*)
    are added on top and refocused by the pi pulse. The final pulse phase is
    chosen so that a perfectly refocused echo reads +1.
    """
    tau = np.asarray(tau_free, dtype=float)
    if np.any(tau < 0):
        raise ConfigurationError("free-evolution times must be non-negative")
    if mode == "analytic":
        return np.exp(-tau * _inv(params.T2))
    omega = params.rabi_angular_frequency
    _check_width(omega, pi_width, math.pi)
    half = Segment("drive", pi_width / 2, omega)
    last = Segment("drive", pi_width / 2, -omega)
    if mode == "bloch":
        detuning = None
    elif mode == "ensemble":
        detuning = _ensemble_detunings(params, n_shots, seed)
    else:
        raise ConfigurationError(f"unknown echo mode {mode!r}")
    out = np.empty_like(tau)
    for i, t in enumerate(tau):
        middle = [Segment("drive", pi_width, omega)]
        if t > 0:
            middle = [Segment("free", t / 2)] + middle + [Segment("free", t / 2)]
        amp = _phase_cycled(params, half, middle, last, detuning, method, step)
        out[i] = np.mean(amp)
    return out


def intrinsic_linewidth(t_coherence: float) -> float:
    """Homogeneous linewidth 1 / (pi T) [Hz]."""
    if not t_coherence > 0:
        raise ConfigurationError("coherence time must be positive")
    return 0.0 if math.isinf(t_coherence) else 1.0 / (math.pi * t_coherence)
