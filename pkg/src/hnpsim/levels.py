"""Five-level Er3+ population dynamics.

Level order is fixed: G (4I15/2), T (4I13/2), N1 (4I11/2), R (4F9/2),
H (2H11/2). A decay from level i straight to G emits a photon at level i's
emission wavelength; decays into other excited levels are treated as
non-radiative relaxation.

Times are in seconds, photon flux in cm^-2 s^-1, cross sections in cm^2.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError

H_PLANCK = 6.62607015e-34
C_LIGHT = 2.99792458e8

LABELS = ("G", "T", "N1", "R", "H")
GROUND = 0

# upconversion-channel lifetimes [s] for the 518 / 660 / 980 nm emitters
LIFETIME_PRESETS = {
    "main_text": {"H": 164e-6, "R": 310e-6, "N1": 700e-6},
    "caption": {"H": 164e-6, "R": 380e-6, "N1": 712e-6},
}
TELECOM_LIFETIME = 1.2e-3

# Unpublished excited-state absorption efficiencies; placeholders for the
# ladder G -> T -> N1 -> R -> H climbed one telecom pi pulse at a time.
DEFAULT_LADDER = {("G", "T"): 1.0, ("T", "N1"): 0.1, ("N1", "R"): 0.1, ("R", "H"): 0.1}


@dataclass(frozen=True)
class Level:
    label: str
    emission_wavelength: float | None  # nm, transition to G
    lifetime: float  # s; math.inf for the ground state


@dataclass(frozen=True)
class ExcitationSpec:
    photon_flux: float
    cross_section: float
    pulse_width: float = 0.0

    def __post_init__(self):
        if min(self.photon_flux, self.cross_section, self.pulse_width) < 0:
            raise ConfigurationError("excitation parameters must be non-negative")

    @property
    def rate(self) -> float:
        """Excitation rate sigma * phi [1/s]."""
        return self.cross_section * self.photon_flux

    @property
    def pulse_probability(self) -> float:
        """Probability that one pulse excites the ion, 1 - exp(-sigma phi t_p)."""
        return -math.expm1(-self.rate * self.pulse_width)


def _index(levels, key):
    if isinstance(key, (int, np.integer)):
        return int(key)
    labels = [lv.label for lv in levels]
    try:
        return labels.index(key)
    except ValueError:
        raise ConfigurationError(f"unknown level {key!r}") from None


@dataclass
class LevelSystem:
    levels: tuple
    branching: np.ndarray
    ladder_promotion: dict = field(default_factory=dict)
    pump: dict = field(default_factory=lambda: {("G", "T"): 1.0})

    def __post_init__(self):
        self.levels = tuple(self.levels)
        n = len(self.levels)
        if n != 5:
            raise ConfigurationError("the level system has exactly five levels")
        b = np.asarray(self.branching, dtype=float)
        if b.shape != (n, n) or np.any(b < 0):
            raise ConfigurationError("branching must be a non-negative 5x5 matrix")
        if not math.isinf(self.levels[GROUND].lifetime):
            raise ConfigurationError("ground level must have infinite lifetime")
        for i, lv in enumerate(self.levels):
            if not lv.lifetime > 0:
                raise ConfigurationError(f"lifetime of {lv.label} must be positive")
            if math.isfinite(lv.lifetime):
                if b[i, i] != 0 or abs(b[i].sum() - 1) > 1e-9:
                    raise ConfigurationError(f"branching row {lv.label} must sum to 1 off-diagonal")
        self.branching = b
        self.ladder_promotion = {
            (_index(self.levels, f), _index(self.levels, t)): float(p)
            for (f, t), p in self.ladder_promotion.items()
        }
        self.pump = {(_index(self.levels, f), _index(self.levels, t)): float(w)
                     for (f, t), w in self.pump.items()}
        out = np.zeros(n)
        for (f, t), p in self.ladder_promotion.items():
            if not 0 <= p <= 1:
                raise ConfigurationError("promotion probabilities must lie in [0, 1]")
            out[f] += p
        if np.any(out > 1 + 1e-12):
            raise ConfigurationError("promotion probabilities out of one level exceed 1")

    @property
    def lifetimes(self) -> np.ndarray:
        return np.array([lv.lifetime for lv in self.levels])

    @property
    def labels(self) -> tuple:
        return tuple(lv.label for lv in self.levels)

    def promotion_matrix(self) -> np.ndarray:
        """Column-stochastic single-pulse map M with n_after = M @ n_before."""
        n = len(self.levels)
        m = np.eye(n)
        for (f, t), p in self.ladder_promotion.items():
            m[t, f] += p
            m[f, f] -= p
        return m

    def generator(self, excitation_rate: float = 0.0) -> np.ndarray:
        """Rate matrix K of dn/dt = K n (columns sum to zero)."""
        n = len(self.levels)
        k = np.zeros((n, n))
        for i, lv in enumerate(self.levels):
            if math.isfinite(lv.lifetime):
                k[:, i] += self.branching[i] / lv.lifetime
                k[i, i] -= 1.0 / lv.lifetime
        for (f, t), w in self.pump.items():
            k[t, f] += excitation_rate * w
            k[f, f] -= excitation_rate * w
        return k


def default_level_system(preset: str = "main_text", telecom_lifetime: float = TELECOM_LIFETIME,
                         ladder=None) -> LevelSystem:
    if preset not in LIFETIME_PRESETS:
        raise ConfigurationError(f"unknown lifetime preset {preset!r}")
    tau = LIFETIME_PRESETS[preset]
    levels = (
        Level("G", None, math.inf),
        Level("T", 1534.0, telecom_lifetime),
        Level("N1", 980.0, tau["N1"]),
        Level("R", 660.0, tau["R"]),
        Level("H", 518.0, tau["H"]),
    )
    branching = np.zeros((5, 5))
    branching[1:, GROUND] = 1.0
    return LevelSystem(levels, branching, dict(DEFAULT_LADDER if ladder is None else ladder))


def _rk4(k, n0, h, n_steps):
    traj = np.empty((n_steps + 1, n0.size))
    traj[0] = n0
    y = n0
    for s in range(n_steps):
        k1 = k @ y
        k2 = k @ (y + 0.5 * h * k1)
        k3 = k @ (y + 0.5 * h * k2)
        k4 = k @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        traj[s + 1] = y
    return traj


def max_stable_step(sys: LevelSystem, exc: ExcitationSpec) -> float:
    scales = [t for t in sys.lifetimes if math.isfinite(t)]
    pump = exc.rate * max(sys.pump.values(), default=0.0)
    if pump > 0:
        scales.append(1.0 / pump)
    return min(scales) / 50 if scales else math.inf


def integrate_populations(sys: LevelSystem, exc: ExcitationSpec, duration: float, step: float,
                          initial=None):
    """Fixed-step RK4 integration of the rate equations under continuous pumping.

    Parameters
    ----------
    sys, exc : LevelSystem, ExcitationSpec
    duration : float
        Total time [s].
    step : float
        Requested step [s]; the actual step is ``duration / ceil(duration / step)``.
        Must not exceed 1/50 of the shortest lifetime or pump time.
    initial : sequence of 5 floats, optional
        Starting populations (default: everything in G).

    Returns
    -------
    times : ndarray, shape (n+1,)
    populations : ndarray, shape (n+1, 5)
    """
    if not step > 0 or duration < 0:
        raise ConfigurationError("step must be positive and duration non-negative")
    limit = max_stable_step(sys, exc)
    if step > limit * (1 + 1e-12):
        raise ConfigurationError(f"step {step:g} s exceeds stability limit {limit:g} s")
    n0 = np.zeros(5)
    n0[GROUND] = 1.0
    if initial is not None:
        n0 = np.asarray(initial, dtype=float)
        if n0.shape != (5,) or np.any(n0 < 0) or abs(n0.sum() - 1) > 1e-12:
            raise ConfigurationError("initial populations must be 5 non-negative values summing to 1")
    n_steps = max(1, math.ceil(duration / step)) if duration > 0 else 0
    h = duration / n_steps if n_steps else 0.0
    traj = _rk4(sys.generator(exc.rate), n0, h, n_steps)
    return np.arange(n_steps + 1) * h, traj


def trajectory_csv(times, populations, labels=LABELS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s"] + [f"n_{lab}" for lab in labels])
    for t, row in zip(times, populations):
        w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in row])
    return buf.getvalue()


def saturation_flux(cross_section: float, tau_effective: float) -> float:
    """phi_sat = 1 / (sigma tau) [cm^-2 s^-1]."""
    if not (cross_section > 0 and tau_effective > 0):
        raise ConfigurationError("cross section and lifetime must be positive")
    return 1.0 / (cross_section * tau_effective)


def saturation_curve(cross_section, tau_effective, flux, r_inf=1.0):
    """Emission rate R_inf * phi / (phi + phi_sat) on a flux grid."""
    phi = np.asarray(flux, dtype=float)
    phi_sat = saturation_flux(cross_section, tau_effective)
    return r_inf * phi / (phi + phi_sat)


def flux_to_intensity(flux: float, wavelength_nm: float) -> float:
    """Photon flux [cm^-2 s^-1] to optical intensity [W cm^-2]."""
    return flux * H_PLANCK * C_LIGHT / (wavelength_nm * 1e-9)


def trpl_decay(amplitudes, lifetimes, t):
    """Multi-exponential decay sum_i A_i exp(-t / tau_i)."""
    t = np.asarray(t, dtype=float)
    amplitudes = np.atleast_1d(np.asarray(amplitudes, dtype=float))
    lifetimes = np.atleast_1d(np.asarray(lifetimes, dtype=float))
    if amplitudes.shape != lifetimes.shape:
        raise ValueError("need one amplitude per lifetime")
    if np.any(lifetimes <= 0):
        raise ValueError("lifetimes must be positive")
    return np.sum(amplitudes[:, None] * np.exp(-t[None, :] / lifetimes[:, None]), axis=0)


@dataclass(frozen=True)
class UpconversionResult:
    populations: np.ndarray  # right after the pulse train
    yields: dict  # emission wavelength [nm] -> expected photons per train


def photon_yields(sys: LevelSystem, populations) -> dict:
    """Expected photons per emission channel while ``populations`` relax to G.

    Uses the absorbing-chain visit counts ``v = p (I - P)^-1`` over levels with
    a finite lifetime; levels with infinite lifetime never emit.
    """
    p = np.asarray(populations, dtype=float)
    decaying = [i for i, lv in enumerate(sys.levels) if math.isfinite(lv.lifetime)]
    out = {lv.emission_wavelength: 0.0 for lv in sys.levels if lv.emission_wavelength is not None}
    if not decaying:
        return out
    sub = sys.branching[np.ix_(decaying, decaying)]
    visits = np.linalg.solve((np.eye(len(decaying)) - sub).T, p[decaying])
    for v, i in zip(visits, decaying):
        lv = sys.levels[i]
        if lv.emission_wavelength is not None:
            out[lv.emission_wavelength] += float(v * sys.branching[i, GROUND])
    return out


def upconversion_sequence(sys: LevelSystem, n_pulses: int, initial=None) -> UpconversionResult:
    """Apply ``n_pulses`` instantaneous promotion maps, then let the ion relax.

    Pulses are taken to be much shorter and closer together than any lifetime,
    so nothing decays during the train.
    """
    if not (isinstance(n_pulses, (int, np.integer)) and 1 <= n_pulses <= 100):
        raise ConfigurationError("n_pulses must be an integer in [1, 100]")
    if not sys.ladder_promotion:
        raise ConfigurationError("no ladder promotion defined for the pulse wavelength")
    n = np.zeros(5)
    n[GROUND] = 1.0
    if initial is not None:
        n = np.asarray(initial, dtype=float).copy()
    m = sys.promotion_matrix()
    for _ in range(n_pulses):
        n = m @ n
    return UpconversionResult(n, photon_yields(sys, n))


def channel_decay_curves(sys: LevelSystem, populations, t) -> dict:
    """Photon emission rate per channel [photons/s] after a pulse train, vs time."""
    t = np.asarray(t, dtype=float)
    k = sys.generator(0.0)
    pops = np.array([expm(k * ti) @ populations for ti in t])
    curves = {}
    for i, lv in enumerate(sys.levels):
        if lv.emission_wavelength is not None and math.isfinite(lv.lifetime):
            curves[lv.emission_wavelength] = pops[:, i] * sys.branching[i, GROUND] / lv.lifetime
    return curves
