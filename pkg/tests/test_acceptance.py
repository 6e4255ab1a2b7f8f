"""Acceptance gate: closed-loop simulate-then-estimate checks plus analytic oracles.

Each test records one PASS/FAIL line through the ``verdict`` fixture; the lines
are printed in the terminal summary of every pytest run.
"""

import hashlib
import math
import time

import numpy as np
import pytest
from scipy.stats import poisson

from hnpsim.blueprint import (
    ArrayGeometry,
    ExcitationSpot,
    OccupancyModel,
    expected_ions,
    g2_zero_model,
    hnps_in_spot,
    occupancy_pmf,
    sidewall_capture_area,
)
from hnpsim.cli import run
from hnpsim.coherent import (
    CoherenceParams,
    echo_experiment,
    intrinsic_linewidth,
    rabi_experiment,
    ramsey_experiment,
)
from hnpsim.config import preset, preset_names, resolve
from hnpsim.fitting import amplitude_ratio_for_mean, fit, model_spec, weighted_mean_lifetime
from hnpsim.levels import saturation_curve, saturation_flux, trpl_decay
from hnpsim.lineshape import lineshape_convolved, measure_fwhm, voigt_fwhm_estimate
from hnpsim.photons import (
    DetectorSpec,
    background_rate_for_signal_fraction,
    g2_with_background,
    pulsed_g2,
    signal_fraction_for_g2,
    simulate_stream,
)
from hnpsim.rng import make_rng

# tolerances
G2_ABS = 0.03
G2_RUNTIME_S = 30.0
PHI_SAT_FACTOR = 1.3
PHI_SAT_FIT_REL = 1e-4
COHERENCE_REL = 0.10
COHERENCE_MIN_PASS = 95
RABI_ABS = 1e-6
LINEWIDTH_ABS_HZ = 10.0
LASER_REL = 0.01
TRPL_REL = 0.10
PMF_NORM = 1e-12
ECHO_ABS = 0.01

TRIALS = 100
LIFETIME = 1.2e-3
PERIOD = 24e-3
CLEAN_DETECTOR = DetectorSpec(efficiency=0.1, dark_rate=0.0, dead_time=0.0, jitter_sigma=0.0)


def _noisy(y, level, seed, label):
    return y + level * np.max(np.abs(y)) * make_rng(seed, label).standard_normal(y.shape)


def test_1_emitter_number_law(verdict):
    worst, slowest, values = 0.0, 0.0, {}
    for n in range(1, 11):
        t0 = time.perf_counter()
        stream = simulate_stream(n, 0.9, LIFETIME, CLEAN_DETECTOR, 10**6, PERIOD, seed=100 + n)
        g = pulsed_g2(stream).g2_zero
        slowest = max(slowest, time.perf_counter() - t0)
        values[n] = g
        worst = max(worst, abs(g - g2_zero_model(n)))
    ok = verdict("1 emitter-number law", worst <= G2_ABS and slowest < G2_RUNTIME_S,
                 f"max |g2 - (N-1)/N| = {worst:.4f} over N=1..10, N=6 -> {values[6]:.3f}, "
                 f"slowest N {slowest:.1f} s")
    assert ok


def test_2_background_model(verdict):
    rho = signal_fraction_for_g2(1, 0.25)
    p, eff = 0.9, CLEAN_DETECTOR.efficiency
    bg = background_rate_for_signal_fraction(rho, 1, p, eff, PERIOD)
    stream = simulate_stream(1, p, LIFETIME, CLEAN_DETECTOR, 4 * 10**6, PERIOD, bg, seed=7)
    g = pulsed_g2(stream).g2_zero
    ok = verdict("2 background model",
                 abs(rho - math.sqrt(0.75)) < 1e-9 and abs(g2_with_background(1, rho) - 0.25) < 1e-12
                 and abs(g - 0.25) <= G2_ABS,
                 f"rho = {rho:.4f}, simulated g2(0) = {g:.3f}")
    assert ok


def test_3_saturation(verdict):
    phi_sat = saturation_flux(5e-17, LIFETIME)
    ratio = max(phi_sat / 2e19, 2e19 / phi_sat)
    flux = np.linspace(0.0, 2e20, 40)
    y = saturation_curve(5e-17, LIFETIME, flux)
    res = fit(model_spec("saturation", p0=[float(y.max()), float(np.median(flux))]), flux, y)
    rel = abs(res["phi_sat"] / phi_sat - 1)
    ok = verdict("3 saturation", ratio <= PHI_SAT_FACTOR and rel <= PHI_SAT_FIT_REL and res.converged,
                 f"phi_sat = {phi_sat:.4g} /cm2/s (factor {ratio:.3f} from 2e19), "
                 f"fit rel. error {rel:.1e}")
    assert ok


def _coherence_trials(cfg, block, experiment, model_id, name, target):
    c, b = cfg["coherence"], cfg[block]
    p = CoherenceParams(c["rabi_frequency"], c["detuning"], c["T1"], c["T2"], c["T2_star"])
    theta = math.pi / 2 if block == "ramsey" else math.pi
    width = b.get("pi_half_width" if block == "ramsey" else "pi_width") or theta / p.rabi_angular_frequency
    tau = np.linspace(0.0, b["tau_max"], b["points"])
    clean = experiment(p, tau, width, mode=b["mode"], n_shots=b["n_shots"], seed=cfg["seed"],
                       method=b["method"])
    hits = 0
    for trial in range(TRIALS):
        y = _noisy(clean, b["noise"], trial, f"acceptance.{block}")
        res = fit(model_spec(model_id, p0=[float(y[0]), b["tau_max"] / 3]), tau, y)
        hits += res.converged and abs(res[name] / target - 1) <= COHERENCE_REL
    return hits


def test_4_coherence_time_recovery(verdict):
    ramsey_cfg = resolve(preset("fig4d_ramsey"))
    echo_cfg = resolve(preset("fig4e_echo"))
    assert ramsey_cfg["ramsey"]["noise"] == echo_cfg["echo"]["noise"] == 0.02
    r_hits = _coherence_trials(ramsey_cfg, "ramsey", ramsey_experiment, "ramsey_env", "T2_star", 32e-6)
    e_hits = _coherence_trials(echo_cfg, "echo", echo_experiment, "echo_env", "T2", 568e-6)
    ok = verdict("4 coherence-time recovery",
                 r_hits >= COHERENCE_MIN_PASS and e_hits >= COHERENCE_MIN_PASS,
                 f"T2* within 10% in {r_hits}/{TRIALS}, T2 within 10% in {e_hits}/{TRIALS}")
    assert ok


def test_5_rabi_oracle(verdict):
    omega = 2 * math.pi * 660e3
    t = np.linspace(0.0, 5e-6, 200)
    p = CoherenceParams(omega)
    bloch = rabi_experiment(p, t, mode="bloch")
    err_bloch = float(np.max(np.abs(bloch - np.sin(omega * t / 2) ** 2)))
    data = rabi_experiment(p, t, contrast=0.96, offset=0.02, mode="bloch")
    res = fit(model_spec("rabi_bloch", p0=[0.9, 0.97 * omega, 0.0]), t, data)
    err_omega = abs(res["omega"] / omega - 1)
    err_contrast = abs(res["contrast"] - 0.96)
    ok = verdict("5 Rabi oracle", max(err_bloch, err_omega, err_contrast) <= RABI_ABS and res.converged,
                 f"|P_e - sin^2| = {err_bloch:.1e}, Omega rel. {err_omega:.1e}, "
                 f"contrast {res['contrast']:.8f}")
    assert ok


def test_6_linewidth_chain(verdict):
    intrinsic = intrinsic_linewidth(32e-6)
    widths = {}
    for laser in (67e6, 37e6):
        nu = np.linspace(-4 * laser, 4 * laser, 1601)
        y = lineshape_convolved(nu, intrinsic, laser)
        res = fit(model_spec("lineshape_convolved", p0=[0.8, 2e6, intrinsic, 0.8 * laser],
                             fixed={"lorentz_fwhm"}), nu, y)
        widths[laser] = (voigt_fwhm_estimate(res["lorentz_fwhm"], res["gauss_fwhm"]),
                         measure_fwhm(nu, y), res.converged)
    ok_lasers = all(c and abs(w / l - 1) <= LASER_REL and abs(m / l - 1) <= LASER_REL
                    for l, (w, m, c) in widths.items())
    ok = verdict("6 linewidth chain", abs(intrinsic - 9950.0) <= LINEWIDTH_ABS_HZ and ok_lasers,
                 f"intrinsic {intrinsic / 1e3:.3f} kHz, fitted "
                 f"{widths[67e6][0] / 1e6:.2f} MHz and {widths[37e6][0] / 1e6:.2f} MHz")
    assert ok


def test_7_trpl(verdict):
    taus = (0.3e-3, 1.3e-3)
    t = np.linspace(0.0, 8e-3, 200)
    clean = trpl_decay([0.6, 0.4], taus, t)
    hits = 0
    for trial in range(TRIALS):
        y = _noisy(clean, 0.01, trial, "acceptance.trpl")
        res = fit(model_spec("biexp", p0=[0.5, 0.2e-3, 0.5, 2e-3]), t, y)
        hits += res.converged and abs(res["tau1"] / taus[0] - 1) <= TRPL_REL \
            and abs(res["tau2"] / taus[1] - 1) <= TRPL_REL
    # mean lifetime: root-finding oracle against the linear closed form
    r = amplitude_ratio_for_mean(taus, 1.2e-3, "intensity")
    closed = taus[1] * (taus[1] - 1.2e-3) / (taus[0] * (1.2e-3 - taus[0]))
    mean = weighted_mean_lifetime([r, 1.0], taus, "intensity")
    ok = verdict("7 TRPL", hits >= COHERENCE_MIN_PASS and abs(r / closed - 1) < 1e-10
                 and abs(mean - 1.2e-3) < 1e-15,
                 f"both lifetimes within 10% in {hits}/{TRIALS}; A1/A2 = {r:.6f} "
                 f"gives intensity-weighted mean {mean * 1e3:.6f} ms")
    assert ok


def test_8_blueprint(verdict):
    norm = max(abs(occupancy_pmf(lam, int(lam + 40 * math.sqrt(lam) + 40)).sum() - 1)
               for lam in (0.01, 1.0, 12.0, 197.9, 1000.0))
    ref = max(np.max(np.abs(occupancy_pmf(lam, 60) - poisson.pmf(np.arange(61), lam)))
              for lam in (0.5, 6.0, 30.0))
    cfg = resolve(preset("fig3_blueprint"))
    g, s = cfg["geometry"], cfg["spot"]
    geom = ArrayGeometry(g["pitch"], g["rows"], g["cols"], g["inner_radius"],
                         g["critical_dimension"], g["height"])
    count = hnps_in_spot(geom, ExcitationSpot((s["center_x"], s["center_y"]), s["diameter"]))
    area = sidewall_capture_area(geom)
    base = expected_ions(OccupancyModel(1e12, area), count)
    linear = all(expected_ions(OccupancyModel(1e12 * 2.0 ** k, area), count) == base * 2.0 ** k
                 for k in range(-10, 11))
    hundred = expected_ions(OccupancyModel(1e14, area), count)
    ok = verdict("8 blueprint", norm <= PMF_NORM and ref < 1e-12 and linear
                 and math.isclose(hundred, 100 * base, rel_tol=4.5e-16) and count == 12,
                 f"pmf norm error {norm:.1e}, {count} HNPs in the 1 um spot, "
                 f"expected ions {base:.2f} at 1e12 /cm2")
    assert ok


def test_9_echo_refocusing(verdict):
    omega = 2 * math.pi * 660e3
    p = CoherenceParams(omega, T2_star=32e-6)
    tau = np.linspace(0.0, 200e-6, 11)
    echo = echo_experiment(p, tau, math.pi / omega, mode="ensemble", n_shots=1000, seed=9,
                           method="exact")
    ramsey = ramsey_experiment(p, tau, math.pi / 2 / omega, mode="ensemble", n_shots=1000,
                               seed=9, method="exact")
    dev = float(np.max(np.abs(echo - 1)))
    ok = verdict("9 echo refocusing", dev <= ECHO_ABS and ramsey[0] > 0.99 and ramsey[3] < 0.2,
                 f"max |echo - 1| = {dev:.4f}, Ramsey {ramsey[0]:.3f} -> {ramsey[3]:.3f} "
                 f"at {tau[3] * 1e6:.0f} us")
    assert ok


def _csv_digests(report):
    return {k: v["sha256"] for k, v in report.outputs.items() if k.endswith(".csv")}


def test_10_determinism(verdict, tmp_path):
    mismatched = []
    for name in preset_names():
        cfg = resolve(preset(name))
        a = _csv_digests(run(cfg, tmp_path / name / "a"))
        b = _csv_digests(run(cfg, tmp_path / name / "b"))
        on_disk = {k: hashlib.sha256((tmp_path / name / "b" / k).read_bytes()).hexdigest() for k in b}
        if not a or a != b or b != on_disk:
            mismatched.append(name)
    ok = verdict("10 determinism", not mismatched,
                 f"{len(preset_names())} presets rerun, mismatched: {mismatched or 'none'}")
    assert ok
