"""Command-line entry point: ``hnpsim <experiment> [--config PATH | --preset NAME]``.

Every experiment writes plot-ready CSV/JSON artifacts plus ``report.json``
into the output directory. Exit codes: 0 success, 2 invalid configuration,
3 a fit did not converge.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .blueprint import (
    DEFAULT_NA,
    ArrayGeometry,
    ExcitationSpot,
    OccupancyModel,
    expected_ions,
    g2_zero_model,
    hnps_in_spot,
    spot_footprint,
    occupancy_pmf,
    sidewall_capture_area,
)
from .coherent import (
    CoherenceParams,
    echo_experiment,
    intrinsic_linewidth,
    rabi_experiment,
    ramsey_experiment,
)
from .config import EXPERIMENTS, canonical_text, digest, load_config, preset, preset_names, resolve, write_presets
from .errors import ConfigValidationError, ConfigurationError, FitInputError
from .fitting import fit, model_spec, read_xy_csv
from .implant import StackSpec, gaussian_profile, load_profile, retained_fraction, save_profile, vacancy_proxy
from .levels import (
    channel_decay_curves,
    default_level_system,
    flux_to_intensity,
    saturation_curve,
    saturation_flux,
    trpl_decay,
    upconversion_sequence,
)
from .lineshape import lineshape_convolved, measure_fwhm, voigt_fwhm_estimate
from .photons import (
    DetectorSpec,
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
from .rng import make_rng

EXIT_OK, EXIT_INVALID, EXIT_NO_CONVERGENCE = 0, 2, 3


@dataclass
class RunReport:
    experiment: str
    config_digest: str
    version: str
    seed: int | None
    outputs: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    converged: bool = True
    wall_clock_s: float = 0.0


class _Run:
    """Output bookkeeping for one experiment."""

    def __init__(self, out: Path, cfg: dict):
        self.out = out
        self.cfg = cfg
        self.outputs = {}
        self.summary = {}
        self.converged = True

    def write(self, name: str, text: str):
        path = self.out / name
        path.write_text(text)
        self.outputs[name] = {"path": str(path), "sha256": hashlib.sha256(text.encode()).hexdigest()}

    def csv(self, name: str, header, *columns):
        lines = [",".join(header)]
        for row in zip(*columns):
            lines.append(",".join(f"{float(v):.12g}" for v in row))
        self.write(name, "\n".join(lines) + "\n")

    def fit(self, name: str, result):
        self.write(name, result.to_json())
        self.converged &= bool(result.converged)
        return result

    def rng(self, label: str):
        return make_rng(self.cfg["seed"], label)

    def noisy(self, label: str, y, level: float):
        if level <= 0:
            return y
        return y + level * np.max(np.abs(y)) * self.rng(label).standard_normal(np.shape(y))

    def sub_seed(self, label: str) -> int:
        return int(self.rng(label).integers(0, 2**63))


# ---------------------------------------------------------------- recipes

def run_blueprint(r: _Run):
    g, s, imp = r.cfg["geometry"], r.cfg["spot"], r.cfg["implantation"]
    geom = ArrayGeometry(g["pitch"], g["rows"], g["cols"], g["inner_radius"],
                         g["critical_dimension"], g["height"])
    centre = (s["center_x"], s["center_y"])
    if s["diameter"] is not None:
        spot = ExcitationSpot(centre, s["diameter"], s["wavelength"])
    else:
        spot = ExcitationSpot.diffraction_limited(centre, s["wavelength"], s["na"] or DEFAULT_NA)
    n = hnps_in_spot(geom, spot)
    area = sidewall_capture_area(geom)
    model = OccupancyModel(imp["dose"], area, imp["retention"], imp["activation"])
    lam = expected_ions(model, n)
    pmf = occupancy_pmf(lam, imp["k_max"])
    k = np.arange(pmf.size)
    g2 = [g2_zero_model(int(i)) if i >= 1 else 0.0 for i in k]
    r.csv("occupancy.csv", ["ions", "probability", "g2_zero_if_all_emit"], k, pmf, g2)
    r.summary.update(hnps_in_spot=n, spot_footprint_cols_rows=list(spot_footprint(geom, spot)),
                     spot_diameter_nm=spot.diameter, capture_area_cm2=area,
                     expected_ions=lam, p_single_ion=float(pmf[1]) if pmf.size > 1 else 0.0)


def run_implant(r: _Run):
    p, st = r.cfg["profile"], r.cfg["stack"]
    if p["source"] is not None:
        unit = None if p["depth_unit"] == "auto" else p["depth_unit"]
        prof = load_profile(Path(p["source"]), unit)
    else:
        prof = gaussian_profile(p["rp"], p["straggle"], p["step"])
    stack = StackSpec(st["oxide"], st["top_depth"], st["height"])
    r.write("profile.csv", save_profile(prof))
    r.summary.update(retained_fraction=retained_fraction(prof, stack),
                     vacancies_per_ion_in_window=vacancy_proxy(prof, stack.window),
                     mean_depth_nm=prof.mean_depth, window_nm=list(stack.window))


def run_saturation(r: _Run):
    e, s = r.cfg["excitation"], r.cfg["saturation"]
    flux = np.linspace(0.0, s["flux_max"], s["points"])
    clean = saturation_curve(e["cross_section"], s["lifetime"], flux, s["r_inf"])
    y = r.noisy("saturation.noise", clean, s["noise"])
    r.csv("saturation.csv", ["flux_per_cm2_s", "emission_rate"], flux, y)
    phi_sat = saturation_flux(e["cross_section"], s["lifetime"])
    res = r.fit("saturation_fit.json", fit(model_spec("saturation", p0=[float(np.max(y)), float(
        np.median(flux))]), flux, y))
    r.summary.update(phi_sat_model=phi_sat, phi_sat_fit=res["phi_sat"],
                     phi_sat_fit_error=res.error("phi_sat"), r_inf_fit=res["r_inf"],
                     saturation_intensity_W_cm2=flux_to_intensity(phi_sat, e["wavelength"]))


def run_trpl(r: _Run):
    t_cfg = r.cfg["trpl"]
    amps, taus = t_cfg["amplitudes"], t_cfg["lifetimes"]
    if len(amps) > 2:
        raise ConfigValidationError([("trpl.lifetimes", "at most two decay components are fitted")])
    t = np.linspace(0.0, t_cfg["t_max"], t_cfg["points"])
    y = r.noisy("trpl.noise", trpl_decay(amps, taus, t), t_cfg["noise"])
    r.csv("trpl.csv", ["time_s", "signal"], t, y)
    if len(amps) == 2:
        y0 = float(y[0])
        spec = model_spec("biexp", p0=[y0 / 2, t_cfg["t_max"] / 20, y0 / 2, t_cfg["t_max"] / 4])
        res = r.fit("trpl_fit.json", fit(spec, t, y))
        pairs = sorted([(res["tau1"], res["A1"]), (res["tau2"], res["A2"])])
        r.summary.update(tau1=pairs[0][0], tau2=pairs[1][0], A1=pairs[0][1], A2=pairs[1][1],
                         **res.extras)
    else:
        spec = model_spec("single_exp", p0=[float(y[0]), t_cfg["t_max"] / 5, 0.0])
        res = r.fit("trpl_fit.json", fit(spec, t, y))
        r.summary.update(tau=res["tau"], A=res["A"])


def _coherence(r: _Run) -> CoherenceParams:
    c = r.cfg["coherence"]
    return CoherenceParams(c["rabi_frequency"], c["detuning"], c["T1"], c["T2"], c["T2_star"])


def run_rabi(r: _Run):
    p = _coherence(r)
    rc = r.cfg["rabi"]
    t = np.linspace(rc["t_max"] / rc["points"], rc["t_max"], rc["points"])
    clean = rabi_experiment(p, t, rc["contrast"], rc["offset"], mode=rc["mode"])
    y = r.noisy("rabi.noise", clean, rc["noise"])
    r.csv("rabi.csv", ["pulse_width_s", "signal"], t, y)
    om = p.rabi_angular_frequency
    if rc["mode"] == "bloch":
        spec = model_spec("rabi_bloch", p0=[float(np.ptp(y)), 0.98 * om, float(np.min(y))])
        res = r.fit("rabi_fit.json", fit(spec, t, y))
        r.summary.update(omega_fit=res["omega"], contrast_fit=res["contrast"], offset_fit=res["offset"])
    else:
        spec = model_spec("rabi_sin", p0=[float(np.ptp(y)) / 2, 0.98 * om, float(np.mean(y))])
        res = r.fit("rabi_fit.json", fit(spec, t, y))
        r.summary.update(omega_fit=res["omega"], contrast_fit=res["A"], offset_fit=res["B"])
    r.summary["rabi_frequency_hz"] = res["omega"] / (2 * math.pi)


def _tau_grid(block):
    return np.linspace(0.0, block["tau_max"], block["points"])


def run_ramsey(r: _Run):
    p = _coherence(r)
    rc = r.cfg["ramsey"]
    width = rc["pi_half_width"] or (math.pi / 2) / p.rabi_angular_frequency
    tau = _tau_grid(rc)
    clean = ramsey_experiment(p, tau, width, mode=rc["mode"], n_shots=rc["n_shots"],
                              seed=r.sub_seed("ramsey.ensemble"), method=rc["method"])
    y = r.noisy("ramsey.noise", clean, rc["noise"])
    r.csv("ramsey.csv", ["tau_s", "amplitude"], tau, y)
    res = r.fit("ramsey_fit.json", fit(model_spec("ramsey_env", p0=[float(y[0]), rc["tau_max"] / 3]),
                                       tau, y))
    r.summary.update(T2_star_fit=res["T2_star"], T2_star_error=res.error("T2_star"),
                     intrinsic_linewidth_hz=intrinsic_linewidth(res["T2_star"]))


def run_echo(r: _Run):
    p = _coherence(r)
    ec = r.cfg["echo"]
    width = ec["pi_width"] or math.pi / p.rabi_angular_frequency
    tau = _tau_grid(ec)
    clean = echo_experiment(p, tau, width, mode=ec["mode"], n_shots=ec["n_shots"],
                            seed=r.sub_seed("echo.ensemble"), method=ec["method"])
    y = r.noisy("echo.noise", clean, ec["noise"])
    r.csv("echo.csv", ["tau_s", "amplitude"], tau, y)
    res = r.fit("echo_fit.json", fit(model_spec("echo_env", p0=[float(y[0]), ec["tau_max"] / 3]),
                                     tau, y))
    r.summary.update(T2_fit=res["T2"], T2_error=res.error("T2"),
                     intrinsic_linewidth_hz=intrinsic_linewidth(res["T2"]))


def _detector(r: _Run) -> DetectorSpec:
    d = r.cfg["detector"]
    return DetectorSpec(d["efficiency"], d["dark_rate"], d["dead_time"], d["jitter"])


def _g2_site(r: _Run, label, n, rho, lifetime):
    g = r.cfg["g2"]
    det = _detector(r)
    bg = background_rate_for_signal_fraction(rho, n, g["excitation_probability"], det.efficiency,
                                             g["period"])
    stream = simulate_stream(n, g["excitation_probability"], lifetime, det, g["n_pulses"],
                             g["period"], bg, seed=r.sub_seed(f"g2.site.{label}"),
                             n_channels=g["n_channels"])
    if g["write_stream"]:
        r.write(f"clicks_{label}.csv", stream.to_csv())
    hist = pulsed_g2(stream, g["max_k"])
    r.write(f"g2_{label}.csv", hist.to_csv())
    return {"g2_zero": hist.g2_zero, "g2_error": hist.g2_error, "n_clicks": hist.n_clicks,
            "g2_model": g2_with_background(n, rho), "n_emitters": n, "signal_fraction": rho}


def run_g2(r: _Run):
    g = r.cfg["g2"]
    if g["sites"]:
        r.summary["sites"] = {s["label"]: _g2_site(r, s["label"], s["n_emitters"],
                                                   s["signal_fraction"], g["lifetime"])
                              for s in g["sites"]}
    else:
        r.summary.update(_g2_site(r, "main", g["n_emitters"], g["signal_fraction"], g["lifetime"]))


def _parse_ladder(raw):
    out = {}
    for key, p in raw.items():
        a, sep, b = key.partition("->")
        if not sep:
            raise ConfigValidationError([(f"levels.ladder.{key}", "expected 'FROM->TO'")])
        out[(a.strip(), b.strip())] = p
    return out


def run_upconversion(r: _Run):
    lv, up = r.cfg["levels"], r.cfg["upconversion"]
    ladder = None if lv["ladder"] is None else _parse_ladder(lv["ladder"])
    try:
        sys_ = default_level_system(lv["lifetime_preset"], lv["telecom_lifetime"], ladder)
    except ConfigurationError as exc:
        raise ConfigValidationError([("levels.ladder", str(exc))]) from None
    res = upconversion_sequence(sys_, up["n_pulses"])
    wl = sorted(res.yields)
    r.csv("yields.csv", ["wavelength_nm", "photons_per_train"], wl, [res.yields[w] for w in wl])
    t = np.linspace(0.0, up["decay_t_max"], up["decay_points"])
    curves = channel_decay_curves(sys_, res.populations, t)
    cw = sorted(curves)
    r.csv("channel_decay.csv", ["time_s"] + [f"rate_{int(w)}nm" for w in cw], t,
          *[curves[w] for w in cw])
    r.summary["yields"] = {f"{w:g} nm": res.yields[w] for w in wl}
    r.summary["populations"] = dict(zip(sys_.labels, map(float, res.populations)))
    lifetimes = {lvl.emission_wavelength: lvl.lifetime for lvl in sys_.levels
                 if lvl.emission_wavelength is not None}
    channels = {}
    for name, target in up["channel_g2"].items():
        try:
            wavelength = float(name.replace("nm", "").strip())
            tau = lifetimes[wavelength]
        except (ValueError, KeyError):
            raise ConfigValidationError([(f"upconversion.channel_g2.{name}",
                                          "not an emission channel of the level system")]) from None
        rho = signal_fraction_for_g2(1, target)
        label = f"{int(wavelength)}nm"
        channels[name] = {"target_g2": target, **_g2_site(r, label, 1, rho, tau)}
    if channels:
        r.summary["channel_g2"] = channels


def run_ple(r: _Run):
    ls = r.cfg["lineshape"]
    lorentz = ls["lorentz_fwhm"] or intrinsic_linewidth(ls["T2_star"])
    laser = ls["laser_fwhm"]
    span = ls["span"] or 8 * max(lorentz, laser)
    nu = np.linspace(-span / 2, span / 2, ls["points"])
    clean = lineshape_convolved(nu, lorentz, laser, kernel=ls["kernel"])
    y = r.noisy("ple.noise", clean, ls["noise"])
    r.csv("ple.csv", ["detuning_hz", "signal"], nu, y)
    guess = max(laser, lorentz)
    spec = model_spec("lineshape_convolved", p0=[float(np.max(y)), 0.0, lorentz, 0.8 * guess],
                      fixed={"lorentz_fwhm"})
    res = r.fit("ple_fit.json", fit(spec, nu, y))
    r.summary.update(intrinsic_linewidth_hz=lorentz, laser_fwhm_fit_hz=res["gauss_fwhm"],
                     fwhm_fit_hz=voigt_fwhm_estimate(lorentz, res["gauss_fwhm"]),
                     fwhm_measured_hz=measure_fwhm(nu, clean))


def run_image(r: _Run):
    im = r.cfg["image"]
    pos = [(e["x"], e["y"]) for e in im["emitters"]]
    seed = r.sub_seed("image.camera") if im["mode"] == "sampled" else None
    img = camera_image(pos, im["psf_sigma"], im["pixel_pitch"], im["photons"],
                       (im["rows"], im["cols"]), seed=seed)
    r.write("image.pgm", image_to_pgm(img))
    r.write("image.csv", image_to_csv(img))
    peaks = local_maxima(img)
    r.summary.update(n_local_maxima=len(peaks), total_counts=float(np.sum(img)))
    if np.sum(img) > 0:
        r.summary["centroid_nm"] = list(localize_centroid(img, im["pixel_pitch"]))


def run_fit(r: _Run):
    f = r.cfg["fit"]
    try:
        x, y, w = read_xy_csv(Path(f["input"]))
    except OSError as exc:
        raise ConfigValidationError([("fit.input", str(exc))]) from None
    spec = model_spec(f["model"], p0=f["p0"] or None, fixed=f["fixed"])
    res = r.fit("fit.json", fit(spec, x, y, weights=w, max_iter=f["max_iter"]))
    r.summary.update({k: float(v) for k, v in zip(res.names, res.estimates)})


RECIPES = {
    "blueprint": run_blueprint, "implant": run_implant, "saturation": run_saturation,
    "trpl": run_trpl, "rabi": run_rabi, "ramsey": run_ramsey, "echo": run_echo, "g2": run_g2,
    "upconversion": run_upconversion, "ple": run_ple, "image": run_image, "fit": run_fit,
}


def run(cfg: dict, out_dir=None) -> RunReport:
    """Execute a validated config and write its artifacts and report.json."""
    start = time.perf_counter()
    out = Path(out_dir or cfg.get("output") or f"hnpsim_{cfg['experiment']}")
    out.mkdir(parents=True, exist_ok=True)
    r = _Run(out, cfg)
    r.write("config.yaml", canonical_text(cfg))
    RECIPES[cfg["experiment"]](r)
    report = RunReport(cfg["experiment"], digest(cfg), __version__, cfg["seed"], r.outputs,
                       r.summary, r.converged, time.perf_counter() - start)
    (out / "report.json").write_text(json.dumps(asdict(report), indent=2, sort_keys=True,
                                                default=float) + "\n")
    return report


# ---------------------------------------------------------------- argparse

def _parser():
    ap = argparse.ArgumentParser(prog="hnpsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hnpsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run",) + tuple(EXPERIMENTS):
        sp = sub.add_parser(name, help="run any config" if name == "run" else f"{name} experiment")
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="YAML experiment config")
        src.add_argument("--preset", choices=preset_names(), help="built-in config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="output directory (created if missing)")
    ps = sub.add_parser("presets", help="list built-in configs or write them as YAML")
    ps.add_argument("--write", type=Path, metavar="DIR", help="write every preset to DIR")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        if args.write:
            for p in write_presets(args.write):
                print(p)
        else:
            print("\n".join(preset_names()))
        return EXIT_OK
    experiment = None if args.command == "run" else args.command
    try:
        if args.config is not None:
            cfg = load_config(args.config, experiment, args.seed)
        else:
            cfg = resolve(preset(args.preset), experiment, args.seed)
        report = run(cfg, args.out)
    except ConfigValidationError as exc:
        print("invalid configuration:", file=sys.stderr)
        for key, msg in exc.issues:
            print(f"  {key}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigurationError, FitInputError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps({"experiment": report.experiment, "digest": report.config_digest,
                      "converged": report.converged, "summary": report.summary},
                     indent=2, sort_keys=True, default=float))
    return EXIT_OK if report.converged else EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
