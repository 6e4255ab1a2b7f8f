"""Experiment configuration: schema, validation, canonical form and digest.

Configs are YAML trees. Physical quantities are strings with units (see
``hnpsim.units``); plain numbers are only allowed for dimensionless values.
Validation gathers every problem before raising, so one run reports all
offending keys. ``canonical_tree`` renders a validated config with every
default filled in and every quantity in canonical units; reading that tree
back yields the same values, and its sha256 is the config digest.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigValidationError
from .units import format_quantity, parse_quantity

REQUIRED = object()


class _Invalid(Exception):
    pass


@dataclass(frozen=True)
class Quantity:
    dim: str
    default: object = REQUIRED
    positive: bool = False
    nonneg: bool = True

    def read(self, v):
        try:
            x = parse_quantity(v, self.dim)
        except ValueError as exc:
            raise _Invalid(str(exc)) from None
        if math.isnan(x):
            raise _Invalid("NaN is not a valid quantity")
        if self.positive and not x > 0:
            raise _Invalid("must be positive")
        if self.nonneg and x < 0:
            raise _Invalid("must be non-negative")
        return x

    def render(self, x):
        return format_quantity(x, self.dim)


@dataclass(frozen=True)
class Number:
    default: object = REQUIRED
    lo: float = -math.inf
    hi: float = math.inf
    integer: bool = False

    def read(self, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise _Invalid("must be a plain number")
        if self.integer and (not float(v).is_integer()):
            raise _Invalid("must be an integer")
        if not self.lo <= v <= self.hi:
            raise _Invalid(f"must lie in [{self.lo}, {self.hi}]")
        return int(v) if self.integer else float(v)

    def render(self, x):
        return int(x) if self.integer else float(x)


@dataclass(frozen=True)
class Choice:
    options: tuple
    default: object = REQUIRED

    def read(self, v):
        if v not in self.options:
            raise _Invalid(f"must be one of {', '.join(map(str, self.options))}")
        return v

    def render(self, x):
        return x


@dataclass(frozen=True)
class Text:
    default: object = REQUIRED

    def read(self, v):
        if not isinstance(v, str):
            raise _Invalid("must be a string")
        return v

    def render(self, x):
        return x


@dataclass(frozen=True)
class Flag:
    default: object = REQUIRED

    def read(self, v):
        if not isinstance(v, bool):
            raise _Invalid("must be true or false")
        return v

    def render(self, x):
        return x


@dataclass(frozen=True)
class ListOf:
    item: object
    default: object = REQUIRED
    min_len: int = 0

    def read(self, v):
        if not isinstance(v, list):
            raise _Invalid("must be a list")
        if len(v) < self.min_len:
            raise _Invalid(f"needs at least {self.min_len} entries")
        return [self.item.read(e) for e in v]

    def render(self, x):
        return [self.item.render(e) for e in x]


@dataclass(frozen=True)
class MappingOf:
    value: object
    default: object = REQUIRED

    def read(self, v):
        if not isinstance(v, dict):
            raise _Invalid("must be a mapping")
        return {str(k): self.value.read(e) for k, e in v.items()}

    def render(self, x):
        return {k: self.value.render(e) for k, e in x.items()}


@dataclass(frozen=True)
class Records:
    """List of mappings sharing one sub-schema."""
    fields: dict
    default: object = REQUIRED

    def render(self, x):
        return [{k: self.fields[k].render(v) for k, v in rec.items()} for rec in x]


PROB = dict(lo=0.0, hi=1.0)

BLOCKS = {
    "geometry": {
        "pitch": Quantity("length", positive=True),
        "rows": Number(1000, lo=0, integer=True),
        "cols": Number(1000, lo=0, integer=True),
        "inner_radius": Quantity("length", "50.0 nm", positive=True),
        "critical_dimension": Quantity("length", "5.0 nm", positive=True),
        "height": Quantity("length", "60.0 nm", positive=True),
    },
    "spot": {
        "center_x": Quantity("length", nonneg=False),
        "center_y": Quantity("length", nonneg=False),
        "diameter": Quantity("length", None, positive=True),
        "wavelength": Quantity("length", "1534.0 nm", positive=True),
        "na": Number(None, lo=1e-6),
    },
    "implantation": {
        "dose": Quantity("areal_density"),
        "retention": Number(1.0, **PROB),
        "activation": Number(1.0, **PROB),
        "k_max": Number(30, lo=1, integer=True),
    },
    "profile": {
        "source": Text(None),
        "depth_unit": Choice(("auto", "nm", "A"), "auto"),
        "rp": Quantity("length", None, positive=True),
        "straggle": Quantity("length", None, positive=True),
        "step": Quantity("length", "0.5 nm", positive=True),
    },
    "stack": {
        "oxide": Quantity("length", "0.0 nm"),
        "top_depth": Quantity("length", "0.0 nm"),
        "height": Quantity("length"),
    },
    "excitation": {
        "cross_section": Quantity("area", positive=True),
        "wavelength": Quantity("length", "1534.0 nm", positive=True),
    },
    "saturation": {
        "lifetime": Quantity("time", positive=True),
        "flux_max": Quantity("flux", positive=True),
        "points": Number(40, lo=3, integer=True),
        "r_inf": Number(1.0, lo=0.0),
        "noise": Number(0.0, lo=0.0),
    },
    "trpl": {
        "amplitudes": ListOf(Number(lo=0.0), min_len=1),
        "lifetimes": ListOf(Quantity("time", positive=True), min_len=1),
        "t_max": Quantity("time", positive=True),
        "points": Number(400, lo=5, integer=True),
        "noise": Number(0.0, lo=0.0),
    },
    "coherence": {
        "rabi_frequency": Quantity("angular", positive=True),
        "detuning": Quantity("angular", "0.0 rad/s", nonneg=False),
        "T1": Quantity("time", "inf s", positive=True),
        "T2": Quantity("time", "inf s", positive=True),
        "T2_star": Quantity("time", "inf s", positive=True),
    },
    "rabi": {
        "t_max": Quantity("time", positive=True),
        "points": Number(200, lo=4, integer=True),
        "contrast": Number(1.0),
        "offset": Number(0.0),
        "mode": Choice(("fit", "bloch"), "bloch"),
        "noise": Number(0.0, lo=0.0),
    },
    "ramsey": {
        "pi_half_width": Quantity("time", None, positive=True),
        "tau_max": Quantity("time", positive=True),
        "points": Number(40, lo=3, integer=True),
        "mode": Choice(("analytic", "bloch", "ensemble"), "bloch"),
        "method": Choice(("rk4", "exact"), "rk4"),
        "n_shots": Number(1000, lo=1, integer=True),
        "noise": Number(0.0, lo=0.0),
    },
    "echo": {
        "pi_width": Quantity("time", None, positive=True),
        "tau_max": Quantity("time", positive=True),
        "points": Number(40, lo=3, integer=True),
        "mode": Choice(("analytic", "bloch", "ensemble"), "bloch"),
        "method": Choice(("rk4", "exact"), "exact"),
        "n_shots": Number(1000, lo=1, integer=True),
        "noise": Number(0.0, lo=0.0),
    },
    "g2": {
        "n_emitters": Number(1, lo=1, integer=True),
        "excitation_probability": Number(1.0, **PROB),
        "lifetime": Quantity("time", "0.0012 s", positive=True),
        "period": Quantity("time", "0.024 s", positive=True),
        "n_pulses": Number(1000000, lo=1, integer=True),
        "signal_fraction": Number(1.0, lo=1e-9, hi=1.0),
        "max_k": Number(20, lo=1, integer=True),
        "n_channels": Number(2, lo=1, hi=2, integer=True),
        "write_stream": Flag(False),
        "sites": Records({"label": Text(), "n_emitters": Number(1, lo=1, integer=True),
                          "signal_fraction": Number(1.0, lo=1e-9, hi=1.0)}, []),
    },
    "detector": {
        "efficiency": Number(0.1, **PROB),
        "dark_rate": Quantity("rate", "0.0 /s"),
        "dead_time": Quantity("time", "0.0 s"),
        "jitter": Quantity("time", "0.0 s"),
    },
    "levels": {
        "lifetime_preset": Choice(("main_text", "caption"), "main_text"),
        "telecom_lifetime": Quantity("time", "0.0012 s", positive=True),
        "ladder": MappingOf(Number(**PROB), None),
    },
    "upconversion": {
        "n_pulses": Number(3, lo=1, hi=100, integer=True),
        "decay_t_max": Quantity("time", "0.002 s", positive=True),
        "decay_points": Number(200, lo=2, integer=True),
        "channel_g2": MappingOf(Number(lo=0.0, hi=1.0), {}),
    },
    "lineshape": {
        "lorentz_fwhm": Quantity("frequency", None, positive=True),
        "T2_star": Quantity("time", None, positive=True),
        "laser_fwhm": Quantity("frequency"),
        "kernel": Choice(("gaussian", "tophat"), "gaussian"),
        "span": Quantity("frequency", None, positive=True),
        "points": Number(801, lo=11, integer=True),
        "noise": Number(0.0, lo=0.0),
    },
    "image": {
        "emitters": Records({"x": Quantity("length", nonneg=False),
                             "y": Quantity("length", nonneg=False)}),
        "psf_sigma": Quantity("length"),
        "pixel_pitch": Quantity("length", positive=True),
        "photons": Number(lo=0, integer=True),
        "rows": Number(lo=1, integer=True),
        "cols": Number(lo=1, integer=True),
        "mode": Choice(("sampled", "expected"), "sampled"),
    },
    "fit": {
        "model": Choice(("single_exp", "biexp", "rabi_sin", "rabi_bloch", "saturation",
                         "lineshape_convolved", "ramsey_env", "echo_env")),
        "input": Text(),
        "p0": MappingOf(Number(), {}),
        "fixed": ListOf(Text(), []),
        "max_iter": Number(200, lo=1, integer=True),
    },
}

EXPERIMENTS = {
    "blueprint": ("geometry", "spot", "implantation"),
    "implant": ("profile", "stack"),
    "saturation": ("excitation", "saturation"),
    "trpl": ("trpl",),
    "rabi": ("coherence", "rabi"),
    "ramsey": ("coherence", "ramsey"),
    "echo": ("coherence", "echo"),
    "g2": ("g2", "detector"),
    "upconversion": ("levels", "upconversion", "g2", "detector"),
    "ple": ("lineshape",),
    "image": ("image",),
    "fit": ("fit",),
}

STOCHASTIC = {"saturation", "trpl", "rabi", "ramsey", "echo", "g2", "upconversion", "ple", "image"}
TOP_LEVEL = {"experiment", "seed", "output"}


def _read_block(schema, raw, path, issues):
    out = {}
    if not isinstance(raw, dict):
        issues.append((path, "must be a mapping"))
        return out
    for key in raw:
        if key not in schema:
            issues.append((f"{path}.{key}", "unknown key"))
    for key, field in schema.items():
        where = f"{path}.{key}"
        if key not in raw or raw[key] is None:
            if field.default is REQUIRED:
                issues.append((where, "required"))
            elif isinstance(field, Quantity) and isinstance(field.default, str):
                out[key] = parse_quantity(field.default, field.dim)
            else:
                out[key] = copy.deepcopy(field.default)
            continue
        if isinstance(field, Records):
            if not isinstance(raw[key], list):
                issues.append((where, "must be a list"))
                continue
            out[key] = [_read_block(field.fields, rec, f"{where}[{i}]", issues)
                        for i, rec in enumerate(raw[key])]
            continue
        try:
            out[key] = field.read(raw[key])
        except _Invalid as exc:
            issues.append((where, str(exc)))
    return out


def _cross_checks(cfg, issues):
    exp = cfg["experiment"]
    if exp == "implant":
        prof = cfg["profile"]
        if prof.get("source") is None and (prof.get("rp") is None or prof.get("straggle") is None):
            issues.append(("profile", "give either source or both rp and straggle"))
    if exp == "trpl":
        t = cfg["trpl"]
        if len(t.get("amplitudes", [])) != len(t.get("lifetimes", [])):
            issues.append(("trpl.amplitudes", "needs one amplitude per lifetime"))
    if exp == "ple":
        ls = cfg["lineshape"]
        if ls.get("lorentz_fwhm") is None and ls.get("T2_star") is None:
            issues.append(("lineshape", "give lorentz_fwhm or T2_star"))
    if "coherence" in cfg:
        c = cfg.get("coherence", {})
        t1, t2 = c.get("T1", math.inf), c.get("T2", math.inf)
        if math.isfinite(t1) and math.isfinite(t2) and t2 > 2 * t1:
            issues.append(("coherence.T2", "cannot exceed 2 T1"))
    if exp in STOCHASTIC and cfg.get("seed") is None:
        issues.append(("seed", f"required for the stochastic experiment {exp!r}"))


def validate(raw: dict, experiment: str | None = None) -> dict:
    """Validate a raw config tree and return resolved values (canonical units).

    Raises
    ------
    ConfigValidationError
        Lists every offending key.
    """
    issues = []
    if not isinstance(raw, dict):
        raise ConfigValidationError([("", "config must be a mapping")])
    exp = raw.get("experiment", experiment)
    if experiment is not None and exp != experiment:
        issues.append(("experiment", f"config is for {exp!r}, not {experiment!r}"))
    if exp not in EXPERIMENTS:
        issues.append(("experiment", f"must be one of {', '.join(EXPERIMENTS)}"))
        raise ConfigValidationError(issues)
    cfg = {"experiment": exp}
    seed = raw.get("seed")
    if seed is not None:
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            issues.append(("seed", "must be an integer in [0, 2^64)"))
        else:
            cfg["seed"] = seed
    else:
        cfg["seed"] = None
    out = raw.get("output")
    if out is not None and not isinstance(out, str):
        issues.append(("output", "must be a path string"))
    cfg["output"] = out
    blocks = EXPERIMENTS[exp]
    for key in raw:
        if key in TOP_LEVEL:
            continue
        if key not in BLOCKS:
            issues.append((key, "unknown key"))
        elif key not in blocks:
            issues.append((key, f"block not used by experiment {exp!r}"))
    for name in blocks:
        cfg[name] = _read_block(BLOCKS[name], raw.get(name, {}) or {}, name, issues)
    _cross_checks(cfg, issues)
    if issues:
        raise ConfigValidationError(issues)
    return cfg


def _render_block(schema, values):
    out = {}
    for key, field in schema.items():
        v = values[key]
        if v is None:
            out[key] = None
        elif isinstance(field, Records):
            out[key] = [_render_block(field.fields, rec) for rec in v]
        else:
            out[key] = field.render(v)
    return out


def canonical_tree(cfg: dict) -> dict:
    """Config tree with defaults filled in and canonical unit strings."""
    tree = {"experiment": cfg["experiment"], "seed": cfg["seed"], "output": cfg.get("output")}
    for name in EXPERIMENTS[cfg["experiment"]]:
        tree[name] = _render_block(BLOCKS[name], cfg[name])
    return tree


def canonical_text(cfg: dict) -> str:
    return yaml.safe_dump(canonical_tree(cfg), sort_keys=True, default_flow_style=False)


def digest(cfg: dict) -> str:
    """sha256 of the canonical tree; the output directory does not count."""
    tree = canonical_tree(cfg)
    tree.pop("output", None)
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path, experiment: str | None = None, seed: int | None = None) -> dict:
    """Read, override the seed if given, and validate a YAML config file."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigValidationError([(str(path), f"YAML error: {exc}")]) from None
    return resolve(raw or {}, experiment, seed)


def resolve(raw: dict, experiment: str | None = None, seed: int | None = None) -> dict:
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = seed
    return validate(raw, experiment)


# ---------------------------------------------------------------- presets

PRESETS = {
    "fig1c_g2": {
        "experiment": "g2", "seed": 11,
        "g2": {"n_emitters": 1, "excitation_probability": 0.9, "lifetime": "1.2 ms",
               "period": "24 ms", "n_pulses": 1000000, "signal_fraction": 0.8062257748298549},
        "detector": {"efficiency": 0.1},
    },
    "fig2b_saturation": {
        "experiment": "saturation", "seed": 21,
        "excitation": {"cross_section": "5e-17 cm2", "wavelength": "1534 nm"},
        "saturation": {"lifetime": "1.2 ms", "flux_max": "2e20 /cm2/s", "points": 40,
                       "r_inf": 1.0, "noise": 0.0},
    },
    "fig3_blueprint": {
        "experiment": "blueprint",
        "geometry": {"pitch": "250 nm", "rows": 1000, "cols": 1000, "inner_radius": "50 nm",
                     "critical_dimension": "5 nm", "height": "60 nm"},
        "spot": {"center_x": "125125 nm", "center_y": "125000 nm", "diameter": "1000 nm"},
        "implantation": {"dose": "1e12 /cm2"},
    },
    "fig3c_g2_sites": {
        "experiment": "g2", "seed": 31,
        "g2": {"excitation_probability": 0.9, "lifetime": "1.2 ms", "period": "24 ms",
               "n_pulses": 1000000,
               "sites": [{"label": "S1", "n_emitters": 6, "signal_fraction": 1.0},
                         {"label": "S3", "n_emitters": 1,
                          "signal_fraction": 0.7874007874011811}]},
        "detector": {"efficiency": 0.1},
    },
    "fig4b_g2": {
        "experiment": "g2", "seed": 41,
        "g2": {"n_emitters": 1, "excitation_probability": 0.9, "lifetime": "1.2 ms",
               "period": "24 ms", "n_pulses": 1000000, "signal_fraction": 0.8660254037844386},
        "detector": {"efficiency": 0.1},
    },
    "fig4c_rabi": {
        "experiment": "rabi", "seed": 42,
        "coherence": {"rabi_frequency": "660 kHz"},
        "rabi": {"t_max": "5 us", "points": 200, "contrast": 0.96, "offset": 0.02,
                 "mode": "bloch", "noise": 0.0},
    },
    "fig4d_ramsey": {
        "experiment": "ramsey", "seed": 43,
        "coherence": {"rabi_frequency": "4908.738521234052 rad/s", "T1": "1.2 ms",
                      "T2": "568 us", "T2_star": "32 us"},
        "ramsey": {"pi_half_width": "320 us", "tau_max": "128 us", "points": 40,
                   "mode": "bloch", "noise": 0.02},
    },
    "fig4e_echo": {
        "experiment": "echo", "seed": 44,
        "coherence": {"rabi_frequency": "660 kHz", "T1": "1.2 ms", "T2": "568 us",
                      "T2_star": "32 us"},
        "echo": {"tau_max": "2 ms", "points": 40, "mode": "ensemble", "method": "exact",
                 "n_shots": 1000, "noise": 0.02},
    },
    "fig5_upconversion": {
        "experiment": "upconversion", "seed": 51,
        "levels": {"lifetime_preset": "main_text", "telecom_lifetime": "1.2 ms",
                   "ladder": {"G->T": 0.8, "T->N1": 0.3, "N1->R": 0.2, "R->H": 0.2}},
        "upconversion": {"n_pulses": 4, "decay_t_max": "2 ms", "decay_points": 200,
                         "channel_g2": {"518 nm": 0.18, "980 nm": 0.12}},
        "g2": {"excitation_probability": 0.9, "period": "15 ms", "n_pulses": 200000},
        "detector": {"efficiency": 0.1},
    },
    "fig5c_ple": {
        "experiment": "ple", "seed": 52,
        "lineshape": {"T2_star": "32 us", "laser_fwhm": "37 MHz", "span": "300 MHz",
                      "points": 801, "noise": 0.01},
    },
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigValidationError([("preset", f"unknown preset {name!r}; "
                                                f"choose from {', '.join(preset_names())}")])
    return copy.deepcopy(PRESETS[name])


def write_presets(directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in preset_names():
        p = d / f"{name}.yaml"
        p.write_text(yaml.safe_dump(PRESETS[name], sort_keys=False))
        paths.append(p)
    return paths
