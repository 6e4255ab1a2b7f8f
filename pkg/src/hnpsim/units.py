"""Unit-suffixed quantity strings such as ``"568 us"`` or ``"2e19 /cm2/s"``.

Each dimension has one canonical unit that all values are converted to:

==============  =============
dimension       canonical
==============  =============
time            s
length          nm
area            cm2
areal_density   /cm2
flux            /cm2/s
rate            /s
frequency       Hz
angular         rad/s
==============  =============

Angular quantities also accept cyclic units (Hz, kHz, MHz), converted with a
factor 2 pi.
"""

from __future__ import annotations

import math
import re

TWO_PI = 2 * math.pi

_SCALES = {
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12},
    "length": {"nm": 1.0, "pm": 1e-3, "A": 0.1, "um": 1e3, "mm": 1e6, "cm": 1e7, "m": 1e9},
    "area": {"cm2": 1.0, "m2": 1e4, "mm2": 1e-2, "um2": 1e-8, "nm2": 1e-14},
    "areal_density": {"/cm2": 1.0, "cm-2": 1.0, "/m2": 1e-4, "/um2": 1e8, "/nm2": 1e14},
    "flux": {"/cm2/s": 1.0, "cm-2s-1": 1.0, "photons/cm2/s": 1.0},
    "rate": {"/s": 1.0, "s-1": 1.0, "Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "cps": 1.0,
             "counts/s": 1.0, "/ms": 1e3, "/us": 1e6},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "THz": 1e12},
    "angular": {"rad/s": 1.0, "rad/ms": 1e3, "rad/us": 1e6, "rad/ns": 1e9,
                "Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": TWO_PI * 1e6},
}

CANONICAL = {"time": "s", "length": "nm", "area": "cm2", "areal_density": "/cm2",
             "flux": "/cm2/s", "rate": "/s", "frequency": "Hz", "angular": "rad/s"}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf)\s*(.*?)\s*$")


def _normalise_unit(text: str) -> str:
    u = text.replace(" ", "").replace("^", "").replace("µ", "u").replace("μ", "u")
    return u.replace("Å", "A").replace("cm-2/s", "/cm2/s")


def parse_quantity(value, dimension: str) -> float:
    """Convert ``"<number> <unit>"`` to the canonical unit of ``dimension``.

    Bare numbers are rejected: every physical quantity must state its unit.
    """
    if dimension not in _SCALES:
        raise ValueError(f"unknown dimension {dimension!r}")
    if not isinstance(value, str):
        raise ValueError(f"needs an explicit unit, e.g. '{value} {CANONICAL[dimension]}'")
    m = _NUMBER.match(value)
    if not m or not m.group(2):
        raise ValueError(f"cannot read {value!r} as '<number> <unit>'")
    number = float(m.group(1))
    unit = _normalise_unit(m.group(2))
    scales = _SCALES[dimension]
    if unit not in scales:
        raise ValueError(f"unit {m.group(2)!r} is not a {dimension} unit "
                         f"(known: {', '.join(scales)})")
    return number * scales[unit]


def format_quantity(value: float, dimension: str) -> str:
    """Canonical text form; ``parse_quantity`` inverts it exactly."""
    return f"{float(value)!r} {CANONICAL[dimension]}"
