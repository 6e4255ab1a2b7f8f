"""Damped least-squares fitting and the model library.

``fit`` is a Levenberg-Marquardt loop with Marquardt diagonal scaling, box
bounds (a step leaving the box goes halfway to the bound instead), and either
analytic or central-difference Jacobians. Models are registered by id with
default parameter names, starting values and bounds; ``model_spec`` builds a
ModelSpec with overrides.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, FitInputError
from .lineshape import lineshape_convolved

_EPS = np.finfo(float).eps
INF = math.inf


# ---------------------------------------------------------------- models

def single_exp(x, A, tau, B):
    return A * np.exp(-x / tau) + B


def _single_exp_jac(x, A, tau, B):
    e = np.exp(-x / tau)
    return np.column_stack([e, A * x / tau**2 * e, np.ones_like(x)])


def biexp(x, A1, tau1, A2, tau2):
    return A1 * np.exp(-x / tau1) + A2 * np.exp(-x / tau2)


def _biexp_jac(x, A1, tau1, A2, tau2):
    e1, e2 = np.exp(-x / tau1), np.exp(-x / tau2)
    return np.column_stack([e1, A1 * x / tau1**2 * e1, e2, A2 * x / tau2**2 * e2])


def rabi_sin(x, A, omega, B):
    return A * np.sin(omega * x) + B


def _rabi_sin_jac(x, A, omega, B):
    return np.column_stack([np.sin(omega * x), A * x * np.cos(omega * x), np.ones_like(x)])


def rabi_bloch(x, contrast, omega, offset):
    return contrast * np.sin(omega * x / 2) ** 2 + offset


def _rabi_bloch_jac(x, contrast, omega, offset):
    s = np.sin(omega * x / 2)
    c = np.cos(omega * x / 2)
    return np.column_stack([s * s, contrast * s * c * x, np.ones_like(x)])


def saturation(x, r_inf, phi_sat):
    return r_inf * x / (x + phi_sat)


def _saturation_jac(x, r_inf, phi_sat):
    return np.column_stack([x / (x + phi_sat), -r_inf * x / (x + phi_sat) ** 2])


def convolved_line(x, amplitude, center, lorentz_fwhm, gauss_fwhm):
    return amplitude * lineshape_convolved(x - center, abs(lorentz_fwhm), abs(gauss_fwhm))


def decay_env(x, A, T):
    return A * np.exp(-x / T)


def _decay_env_jac(x, A, T):
    e = np.exp(-x / T)
    return np.column_stack([e, A * x / T**2 * e])


@dataclass(frozen=True)
class _ModelDef:
    func: Callable
    names: tuple
    p0: tuple
    bounds: tuple
    jac: Callable | None = None


MODELS = {
    "single_exp": _ModelDef(single_exp, ("A", "tau", "B"), (1.0, 1.0, 0.0),
                            ((-INF, 0.0, -INF), (INF, INF, INF)), _single_exp_jac),
    "biexp": _ModelDef(biexp, ("A1", "tau1", "A2", "tau2"), (0.5, 0.5, 0.5, 2.0),
                       ((-INF, 0.0, -INF, 0.0), (INF, INF, INF, INF)), _biexp_jac),
    "rabi_sin": _ModelDef(rabi_sin, ("A", "omega", "B"), (1.0, 1.0, 0.0),
                          ((-INF, 0.0, -INF), (INF, INF, INF)), _rabi_sin_jac),
    "rabi_bloch": _ModelDef(rabi_bloch, ("contrast", "omega", "offset"), (1.0, 1.0, 0.0),
                            ((-INF, 0.0, -INF), (INF, INF, INF)), _rabi_bloch_jac),
    "saturation": _ModelDef(saturation, ("r_inf", "phi_sat"), (1.0, 1.0),
                            ((-INF, 0.0), (INF, INF)), _saturation_jac),
    "lineshape_convolved": _ModelDef(convolved_line,
                                     ("amplitude", "center", "lorentz_fwhm", "gauss_fwhm"),
                                     (1.0, 0.0, 1.0, 1.0),
                                     ((-INF, -INF, 0.0, 0.0), (INF, INF, INF, INF))),
    "ramsey_env": _ModelDef(decay_env, ("A", "T2_star"), (1.0, 1.0),
                            ((-INF, 0.0), (INF, INF)), _decay_env_jac),
    "echo_env": _ModelDef(decay_env, ("A", "T2"), (1.0, 1.0),
                          ((-INF, 0.0), (INF, INF)), _decay_env_jac),
}


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    names: tuple
    p0: tuple
    lower: tuple
    upper: tuple
    fixed: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.model_id not in MODELS:
            raise ConfigurationError(f"unknown model {self.model_id!r}")
        n = len(MODELS[self.model_id].names)
        if not (len(self.names) == len(self.p0) == len(self.lower) == len(self.upper) == n):
            raise ConfigurationError(f"model {self.model_id} takes {n} parameters")
        for name, v, lo, hi in zip(self.names, self.p0, self.lower, self.upper):
            if not lo <= v <= hi:
                raise ConfigurationError(f"initial {name}={v!r} outside bounds [{lo}, {hi}]")
        unknown = set(self.fixed) - set(self.names)
        if unknown:
            raise ConfigurationError(f"cannot fix unknown parameters {sorted(unknown)}")

    @property
    def func(self):
        return MODELS[self.model_id].func

    @property
    def jac(self):
        return MODELS[self.model_id].jac

    def __call__(self, x, params=None):
        return self.func(np.asarray(x, dtype=float), *(self.p0 if params is None else params))


def model_spec(model_id: str, p0=None, bounds=None, fixed=()) -> ModelSpec:
    """ModelSpec with registry defaults; ``p0`` / ``bounds`` may be dicts by name."""
    if model_id not in MODELS:
        raise ConfigurationError(f"unknown model {model_id!r}; choose from {sorted(MODELS)}")
    d = MODELS[model_id]
    start = dict(zip(d.names, d.p0))
    lo = dict(zip(d.names, d.bounds[0]))
    hi = dict(zip(d.names, d.bounds[1]))
    if p0 is not None:
        start.update(p0 if isinstance(p0, dict) else dict(zip(d.names, p0)))
    for name, (a, b) in (bounds or {}).items():
        lo[name], hi[name] = a, b
    return ModelSpec(model_id, d.names, tuple(float(start[n]) for n in d.names),
                     tuple(lo[n] for n in d.names), tuple(hi[n] for n in d.names), frozenset(fixed))


# ---------------------------------------------------------------- engine

@dataclass
class FitResult:
    model_id: str
    names: tuple
    estimates: np.ndarray
    errors: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    extras: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return float(self.estimates[self.names.index(name)])

    def error(self, name):
        return float(self.errors[self.names.index(name)])

    def as_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "estimates": {n: float(v) for n, v in zip(self.names, self.estimates)},
            "errors": {n: float(v) for n, v in zip(self.names, self.errors)},
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "reliable": bool(self.converged),
            "iterations": int(self.iterations),
            **({"extras": self.extras} if self.extras else {}),
        }

    def to_json(self, target=None) -> str:
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"
        if target is not None:
            Path(target).write_text(text)
        return text


def numeric_jacobian(func, x, p, p0=None):
    """Central differences, step cbrt(eps) times the parameter scale."""
    p = np.asarray(p, dtype=float)
    ref = np.asarray(p if p0 is None else p0, dtype=float)
    scale = np.where(p != 0, np.abs(p), np.where(ref != 0, np.abs(ref), 1.0))
    h = np.cbrt(_EPS) * scale
    cols = []
    for i in range(p.size):
        up, dn = p.copy(), p.copy()
        up[i] += h[i]
        dn[i] -= h[i]
        cols.append((func(x, *up) - func(x, *dn)) / (up[i] - dn[i]))
    return np.column_stack(cols)


def fit(model: ModelSpec, x, y, weights=None, max_iter: int = 200, xtol: float = 1e-8,
        use_analytic: bool = True, history: list | None = None) -> FitResult:
    """Weighted least squares for ``model`` on (x, y).

    Parameters
    ----------
    model : ModelSpec
    x, y : array_like
        At least one more point than free parameters.
    weights : array_like, optional
        Per-point weights multiplying squared residuals (e.g. 1/sigma^2).
    max_iter, xtol : stopping rule; converged when every free parameter moves
        by less than ``xtol`` relative to its scale.
    history : list, optional
        Receives the squared residual norm after every accepted step.

    Returns
    -------
    FitResult
        ``converged`` is False when the iteration budget ran out or the normal
        equations stayed singular after damping escalation; estimates are then
        unreliable and errors are infinite.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitInputError("x and y must be 1-D and equally long")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape:
        raise FitInputError("weights must match y")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise FitInputError("NaN or infinite values in fit input")
    if np.any(w < 0):
        raise FitInputError("weights must be non-negative")
    if x.size < len(model.names) + 1:
        raise FitInputError(f"need at least {len(model.names) + 1} points for {model.model_id}")

    sw = np.sqrt(w)
    free = np.array([n not in model.fixed for n in model.names])
    lo = np.array(model.lower, dtype=float)[free]
    hi = np.array(model.upper, dtype=float)[free]
    p_all = np.array(model.p0, dtype=float)
    p0_free = p_all[free].copy()

    def full(q):
        out = p_all.copy()
        out[free] = q
        return out

    def residual(q):
        return sw * (y - model.func(x, *full(q)))

    def jacobian(q):
        if use_analytic and model.jac is not None:
            j = model.jac(x, *full(q))[:, free]
        else:
            j = numeric_jacobian(lambda xx, *pp: model.func(xx, *pp), x, full(q), p_all)[:, free]
        return sw[:, None] * j

    q = p0_free.copy()
    r = residual(q)
    if not np.all(np.isfinite(r)):
        raise FitInputError("model is not finite at the starting point")
    cost = float(r @ r)
    typical = np.where(q != 0, np.abs(q), 1.0)
    lam = 1e-3
    converged = False
    singular = False
    it = 0
    for it in range(1, max_iter + 1):
        J = jacobian(q)
        A = J.T @ J
        g = J.T @ r
        D = np.diag(np.diag(A))
        accepted = False
        while True:
            try:
                step = np.linalg.solve(A + lam * D, g)
            except np.linalg.LinAlgError:
                step = None
            if step is None or not np.all(np.isfinite(step)):
                lam *= 10
                if lam > 1e16:
                    singular = True
                    break
                continue
            q_new = q + step
            # a step leaving the box stops halfway to the violated bound
            q_new = np.where(q_new < lo, 0.5 * (q + lo), q_new)
            q_new = np.where(q_new > hi, 0.5 * (q + hi), q_new)
            delta = q_new - q
            small = np.all(np.abs(delta) <= xtol * np.maximum(np.abs(q), typical * 1e-3))
            r_new = residual(q_new)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if cost_new <= cost:
                q, r, cost = q_new, r_new, cost_new
                lam = max(lam / 10, 1e-12)
                accepted = True
                if history is not None:
                    history.append(cost)
            else:
                lam *= 10
            if small:
                converged = True
                break
            if accepted:
                break
            if lam > 1e16:
                # no descent direction left at any damping: treat as a stationary point
                converged = True
                break
        if singular or converged:
            break

    J = jacobian(q)
    dof = max(x.size - int(free.sum()), 1)
    errs_free = np.full(int(free.sum()), math.inf)
    # rank test on column-normalised J so parameter units do not matter
    norms = np.linalg.norm(J, axis=0)
    if not singular and np.all(norms > 0):
        Js = J / norms
        if np.linalg.matrix_rank(Js) == Js.shape[1]:
            inv_scaled = np.linalg.inv(Js.T @ Js)
            cov = inv_scaled / np.outer(norms, norms) * cost / dof
            errs_free = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        else:
            singular = True
    else:
        singular = True
    if singular:
        converged = False
    errors = np.zeros(len(model.names))
    errors[free] = errs_free
    result = FitResult(model.model_id, model.names, full(q), errors, math.sqrt(cost),
                       converged, it)
    if model.model_id == "biexp":
        amps, taus = full(q)[[0, 2]], full(q)[[1, 3]]
        if np.all(amps > 0) and np.all(taus > 0):
            result.extras = {
                "mean_lifetime_intensity": weighted_mean_lifetime(amps, taus, "intensity"),
                "mean_lifetime_amplitude": weighted_mean_lifetime(amps, taus, "amplitude"),
            }
    return result


# ---------------------------------------------------------------- lifetimes

def weighted_mean_lifetime(amplitudes, lifetimes, convention: str = "intensity") -> float:
    """Mean of a multi-exponential decay.

    intensity: sum(A tau^2) / sum(A tau); amplitude: sum(A tau) / sum(A).
    """
    a = np.asarray(amplitudes, dtype=float)
    t = np.asarray(lifetimes, dtype=float)
    if a.shape != t.shape or np.any(a <= 0) or np.any(t <= 0):
        raise ConfigurationError("amplitudes and lifetimes must be positive and paired")
    if convention == "intensity":
        return float((a * t * t).sum() / (a * t).sum())
    if convention == "amplitude":
        return float((a * t).sum() / a.sum())
    raise ConfigurationError(f"unknown convention {convention!r}")


def amplitude_ratio_for_mean(lifetimes, target: float, convention: str = "intensity") -> float:
    """Ratio A1/A2 of a two-component decay whose mean lifetime equals ``target``."""
    t1, t2 = lifetimes
    if not min(t1, t2) < target < max(t1, t2):
        raise ConfigurationError("target must lie strictly between the two lifetimes")

    def gap(log_r):
        r = math.exp(log_r)
        return weighted_mean_lifetime([r, 1.0], [t1, t2], convention) - target

    return math.exp(brentq(gap, -60.0, 60.0, xtol=1e-14))


# ---------------------------------------------------------------- IO

def read_xy_csv(source):
    """Columns x, y[, weight]; a non-numeric first row is treated as a header."""
    text = Path(source).read_text() if not hasattr(source, "read") else source.read()
    rows = []
    for row in csv.reader(io.StringIO(text)):
        if not row or row[0].lstrip().startswith("#"):
            continue
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            if rows:
                raise FitInputError(f"non-numeric row in fit input: {row}") from None
    if not rows:
        raise FitInputError("fit input has no data rows")
    arr = np.array(rows, dtype=float)
    w = arr[:, 2] if arr.shape[1] > 2 else None
    return arr[:, 0], arr[:, 1], w
