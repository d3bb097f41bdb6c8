"""Curve fitting and time-scale extraction."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit

from .protocols import EchoCurve

#: Adamantane NMR measurements, kept for side-by-side reporting only.
#: Rates in 1/s, times relative to T2.
EXPERIMENTAL_REFERENCE = {
    "slope_positive_k": 23.0e3,
    "slope_negative_k": 26.5e3,
    "intercept_negative_k": 1.0e3,
    "A_scheme1": (0.020, 0.001),
    "A_scheme2": (0.026, 0.001),
    "sqrtA_scheme1": (0.141, 0.004),
    "sqrtA_scheme2": (0.161, 0.003),
    "T2_over_T3": (0.15, 0.01),
    "inverse_lyapunov_over_T2": 1.7,
}

GRAD_TOL = 1e-6


class FitError(RuntimeError):
    pass


@dataclass
class FitResult:
    model: str
    params: dict
    stderr: dict
    residual_rms: float
    converged: bool
    n_iter: int
    derived: dict = field(default_factory=dict)
    regions: dict = field(default_factory=dict)

    def __getitem__(self, name):
        if name in self.params:
            return self.params[name]
        return self.derived[name]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regions"] = {k: v.to_dict() for k, v in self.regions.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        d = dict(d)
        d["regions"] = {k: cls.from_dict(v) for k, v in d.get("regions", {}).items()}
        return cls(**d)


def least_squares(
    model: Callable,
    x: Sequence[float],
    y: Sequence[float],
    p0: Sequence[float],
    names: Optional[Sequence[str]] = None,
    max_nfev: int = 2000,
    grad_tol: float = GRAD_TOL,
    label: str = "custom",
    jac: Optional[Callable] = None,
) -> FitResult:
    """Levenberg-Marquardt fit of ``y ~ model(x, *p)``.

    ``jac(x, *p)`` returns the ``(len(x), len(p))`` model Jacobian; without
    it MINPACK uses forward differences, whose error (about ``sqrt(eps)``)
    can keep the gradient test below from passing.
    Non-convergence is reported through ``converged`` rather than raised.
    ``converged`` also requires the scaled gradient
    ``max_j |J_j . r| / (|J_j| |r|)`` to be below ``grad_tol``, unless the
    residual is already at the rounding level of ``y``.
    Uncertainties come from the linearized covariance at the optimum.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    names = list(names) if names is not None else [f"p{i}" for i in range(p0.size)]
    if len(names) != p0.size:
        raise ValueError("names and p0 differ in length")
    if x.shape != y.shape:
        raise ValueError("x and y differ in shape")
    if y.size < p0.size:
        raise ValueError(f"{y.size} points cannot determine {p0.size} parameters")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(p0))):
        raise ValueError("data and initial parameters must be finite")

    def resid(p):
        return model(x, *p) - y

    res = optimize.least_squares(
        resid, p0, jac=(lambda p: jac(x, *p)) if jac is not None else "2-point",
        method="lm", x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev,
    )
    jac = np.atleast_2d(res.jac)
    r = res.fun
    if not np.all(np.isfinite(jac)):
        raise FitError("non-finite Jacobian at the optimum")
    col = np.linalg.norm(jac, axis=0)
    if not np.any(col > 0):
        raise FitError("singular Jacobian: the model does not depend on its parameters")
    rnorm = np.linalg.norm(r)
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = np.abs(jac.T @ r) / (col * rnorm)
    scaled = np.where(col > 0, scaled, 0.0)
    # residuals at the rounding floor of the data make the angle test meaningless
    exact = rnorm <= 1e3 * np.finfo(float).eps * max(np.linalg.norm(y), np.finfo(float).tiny)
    grad = 0.0 if exact else float(np.max(np.nan_to_num(scaled)))
    dof = y.size - p0.size
    s2 = float(r @ r) / dof if dof > 0 else 0.0
    # normalize columns first: parameters may differ by many decades in scale
    scale = np.where(col > 0, col, 1.0)
    js = jac / scale
    cov = np.linalg.pinv(js.T @ js) / np.outer(scale, scale) * s2
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    err = np.where(col > 0, err, np.inf)
    return FitResult(
        model=label,
        params={n: float(v) for n, v in zip(names, res.x)},
        stderr={n: float(v) for n, v in zip(names, err)},
        residual_rms=float(np.sqrt(np.mean(r**2))),
        converged=bool(res.status > 0 and grad < grad_tol),
        n_iter=int(res.nfev),
    )


def _curve_xy(curve) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(curve, EchoCurve):
        mask = curve.valid & np.isfinite(curve.values)
        return curve.times[mask], curve.values[mask]
    t, v = curve
    return np.asarray(t, dtype=float), np.asarray(v, dtype=float)


def half_height_time(curve) -> Optional[float]:
    """First downward crossing of ``value(0)/2``, linearly interpolated.

    Returns ``None`` when the curve never reaches half height.
    """
    t, v = _curve_xy(curve)
    if t.size < 2:
        return None
    half = 0.5 * v[0]
    below = np.nonzero(v <= half)[0]
    below = below[below > 0]
    if below.size == 0:
        return None
    i = below[0]
    if v[i] == half:
        return float(t[i])
    frac = (v[i - 1] - half) / (v[i - 1] - v[i])
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


def abragam(t, w, h):
    """``sinc(w t) exp(-(h t)^2 / 2)`` with ``sinc(x) = sin(x)/x``."""
    t = np.asarray(t, dtype=float)
    return np.sinc(w * t / np.pi) * np.exp(-0.5 * (h * t) ** 2)


def _dsinc(u):
    """Derivative of ``sin(u)/u``."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-3
    safe = np.where(small, 1.0, u)
    out = (safe * np.cos(safe) - np.sin(safe)) / safe**2
    return np.where(small, -u / 3.0 + u**3 / 30.0, out)


def abragam_jac(t, w, h):
    t = np.asarray(t, dtype=float)
    g = np.exp(-0.5 * (h * t) ** 2)
    return np.column_stack([t * _dsinc(w * t) * g, -h * t * t * np.sinc(w * t / np.pi) * g])


def fit_abragam(curve, t_max: Optional[float] = None, floor: Optional[float] = None) -> FitResult:
    """Fit the sinc-Gaussian model; derives ``T2`` from ``1/T2 = sqrt(h^2 + w^2/3)``.

    ``t_max`` drops later samples.  ``floor`` keeps only the initial decay,
    up to and including the first sample below ``floor * value(0)``; small
    systems level off at a finite plateau that the model cannot describe.
    Initial ``h`` comes from the 1/e time and ``w`` from the first zero
    crossing (a small fraction of ``h`` if the curve stays positive).
    """
    t, v = _curve_xy(curve)
    if t_max is not None:
        keep = t <= t_max
        t, v = t[keep], v[keep]
    if floor is not None and v.size:
        below = np.nonzero(v < floor * v[0])[0]
        if below.size:
            t, v = t[: below[0] + 1], v[: below[0] + 1]
    v0 = v[0] if v.size else 1.0
    idx = np.nonzero(v < v0 / math.e)[0]
    t_e = t[idx[0]] if idx.size else t[-1]
    h0 = math.sqrt(2.0) / t_e if t_e > 0 else 1.0
    zero = np.nonzero(v <= 0)[0]
    w0 = math.pi / t[zero[0]] if zero.size and t[zero[0]] > 0 else 0.0
    # a strictly zero start leaves w in a flat direction of the objective
    w0 = w0 if w0 > 0 else 0.1 * h0
    fit = least_squares(abragam, t, v, [w0, h0], names=["w", "h"], label="abragam",
                        jac=abragam_jac)
    w, h = abs(fit.params["w"]), abs(fit.params["h"])
    fit.params = {"w": w, "h": h}
    rate = math.sqrt(h * h + w * w / 3.0)
    fit.derived = {"inv_T2": rate, "T2": 1.0 / rate if rate > 0 else math.inf}
    return fit


def logistic(t, c, lam, t3):
    """``C / (1 + exp(lambda (t - T3)))``."""
    return c * expit(-lam * (np.asarray(t, dtype=float) - t3))


def logistic_jac(t, c, lam, t3):
    d = np.asarray(t, dtype=float) - t3
    s = expit(-lam * d)
    ds = s * (1.0 - s)
    return np.column_stack([s, -c * ds * d, c * ds * lam])


def fit_logistic(curve) -> FitResult:
    """Fermi-function fit ``(C, lambda, T3)`` plus the model-free half-height time.

    Initial ``T3`` is the half-height time and ``lambda = 4 max|dM/dt| / C``.
    """
    t, v = _curve_xy(curve)
    c0 = float(v[0]) if v.size else 1.0
    hh = half_height_time((t, v))
    t30 = hh if hh is not None else float(t[np.argmin(np.abs(v - 0.5 * c0))])
    slope = np.max(-np.diff(v) / np.diff(t)) if t.size > 1 else 0.0
    lam0 = 4.0 * slope / c0 if slope > 0 and c0 > 0 else 1.0 / max(t30, np.ptp(t), 1e-300)
    fit = least_squares(logistic, t, v, [c0, lam0, t30], names=["C", "lambda", "T3"], label="logistic",
                       jac=logistic_jac)
    fit.derived = {"T3": fit.params["T3"], "half_height": hh}
    return fit


def _linear(x, y) -> FitResult:
    a = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    r = a @ coef - y
    dof = x.size - 2
    s2 = float(r @ r) / dof if dof > 0 else 0.0
    cov = np.linalg.inv(a.T @ a) * s2
    err = np.sqrt(np.diag(cov))
    return FitResult(
        model="linear",
        params={"slope": float(coef[0]), "intercept": float(coef[1])},
        stderr={"slope": float(err[0]), "intercept": float(err[1])},
        residual_rms=float(np.sqrt(np.mean(r**2))),
        converged=True,
        n_iter=1,
    )


def fit_linear_rate(k: Sequence[float], rate: Sequence[float]) -> FitResult:
    """Straight line through ``(k, 1/T2^k)``.

    When both signs of ``k`` occur, per-sign fits are attached under
    ``regions['positive']`` and ``regions['negative']``.
    """
    k = np.asarray(k, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if k.size < 2 or k.shape != rate.shape:
        raise ValueError("need at least two (k, rate) points")
    if np.ptp(k) == 0:
        raise ValueError("degenerate abscissae: all k are equal")
    fit = _linear(k, rate)
    pos, neg = k > 0, k < 0
    if pos.any() and neg.any():
        for name, sel in (("positive", pos), ("negative", neg)):
            if sel.sum() >= 2 and np.ptp(k[sel]) > 0:
                fit.regions[name] = _linear(k[sel], rate[sel])
    return fit


def sqrt_rate(x, a):
    """``sqrt(A + x^2)``."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.clip(a + x * x, 0.0, None))


def sqrt_rate_jac(x, a):
    f = sqrt_rate(x, a)
    return (0.5 / np.where(f > 0, f, np.inf))[:, None]


def fit_rate_relation(x: Sequence[float], y: Sequence[float]) -> FitResult:
    """One-parameter fit of ``y = sqrt(A + x^2)``; reports ``sqrtA``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.shape != y.shape:
        raise ValueError("need at least two (x, y) points")
    if np.any(x < 0):
        raise ValueError("x must be >= 0")
    a0 = float(np.mean(y * y - x * x))
    if a0 <= 0:
        a0 = 1e-3 * float(np.mean(y * y)) or 1e-3
    fit = least_squares(sqrt_rate, x, y, [a0], names=["A"], label="sqrt_rate", jac=sqrt_rate_jac)
    a = fit.params["A"]
    fit.derived = {"sqrtA": math.sqrt(a) if a >= 0 else math.nan}
    return fit
