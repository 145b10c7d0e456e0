"""Lifetime fits of delay-dependent correlation curves.

The decay model is an exponential convolved with a Gaussian instrument
response. Fits use Levenberg-Marquardt with the analytic Jacobian and fall
back to Nelder-Mead when LM fails or leaves the physical region.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import optimize, special, stats

PARAMS = ("C", "A", "sigma", "t0", "tau")
DEFAULT_FIXED = {"sigma": 0.22, "C": 1.0}
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


class FitError(RuntimeError):
    """Fit did not converge or the data cannot constrain the model."""


@dataclass(frozen=True, eq=False)
class DelayCurve:
    delays: np.ndarray
    g2: np.ndarray
    sigma_g2: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=float)
        g = np.asarray(self.g2, dtype=float)
        s = np.zeros_like(d) if self.sigma_g2 is None else np.asarray(self.sigma_g2, dtype=float)
        if not (d.shape == g.shape == s.shape) or d.ndim != 1:
            raise ValueError("delays, g2 and sigma_g2 must be 1-d arrays of equal length")
        if np.any(np.diff(d) <= 0):
            raise ValueError("delays must be strictly increasing")
        if np.any(s < 0) or not np.all(np.isfinite(np.concatenate([d, g, s]))):
            raise ValueError("uncertainties must be finite and non-negative")
        for name, arr in (("delays", d), ("g2", g), ("sigma_g2", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.delays)

    @property
    def has_uncertainties(self) -> bool:
        return bool(np.all(self.sigma_g2 > 0))

    @classmethod
    def from_points(cls, points: Iterable[tuple[float, float, float]]) -> "DelayCurve":
        arr = np.asarray(list(points), dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delay_ps", "g2", "sigma_g2"])
        for row in zip(self.delays, self.g2, self.sigma_g2):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DelayCurve":
        rows = list(csv.reader(io.StringIO(text)))
        rows = [r for r in rows if r and not r[0].lstrip().startswith("#")]
        if not rows or [c.strip() for c in rows[0]] != ["delay_ps", "g2", "sigma_g2"]:
            raise ValueError("delay curve CSV must start with header delay_ps,g2,sigma_g2")
        pts = []
        for lineno, r in enumerate(rows[1:], start=2):
            if len(r) != 3:
                raise ValueError(f"line {lineno}: expected 3 columns, got {len(r)}")
            try:
                pts.append(tuple(float(v) for v in r))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        if not pts:
            raise ValueError("delay curve CSV has no data rows")
        return cls.from_points(pts)


@dataclass
class FitResult:
    C: float
    A: float
    sigma: float
    t0: float
    tau: float
    tau_ci: tuple[float, float]
    residual_norm: float
    fixed_params: frozenset = field(default_factory=frozenset)
    covariance: np.ndarray | None = None
    free_params: tuple[str, ...] = ()
    n_points: int = 0
    method: str = "lm"

    @property
    def params(self) -> dict[str, float]:
        return {p: getattr(self, p) for p in PARAMS}

    def model(self, t):
        return exp_gauss_model(t, self.C, self.A, self.sigma, self.t0, self.tau)

    def peak(self) -> tuple[float, float]:
        """Delay and value of the fitted correlation maximum."""
        lo = self.t0 - 5 * self.sigma
        hi = self.t0 + 5 * self.sigma + 3 * self.tau
        sign = 1.0 if self.A >= 0 else -1.0
        res = optimize.minimize_scalar(lambda t: -sign * self.model(t), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-10})
        return float(res.x), float(self.model(res.x))

    CSV_COLUMNS = ("C", "A", "sigma", "t0", "tau", "tau_ci_low", "tau_ci_high",
                   "residual_norm", "fixed_params", "method")

    def csv_row(self) -> list:
        nums = [self.C, self.A, self.sigma, self.t0, self.tau, self.tau_ci[0], self.tau_ci[1],
                self.residual_norm]
        return [float(v) for v in nums] + [";".join(sorted(self.fixed_params)), self.method]

    def to_text(self) -> str:
        lines = [f"{p} = {float(getattr(self, p))!r}" for p in PARAMS]
        lines += [
            f"tau_ci_low = {float(self.tau_ci[0])!r}",
            f"tau_ci_high = {float(self.tau_ci[1])!r}",
            f"residual_norm = {float(self.residual_norm)!r}",
            f"fixed_params = {','.join(sorted(self.fixed_params))}",
            f"n_points = {self.n_points}",
            f"method = {self.method}",
        ]
        return "\n".join(lines) + "\n"


# --- model ---------------------------------------------------------------------

def _gauss_pdf(u, sigma):
    return np.exp(-0.5 * (u / sigma) ** 2) / (_SQRT2PI * sigma)


def _decay_shape(u, sigma, tau):
    """0.5 exp(s^2/2tau^2 - u/tau) (1 + erf(z)), evaluated without overflow."""
    u = np.asarray(u, dtype=float)
    z = (u - sigma**2 / tau) / (_SQRT2 * sigma)
    out = np.empty_like(z)
    neg = z < 0
    # z < 0: exp(...) erfc(-z) = exp(-u^2/2s^2) erfcx(-z)
    out[neg] = 0.5 * np.exp(-0.5 * (u[neg] / sigma) ** 2) * special.erfcx(-z[neg])
    pos = ~neg
    out[pos] = 0.5 * np.exp(0.5 * (sigma / tau) ** 2 - u[pos] / tau) * special.erfc(-z[pos])
    return out


def exp_gauss_model(t, C, A, sigma, t0, tau):
    if sigma <= 0 or tau <= 0:
        raise ValueError("sigma and tau must be positive")
    t_arr = np.asarray(t, dtype=float)
    val = C + A * _decay_shape(np.atleast_1d(t_arr - t0), sigma, tau)
    return val.reshape(t_arr.shape) if t_arr.ndim else float(val[0])


def exp_gauss_jacobian(t, C, A, sigma, t0, tau) -> np.ndarray:
    """Partial derivatives, columns ordered as ``PARAMS``."""
    u = np.atleast_1d(np.asarray(t, dtype=float) - t0)
    e = _decay_shape(u, sigma, tau)
    g = _gauss_pdf(u, sigma)
    d_c = np.ones_like(u)
    d_a = e
    d_sigma = A * (e * sigma / tau**2 - g * (u / sigma + sigma / tau))
    d_t0 = A * (e / tau - g)
    d_tau = A * (e * (u / tau**2 - sigma**2 / tau**3) + g * sigma**2 / tau**2)
    return np.column_stack([d_c, d_a, d_sigma, d_t0, d_tau])


# --- decay fit -----------------------------------------------------------------

def _initial_guess(curve: DelayCurve, fixed: Mapping[str, float]) -> dict[str, float]:
    t, g = curve.delays, curve.g2
    slope = np.diff(g) / np.diff(t)
    k = int(np.argmax(slope))
    c0 = fixed.get("C", float(np.min(g)))
    return {
        "C": c0,
        "A": float(np.max(g)) - c0,
        "sigma": fixed.get("sigma", 0.22),
        "t0": 0.5 * (t[k] + t[k + 1]),
        "tau": 3.0,
    }


def fit_decay(curve: DelayCurve, fixed: Mapping[str, float] | None = None,
              weighted: bool = True, max_iter: int = 500, ci_method: str = "linear",
              n_boot: int = 200, seed: int = 0, initial: Mapping[str, float] | None = None) -> FitResult:
    """Weighted least-squares fit of the exponential-Gaussian decay model.

    ``fixed`` defaults to ``sigma = 0.22 ps`` and ``C = 1``. Points are
    weighted by ``1/sigma_g2**2`` when every uncertainty is positive and
    ``weighted`` is set; otherwise all weights are one. The 95 % interval on
    ``tau`` comes from the covariance at the optimum scaled by the reduced
    chi-square, or from a pairs bootstrap with ``ci_method="bootstrap"``.
    """
    fixed = dict(DEFAULT_FIXED if fixed is None else fixed)
    unknown = set(fixed) - set(PARAMS)
    if unknown:
        raise ValueError(f"unknown fixed parameters {sorted(unknown)}")
    free = tuple(p for p in PARAMS if p not in fixed)
    if len(curve) < max(5, len(free) + 1):
        raise FitError(f"need at least {max(5, len(free) + 1)} points, got {len(curve)}")
    if np.ptp(curve.g2) == 0:
        raise FitError("degenerate curve: all g2 values are equal")
    if ci_method not in ("linear", "bootstrap"):
        raise ValueError(f"unknown ci_method {ci_method!r}")

    t, y = curve.delays, curve.g2
    w = 1.0 / curve.sigma_g2 if (weighted and curve.has_uncertainties) else np.ones_like(y)
    x0 = _initial_guess(curve, fixed)
    if initial:
        x0.update(initial)
    x, method = _solve(t, y, w, fixed, free, x0, max_iter)

    full = dict(fixed)
    full.update(zip(free, x))
    resid = w * (exp_gauss_model(t, **full) - y)
    chi2 = float(resid @ resid)
    jac = exp_gauss_jacobian(t, **full)[:, [PARAMS.index(p) for p in free]] * w[:, None]
    dof = len(t) - len(free)
    try:
        cov = np.linalg.inv(jac.T @ jac) * (chi2 / dof if dof > 0 else 1.0)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"singular normal matrix at the optimum: {exc}") from None

    tau = full["tau"]
    if "tau" not in free:
        ci = (tau, tau)
    elif ci_method == "linear":
        half = stats.t.ppf(0.975, max(dof, 1)) * math.sqrt(max(cov[free.index("tau"), free.index("tau")], 0.0))
        ci = (tau - half, tau + half)
    else:
        ci = _bootstrap_ci(curve, fixed, weighted, max_iter, n_boot, seed, full)
    return FitResult(full["C"], full["A"], full["sigma"], full["t0"], tau, ci, chi2,
                     frozenset(fixed), cov, free, len(t), method)


def _solve(t, y, w, fixed, free, x0, max_iter):
    idx = [PARAMS.index(p) for p in free]

    def unpack(x):
        full = dict(fixed)
        full.update(zip(free, x))
        return full

    def residuals(x):
        full = unpack(x)
        if full["tau"] <= 0 or full["sigma"] <= 0:
            return np.full_like(y, 1e150)
        return w * (exp_gauss_model(t, **full) - y)

    def jac(x):
        full = unpack(x)
        if full["tau"] <= 0 or full["sigma"] <= 0:
            return np.zeros((len(y), len(free)))
        return exp_gauss_jacobian(t, **full)[:, idx] * w[:, None]

    start = np.array([x0[p] for p in free], dtype=float)
    try:
        res = optimize.least_squares(residuals, start, jac=jac, method="lm",
                                     max_nfev=max_iter * (len(free) + 1), xtol=1e-14, ftol=1e-14,
                                     gtol=1e-14)
        ok = res.success and np.all(np.isfinite(res.x)) and unpack(res.x)["tau"] > 0
    except (ValueError, FloatingPointError):
        ok = False
    if ok:
        return res.x, "lm"

    def chi2(x):
        r = residuals(x)
        return float(r @ r)

    nm = optimize.minimize(chi2, start, method="Nelder-Mead",
                           options={"maxiter": max_iter * 20, "xatol": 1e-12, "fatol": 1e-14})
    if not nm.success or unpack(nm.x)["tau"] <= 0:
        raise FitError(f"fit did not converge within {max_iter} iterations: {nm.message}")
    return nm.x, "nelder-mead"


def _bootstrap_ci(curve, fixed, weighted, max_iter, n_boot, seed, best):
    rng = np.random.default_rng(seed)
    n = len(curve)
    taus = []
    for _ in range(n_boot):
        pick = np.sort(rng.choice(n, size=n, replace=True))
        pick = np.unique(pick)
        if len(pick) < 5:
            continue
        sub = DelayCurve(curve.delays[pick], curve.g2[pick], curve.sigma_g2[pick])
        try:
            r = fit_decay(sub, fixed, weighted, max_iter, "linear",
                          initial={k: best[k] for k in ("A", "t0", "tau") if k not in fixed})
        except FitError:
            continue
        taus.append(r.tau)
    if len(taus) < 10:
        raise FitError("bootstrap produced too few successful fits")
    lo, hi = np.percentile(taus, [2.5, 97.5])
    return (float(min(lo, best["tau"])), float(max(hi, best["tau"])))


# --- instrument response -------------------------------------------------------

@dataclass
class GaussianFit:
    amplitude: float
    center: float
    sigma: float
    offset: float
    residual_norm: float


def _gauss(t, amp, center, sigma, offset):
    return offset + amp * np.exp(-0.5 * ((t - center) / sigma) ** 2)


def fit_gaussian(trace: Iterable[tuple[float, float]], max_iter: int = 500) -> GaussianFit:
    arr = np.asarray(list(trace), dtype=float).reshape(-1, 2)
    if len(arr) < 5:
        raise FitError(f"need at least 5 points, got {len(arr)}")
    arr = arr[np.argsort(arr[:, 0])]
    t, y = arr[:, 0], arr[:, 1]
    if np.ptp(y) == 0:
        raise FitError("flat trace: no peak to fit")
    offset = float(np.min(y))
    amp = float(np.max(y)) - offset
    k = int(np.argmax(y))
    above = t[y - offset > 0.5 * amp]
    width = max((above.max() - above.min()) / 2.3548, np.min(np.diff(t)))
    if _count_peaks(y, offset + 0.5 * amp) > 1:
        warnings.warn("trace has more than one maximum above half height; fitting a single Gaussian",
                      RuntimeWarning, stacklevel=2)

    def residuals(x):
        return _gauss(t, *x) - y

    def jac(x):
        amp_, c, s, _ = x
        e = np.exp(-0.5 * ((t - c) / s) ** 2)
        return np.column_stack([e, amp_ * e * (t - c) / s**2, amp_ * e * (t - c) ** 2 / s**3,
                                np.ones_like(t)])

    res = optimize.least_squares(residuals, [amp, t[k], width, offset], jac=jac, method="lm",
                                 max_nfev=max_iter * 5, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if not res.success or not np.all(np.isfinite(res.x)):
        raise FitError(f"Gaussian fit did not converge: {res.message}")
    a, c, s, o = res.x
    return GaussianFit(float(a), float(c), float(abs(s)), float(o), float(res.fun @ res.fun))


def _count_peaks(y, level):
    above = y > level
    return int(np.sum(above[1:] & ~above[:-1]) + above[0])


def fit_gaussian_irf(trace: Iterable[tuple[float, float]]) -> float:
    """Standard deviation of a Gaussian fitted to a delay-scan trace."""
    return fit_gaussian(trace).sigma


# --- normalization -------------------------------------------------------------

def normalize_curve(curve: DelayCurve, baseline: float = 1.0, sigma: float = 0.22,
                    fit: FitResult | None = None) -> DelayCurve:
    """Map ``g2`` to ``(g2 - baseline) / (peak - baseline)``.

    ``peak`` is the maximum of the fitted decay model rather than the largest
    measured point. Uncertainties follow the first-order ratio rule,
    including the fitted peak's own uncertainty.
    """
    if fit is None:
        fit = fit_decay(curve, fixed={"sigma": sigma, "C": baseline})
    t_peak, peak = fit.peak()
    scale = peak - baseline
    if scale <= 0:
        raise ValueError(f"fitted peak {peak:.6g} does not exceed the baseline {baseline:g}")
    var_peak = 0.0
    if fit.covariance is not None and fit.free_params:
        grad = exp_gauss_jacobian(t_peak, **fit.params)[0, [PARAMS.index(p) for p in fit.free_params]]
        var_peak = float(grad @ fit.covariance @ grad)
    norm = (curve.g2 - baseline) / scale
    sig = np.sqrt((curve.sigma_g2 / scale) ** 2 + norm**2 * var_peak / scale**2)
    return DelayCurve(curve.delays, norm, sig)
