"""Closed-form threshold-detector model of Stokes/anti-Stokes correlations.

The write pulse leaves ``N`` Stokes/phonon mode pairs in a two-mode squeezed
state with per-mode emission probability ``p_bar``. Stokes photons are
counted by a detector of efficiency ``eta_a`` and noise-click probability
``q_a``; the read pulse is folded into an effective phonon detector
``(eta_b, q_b)``. Thermal phonons and four-wave-mixing photons enter only
through ``q_b``.

Differences of powers close to one are evaluated with ``expm1``/``log1p`` so
the small-``p_bar`` limits keep full relative precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import constants

__all__ = [
    "AnalyticParams",
    "SweepConfig",
    "SweepPoint",
    "UndefinedCorrelationError",
    "stokes_click_prob",
    "antistokes_click_prob",
    "coincidence_prob",
    "cross_correlation",
    "stokes_autocorrelation",
    "conditional_as_autocorrelation",
    "csi_ratio",
    "tmsv_csi_ratio",
    "max_bell_visibility",
    "thermal_occupancy",
    "pbar_fixed_mean",
    "power_sweep",
    "mode_count_table",
]


class UndefinedCorrelationError(ZeroDivisionError):
    """Normalized correlation with a vanishing denominator."""


def _check_prob(name, value, upper_open=False):
    if not (0.0 <= value <= 1.0) or (upper_open and value >= 1.0):
        rng = "[0, 1)" if upper_open else "[0, 1]"
        raise ValueError(f"{name} must lie in {rng}, got {value!r}")


@dataclass(frozen=True)
class AnalyticParams:
    p_bar: float
    N: int = 1
    eta_a: float = 1.0
    eta_b: float = 1.0
    q_a: float = 0.0
    q_b: float = 0.0

    def __post_init__(self):
        _check_prob("p_bar", self.p_bar, upper_open=True)
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be an integer >= 1, got {self.N!r}")
        _check_prob("eta_a", self.eta_a)
        _check_prob("eta_b", self.eta_b)
        _check_prob("q_a", self.q_a, upper_open=True)
        _check_prob("q_b", self.q_b, upper_open=True)

    def swapped(self) -> "AnalyticParams":
        return AnalyticParams(self.p_bar, self.N, self.eta_b, self.eta_a, self.q_b, self.q_a)


def _log_no_click(p: float, N: int, q: float, x: float) -> float:
    """log of (1-q) * ((1-p)/(1-p*x))**N."""
    return math.log1p(-q) + N * (math.log1p(-p) - math.log1p(-p * x))


def _click(p, N, q, eta) -> float:
    return -math.expm1(_log_no_click(p, N, q, 1.0 - eta))


def stokes_click_prob(params: AnalyticParams) -> float:
    return _click(params.p_bar, params.N, params.q_a, params.eta_a)


def antistokes_click_prob(params: AnalyticParams) -> float:
    return _click(params.p_bar, params.N, params.q_b, params.eta_b)


def coincidence_prob(params: AnalyticParams) -> float:
    p, N = params.p_bar, params.N
    la = _log_no_click(p, N, params.q_a, 1.0 - params.eta_a)
    lb = _log_no_click(p, N, params.q_b, 1.0 - params.eta_b)
    lab = (math.log1p(-params.q_a) + math.log1p(-params.q_b)
           + N * (math.log1p(-p) - math.log1p(-p * (1.0 - params.eta_a) * (1.0 - params.eta_b))))
    # S_a + S_b - 1 + (1-q_a)(1-q_b)(...)^N
    return -math.expm1(la) - math.expm1(lb) + math.expm1(lab)


def cross_correlation(params: AnalyticParams) -> float:
    sa, sb = stokes_click_prob(params), antistokes_click_prob(params)
    if sa * sb <= 0:
        raise UndefinedCorrelationError("S_a * S_b = 0: cross-correlation undefined")
    return coincidence_prob(params) / (sa * sb)


def stokes_autocorrelation(params: AnalyticParams) -> float:
    """Stokes g2 behind a 50/50 splitter (each detector sees half the efficiency)."""
    p, N, q, eta = params.p_bar, params.N, params.q_a, params.eta_a
    lh = _log_no_click(p, N, q, 1.0 - eta / 2)
    lf = _log_no_click(p, N, 0.0, 1.0 - eta) + 2 * math.log1p(-q)
    s_half = -math.expm1(lh)
    if s_half <= 0:
        raise UndefinedCorrelationError("no Stokes clicks: auto-correlation undefined")
    # 2*S~ - 1 + (1-q)^2 (...)^N
    c_aa = -2 * math.expm1(lh) + math.expm1(lf)
    return c_aa / s_half**2


def _n_log(n: np.ndarray, x: float) -> np.ndarray:
    """``n * log(x)`` with ``0 * log(0) = 0`` (so ``x**n`` is 1 at n = 0)."""
    if x > 0:
        return n * math.log(x)
    return np.where(n == 0, 0.0, -np.inf)


def _conditional_weights(p: float, q_a: float, eta_a: float, tol: float = 1e-20):
    """Phonon-number distribution after a Stokes click (single mode)."""
    n_max = int(math.ceil(math.log(tol) / math.log(p))) if p > 0 else 1
    n = np.arange(n_max + 1)
    herald = -np.expm1(math.log1p(-q_a) + _n_log(n, 1.0 - eta_a))
    w = (1 - p) * p**n * herald
    total = w.sum()
    return n, w, total


def conditional_as_autocorrelation(params: AnalyticParams) -> float:
    """Anti-Stokes g2 conditioned on a Stokes click (single mode; ``N`` ignored).

    Uses the heralded phonon distribution ``(1-p) p^n (1-(1-q_a)(1-eta_a)^n)``
    swapped into the anti-Stokes mode and a 50/50 auto-correlation measurement.
    """
    p, q_a, eta_a, q_b, eta_b = params.p_bar, params.q_a, params.eta_a, params.q_b, params.eta_b
    if p >= 0.999:
        return _conditional_closed_form(params)
    n, w, tr = _conditional_weights(p, q_a, eta_a)
    if tr <= 0:
        raise UndefinedCorrelationError("vanishing conditional trace: no heralding clicks")
    w = w / tr
    y = math.log1p(-q_b)
    nlu, nlv = _n_log(n, 1.0 - eta_b / 2), _n_log(n, 1.0 - eta_b)
    single = -np.expm1(y + nlu)                          # 1 - (1-q_b) u^n
    # 1 - 2 y u^n + y^2 v^n = (1 - y u^n)^2 - y^2 (u^2n - v^n)
    if eta_b < 1:
        spread = np.exp(2 * y + nlv) * np.expm1(2 * nlu - nlv)
    else:
        spread = np.exp(2 * y + 2 * nlu) - np.exp(2 * y + nlv)
    both = single**2 - spread
    den = float(np.dot(w, single)) ** 2
    if den <= 0:
        raise UndefinedCorrelationError("no anti-Stokes clicks: conditional correlation undefined")
    return float(np.dot(w, both)) / den


def _conditional_closed_form(params: AnalyticParams) -> float:
    p, q_a, eta_a, q_b, eta_b = params.p_bar, params.q_a, params.eta_a, params.q_b, params.eta_b
    if p >= 1:
        raise UndefinedCorrelationError("p = 1: conditional state not normalizable")
    tr = 1 - (1 - q_a) * (1 - p) / (1 - p * (1 - eta_a))
    if tr <= 0:
        raise UndefinedCorrelationError("vanishing conditional trace: no heralding clicks")

    def zeta(x):
        return ((1 - p) / (1 - p * x) - (1 - q_a) * (1 - p) / (1 - p * (1 - eta_a) * x)) / tr

    yb = 1 - q_b
    den = (1 - yb * zeta(1 - eta_b / 2)) ** 2
    if den <= 0:
        raise UndefinedCorrelationError("no anti-Stokes clicks: conditional correlation undefined")
    return (1 - 2 * yb * zeta(1 - eta_b / 2) + yb**2 * zeta(1 - eta_b)) / den


def csi_ratio(g_ab: float, g_aa: float, g_bb: float) -> float:
    """Cauchy-Schwarz ratio; values above 1 witness non-classical correlations."""
    den = g_aa * g_bb
    if den <= 0:
        raise UndefinedCorrelationError("g_aa * g_bb must be positive")
    return g_ab**2 / den


def tmsv_csi_ratio(p: float) -> float:
    """Cauchy-Schwarz ratio of a two-mode squeezed vacuum with pair probability ``p``."""
    if p <= 0:
        raise ValueError("pair probability must be positive")
    return 0.25 * (1 + 1 / p) ** 2


def max_bell_visibility(g_ab: float) -> float:
    if g_ab < 0:
        raise ValueError("g_ab must be non-negative")
    return (g_ab - 1) / (g_ab + 1)


def thermal_occupancy(frequency: float, temperature: float) -> float:
    """Bose-Einstein occupancy for an angular frequency in rad/s."""
    if frequency <= 0:
        raise ValueError("frequency must be positive")
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if temperature == 0:
        return 0.0
    x = constants.hbar * frequency / (constants.k * temperature)
    return 1.0 / math.expm1(x)


def pbar_fixed_mean(p: float, N: int) -> float:
    """Per-mode ``p_bar`` giving total mean photon number ``p/(1-p)`` over ``N`` modes."""
    return p / (N - p * (N - 1))


@dataclass(frozen=True)
class SweepConfig:
    eta: float = 0.07
    alpha_r: float = 0.3
    stokes_rate_grid: tuple[float, ...] = ()
    rep_rate: float = 8e7
    read_stokes_prob: tuple[float, ...] = ()
    noise_a: tuple[float, ...] = (1e-6,)
    noise_b: tuple[float, ...] = ()

    def __post_init__(self):
        if self.rep_rate <= 0:
            raise ValueError("rep_rate must be positive")
        _check_prob("eta", self.eta)
        if self.alpha_r < 0:
            raise ValueError("alpha_r must be non-negative")
        if any(r < 0 for r in self.stokes_rate_grid):
            raise ValueError("Stokes count rates must be non-negative")
        n = len(self.read_stokes_prob)
        if len(self.noise_b) != n:
            raise ValueError("noise_b needs one entry per read setting")
        if len(self.noise_a) not in (1, n):
            raise ValueError("noise_a needs one entry or one per read setting")
        for v in self.read_stokes_prob:
            _check_prob("read_stokes_prob", v, upper_open=True)
        for v in tuple(self.noise_a) + tuple(self.noise_b):
            _check_prob("noise probability", v, upper_open=True)

    def q_a(self, setting: int) -> float:
        return self.noise_a[0] if len(self.noise_a) == 1 else self.noise_a[setting]


@dataclass(frozen=True)
class SweepPoint:
    read_setting: int
    p_bar: float
    q_a: float
    q_b: float
    eta_a: float
    eta_b: float
    g_ab: float
    g_aa_cond_bound: float

    CSV_COLUMNS = ("p_bar", "q_a", "q_b", "eta_a", "eta_b", "g_ab", "g_aa_cond_bound")

    def csv_row(self) -> tuple:
        return tuple(getattr(self, c) for c in self.CSV_COLUMNS)


def power_sweep(sweep: SweepConfig) -> list[SweepPoint]:
    """Single-mode g_ab (and heralded anti-Stokes g2) over Stokes rates and read settings."""
    rows = []
    for s, p_sr in enumerate(sweep.read_stokes_prob):
        eta_b = sweep.eta * sweep.alpha_r * p_sr
        if eta_b > 1:
            raise ValueError(f"read setting {s}: effective efficiency {eta_b} exceeds 1")
        for rate in sweep.stokes_rate_grid:
            p_bar = rate / (sweep.eta * sweep.rep_rate)
            if p_bar >= 1:
                raise ValueError(
                    f"Stokes rate {rate:g} Hz gives p_bar = {p_bar:.3g} >= 1: outside the model regime")
            prm = AnalyticParams(p_bar, 1, sweep.eta, eta_b, sweep.q_a(s), sweep.noise_b[s])
            try:
                g_cond = conditional_as_autocorrelation(prm)
            except UndefinedCorrelationError:
                g_cond = float("nan")
            rows.append(SweepPoint(s, p_bar, prm.q_a, prm.q_b, prm.eta_a, eta_b,
                                   cross_correlation(prm), g_cond))
    return rows


def mode_count_table(p: float, modes: Sequence[int], eta: float = 1.0,
                     q: float = 0.0) -> list[tuple[int, float, float, float]]:
    """Rows ``(N, g_aa at raw p_bar, g_aa at fixed mean photon number, 1 + 1/N)``."""
    out = []
    for N in modes:
        raw = stokes_autocorrelation(AnalyticParams(p, N, eta, eta, q, q))
        fixed = stokes_autocorrelation(AnalyticParams(pbar_fixed_mean(p, N), N, eta, eta, q, q))
        out.append((int(N), raw, fixed, 1 + 1 / N))
    return out
