"""Four-mode write/read Raman model solved with a Lindblad master equation.

Modes: ``S1`` (Stokes of the write pulse), ``S2`` and ``aS2`` (Stokes and
anti-Stokes of the read pulse) and ``phonon``. Photon frequencies are taken
relative to the mean laser frequency. Times are in ps, frequencies in rad/ps.

The integrator works in the interaction frame of the free Hamiltonian by
default. All Raman couplings are energy conserving, so in that frame the
drive terms carry only their Gaussian envelopes and the step is limited by
the pulse width instead of the optical detunings. Number operators and the
normally ordered correlators used here are identical in both frames.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from . import _backend
from .analytic import thermal_occupancy
from .fitting import DelayCurve
from .fock import (
    DensityMatrix,
    ModeLayout,
    Operator,
    TruncationError,
    annihilation,
    check_truncation,
    make_layout,
    thermal_state,
)

MODES = ("S1", "S2", "aS2", "phonon")
PHOTON_MODES = ("S1", "S2", "aS2")


class NumericalError(RuntimeError):
    """Integration left its accuracy envelope."""


@dataclass(frozen=True)
class PulseParams:
    amplitude: float
    center_time: float
    width: float
    detuning: float = 0.0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"pulse width must be positive, got {self.width}")
        if self.amplitude < 0:
            raise ValueError(f"pulse amplitude must be non-negative, got {self.amplitude}")

    def envelope(self, t):
        return self.amplitude * np.exp(-((t - self.center_time) ** 2) / (2 * self.width**2))


def pulse_amplitude(pulse: PulseParams, t):
    """Complex drive ``A exp(-(t-t0)^2/2w^2) exp(-i detuning t)``."""
    return pulse.envelope(t) * np.exp(-1j * pulse.detuning * t)


def noise_occupancy(pulse: PulseParams, t, c1: float, c2: float, n_th0: float):
    """Effective bath occupancy from dark counts (c1) and four-wave mixing (c2)."""
    if c1 < 0 or c2 < 0 or n_th0 < 0:
        raise ValueError("noise constants must be non-negative")
    return n_th0 * (c2 * pulse.envelope(t) ** 4 + c1)


@dataclass(frozen=True)
class SimConfig:
    write_amplitude: float = 0.1
    write_center_ps: float = 1.5
    write_width_ps: float = 0.2
    read_amplitude: float = 0.4
    read_center_ps: float = 1.5
    read_width_ps: float = 0.2
    omega_l1_rad_ps: float = 2.90e3
    omega_l2_rad_ps: float = 2.35e3
    phonon_frequency_rad_ps: float = 2 * math.pi * 40.0
    # None: derived from energy conservation of the Raman processes
    delta_s1_rad_ps: float | None = None
    delta_s2_rad_ps: float | None = None
    delta_as2_rad_ps: float | None = None
    lambda_s1: float = 1.0
    lambda_s2: float = 1.0
    lambda_as2: float = 1.0
    tau_s1_ps: float = 0.2
    tau_s2_ps: float = 0.2
    tau_as2_ps: float = 0.2
    tau_m_ps: float = 4.0
    photon_rate_convention: str = "angular"
    phonon_rate_convention: str = "inverse"
    temperature_k: float = 300.0
    c1: float = 1e-6
    c2: float = 4.5e-6
    # None: Bose-Einstein occupancy of the phonon
    n_th0: float | None = None
    noise_scale_s1: float = 1.0
    noise_scale_s2: float = 0.0
    noise_scale_as2: float = 1.0
    cutoff_s1: int = 3
    cutoff_s2: int = 3
    cutoff_as2: int = 3
    cutoff_phonon: int = 4
    step_ps: float | None = None
    t_start_ps: float | None = None
    t_end_ps: float | None = None
    margin_widths: float = 6.0
    truncation_threshold: float = 1e-4
    frame: str = "interaction"

    def __post_init__(self):
        for name in ("tau_s1_ps", "tau_s2_ps", "tau_as2_ps", "tau_m_ps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.step_ps is not None and self.step_ps <= 0:
            raise ValueError("step_ps must be positive")
        for conv in (self.photon_rate_convention, self.phonon_rate_convention):
            if conv not in ("angular", "inverse"):
                raise ValueError(f"rate convention must be 'angular' or 'inverse', got {conv!r}")
        if self.frame not in ("interaction", "rotating"):
            raise ValueError(f"frame must be 'interaction' or 'rotating', got {self.frame!r}")
        if self.temperature_k < 0:
            raise ValueError("temperature must be >= 0")
        if min(self.c1, self.c2) < 0 or (self.n_th0 is not None and self.n_th0 < 0):
            raise ValueError("noise constants must be non-negative")
        # validates widths and amplitudes
        self.write_pulse, self.read_pulse

    @property
    def omega0(self) -> float:
        return 0.5 * (self.omega_l1_rad_ps + self.omega_l2_rad_ps)

    @property
    def detunings(self) -> dict[str, float]:
        wm, w0 = self.phonon_frequency_rad_ps, self.omega0
        derived = {
            "S1": self.omega_l1_rad_ps - wm - w0,
            "S2": self.omega_l2_rad_ps - wm - w0,
            "aS2": self.omega_l2_rad_ps + wm - w0,
        }
        given = {"S1": self.delta_s1_rad_ps, "S2": self.delta_s2_rad_ps, "aS2": self.delta_as2_rad_ps}
        return {k: derived[k] if given[k] is None else given[k] for k in derived}

    @property
    def write_pulse(self) -> PulseParams:
        return PulseParams(self.write_amplitude, self.write_center_ps, self.write_width_ps,
                           self.omega_l1_rad_ps - self.omega0)

    @property
    def read_pulse(self) -> PulseParams:
        return PulseParams(self.read_amplitude, self.read_center_ps, self.read_width_ps,
                           self.omega_l2_rad_ps - self.omega0)

    @property
    def couplings(self) -> dict[str, float]:
        return {"S1": self.lambda_s1, "S2": self.lambda_s2, "aS2": self.lambda_as2}

    def decay_rate(self, mode: str) -> float:
        tau = {"S1": self.tau_s1_ps, "S2": self.tau_s2_ps, "aS2": self.tau_as2_ps,
               "phonon": self.tau_m_ps}[mode]
        conv = self.phonon_rate_convention if mode == "phonon" else self.photon_rate_convention
        return (2 * math.pi if conv == "angular" else 1.0) / tau

    @property
    def phonon_occupancy(self) -> float:
        # rad/ps -> rad/s
        return thermal_occupancy(self.phonon_frequency_rad_ps * 1e12, self.temperature_k)

    @property
    def noise_base(self) -> float:
        return self.phonon_occupancy if self.n_th0 is None else self.n_th0

    def noise_scale(self, mode: str) -> float:
        return {"S1": self.noise_scale_s1, "S2": self.noise_scale_s2,
                "aS2": self.noise_scale_as2}[mode]

    def photon_bath_occupancy(self, mode: str, t) -> float:
        """Noise both pulses inject into a photon channel at time ``t``."""
        scale = self.noise_scale(mode)
        if scale == 0:
            return 0.0 * np.asarray(t)
        w, r = self.write_pulse, self.read_pulse
        return scale * self.noise_base * (self.c1 + self.c2 * (w.envelope(t) ** 4 + r.envelope(t) ** 4))

    def layout(self) -> ModeLayout:
        return make_layout([("S1", self.cutoff_s1), ("S2", self.cutoff_s2),
                            ("aS2", self.cutoff_as2), ("phonon", self.cutoff_phonon)])

    @property
    def time_span(self) -> tuple[float, float]:
        w, r = self.write_pulse, self.read_pulse
        lo = min(w.center_time - self.margin_widths * w.width, r.center_time - self.margin_widths * r.width)
        hi = max(w.center_time + self.margin_widths * w.width, r.center_time + self.margin_widths * r.width)
        return (lo if self.t_start_ps is None else self.t_start_ps,
                hi if self.t_end_ps is None else self.t_end_ps)

    @property
    def step(self) -> float:
        if self.step_ps is not None:
            return self.step_ps
        h = min(self.write_width_ps, self.read_width_ps) / 20
        # keep the stiffest damping eigenvalue inside the RK4 stability region
        bound = self._damping_bound()
        return min(h, 2.5 / bound) if bound > 0 else h

    def _damping_bound(self) -> float:
        total = 0.0
        cut = {"S1": self.cutoff_s1, "S2": self.cutoff_s2, "aS2": self.cutoff_as2,
               "phonon": self.cutoff_phonon}
        peak = max(self.write_amplitude, self.read_amplitude)
        for m in MODES:
            nbar = self.phonon_occupancy if m == "phonon" else (
                self.noise_scale(m) * self.noise_base * (self.c1 + 2 * self.c2 * peak**4))
            total += self.decay_rate(m) * (2 * nbar + 1) * (cut[m] - 1)
        return total

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    times: np.ndarray
    occupancies: dict[str, np.ndarray]
    states: list[DensityMatrix] | None = None


# --- generator -----------------------------------------------------------------

def _monomial(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (source column, weight) form of a matrix with <= 1 nonzero per row."""
    nz = matrix != 0
    if np.any(nz.sum(axis=1) > 1):
        raise ValueError("operator has more than one nonzero per row")
    src = np.where(nz.any(axis=1), nz.argmax(axis=1), 0).astype(np.int64)
    w = matrix[np.arange(matrix.shape[0]), src] * nz.any(axis=1)
    return src, w.astype(complex)


class LindbladModel:
    """Time-dependent generator of the master equation in monomial form."""

    def __init__(self, config: SimConfig, frame: str | None = None):
        self.config = config
        self.frame = frame or config.frame
        self.layout = config.layout()
        L = self.layout
        a = {m: annihilation(L, m).matrix for m in MODES}
        ad = {m: a[m].conj().T for m in MODES}
        self.occ = {m: L.occupations(m).astype(float) for m in MODES}
        det, wm, lam = config.detunings, config.phonon_frequency_rad_ps, config.couplings
        wp, rp = config.write_pulse, config.read_pulse

        # (operator, pulse, coupling, free-energy change of the operator)
        terms = [
            (ad["phonon"] @ ad["S1"], wp, lam["S1"], wm + det["S1"]),
            (a["phonon"] @ ad["aS2"], rp, lam["aS2"], det["aS2"] - wm),
            (ad["phonon"] @ ad["S2"], rp, lam["S2"], wm + det["S2"]),
        ]
        self._terms = terms
        srcs, ws, coefs = [], [], []
        for op, pulse, lam_k, energy in terms:
            for mat, conj in ((op, False), (op.conj().T, True)):
                s, w = _monomial(mat)
                srcs.append(s)
                ws.append(w)
                coefs.append((pulse, lam_k, energy, conj))
        self._hsrc = np.ascontiguousarray(srcs)
        self._hw0 = np.asarray(ws)
        self._hcoef = coefs

        if self.frame == "rotating":
            self._h_diag = sum(det[m] * self.occ[m] for m in PHOTON_MODES) + wm * self.occ["phonon"]
        else:
            self._h_diag = np.zeros(L.dimension)

        jsrc, jw0, jnorm, jkind = [], [], [], []
        for m in MODES:
            for mat, kind in ((a[m], "down"), (ad[m], "up")):
                s, w = _monomial(mat)
                jsrc.append(s)
                jw0.append(w)
                jnorm.append(np.bincount(s, weights=np.abs(w) ** 2, minlength=L.dimension))
                jkind.append((m, kind))
        self._jsrc = np.ascontiguousarray(jsrc)
        self._jw0 = np.asarray(jw0)
        self._jnorm = np.asarray(jnorm)
        self._jkind = jkind
        self._gamma = {m: config.decay_rate(m) for m in MODES}
        self._nth_phonon = config.phonon_occupancy

    def _coupling(self, pulse, lam_k, energy, conj, t) -> complex:
        c = lam_k * pulse_amplitude(pulse, t)
        if self.frame == "interaction":
            c = c * np.exp(1j * energy * t)
        return np.conj(c) if conj else c

    def rates(self, t: float) -> np.ndarray:
        out = np.empty(len(self._jkind))
        for j, (m, kind) in enumerate(self._jkind):
            nbar = self._nth_phonon if m == "phonon" else self.config.photon_bath_occupancy(m, t)
            out[j] = self._gamma[m] * (nbar + 1.0 if kind == "down" else nbar)
        return out

    def coefficients(self, t: float):
        hw = self._hw0 * np.array([self._coupling(*c, t) for c in self._hcoef])[:, None]
        rates = self.rates(t)
        jw = self._jw0 * np.sqrt(rates)[:, None]
        diag = self._h_diag - 0.5j * (rates[:, None] * self._jnorm).sum(axis=0)
        return (np.ascontiguousarray(diag, dtype=complex), np.ascontiguousarray(hw),
                np.ascontiguousarray(jw))

    def rhs(self, rho: np.ndarray, t: float, coeffs=None, out=None) -> np.ndarray:
        diag, hw, jw = self.coefficients(t) if coeffs is None else coeffs
        if out is None:
            out = np.empty_like(rho)
        _backend.lindblad_rhs(rho, diag, self._hsrc, hw, self._jsrc, jw, out)
        return out

    def hamiltonian(self, t: float) -> np.ndarray:
        h = np.diag(self._h_diag).astype(complex)
        for op, pulse, lam_k, energy in self._terms:
            c = self._coupling(pulse, lam_k, energy, False, t)
            h += c * op + np.conj(c) * op.conj().T
        return h

    def occupation(self, rho: np.ndarray, mode: str) -> float:
        return float(np.dot(np.diag(rho).real, self.occ[mode]))


def build_hamiltonian(config: SimConfig, t: float, frame: str = "rotating") -> Operator:
    """H(t) in the frame rotating at the mean laser frequency (or the interaction frame)."""
    model = LindbladModel(config, frame=frame)
    return Operator(model.layout, model.hamiltonian(t))


def lindblad_rhs(rho: DensityMatrix | np.ndarray, t: float, config: SimConfig,
                 frame: str = "rotating") -> np.ndarray:
    model = LindbladModel(config, frame=frame)
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if m.shape != (model.layout.dimension,) * 2:
        raise ValueError(f"state shape {m.shape} does not match layout dimension {model.layout.dimension}")
    return model.rhs(np.ascontiguousarray(m), t)


# --- integration ---------------------------------------------------------------

class Propagator:
    """Fixed-step RK4 on the global grid ``t_start + k*h``."""

    def __init__(self, config: SimConfig, model: LindbladModel | None = None):
        self.config = config
        self.model = model or LindbladModel(config)
        t0, t1 = config.time_span
        n = max(1, int(math.ceil((t1 - t0) / config.step - 1e-9)))
        self.times = t0 + (t1 - t0) * np.arange(n + 1) / n
        self.h = (t1 - t0) / n
        self._cache: dict[int, tuple] = {}
        self._buf = [np.empty((self.model.layout.dimension,) * 2, dtype=complex) for _ in range(4)]

    def index(self, t: float) -> int:
        k = int(round((t - self.times[0]) / self.h))
        if not 0 <= k < len(self.times):
            raise ValueError(f"time {t} outside simulated span [{self.times[0]}, {self.times[-1]}]")
        return k

    def _coeffs(self, key: int):
        # key counts half steps so midpoints are shared across propagations
        c = self._cache.get(key)
        if c is None:
            c = self.model.coefficients(self.times[0] + 0.5 * key * self.h)
            self._cache[key] = c
        return c

    def step(self, rho: np.ndarray, k: int) -> np.ndarray:
        h, f = self.h, self.model.rhs
        k1, k2, k3, k4 = self._buf
        f(rho, 0.0, self._coeffs(2 * k), k1)
        mid = self._coeffs(2 * k + 1)
        f(rho + 0.5 * h * k1, 0.0, mid, k2)
        f(rho + 0.5 * h * k2, 0.0, mid, k3)
        f(rho + h * k3, 0.0, self._coeffs(2 * k + 2), k4)
        return rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def run(self, rho: np.ndarray, k_start: int, k_end: int,
            observe: Callable[[int, np.ndarray], None] | None = None,
            trace_tol: float = 1e-6) -> np.ndarray:
        rho = np.ascontiguousarray(rho, dtype=complex)
        tr0 = np.trace(rho).real
        layout, thr = self.model.layout, self.config.truncation_threshold
        if observe:
            observe(k_start, rho)
        for k in range(k_start, k_end):
            rho = self.step(rho, k)
            tr = np.trace(rho).real
            if not np.isfinite(tr) or abs(tr - tr0) > trace_tol * max(abs(tr0), 1e-300):
                raise NumericalError(
                    f"trace drifted from {tr0:.12g} to {tr:.12g} at t={self.times[k + 1]:.4f} ps")
            check_truncation(layout, rho, thr)
            if observe:
                observe(k + 1, rho)
        return rho


def initial_state(config: SimConfig) -> DensityMatrix:
    """Thermal phonon, photon modes at their bath occupancy at the start time."""
    t0 = config.time_span[0]
    occ = {m: float(config.photon_bath_occupancy(m, t0)) for m in PHOTON_MODES}
    occ["phonon"] = config.phonon_occupancy
    return thermal_state(config.layout(), occ)


def evolve(rho0: DensityMatrix, config: SimConfig, stride: int = 1,
           keep_states: bool = False) -> Trajectory:
    prop = Propagator(config)
    if rho0.layout != prop.model.layout:
        raise ValueError("initial state layout does not match configuration")
    times, occs, states = [], {m: [] for m in MODES}, []

    def observe(k, rho):
        if k % stride and k != len(prop.times) - 1:
            return
        times.append(prop.times[k])
        for m in MODES:
            occs[m].append(prop.model.occupation(rho, m))
        if keep_states:
            herm = 0.5 * (rho + rho.conj().T)
            states.append(DensityMatrix(prop.model.layout, herm / np.trace(herm).real))

    prop.run(rho0.matrix, 0, len(prop.times) - 1, observe)
    return Trajectory(np.asarray(times), {m: np.asarray(v) for m, v in occs.items()},
                      states if keep_states else None)


# --- two-time correlations -----------------------------------------------------

@dataclass
class G2Result:
    g2: float
    t1: float
    t2: float
    n_s1: float
    n_as2: float
    numerator: float
    mode: str = "peak"


def _sandwich(layout: ModeLayout, mode: str, rho: np.ndarray) -> np.ndarray:
    a = annihilation(layout, mode).matrix
    return np.ascontiguousarray(a @ rho @ a.conj().T)


def _correlate(prop: Propagator, rho_first: np.ndarray, k_first: int, k_second: int,
               herald: str, probe: str) -> float:
    """<a_h^dag(t_first) n_p(t_second) a_h(t_first)> via quantum regression."""
    x = _sandwich(prop.model.layout, herald, rho_first)
    if np.trace(x).real <= 0:
        return 0.0
    x = prop.run(x, k_first, k_second)
    return prop.model.occupation(x, probe)


def two_time_g2(config: SimConfig, t1: float, t2: float, rho0: DensityMatrix | None = None) -> float:
    """Normalized S1 (at t1) / aS2 (at t2) cross-correlation.

    Either time ordering is accepted; the earlier operator is the one
    sandwiched around the state and propagated.
    """
    prop = Propagator(config)
    k1, k2 = prop.index(t1), prop.index(t2)
    rho = (rho0 or initial_state(config)).matrix
    saved = {}
    prop.run(rho, 0, max(k1, k2), lambda k, r: saved.__setitem__(k, r.copy()) if k in (k1, k2) else None)
    n1 = prop.model.occupation(saved[k1], "S1")
    n2 = prop.model.occupation(saved[k2], "aS2")
    if n1 <= 0 or n2 <= 0:
        raise ZeroDivisionError("no photons in S1 or aS2: correlation undefined")
    if k1 <= k2:
        num = _correlate(prop, saved[k1], k1, k2, "S1", "aS2")
    else:
        num = _correlate(prop, saved[k2], k2, k1, "aS2", "S1")
    return num / (n1 * n2)


def peak_g2(config: SimConfig) -> G2Result:
    """g2 sampled at the peaks of <n_S1> and <n_aS2>."""
    prop = Propagator(config)
    model = prop.model
    best = {"S1": (-1.0, 0, None), "aS2": (-1.0, 0, None)}

    def observe(k, rho):
        for m in best:
            n = model.occupation(rho, m)
            if n > best[m][0]:
                best[m] = (n, k, rho.copy())

    prop.run(initial_state(config).matrix, 0, len(prop.times) - 1, observe)
    (n1, k1, r1), (n2, k2, r2) = best["S1"], best["aS2"]
    if n1 <= 0 or n2 <= 0:
        raise ZeroDivisionError("no photons in S1 or aS2: correlation undefined")
    if k1 <= k2:
        num = _correlate(prop, r1, k1, k2, "S1", "aS2")
    else:
        num = _correlate(prop, r2, k2, k1, "aS2", "S1")
    return G2Result(num / (n1 * n2), prop.times[k1], prop.times[k2], n1, n2, num)


def window_g2(config: SimConfig, half_width: float = 3.0) -> G2Result:
    """g2 from correlators summed over windows around each pulse.

    Windows span ``center +- half_width * width`` of the write (S1) and read
    (aS2) pulses. The double sum over (t1, t2) is built in a single pass:
    heralded states ``a rho a^dag`` are accumulated as the window is crossed
    and carried forward with the same generator, which by linearity equals
    propagating each term separately.
    """
    prop = Propagator(config)
    model = prop.model
    layout = model.layout
    wp, rp = config.write_pulse, config.read_pulse
    ts = prop.times
    in1 = np.abs(ts - wp.center_time) <= half_width * wp.width
    in2 = np.abs(ts - rp.center_time) <= half_width * rp.width
    if not in1.any() or not in2.any():
        raise ValueError("integration windows fall outside the simulated span")
    last = int(max(np.flatnonzero(in1).max(), np.flatnonzero(in2).max()))
    a1 = annihilation(layout, "S1").matrix
    a2 = annihilation(layout, "aS2").matrix
    rho = initial_state(config).matrix.astype(complex)
    # y: S1 heralds (t1 <= t), z: aS2 heralds (t2 < t)
    y = np.zeros_like(rho)
    z = np.zeros_like(rho)
    num = s1 = s2 = 0.0
    thr = config.truncation_threshold
    for k in range(last + 1):
        if in1[k]:
            s1 += model.occupation(rho, "S1")
            num += model.occupation(z, "S1")
            y = y + a1 @ rho @ a1.conj().T
        if in2[k]:
            s2 += model.occupation(rho, "aS2")
            num += model.occupation(y, "aS2")
            z = z + a2 @ rho @ a2.conj().T
        if k == last:
            break
        for name, state in (("rho", rho), ("y", y), ("z", z)):
            tr0 = np.trace(state).real
            if tr0 <= 0:
                continue
            new = prop.step(state, k)
            tr = np.trace(new).real
            if not np.isfinite(tr) or abs(tr - tr0) > 1e-6 * tr0:
                raise NumericalError(f"{name}: trace drifted from {tr0:.12g} to {tr:.12g} "
                                     f"at t={ts[k + 1]:.4f} ps")
            check_truncation(layout, new, thr)
            if name == "rho":
                rho = new
            elif name == "y":
                y = new
            else:
                z = new
    if s1 <= 0 or s2 <= 0:
        raise ZeroDivisionError("no photons in S1 or aS2: correlation undefined")
    n1, n2 = int(in1[: last + 1].sum()), int(in2[: last + 1].sum())
    return G2Result(num / (s1 * s2), float(ts[in1].mean()), float(ts[in2].mean()),
                    s1 / n1, s2 / n2, num, mode="window")


def correlation_g2(config: SimConfig, mode: str = "peak") -> G2Result:
    if mode == "peak":
        return peak_g2(config)
    if mode == "window":
        return window_g2(config)
    raise ValueError(f"unknown g2 mode {mode!r}")


# --- sweeps --------------------------------------------------------------------

@dataclass
class SweepRow:
    write_amplitude: float
    read_amplitude: float
    n_s1: float
    g2: float


def _sweep_point(args) -> SweepRow:
    config, mode = args
    res = correlation_g2(config, mode)
    return SweepRow(config.write_amplitude, config.read_amplitude, res.n_s1, res.g2)


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def g2_power_sweep(config: SimConfig, write_amplitudes: Sequence[float],
                   read_amplitudes: Sequence[float], mode: str = "peak",
                   workers: int = 1) -> list[SweepRow]:
    """g2 over a write x read amplitude grid, rows grouped by read amplitude."""
    if len(write_amplitudes) == 0 or len(read_amplitudes) == 0:
        raise ValueError("amplitude grids must be nonempty")
    jobs = [(config.with_(write_amplitude=float(a1), read_amplitude=float(a2)), mode)
            for a2 in read_amplitudes for a1 in write_amplitudes]
    return _map(_point_or_context, jobs, workers)


def _point_or_context(args) -> SweepRow:
    cfg, _ = args
    try:
        return _sweep_point(args)
    except (NumericalError, TruncationError) as exc:
        raise type(exc)(f"grid point A1={cfg.write_amplitude:g}, A2={cfg.read_amplitude:g}: {exc}") from exc


def delay_sweep_g2(config: SimConfig, delays: Iterable[float], mode: str = "peak",
                   workers: int = 1) -> DelayCurve:
    """g2 versus write-read delay (read centre = write centre + delay).

    Negative delays put the read pulse first.
    """
    delays = [float(d) for d in delays]
    jobs = [(config.with_(read_center_ps=config.write_center_ps + d), mode) for d in delays]
    rows = _map(_point_or_context, jobs, workers)
    return DelayCurve(np.asarray(delays), np.asarray([r.g2 for r in rows]), np.zeros(len(rows)))


def emitted_photons(config: SimConfig, mode: str) -> float:
    """Photons leaked out of ``mode`` over the run: gamma * integral of <n> dt."""
    traj = evolve(initial_state(config), config)
    return config.decay_rate(mode) * float(trapezoid(traj.occupancies[mode], traj.times))


def calibrate_noise(config: SimConfig, n_as_total: float = 2.4e-4, n_as_sfwm: float = 0.6e-4,
                    rtol: float = 1e-3) -> SimConfig:
    """Fix the read amplitude and noise scale from one read-only measurement.

    The read amplitude is chosen so that the anti-Stokes emission without
    four-wave-mixing noise equals ``n_as_total - n_as_sfwm``; ``n_th0`` is then
    set so that switching the noise on adds ``n_as_sfwm``.
    """
    from scipy.optimize import brentq

    base = config.with_(write_amplitude=0.0, c1=0.0)
    target_signal = n_as_total - n_as_sfwm

    def signal(amp):
        return emitted_photons(base.with_(read_amplitude=amp, c2=0.0), "aS2") - target_signal

    hi = 0.5
    while signal(hi) < 0:
        hi *= 2
        if hi > 64:
            raise ValueError("read amplitude needed for calibration exceeds search range")
    amp = brentq(signal, 0.0, hi, rtol=rtol)
    off = emitted_photons(base.with_(read_amplitude=amp, c2=0.0), "aS2")

    def sfwm(n0):
        return emitted_photons(base.with_(read_amplitude=amp, n_th0=n0), "aS2") - off - n_as_sfwm

    # the response is nearly linear in n_th0; bracket around the linear guess
    probe = 1.0
    slope = (sfwm(probe) + n_as_sfwm) / probe
    guess = n_as_sfwm / slope
    n0 = brentq(sfwm, 0.5 * guess, 2.0 * guess, rtol=rtol)
    return config.with_(read_amplitude=amp, n_th0=n0)
