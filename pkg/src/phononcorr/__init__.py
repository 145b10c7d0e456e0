"""Phonon-mediated Stokes/anti-Stokes photon correlations.

Modules: ``fock`` (truncated Fock-space algebra), ``analytic`` (threshold
detector model), ``lindblad`` (four-mode master equation and two-time
correlations), ``counting`` (Monte-Carlo coincidence histograms),
``fitting`` (decay and IRF fits) and ``cli``.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .analytic import (
    AnalyticParams,
    SweepConfig,
    antistokes_click_prob,
    coincidence_prob,
    conditional_as_autocorrelation,
    cross_correlation,
    max_bell_visibility,
    power_sweep,
    stokes_autocorrelation,
    stokes_click_prob,
    thermal_occupancy,
)
from .counting import (
    ClickModel,
    CoincidenceHistogram,
    EventStream,
    build_histogram,
    extract_g2,
    simulate_clicks,
    simulate_histogram,
    subtract_crosstalk,
)
from .fitting import (
    DelayCurve,
    FitResult,
    exp_gauss_model,
    fit_decay,
    fit_gaussian_irf,
    normalize_curve,
)
from .fock import DensityMatrix, ModeLayout, Operator, make_layout
from .lindblad import (
    PulseParams,
    SimConfig,
    build_hamiltonian,
    delay_sweep_g2,
    evolve,
    g2_power_sweep,
    lindblad_rhs,
    two_time_g2,
)

__all__ = [name for name in dir() if not name.startswith("_")]
