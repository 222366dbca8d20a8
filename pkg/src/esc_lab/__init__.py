"""Simulation and analysis toolkit for perturbation-based extremum seeking control."""

from .amplitude import AdaptationLaw, amplitude_derivative
from .averaging import find_periodic_solution, proposition1_check
from .esc import ConfigError, SchemeConfig, build_scheme, run_scheme
from .kalman import KalmanConfig
from .metrics import RunMetrics, compute_metrics, convergence_time, oscillation_amplitude
from .plants import EXAMPLE1, EXAMPLE2, ObjectivePoly, example_plant, global_maximizer, stationary_points
from .sim_core import NonFiniteState, Trajectory, rk4_step, simulate

__version__ = "0.1.0"
