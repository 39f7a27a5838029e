"""Recurrent machines trained on chaotic signals, and the Lyapunov tools to
measure what they learned."""
from .analysis import ensemble, prediction_error_curve, rnn_lyapunov_spectrum
from .dynamics import (SimConfig, Trajectory, lorenz, make_system, ode_lyapunov_spectrum,
                       rescale_to_unit_cube, simulate)
from .errors import NumericalError, RnnChaosError
from .model import RnnParams, forecast, spectral_init, warmup
from .numerics import make_rng
from .spectrum import AttractorClass, LyapunovReport, kaplan_yorke
from .training import FitConfig, TrainConfig, make_dataset, rc_fit, train

__version__ = "0.1.0"
