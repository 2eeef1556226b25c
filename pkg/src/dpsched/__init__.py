"""Differentially private gradient descent with scheduled per-step noise."""

from .accountant import PrivacyLedger, StepCost, dp_to_zcdp, gaussian_step_cost, zcdp_to_dp
from .models import Dataset, LossModel, estimate_spectrum
from .optimizer import RunRecord, run, run_psgd
from .schedules import NoiseSchedule, dynamic_from_influence, gd_closed_form, uniform_schedule

__version__ = "0.1.0"
