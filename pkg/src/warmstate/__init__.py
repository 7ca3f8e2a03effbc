"""Warm-start variational ground-state tracking with loss-variance bounds."""
from __future__ import annotations

from .bounds import (
    BoundInputs,
    BoundReport,
    bound_report,
    first_valid_gate,
    h_cov,
    h_envelope,
    h_exact,
    h6,
    k_minus,
    k_plus,
    max_radius_meta,
    max_radius_vqe,
    max_step_meta,
    max_step_vqe,
    move_gate_first,
    variance_bound_vqe,
)
from .experiments import (
    bound_check,
    conditional_variance_term,
    estimate_variance,
    expected_loss_closed_form,
    fit_rmax,
    tracking_experiment,
    variance_scan,
)
from .losses import NoiseStream, ShotPlan, group_terms, meta_vqe_loss, noisy_loss_evaluator, vqe_loss
from .pauli_model import (
    HamiltonianFamily,
    PauliString,
    PauliSum,
    build_model,
    exact_spectrum,
    model_family,
    semi_norm,
    spectral_gap,
)
from .statevector import Ansatz, StateVector, build_hea, build_meta_ansatz, parameter_shift_grad, prepare
from .trainer import (
    Schedule,
    TrainConfig,
    WarmStartMetaVQE,
    WarmStartVQE,
    classify_branch,
    warm_start_meta,
    warm_start_vqe,
)

__version__ = "0.1.0"
