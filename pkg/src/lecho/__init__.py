"""Loschmidt echoes of scaled dipolar spin Hamiltonians at desk scale."""

from .analysis import (
    FitResult,
    fit_abragam,
    fit_linear_rate,
    fit_logistic,
    fit_rate_relation,
    half_height_time,
)
from .hamiltonians import (
    MAGIC_ANGLE,
    PerturbationSpec,
    ScalingSpec,
    k_from_theta,
    native_t2,
    perturbation_sigma,
    rf_parameters,
    scaled_hamiltonian,
    second_moment,
    secular_dipolar,
    theta_from_k,
    tilted_frame_hamiltonian,
)
from .propagation import cwsdi_block_pair, expm_multiply_krylov, propagator
from .protocols import (
    EchoCurve,
    coherence_weights,
    echo_curve,
    fid_curve,
    loschmidt_echo,
    normalize_to_reference,
    otoc_mqc,
    polarization_curve,
    scheme_echo_curve,
)
from .spin import SpinSystem, collective_operator, random_geometry, site_operator

__all__ = [
    "EchoCurve",
    "FitResult",
    "MAGIC_ANGLE",
    "PerturbationSpec",
    "ScalingSpec",
    "SpinSystem",
    "coherence_weights",
    "collective_operator",
    "cwsdi_block_pair",
    "echo_curve",
    "expm_multiply_krylov",
    "fid_curve",
    "fit_abragam",
    "fit_linear_rate",
    "fit_logistic",
    "fit_rate_relation",
    "half_height_time",
    "k_from_theta",
    "loschmidt_echo",
    "native_t2",
    "normalize_to_reference",
    "otoc_mqc",
    "perturbation_sigma",
    "polarization_curve",
    "propagator",
    "random_geometry",
    "rf_parameters",
    "scaled_hamiltonian",
    "scheme_echo_curve",
    "second_moment",
    "secular_dipolar",
    "site_operator",
    "theta_from_k",
    "tilted_frame_hamiltonian",
]

__version__ = "0.1.0"
