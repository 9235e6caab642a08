"""Stabilization of integrator chains by delayed static output feedback."""

from .delayop import (
    DelayOperator,
    EstimatorConstants,
    build_delay_operator,
    estimator_constants,
    example31_constants,
)
from .errors import DelayFeedbackError
from .gains import (
    GainCertificate,
    ScaledDesign,
    StepCertificate,
    auto_gain_certificate,
    default_gain,
    example31_certificate,
    max_certified_step,
    scaled_design,
    step_certificate,
    unscaled_design,
    verify_gain,
)
from .scenario import Scenario, load_scenario
from .simcore import History, Plant, Signal, Trajectory, chain_plant, simulate_cascade, simulate_chain

__version__ = "0.1.0"
