"""Predictive control of nonlinear plants through their equivalent dynamic linearization."""

from .analysis import (
    ClosedLoopModel,
    StabilityReport,
    SteadyStateReport,
    char_poly_analysis1,
    char_poly_analysis2,
    disturbance_transfer,
    stability_check,
    steady_state_error,
)
from .control import (
    ConstraintSet,
    ControllerConfig,
    ControlStep,
    constrained_step,
    cost,
    gain,
    receding_horizon_apply,
    unconstrained_step,
)
from .edlm import PJM, HistoryWindow, PlantModel, Term, delta_regressor, edlm_step, pjm_exact, pjm_secant, separable_plant
from .prediction import HorizonMatrices, free_response, horizon, lift, lifted_state
from .sim import Scenario, Trace, metrics, run_closed_loop

__version__ = "0.1.0"
