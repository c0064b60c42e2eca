"""Proportionally fair ramp metering and flow-level bandwidth sharing."""

from .errors import *  # noqa: F401,F403
from .network import (
    Network,
    TrafficParams,
    StabilityReport,
    validate,
    stability_margin,
    linear_network,
    tree_network,
    parallel_roads_virtual,
)
from .allocation import (
    Allocation,
    BrownianSpec,
    allocate,
    delays_from_duals,
    lift_delta,
    lift_delta_qp,
    lyapunov_F,
    covariance_gamma,
    cone_contains,
    linear_cone_check,
)


from . import allocation, flow, motorway, network, queue, routechoice, scenario  # noqa: E402,F401
from .flow import approx_stationary, integrate_fluid, simulate_ctmc  # noqa: E402,F401
from .motorway import simulate_motorway, stationary_law  # noqa: E402,F401
from .queue import rbm1_path, simulate_mg1_ps, simulate_mm1  # noqa: E402,F401
from .routechoice import simulate_route_choice, zeta_params  # noqa: E402,F401
from .scenario import Scenario, load_scenario  # noqa: E402,F401

__version__ = "0.1.0"
