"""Preisach hysteresis operators and a degenerate-diffusion time stepper.

The package has three layers:

* scalar hysteresis: memory curves, play updates, Preisach outputs,
  energies, branches and the convexifying diffeomorphism;
* spatial discretization: structured grids with Robin boundary data,
  linear solves and the implicit semilinear step;
* the scheme driver: compatibility audit, fictitious backward step,
  uniform bounds, the time loop and estimate monitors, plus a CLI.
"""

from .convexify import Convexifier, build_convexifier, verify_branch_convexity
from .driver import (
    BackwardResult,
    CompatReport,
    CompatibilityError,
    HysteresisField,
    MonitorReport,
    RunResult,
    RunSetup,
    SchemeState,
    backward_step,
    check_compatibility,
    compute_monitors,
    compute_tau0,
    run,
    supersolution_bound,
)
from .elliptic import (
    Field,
    Grid,
    NewtonError,
    RobinOperator,
    SingularSystemError,
    assemble,
    solve_linear_robin,
    solve_semilinear_step,
)
from .play import (
    MemoryCurve,
    PlayUpdateReport,
    backward_deform,
    curve_saturated,
    curve_turning,
    memory_depth,
    play_update,
    play_update_samples,
)
from .preisach import (
    DensityModel,
    QuadratureSpec,
    apply_sequence,
    branch,
    energy,
    monotonicity_constant,
    nemytskii,
    nemytskii_derivative,
    output,
)

__version__ = "0.1.0"
