"""Simulation and checking of defaultable term-structure surfaces h(xi, eta)."""

from .coefficients import (
    Constant,
    EtaLinear,
    ExpDecay,
    FactorVolatility,
    LossIntensity,
    LossJumpSpec,
    LossState,
    MarketJumpSpec,
    ProportionalCapped,
    Zero,
    drift_alpha,
    drift_residual,
    loss_intensity,
    make_family,
    mortality_drift,
)
from .config import RunConfig, load_config, parse_config
from .engine import ModelConfig, PathState, SimulationEnsemble, simulate, step_mild
from .errors import (
    BlowUpError,
    ConfigError,
    DataError,
    DomainError,
    ModelError,
    NumericalError,
    RangeError,
    SpreadSurfError,
    ThinningBoundError,
    UsageError,
)
from .function_space import (
    HbSurface,
    SurfaceGrid,
    calibrate_constants,
    exp_surface,
    grid_constants,
    hb_norm,
    integral_op,
    multiply,
    shift,
)
from .mpp import JumpEvent, RngStream, next_loss_jump
from .pricing import (
    PriceEstimate,
    TranchSpec,
    bond_price,
    martingale_test,
    stcdo_value,
    stcdo_value_by_bonds,
)
from .validation import (
    ConditionReport,
    audit_assumptions,
    check_monotonicity,
    check_positivity_conditions,
    probe_growth,
    probe_lipschitz,
)

__version__ = "0.1.0"
