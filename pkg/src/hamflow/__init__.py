"""hamflow: learning Hamiltonian flow maps from numerical schemes and data."""

__version__ = "0.1.0"

from .systems import (  # noqa: F401
    AlphaParticle,
    FermiPastaUlam,
    HarmonicOscillator,
    LinearSystem,
    NearlyPeriodicOscillators,
    SeparableSystem,
    make_system,
)
from .integrators import (  # noqa: F401
    ForwardEuler,
    ImplicitEuler,
    ImplicitMidpoint,
    RungeKutta4,
    Trajectory,
    VelocityVerlet,
    integrate,
    make_scheme,
    reference_flow,
)
from .flowmap import (  # noqa: F401
    FixedStepFlowMap,
    TaylorFlowMap,
    load_flow_map,
    rollout_compose,
    save_flow_map,
    t0_centered_eval,
)
from .losses import (  # noqa: F401
    CollocationSpec,
    NormSpec,
    TrainRecord,
    data_loss,
    exact_residual,
    joint_loss,
    residual_loss,
    sample_collocation,
    scheme_residual,
    train,
)
from .mcsampler import (  # noqa: F401
    LinearConstraintSpec,
    McSamplerConfig,
    SampleSet,
    constrained_refresh,
    hmc_h0_chain,
    narrowband_dataset,
    refresh_momentum,
)
from .network import MLPConfig, ParameterSet, init_mlp  # noqa: F401
from .optim import AdamConfig, AdamState, adam_update  # noqa: F401
from .evalharness import (  # noqa: F401
    benchmark,
    energy_error,
    energy_exchange_profile,
    error_series,
    fit_error_growth,
    poincare_section,
    traj_error,
)
from .adjoint import (  # noqa: F401
    backward_transport,
    first_variation_check,
    midpoint_condition_scan,
    residual_sequence,
)
