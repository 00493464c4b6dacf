"""Particle simulation and stability certification for non-local continuity equations."""

from .errors import (
    CertificationRefused,
    DegenerateModulusError,
    DomainError,
    IntegrationError,
    LookupFailure,
    OsgoodFlowError,
    RangeError,
    RegistrationError,
    ResolutionError,
    ScenarioError,
    TemporalDomainError,
    ValidationError,
)
from .fields import (
    NonlocalField,
    StaticMeasure,
    TrajectoryMeasure,
    VelocityFieldSpec,
    VelocityPreset,
    eval_field,
    sup_distance_fields,
    sup_distance_kernels,
    verify_field_modulus,
)
from .flow import FlowTrajectory, convergence_study, flow_map_eval, integrate
from .measures import (
    DiscreteMeasureVec,
    Kernel,
    KernelVec,
    atomic_tv_distance,
    convolve,
    convolve_at,
    pushforward,
    tv_norm,
)
from .moduli import (
    ComposedModulus,
    ModulusSpec,
    bihari_bound,
    check_osgood,
    eval_G,
    eval_modulus,
    invert_G,
    stability_modulus,
)
from .scenario import ScenarioSpec, load_scenario, parse_scenario
from .stability import (
    TwinSpec,
    certify,
    flow_sup_distance,
    four_term_audit,
    load_twin,
    perturbation_budget,
    q_zeta,
    run_twins,
)
from .verification import (
    MollifiedScenario,
    SpaceBump,
    TestFunction,
    TimeBump,
    mass_identity_check,
    mollify_sweep,
    standard_test_functions,
    weak_residual,
)

__version__ = "0.1.0"
