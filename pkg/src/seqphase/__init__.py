"""Sequential ensemble phase estimation: simulator, estimator and experiment harness."""

__version__ = "0.1.0"

from .stats_core import (  # noqa: E402
    AlternativeSet,
    GaussianPeak,
    PosteriorP,
    Tolerance,
    angle_mixture_from_szn,
    erf,
    g_of_beta,
    nu_factor,
    posterior_p,
    shannon_entropy,
    wrap_phase,
)
from .quantum_sim import Apparatus, EnsembleSpec, MeasurementRecord, TruePhase, effective_sigma  # noqa: E402
from .estimator import PhaseEstimate, classify_sign, combine_step, estimate_magnitude  # noqa: E402
from .protocol import (  # noqa: E402
    Flag,
    ProtocolParams,
    ProtocolTrace,
    detect_estimation_error,
    next_n,
    resource_scaling,
    run_protocol,
    select_alternative,
)
from .magnetometry import FieldScenario, plan_scenario, run_field_measurement  # noqa: E402
