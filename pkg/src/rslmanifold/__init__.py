"""Robust single linkage on sampled manifolds: samplers, exact volume
oracles, parameter calculators, dendrograms and consistency experiments."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    InvalidArgument,
    InvalidSpec,
    NumericFailure,
    RegimeViolation,
    RegimeWarning,
    RSLError,
)
from .geometry import (  # noqa: E402
    SphereSpec,
    ball_volume_bounds,
    build_net,
    cap_volume,
    cap_volume_exact,
    cap_volume_series,
    unit_ball_volume,
)
from .neighbors import DistanceIndex  # noqa: E402
from .params import SalienceParams, choose_k, choose_r, mu, rho  # noqa: E402
from .rsl import (  # noqa: E402
    Dendrogram,
    FixedR,
    Proportional,
    RSLConfig,
    adaptive_rsl,
    components_at,
    rsl_sweep,
)
from .samplers import (  # noqa: E402
    Additive,
    Clutter,
    LowerBoundInstance,
    NoNoise,
    SphereMixture,
    UniformSphere,
    ball_mass_oracle,
    sample,
)
from .kde import KDEConfig, kde_at, sup_deviation  # noqa: E402
from .evaluation import Cell, check_consistency, experiment_sweep  # noqa: E402

__all__ = [
    "__version__",
    "InvalidArgument",
    "InvalidSpec",
    "NumericFailure",
    "RegimeViolation",
    "RegimeWarning",
    "RSLError",
    "SphereSpec",
    "ball_volume_bounds",
    "build_net",
    "cap_volume",
    "cap_volume_exact",
    "cap_volume_series",
    "unit_ball_volume",
    "Dendrogram",
    "FixedR",
    "Proportional",
    "RSLConfig",
    "adaptive_rsl",
    "components_at",
    "rsl_sweep",
    "Additive",
    "Clutter",
    "LowerBoundInstance",
    "NoNoise",
    "SphereMixture",
    "UniformSphere",
    "ball_mass_oracle",
    "sample",
    "DistanceIndex",
    "SalienceParams",
    "choose_k",
    "choose_r",
    "mu",
    "rho",
    "KDEConfig",
    "kde_at",
    "sup_deviation",
    "Cell",
    "check_consistency",
    "experiment_sweep",
]
