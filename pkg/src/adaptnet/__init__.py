"""Discrete Bayesian networks with sequentially adapted Dirichlet tables."""

from .adaptation import (
    AdaptationError,
    AdaptationSession,
    DegenerateInterval,
    ExperienceTable,
    MissingMSS,
    RetrievalResult,
    TooWideInterval,
    adapt_case,
    disseminate,
    entry_variance,
    ess_from_interval,
    fade,
    fading_factor_from_mss,
    fractional_update,
    parse_snapshot,
    retrieve,
    serialize_snapshot,
    set_mode,
    type_variable_adapt,
)
from .inference import (
    Distribution,
    FamilyPosterior,
    StateSpaceTooLarge,
    ZeroProbabilityEvidence,
    brute_force_joint,
    family_posterior,
    family_posteriors,
    posterior_marginal,
)
from .network import (
    NetworkDef,
    NetworkError,
    ParseError,
    Variable,
    chest_clinic,
    parse_network,
    serialize_network,
    validate,
)

__version__ = "0.1.0"
