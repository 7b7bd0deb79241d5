"""Shared and layer-specific latent factors for multiplex networks."""
from .estimator import FitReport, SharedLatentSpaceModel, check_multiplex
from .expfam import BERNOULLI, GAUSSIAN, POISSON, ExpFamily, get_family
from .hunt import ScreeningError, ScreeningSet, hunt_shared
from .metrics import ErrorRecord, evaluate, gram_error, procrustes_distance2
from .netdata import (LatentFactors, MultiplexNetwork, load_multiplex, save_multiplex,
                      theta_from_factors, validate_conditions)
from .refine import RefineConfig, joint_loglik, one_step_update, pgd_refine
from .simgen import GramDesign, generate_factors, generate_networks
from .single import SingleFitConfig, fit_individual

__version__ = "0.1.0"

__all__ = [
    "BERNOULLI", "GAUSSIAN", "POISSON", "ErrorRecord", "ExpFamily", "FitReport", "GramDesign",
    "LatentFactors", "MultiplexNetwork", "RefineConfig", "ScreeningError", "ScreeningSet",
    "SharedLatentSpaceModel", "SingleFitConfig", "check_multiplex", "evaluate", "fit_individual",
    "generate_factors", "generate_networks", "get_family", "gram_error", "hunt_shared",
    "joint_loglik", "load_multiplex", "one_step_update", "pgd_refine", "procrustes_distance2",
    "save_multiplex", "theta_from_factors", "validate_conditions",
]
