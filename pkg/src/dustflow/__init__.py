"""Dust-aerosol detection and Bayesian transport-field estimation on rasters.

The package is organized around a small set of building blocks:

- ``raster``: grids, channel stacks, derivative stencils, GridText I/O,
  and the false-color composition.
- ``gmrf``: sparse symmetric matrices, intrinsic CAR precisions, and
  Cholesky-style factorization with log-determinants.
- ``flow``: brightness-constancy and continuity likelihoods, the Gaussian
  flow posterior, grid marginalization of the smoothness scale, and
  semi-Lagrangian advection.
- ``detect``: threshold, linear-discriminant, and latent-surface detectors.
- ``synth``: synthetic plume sequences and labeled training data.
- ``metrics``: flow error and stratified classification reports.
- ``cli``: the ``dustflow`` command-line tool.
"""

from .detect import (
    ConvergenceError,
    LabeledSample,
    LatentSurface,
    LdaModel,
    LsmModel,
    ThresholdRule,
    classify,
    lda_fit,
    lda_predict,
    load_samples,
    lsm_fit,
    lsm_predict,
    save_samples,
    threshold_detect,
)
from .flow import (
    DEFAULT_ALPHA_GRID,
    FlowField,
    LikelihoodSystem,
    PosteriorSummary,
    advect,
    bayes_flow,
    hs_system,
    ice_system,
    posterior_given_alpha,
)
from .gmrf import (
    Factor,
    Lattice2D,
    NotPositiveDefiniteError,
    SparseSym,
    car_precision,
    factorize,
    log_det,
    marginal_variances,
    quad_form,
    solve,
)
from .metrics import ClassReport, FlowErrorReport, class_report, flow_errors
from .raster import (
    ChannelStack,
    DerivativeSet,
    FalseColorRanges,
    Grid,
    GridParseError,
    derivatives,
    false_color,
    load_grid,
    load_stack,
    save_grid,
    save_stack,
)
from .synth import (
    GroundTruth,
    PlumeScenario,
    evaluation_mask,
    generate_labeled,
    generate_plume,
    load_scenario,
    save_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelStack",
    "ClassReport",
    "ConvergenceError",
    "DEFAULT_ALPHA_GRID",
    "DerivativeSet",
    "Factor",
    "FalseColorRanges",
    "FlowErrorReport",
    "FlowField",
    "Grid",
    "GridParseError",
    "GroundTruth",
    "LabeledSample",
    "LatentSurface",
    "LdaModel",
    "LikelihoodSystem",
    "LsmModel",
    "Lattice2D",
    "NotPositiveDefiniteError",
    "PlumeScenario",
    "PosteriorSummary",
    "SparseSym",
    "ThresholdRule",
    "advect",
    "bayes_flow",
    "car_precision",
    "class_report",
    "classify",
    "derivatives",
    "evaluation_mask",
    "factorize",
    "false_color",
    "flow_errors",
    "generate_labeled",
    "generate_plume",
    "hs_system",
    "ice_system",
    "lda_fit",
    "lda_predict",
    "load_grid",
    "load_samples",
    "load_scenario",
    "load_stack",
    "log_det",
    "lsm_fit",
    "lsm_predict",
    "marginal_variances",
    "posterior_given_alpha",
    "quad_form",
    "save_grid",
    "save_samples",
    "save_scenario",
    "save_stack",
    "solve",
    "threshold_detect",
]
