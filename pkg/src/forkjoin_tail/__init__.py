"""Tail asymptotics and Monte Carlo validation for the maximum backlog of a
Brownian fork-join network with a shared arrival process."""

from .model import (
    DomainError,
    FirstPassageSpec,
    LevelSchedule,
    ModelParams,
    Regime,
    RegimeConstants,
    classify,
    derived_constants,
    gamma_exponent,
    lambda_fraction,
    level,
    level_schedule,
    log_correction_exponent,
)
from .asymptotics import (
    ConvolutionCase,
    ConvolutionSpec,
    ConvolutionTail,
    RegimeError,
    TailApproximation,
    convolution_tail,
    first_passage_density,
    gumbel_exceedance_limit,
    large_level_tail,
    scaled_passage_density_limit,
    subcritical_constants,
    tail_estimate,
)
from .numerics import IntegrationError, RngStream, SummaryStats, integrate, summarize

__version__ = "0.1.0"
