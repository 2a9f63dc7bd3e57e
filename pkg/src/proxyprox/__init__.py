"""Proxy-based inexact stochastic proximal-point optimization."""

from .core import (
    CapabilityError,
    ConfigurationError,
    ContractViolation,
    DivergenceError,
    EvaluationError,
    FunctionOracle,
    ProblemInstance,
    ProxyProxError,
    QuadraticOracle,
    ReferenceSolution,
    RegularizedOracle,
    StochasticGradientSource,
    UnconvergedError,
    ZeroOracle,
)
from .inner import InnerConfig, inner_exact, inner_gd, inner_sgd, quadratic_exact
from .outer import (
    OuterConfig,
    RunTrace,
    proxyprox_run,
    regularize_pair,
    schedule_convex,
    schedule_strongly_convex,
    sgd_baseline,
    weighted_average,
)
from .subproblem import CriterionSpec, ProxSubproblem, bregman, phi_gradient, phi_value

__version__ = "0.1.0"
