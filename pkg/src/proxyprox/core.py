"""Shared types: points, function oracles, stochastic gradient sources and
problem instances."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class ProxyProxError(Exception):
    """Base class for errors raised by this package."""


class ContractViolation(ProxyProxError, ValueError):
    """A precondition of an operation does not hold."""


class EvaluationError(ProxyProxError, FloatingPointError):
    """An oracle produced a non-finite value."""


class CapabilityError(ProxyProxError, NotImplementedError):
    """An oracle lacks a requested capability (e.g. Hessian-vector products)."""


class DivergenceError(ProxyProxError, FloatingPointError):
    """An iterative method produced a non-finite iterate."""


class ConfigurationError(ProxyProxError, ValueError):
    """A run configuration violates the assumptions of the method."""


class UnconvergedError(ProxyProxError, RuntimeError):
    """An iterative solve hit its budget; ``best`` carries the best point found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


def as_point(w, dim: Optional[int] = None) -> np.ndarray:
    """Validate and convert ``w`` to a finite 1-D float64 array."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise ContractViolation(f"expected a non-empty 1-D vector, got shape {w.shape}")
    if dim is not None and w.size != dim:
        raise ContractViolation(f"dimension mismatch: expected {dim}, got {w.size}")
    if not np.all(np.isfinite(w)):
        raise ContractViolation("point has non-finite entries")
    return w


def squared_distance(u, v) -> float:
    """Squared Euclidean distance ``sum_i (u_i - v_i)**2``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractViolation(f"dimension mismatch: {u.shape} vs {v.shape}")
    diff = u - v
    return float(diff @ diff)


class FunctionOracle:
    """Deterministic value/gradient access to a differentiable function on R^d.

    Subclasses implement ``value`` and ``gradient``; those that can compute
    Hessian-vector products set ``has_hvp = True`` and override ``hvp``.
    Finite-sum oracles additionally expose ``n_samples`` and
    ``batch_gradient(w, idx)``.
    """

    dim: int
    has_hvp: bool = False
    n_samples: Optional[int] = None

    def value(self, w) -> float:
        raise NotImplementedError

    def gradient(self, w) -> np.ndarray:
        raise NotImplementedError

    def hvp(self, w, v) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} does not support Hessian-vector products")

    def batch_gradient(self, w, idx) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} is not a finite-sum oracle")

    def __sub__(self, other: "FunctionOracle") -> "DifferenceOracle":
        return DifferenceOracle(self, other)


class QuadraticOracle(FunctionOracle):
    """``f(w) = 0.5 w'Pw + b'w + c`` with a dense symmetric ``P``."""

    has_hvp = True

    def __init__(self, P, b=None, c: float = 0.0):
        P = np.asarray(P, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ContractViolation(f"P must be square, got shape {P.shape}")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max(initial=0.0))):
            raise ContractViolation("P must be symmetric")
        self.P = 0.5 * (P + P.T)
        self.dim = P.shape[0]
        self.b = np.zeros(self.dim) if b is None else as_point(b, self.dim)
        self.c = float(c)

    def value(self, w) -> float:
        return float(0.5 * w @ (self.P @ w) + self.b @ w + self.c)

    def gradient(self, w) -> np.ndarray:
        return self.P @ w + self.b

    def hvp(self, w, v) -> np.ndarray:
        return self.P @ v

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.P, -self.b)


class ZeroOracle(QuadraticOracle):
    """The identically-zero function; as a proxy it reduces the method to SGD."""

    def __init__(self, dim: int):
        super().__init__(np.zeros((dim, dim)))


class DifferenceOracle(FunctionOracle):
    """``h = f - g``; used for the objective/proxy gap."""

    def __init__(self, f: FunctionOracle, g: FunctionOracle):
        if f.dim != g.dim:
            raise ContractViolation(f"dimension mismatch: {f.dim} vs {g.dim}")
        self.f, self.g = f, g
        self.dim = f.dim
        self.has_hvp = f.has_hvp and g.has_hvp

    def value(self, w) -> float:
        return self.f.value(w) - self.g.value(w)

    def gradient(self, w) -> np.ndarray:
        return self.f.gradient(w) - self.g.gradient(w)

    def hvp(self, w, v) -> np.ndarray:
        return self.f.hvp(w, v) - self.g.hvp(w, v)


class RegularizedOracle(FunctionOracle):
    """``f(w) + (mu/2)||w - center||^2``; keeps finite-sum structure."""

    def __init__(self, base: FunctionOracle, mu: float, center):
        self.base = base
        self.mu = float(mu)
        self.center = as_point(center, base.dim)
        self.dim = base.dim
        self.has_hvp = base.has_hvp
        self.n_samples = base.n_samples

    def value(self, w) -> float:
        d = w - self.center
        return self.base.value(w) + 0.5 * self.mu * float(d @ d)

    def gradient(self, w) -> np.ndarray:
        return self.base.gradient(w) + self.mu * (w - self.center)

    def hvp(self, w, v) -> np.ndarray:
        return self.base.hvp(w, v) + self.mu * v

    def batch_gradient(self, w, idx) -> np.ndarray:
        return self.base.batch_gradient(w, idx) + self.mu * (w - self.center)

    def gradient_variance(self, w, batch_size: int) -> float:
        return self.base.gradient_variance(w, batch_size)


def finite_diff_gradient(oracle: FunctionOracle, w, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``oracle.value`` at ``w``."""
    if not step > 0:
        raise ContractViolation("step must be positive")
    w = as_point(w, oracle.dim)
    out = np.empty_like(w)
    e = np.zeros_like(w)
    for i in range(w.size):
        e[i] = step
        fp = oracle.value(w + e)
        fm = oracle.value(w - e)
        e[i] = 0.0
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value while perturbing coordinate {i}")
        out[i] = (fp - fm) / (2.0 * step)
    return out


NOISE_MODELS = ("exact", "gaussian", "minibatch")


class StochasticGradientSource:
    """Seeded sampler of unbiased stochastic gradients of ``oracle``.

    Noise models
    ------------
    exact
        Returns ``oracle.gradient(w)``; ``sigma2`` is 0.
    gaussian
        Adds isotropic Gaussian noise with total variance ``sigma2``.
    minibatch
        Averages ``batch_size`` per-sample gradients drawn uniformly with
        replacement from a finite-sum oracle. ``sigma2`` is the declared bound
        (usually estimated at the initial point).

    ``draws_used`` counts calls to :meth:`sample`; ``samples_used`` counts
    individual stochastic gradients (``draws_used * batch_size``).
    """

    def __init__(self, oracle: FunctionOracle, noise_model: str = "exact", *,
                 sigma2: float = 0.0, batch_size: int = 1, seed: int = 0):
        if noise_model not in NOISE_MODELS:
            raise ContractViolation(f"unknown noise model {noise_model!r}")
        if sigma2 < 0:
            raise ContractViolation("sigma2 must be non-negative")
        if noise_model == "exact":
            sigma2 = 0.0
        if noise_model == "minibatch":
            if oracle.n_samples is None:
                raise CapabilityError("minibatch noise needs a finite-sum oracle")
            if batch_size < 1:
                raise ContractViolation("batch_size must be positive")
        else:
            batch_size = 1
        self.oracle = oracle
        self.noise_model = noise_model
        self.sigma2 = float(sigma2)
        self.batch_size = int(batch_size)
        self.rng_seed = int(seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self.draws_used = 0

    @property
    def samples_used(self) -> int:
        return self.draws_used * self.batch_size

    def spawn(self, seed: int) -> "StochasticGradientSource":
        """Fresh source with the same noise model, a new seed and a zero counter."""
        return StochasticGradientSource(self.oracle, self.noise_model, sigma2=self.sigma2,
                                        batch_size=self.batch_size, seed=seed)

    def with_oracle(self, oracle: FunctionOracle) -> "StochasticGradientSource":
        return StochasticGradientSource(oracle, self.noise_model, sigma2=self.sigma2,
                                        batch_size=self.batch_size, seed=self.rng_seed)

    def sample(self, w) -> np.ndarray:
        self.draws_used += 1
        if self.noise_model == "exact":
            return self.oracle.gradient(w)
        if self.noise_model == "gaussian":
            noise = self.rng.standard_normal(self.oracle.dim)
            return self.oracle.gradient(w) + np.sqrt(self.sigma2 / self.oracle.dim) * noise
        idx = self.rng.integers(0, self.oracle.n_samples, size=self.batch_size)
        return self.oracle.batch_gradient(w, idx)


@dataclass(frozen=True)
class ReferenceSolution:
    w_star: np.ndarray
    f_star: float
    grad_norm_at_w_star: float


@dataclass
class ProblemInstance:
    """Objective, proxy, gradient source and the known problem constants.

    ``f_lower`` is a known lower bound on the optimal value, used when no
    certified reference solution exists (non-convex problems).
    """

    objective: FunctionOracle
    proxy: FunctionOracle
    grad_source: StochasticGradientSource
    delta: float
    mu: float
    H_proxy: float
    reference: Optional[ReferenceSolution] = None
    f_lower: Optional[float] = None
    name: str = "problem"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective.dim != self.proxy.dim:
            raise ContractViolation(
                f"objective and proxy dimensions differ: {self.objective.dim} vs {self.proxy.dim}")
        for name in ("delta", "mu", "H_proxy"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ContractViolation(f"{name} must be finite and non-negative, got {val}")
        if self.mu > self.H_proxy + self.delta + 1e-12 * max(1.0, self.H_proxy):
            raise ContractViolation("mu cannot exceed H_proxy + delta")

    @property
    def dim(self) -> int:
        return self.objective.dim

    @property
    def sigma2(self) -> float:
        return self.grad_source.sigma2

    @property
    def f_star(self) -> Optional[float]:
        if self.reference is not None:
            return self.reference.f_star
        return self.f_lower

    def with_reference(self, reference: ReferenceSolution) -> "ProblemInstance":
        return replace(self, reference=reference)
