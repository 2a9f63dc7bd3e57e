"""Outer loop of the proxy-based stochastic proximal-point method, its
step-size schedules, iterate averaging and the plain SGD baseline."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .core import (
    ConfigurationError,
    ContractViolation,
    DivergenceError,
    ProblemInstance,
    QuadraticOracle,
    RegularizedOracle,
    UnconvergedError,
    as_point,
)
from .data_io import rng_fork
from .inner import InnerConfig, inner_exact, inner_gd, inner_sgd
from .subproblem import CRITERION_MODES, CriterionSpec, ProxSubproblem

FAILURE_POLICIES = ("raise", "warn", "ignore")

# Universal constant of the complexity schedules.
SCHEDULE_C = 10.0


@dataclass(frozen=True)
class OuterConfig:
    """Settings of one outer run.

    ``G2`` is the additive slack of the inexactness criterion. ``epsilon`` is
    only informational (target accuracy of a schedule). ``on_inner_failure``
    decides what happens when a subproblem solve misses its criterion:
    ``"raise"`` aborts with :class:`UnconvergedError`, ``"warn"`` and
    ``"ignore"`` keep the returned point.
    """

    eta: float
    K: int
    mode: str = "strongly_convex"
    G2: float = 0.0
    inner: InnerConfig = field(default_factory=InnerConfig)
    w0: Optional[np.ndarray] = None
    epsilon: Optional[float] = None
    seed: int = 0
    on_inner_failure: str = "raise"
    certified: bool = True
    record_gradients: bool = True

    def __post_init__(self):
        if not self.eta > 0:
            raise ContractViolation("eta must be positive")
        if int(self.K) != self.K or self.K < 1:
            raise ContractViolation("K must be a positive integer")
        if self.mode not in CRITERION_MODES:
            raise ContractViolation(f"unknown mode {self.mode!r}")
        if self.G2 < 0:
            raise ContractViolation("G2 must be non-negative")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ContractViolation("epsilon must be positive")
        if self.on_inner_failure not in FAILURE_POLICIES:
            raise ContractViolation(f"on_inner_failure must be one of {FAILURE_POLICIES}")


@dataclass
class RunTrace:
    """Per-iteration record of an outer run (or of the SGD baseline).

    ``iterates`` has ``K + 1`` rows (``w_0 .. w_K``); per-step arrays have
    ``K`` entries. ``objective_grad_draws`` and ``proxy_grads`` are cumulative.
    ``grad_sq_norms`` holds ``||grad L(w_k)||^2`` for ``k = 0..K``.
    ``constants`` carries the problem constants needed to evaluate bounds.
    ``averaged_objective_values[k-1]`` is the objective at the average of
    ``w_1..w_k`` (weighted or uniform per mode), so bound checks can run from
    saved traces alone.
    """

    iterates: np.ndarray
    objective_values: np.ndarray
    criterion_lhs: np.ndarray
    criterion_rhs: np.ndarray
    criterion_ok: np.ndarray
    movement: np.ndarray
    objective_grad_draws: np.ndarray
    proxy_grads: np.ndarray
    inner_steps: np.ndarray
    averaged_iterate: Optional[np.ndarray]
    grad_sq_norms: Optional[np.ndarray]
    B2: Optional[float]
    eta: float
    mode: str
    constants: dict = field(default_factory=dict)
    averaged_objective_values: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return len(self.iterates) - 1

    @property
    def inner_failures(self) -> int:
        return int(np.sum(~self.criterion_ok))

    def save(self, path) -> None:
        arrays = {k: getattr(self, k) for k in (
            "iterates", "objective_values", "criterion_lhs", "criterion_rhs", "criterion_ok",
            "movement", "objective_grad_draws", "proxy_grads", "inner_steps")}
        if self.averaged_iterate is not None:
            arrays["averaged_iterate"] = self.averaged_iterate
        if self.grad_sq_norms is not None:
            arrays["grad_sq_norms"] = self.grad_sq_norms
        if self.averaged_objective_values is not None:
            arrays["averaged_objective_values"] = self.averaged_objective_values
        meta = {"B2": self.B2, "eta": self.eta, "mode": self.mode, "constants": self.constants}
        np.savez_compressed(path, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "RunTrace":
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arr = {k: z[k] for k in z.files if k != "meta"}
        return cls(averaged_iterate=arr.pop("averaged_iterate", None),
                   grad_sq_norms=arr.pop("grad_sq_norms", None),
                   averaged_objective_values=arr.pop("averaged_objective_values", None),
                   B2=meta["B2"],
                   eta=meta["eta"], mode=meta["mode"], constants=meta["constants"], **arr)


def proxy_hessian(oracle) -> Optional[np.ndarray]:
    """Constant Hessian of a quadratic (possibly regularized) oracle, else None."""
    if isinstance(oracle, QuadraticOracle):
        return oracle.P
    if isinstance(oracle, RegularizedOracle):
        P = proxy_hessian(oracle.base)
        return None if P is None else P + oracle.mu * np.eye(oracle.dim)
    return None


def _check_eta(problem: ProblemInstance, eta: float) -> None:
    if problem.delta > 0 and eta > (1.0 + 1e-12) / (4.0 * problem.delta):
        raise ConfigurationError(
            f"eta={eta:g} exceeds 1/(4 delta) = {1.0 / (4.0 * problem.delta):g}")


def _constants(problem: ProblemInstance, w0, **extra) -> dict:
    out = {"delta": problem.delta, "mu": problem.mu, "sigma2": problem.sigma2,
           "H_proxy": problem.H_proxy, "f_star": problem.f_star,
           "batch_size": problem.grad_source.batch_size, "problem": problem.name,
           "L0": float(problem.objective.value(w0))}
    out.update(extra)
    return out


def _B2(problem, w0):
    if problem.reference is None:
        return None
    d = w0 - problem.reference.w_star
    return float(d @ d)


def proxyprox_run(problem: ProblemInstance, cfg: OuterConfig, *,
                  eval_problem: Optional[ProblemInstance] = None) -> RunTrace:
    """Run ``cfg.K`` outer iterations, one stochastic objective gradient each.

    Each step draws ``g_k`` at ``w_k``, builds the subproblem anchored at
    ``w_k`` and sets ``w_{k+1}`` to the inner solver's approximate minimizer,
    certified by the criterion of ``cfg.mode``. The averaged iterate is the
    geometric weighted average (strongly convex), the uniform mean of
    ``w_1..w_K`` (convex) or None (non-convex).

    Diagnostics (objective values, gradient norms, ``B2``, ``f_star``) come
    from ``eval_problem`` when given, e.g. the unregularized instance behind
    :func:`regularize_pair`.
    """
    _check_eta(problem, cfg.eta)
    if cfg.mode == "strongly_convex" and not problem.mu > 0:
        raise ConfigurationError("strongly convex mode needs mu > 0")
    d = problem.dim
    w = np.zeros(d) if cfg.w0 is None else as_point(cfg.w0, d).copy()
    eta, K = float(cfg.eta), int(cfg.K)
    if cfg.mode == "strongly_convex":
        spec = CriterionSpec.strongly_convex(problem.mu, cfg.G2, eta)
    elif cfg.mode == "convex":
        spec = CriterionSpec.convex(K, cfg.G2, eta)
    else:
        spec = CriterionSpec.nonconvex(eta, cfg.certified)

    source = problem.grad_source.spawn(rng_fork(cfg.seed, "outer"))
    inner_rng = np.random.default_rng(rng_fork(cfg.seed, "inner"))
    L, F = problem.objective, problem.proxy
    ev = problem if eval_problem is None else eval_problem
    E = ev.objective
    method = cfg.inner.method
    P = None
    if method == "exact":
        P = proxy_hessian(F)
        if P is None:
            raise ConfigurationError("exact inner solves need a quadratic proxy")

    iterates = np.empty((K + 1, d))
    iterates[0] = w
    fvals = np.empty(K + 1)
    fvals[0] = E.value(w)
    gsq = np.empty(K + 1) if cfg.record_gradients else None
    if gsq is not None:
        g0 = E.gradient(w)
        gsq[0] = g0 @ g0
    lhs, rhs, move = np.empty(K), np.empty(K), np.empty(K)
    ok = np.empty(K, dtype=bool)
    draws = np.empty(K, dtype=np.int64)
    pgrads = np.empty(K, dtype=np.int64)
    steps = np.empty(K, dtype=np.int64)
    proxy_total = 0
    grad_L = L.gradient if spec.needs_objective_gradient else None

    for k in range(K):
        g = source.sample(w)
        sp = ProxSubproblem(w, g, eta, F)
        if method == "exact":
            res = inner_exact(sp, spec, P, objective_gradient=grad_L)
        elif method == "sgd":
            res = inner_sgd(sp, spec, cfg.inner, inner_rng, H_proxy=problem.H_proxy,
                            objective_gradient=grad_L)
        else:
            res = inner_gd(sp, spec, cfg.inner, H_proxy=problem.H_proxy,
                           objective_gradient=grad_L)
        if not res.criterion_ok:
            msg = (f"inner solve at outer step {k} missed the criterion "
                   f"(lhs={res.lhs:.3e}, rhs={res.rhs:.3e})")
            if cfg.on_inner_failure == "raise":
                raise UnconvergedError(msg, best=res)
            if cfg.on_inner_failure == "warn":
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
        w_next = res.w_next
        if not np.all(np.isfinite(w_next)):
            raise DivergenceError(f"outer iterate became non-finite at step {k + 1}")
        diff = w_next - w
        move[k] = diff @ diff
        w = w_next
        iterates[k + 1] = w
        fvals[k + 1] = E.value(w)
        if gsq is not None:
            gk = E.gradient(w)
            gsq[k + 1] = gk @ gk
        lhs[k], rhs[k], ok[k] = res.lhs, res.rhs, res.criterion_ok
        proxy_total += res.proxy_grads_used
        draws[k] = source.draws_used
        pgrads[k] = proxy_total
        steps[k] = res.steps_taken

    if cfg.mode == "strongly_convex":
        running = running_weighted_averages(iterates[1:], eta, problem.mu)
    elif cfg.mode == "convex":
        running = running_means(iterates[1:])
    else:
        running = None
    avg = avg_vals = None
    if running is not None:
        avg = running[-1]
        avg_vals = np.array([E.value(v) for v in running])
    w0 = iterates[0]
    consts = _constants(ev, w0, G2=cfg.G2, seed=cfg.seed, algorithm="proxyprox",
                        mu=problem.mu, delta=problem.delta)
    return RunTrace(iterates, fvals, lhs, rhs, ok, move, draws, pgrads, steps, avg, gsq,
                    _B2(ev, w0), eta, cfg.mode, consts, avg_vals)


def sgd_baseline(problem: ProblemInstance, eta: float, K: int, w0=None, seed: int = 0, *,
                 record_gradients: bool = True) -> RunTrace:
    """Plain SGD ``w_{k+1} = w_k - eta g_k`` with the same trace schema.

    Stochastic gradients come from the same seed derivation as
    :func:`proxyprox_run`, so both see identical draws given the same iterates.
    """
    if not eta > 0:
        raise ContractViolation("eta must be positive")
    if int(K) != K or K < 1:
        raise ContractViolation("K must be a positive integer")
    K = int(K)
    L = problem.objective
    d = problem.dim
    w = np.zeros(d) if w0 is None else as_point(w0, d).copy()
    source = problem.grad_source.spawn(rng_fork(seed, "outer"))
    iterates = np.empty((K + 1, d))
    iterates[0] = w
    fvals = np.empty(K + 1)
    fvals[0] = L.value(w)
    gsq = np.empty(K + 1) if record_gradients else None
    if gsq is not None:
        g0 = L.gradient(w)
        gsq[0] = g0 @ g0
    move = np.empty(K)
    draws = np.empty(K, dtype=np.int64)
    for k in range(K):
        w_next = w - eta * source.sample(w)
        if not np.all(np.isfinite(w_next)):
            raise DivergenceError(f"SGD diverged at step {k + 1} (eta={eta:g})")
        diff = w_next - w
        move[k] = diff @ diff
        w = w_next
        iterates[k + 1] = w
        fvals[k + 1] = L.value(w)
        if gsq is not None:
            gk = L.gradient(w)
            gsq[k + 1] = gk @ gk
        draws[k] = source.draws_used
    nan = np.full(K, np.nan)
    w0 = iterates[0]
    return RunTrace(iterates, fvals, nan, nan.copy(), np.ones(K, dtype=bool), move, draws,
                    np.zeros(K, dtype=np.int64), np.zeros(K, dtype=np.int64), None, gsq,
                    _B2(problem, w0), float(eta), "sgd",
                    _constants(problem, w0, seed=seed, algorithm="sgd"))


def regularize_pair(problem: ProblemInstance, mu: float, w0) -> ProblemInstance:
    """Add ``(mu/2)||w - w0||^2`` to both objective and proxy.

    The difference of the two is unchanged, so ``delta`` carries over; the
    strong-convexity constant grows by ``mu``. Stochastic gradients of the new
    objective are the old draws plus ``mu (w - w0)``. The reference solution
    is dropped because the minimizer moves.
    """
    if not mu > 0:
        raise ContractViolation("regularization mu must be positive")
    w0 = as_point(w0, problem.dim)
    L = RegularizedOracle(problem.objective, mu, w0)
    F = RegularizedOracle(problem.proxy, mu, w0)
    return ProblemInstance(L, F, problem.grad_source.with_oracle(L), delta=problem.delta,
                           mu=problem.mu + mu, H_proxy=problem.H_proxy + mu, reference=None,
                           f_lower=None, name=f"{problem.name}+prox({mu:g})",
                           metadata=dict(problem.metadata, prox_mu=mu))


def _log_ratio(eta: float, mu: float) -> float:
    return math.log1p(2.0 * eta * mu / 5.0)


def weighted_average(iterates, eta: float, mu: float) -> np.ndarray:
    """``sum_k alpha_k w_k / sum_k alpha_k`` with ``alpha_k = (1 + 2 eta mu / 5)^(k-1)``.

    ``iterates`` are ``w_1..w_K``. Weights are normalized by ``alpha_K`` so no
    overflow occurs for long runs; ``mu = 0`` gives the arithmetic mean.
    """
    W = np.asarray(iterates, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 1:
        raise ContractViolation("need at least one iterate")
    if not eta > 0 or mu < 0:
        raise ContractViolation("need eta > 0 and mu >= 0")
    K = W.shape[0]
    a = np.exp((np.arange(1, K + 1) - K) * _log_ratio(eta, mu))
    return (a / a.sum()) @ W


def running_weighted_averages(iterates, eta: float, mu: float) -> np.ndarray:
    """Row ``k-1`` is the weighted average of ``w_1..w_k`` for every ``k <= K``."""
    W = np.asarray(iterates, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 1:
        raise ContractViolation("need at least one iterate")
    lr = _log_ratio(eta, mu)
    out = np.empty_like(W)
    out[0] = W[0]
    for k in range(2, W.shape[0] + 1):
        # alpha_k / A_k = (1 - 1/r) / (1 - r^-k)
        frac = 1.0 / k if lr == 0 else math.expm1(-lr) / math.expm1(-k * lr)
        out[k - 1] = out[k - 2] + frac * (W[k - 1] - out[k - 2])
    return out


def running_means(iterates) -> np.ndarray:
    W = np.asarray(iterates, dtype=np.float64)
    return np.cumsum(W, axis=0) / np.arange(1, W.shape[0] + 1)[:, None]


# Right-hand sides of the convergence guarantees.

def strongly_convex_bound(B2, eta, mu, K, sigma2, G2=0.0):
    """``5B^2/(8 eta) (1 + 2 eta mu/5)^(1-K) + 2 eta sigma^2 + G^2/mu``."""
    K = np.asarray(K, dtype=np.float64)
    return (5.0 * B2 / (8.0 * eta) * np.exp((1.0 - K) * _log_ratio(eta, mu))
            + 2.0 * eta * sigma2 + G2 / mu)


def convex_bound(B2, eta, K, sigma2, G2=0.0):
    """``9B^2/(8 eta K) + 2 eta sigma^2 + eta K G^2``."""
    K = np.asarray(K, dtype=np.float64)
    return 9.0 * B2 / (8.0 * eta * K) + 2.0 * eta * sigma2 + eta * K * G2


def nonconvex_bound(gap0, eta, K, sigma2):
    """``48 (L(w_0) - L*) / (eta K) + 8 sigma^2``."""
    K = np.asarray(K, dtype=np.float64)
    return 48.0 * gap0 / (eta * K) + 8.0 * sigma2


def nonconvex_report(trace: RunTrace, problem: ProblemInstance) -> tuple[float, float]:
    """Average of ``||grad L(w_k)||^2`` over ``k = 1..K`` and the matching bound.

    The bound uses ``problem.f_star`` (a certified value or a lower bound).
    """
    if trace.grad_sq_norms is None:
        raise ContractViolation("trace has no gradient-norm log")
    if problem.f_star is None:
        raise ContractViolation("problem has neither a reference value nor a lower bound")
    K = trace.K
    avg = float(np.mean(trace.grad_sq_norms[1:]))
    gap0 = float(trace.objective_values[0]) - problem.f_star
    return avg, float(nonconvex_bound(gap0, trace.eta, K, problem.sigma2))


class StronglyConvexSchedule(NamedTuple):
    eta: float
    K: int
    G2: float


class ConvexSchedule(NamedTuple):
    eta: float
    K: int
    G2: float
    mu_reg: float


def _sc_eta(mu, K, B2, eps):
    return 5.0 / (mu * (K - 1)) * (1.0 + math.log(5.0 * B2 * mu * (K - 1) / eps))


def strongly_convex_constraints(mu, delta, sigma2, B2, eps, eta, K) -> dict:
    """Sufficient conditions under which the scheduled run is ``3 eps``-accurate.

    Keys: ``eta_le_quarter_inv_delta``, ``eta_le_5_over_2mu``,
    ``eta_ge_inv_2mu_Km1``, ``eta_ge_log_term``, ``noise_term_le_eps`` and
    ``contraction_term_le_eps``.
    """
    Km1 = K - 1
    log_arg = 5.0 * B2 * mu * Km1 / (4.0 * eps)
    return {
        "eta_le_quarter_inv_delta": delta == 0 or eta <= 1.0 / (4.0 * delta) * (1 + 1e-12),
        "eta_le_5_over_2mu": eta <= 5.0 / (2.0 * mu),
        "eta_ge_inv_2mu_Km1": Km1 > 0 and eta >= 1.0 / (2.0 * mu * Km1),
        "eta_ge_log_term": Km1 > 0 and eta >= 5.0 / (mu * Km1) * math.log(log_arg),
        "noise_term_le_eps": 2.0 * eta * sigma2 <= eps,
        "contraction_term_le_eps": float(strongly_convex_bound(B2, eta, mu, K, 0.0)) <= eps,
    }


def _sc_feasible(mu, delta, sigma2, B2, eps, K) -> bool:
    if K < 2:
        return False
    eta = _sc_eta(mu, K, B2, eps)
    return eta > 0 and all(strongly_convex_constraints(mu, delta, sigma2, B2, eps, eta, K).values())


def schedule_strongly_convex(problem: ProblemInstance, epsilon: float, B2: float, *,
                             c: float = SCHEDULE_C) -> StronglyConvexSchedule:
    """Step size, iteration count and criterion slack for accuracy ``epsilon``.

    Starts from ``K = c (1 + delta/mu + sigma^2/(mu eps)) ln(e + (mu+delta) B^2/eps
    + sigma^2 B^2/eps^2)`` and enlarges ``K`` until the step size
    ``eta = 5/(mu (K-1)) (1 + ln(5 B^2 mu (K-1)/eps))`` meets every condition of
    :func:`strongly_convex_constraints`. ``G^2 = mu eps / 2``.
    """
    mu, delta, s2 = problem.mu, problem.delta, problem.sigma2
    if not mu > 0:
        raise ContractViolation("strongly convex schedule needs mu > 0")
    if not (epsilon > 0 and B2 > 0):
        raise ContractViolation("epsilon and B2 must be positive")
    K0 = math.ceil(c * (1.0 + delta / mu + s2 / (mu * epsilon))
                   * math.log(math.e + (mu + delta) * B2 / epsilon + s2 * B2 / epsilon ** 2))
    K = max(K0, 2)
    if not _sc_feasible(mu, delta, s2, B2, epsilon, K):
        lo, hi = K, 2 * K
        while not _sc_feasible(mu, delta, s2, B2, epsilon, hi):
            lo, hi = hi, 2 * hi
            if hi > 10 ** 12:
                raise ConfigurationError("no feasible iteration count below 1e12")
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _sc_feasible(mu, delta, s2, B2, epsilon, mid):
                hi = mid
            else:
                lo = mid
        K = hi
    eta = _sc_eta(mu, K, B2, epsilon)
    if delta > 0:
        eta = min(eta, 1.0 / (4.0 * delta))
    return StronglyConvexSchedule(eta, int(K), 0.5 * mu * epsilon)


def schedule_convex(problem: ProblemInstance, epsilon: float, B2: float, *,
                    c: float = SCHEDULE_C) -> ConvexSchedule:
    """Parameters for the regularized convex variant.

    ``K = c (delta B^2/eps + sigma^2 B^2/eps^2)``, ``eta = min(1/(4 delta),
    B/(sigma sqrt K))``, ``G^2 = sigma^2/K + delta^2 B^2/K^2`` and
    ``mu_reg = 1/(eta K)``. When ``delta = sigma = 0`` (or both caps overflow)
    the formula gives no information: ``K = c`` and ``eta`` solves
    ``9 B^2/(8 eta K) = eps``.
    """
    if not (epsilon > 0 and B2 > 0):
        raise ContractViolation("epsilon and B2 must be positive")
    delta, s2 = problem.delta, problem.sigma2
    K = max(1, math.ceil(c * (delta * B2 / epsilon + s2 * B2 / epsilon ** 2)))
    eta = min(1.0 / (4.0 * delta) if delta > 0 else math.inf,
              math.sqrt(B2 / (s2 * K)) if s2 > 0 else math.inf)
    if not math.isfinite(eta):
        # delta = sigma = 0, or so close to it that the caps overflow
        K = max(1, math.ceil(c))
        eta = 9.0 * B2 / (8.0 * epsilon * K)
    G2 = s2 / K + delta ** 2 * B2 / K ** 2
    return ConvexSchedule(eta, int(K), G2, 1.0 / (eta * K))
