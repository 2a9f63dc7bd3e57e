"""Inner solvers producing approximate minimizers of a proximal subproblem."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .core import ContractViolation, DivergenceError
from .subproblem import (
    CriterionSpec,
    ProxSubproblem,
    criterion_satisfied,
    phi_gradient,
    phi_stochastic_gradient,
)

INNER_METHODS = ("gd", "sgd", "exact")


@dataclass(frozen=True)
class InnerConfig:
    """Inner-solver settings.

    ``step_size=None`` means ``1 / (H_proxy + 1/eta)``, the inverse smoothness
    of the subproblem. ``batch_size=None`` gives exact proxy gradients, in
    which case SGD coincides with GD. With ``averaging`` the criterion is
    checked on the running average of the iterates after ``average_start``
    steps instead of the last iterate. ``stop_on_criterion=False`` runs all
    ``max_steps`` steps (fixed-work protocol) and only evaluates the criterion
    at the end. ``grad_tol`` additionally requires ``||grad phi|| <= grad_tol``
    before stopping, for solves to a fixed accuracy. ``anchor_control`` makes
    minibatch proxy gradients anchor-centred,
    ``grad_B(v) - grad_B(anchor) + grad(anchor)``: still unbiased, with variance
    shrinking as ``v`` approaches the anchor.
    """

    max_steps: int = 100
    step_size: Optional[float] = None
    batch_size: Optional[int] = None
    rho2: float = 0.0
    check_every: int = 1
    method: str = "gd"
    averaging: bool = False
    average_start: int = 0
    stop_on_criterion: bool = True
    grad_tol: Optional[float] = None
    anchor_control: bool = False

    def __post_init__(self):
        if self.max_steps < 1:
            raise ContractViolation("max_steps must be positive")
        if self.check_every < 1:
            raise ContractViolation("check_every must be positive")
        if self.step_size is not None and not self.step_size > 0:
            raise ContractViolation("step_size must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractViolation("batch_size must be positive")
        if self.rho2 < 0:
            raise ContractViolation("rho2 must be non-negative")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ContractViolation("grad_tol must be positive")
        if self.method not in INNER_METHODS:
            raise ContractViolation(f"unknown inner method {self.method!r}")

    def resolve_step(self, eta: float, H_proxy: Optional[float]) -> float:
        if H_proxy is None:
            if self.step_size is None:
                raise ContractViolation("step_size unset and H_proxy unknown")
            return self.step_size
        limit = 1.0 / (H_proxy + 1.0 / eta)
        if self.step_size is None:
            return limit
        if self.step_size > limit + 1e-12:
            raise ContractViolation(
                f"inner step_size {self.step_size:g} exceeds 1/(H + 1/eta) = {limit:g}")
        return self.step_size


@dataclass
class InnerResult:
    w_next: np.ndarray
    steps_taken: int
    criterion_ok: bool
    lhs: float
    rhs: float
    proxy_grads_used: int
    lhs_history: list = field(default_factory=list, repr=False)


def _run(sp, spec, cfg, step, stochastic_grad, objective_gradient):
    v = sp.anchor.copy()
    avg = None
    n_avg = 0
    proxy_grads = 0
    history = []
    best = None
    for t in range(cfg.max_steps + 1):
        grad_v = None
        final = t == cfg.max_steps
        if final or (cfg.stop_on_criterion and t % cfg.check_every == 0):
            cand = avg if (cfg.averaging and n_avg > 0) else v
            gphi = phi_gradient(sp, cand)
            proxy_grads += 1
            if cand is v:
                grad_v = gphi
            gl = objective_gradient(cand) if spec.needs_objective_gradient else None
            ok, lhs, rhs = criterion_satisfied(spec, sp, cand, gl, gphi)
            if not np.isfinite(lhs):
                raise DivergenceError(f"subproblem gradient became non-finite at step {t} "
                                      f"(step_size={step:g})")
            if cfg.grad_tol is not None:
                ok = ok and lhs <= cfg.grad_tol ** 2
            history.append(lhs)
            if best is None or lhs < best[2]:
                best = (cand.copy(), t, lhs, rhs)
            if ok and (cfg.stop_on_criterion or final):
                return InnerResult(cand.copy(), t, True, lhs, rhs, proxy_grads, history)
        if final:
            break
        if stochastic_grad is None:
            if grad_v is None:
                grad_v = phi_gradient(sp, v)
                proxy_grads += 1
            direction = grad_v
        else:
            direction = stochastic_grad(v)
            proxy_grads += 1
        v = v - step * direction
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"inner iterate became non-finite at step {t + 1} "
                                  f"(step_size={step:g})")
        if cfg.averaging and t + 1 > cfg.average_start:
            n_avg += 1
            avg = v.copy() if n_avg == 1 else avg + (v - avg) / n_avg
    if not cfg.stop_on_criterion:
        # fixed-work protocol: report the last candidate, not the best one
        cand = avg if (cfg.averaging and n_avg > 0) else v
        return InnerResult(cand.copy(), cfg.max_steps, False, history[-1], rhs, proxy_grads, history)
    w, t, lhs, rhs = best
    return InnerResult(w, cfg.max_steps, False, lhs, rhs, proxy_grads, history)


def inner_gd(sp: ProxSubproblem, spec: CriterionSpec, cfg: InnerConfig, *,
             H_proxy: Optional[float] = None,
             objective_gradient: Optional[Callable] = None) -> InnerResult:
    """Gradient descent on the subproblem from its anchor, with exact gradients.

    The criterion is checked every ``cfg.check_every`` steps (including step
    0). The first passing point is returned; otherwise the checked point with
    the smallest ``||grad phi||^2`` is returned with ``criterion_ok=False``.
    """
    step = cfg.resolve_step(sp.eta, H_proxy)
    return _run(sp, spec, cfg, step, None, objective_gradient)


def inner_sgd(sp: ProxSubproblem, spec: CriterionSpec, cfg: InnerConfig, rng, *,
              H_proxy: Optional[float] = None,
              objective_gradient: Optional[Callable] = None) -> InnerResult:
    """Stochastic gradient descent on the subproblem using minibatch proxy gradients.

    Proxy rows are drawn uniformly with replacement, ``cfg.batch_size`` per
    step. The criterion itself is always evaluated with the exact subproblem
    gradient. With ``cfg.batch_size=None`` this is bit-identical to
    :func:`inner_gd`.
    """
    step = cfg.resolve_step(sp.eta, H_proxy)
    if cfg.batch_size is None:
        return _run(sp, spec, cfg, step, None, objective_gradient)
    n = sp.proxy.n_samples
    if n is None:
        raise ContractViolation("minibatch inner gradients need a finite-sum proxy")
    rng = np.random.default_rng(rng)
    b = cfg.batch_size

    def stochastic_grad(v):
        idx = rng.integers(0, n, size=b)
        if cfg.anchor_control:
            return (sp.g + sp.proxy.batch_gradient(v, idx) - sp.proxy.batch_gradient(sp.anchor, idx)
                    + (v - sp.anchor) / sp.eta)
        return phi_stochastic_gradient(sp, v, idx)

    return _run(sp, spec, cfg, step, stochastic_grad, objective_gradient)


def quadratic_exact(sp: ProxSubproblem, P) -> np.ndarray:
    """Exact subproblem minimizer for a quadratic proxy with Hessian ``P``:
    ``anchor - eta (I + eta P)^{-1} g``."""
    P = np.asarray(P, dtype=np.float64)
    d = sp.anchor.size
    if P.shape != (d, d):
        raise ContractViolation(f"P has shape {P.shape}, expected {(d, d)}")
    M = np.eye(d) + sp.eta * P
    try:
        factor = linalg.cho_factor(M)
    except linalg.LinAlgError as exc:
        raise linalg.LinAlgError(f"I + eta*P is not positive definite: {exc}") from exc
    x = linalg.cho_solve(factor, sp.g)
    # one step of iterative refinement
    r = sp.g - M @ x
    if np.any(r):
        x = x + linalg.cho_solve(factor, r)
    return sp.anchor - sp.eta * x


def inner_exact(sp: ProxSubproblem, spec: CriterionSpec, P, *,
                objective_gradient: Optional[Callable] = None) -> InnerResult:
    """:func:`quadratic_exact` wrapped as an :class:`InnerResult`."""
    w = quadratic_exact(sp, P)
    gl = objective_gradient(w) if spec.needs_objective_gradient else None
    ok, lhs, rhs = criterion_satisfied(spec, sp, w, gl)
    return InnerResult(w, 1, ok, lhs, rhs, 1, [lhs])


def predicted_gd_steps(eta: float, H: float, mu_proxy: float, initial_sq: float,
                       target_sq: float) -> int:
    """Steps for exact GD with step ``1/(H + 1/eta)`` to shrink ``||grad phi||^2``
    from ``initial_sq`` to ``target_sq`` at the linear rate
    ``(1 - (mu_proxy + 1/eta) / (H + 1/eta))`` per step (applied to the norm)."""
    q = 1.0 - (mu_proxy + 1.0 / eta) / (H + 1.0 / eta)
    if q <= 0 or initial_sq <= target_sq:
        return 0
    return math.ceil(0.5 * math.log(target_sq / initial_sq) / math.log(q))
