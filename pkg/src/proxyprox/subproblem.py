"""The per-iteration proximal subproblem, Bregman divergences and the
inexactness criteria that certify approximate subproblem solutions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ContractViolation, FunctionOracle, as_point


def bregman(psi: FunctionOracle, u, v) -> float:
    """``psi(u) - psi(v) - <grad psi(v), u - v>``.

    No convexity is assumed, so the result may be negative.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractViolation(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(psi.value(u) - psi.value(v) - psi.gradient(v) @ (u - v))


def three_point_residual(psi: FunctionOracle, u, v, w) -> float:
    """Absolute residual of the three-point identity

    ``D(u;v) - D(u;w) - D(w;v) = <grad psi(v) - grad psi(w), w - u>``.

    Evaluated term by term so the residual reflects floating-point error only.
    """
    u, v, w = (np.asarray(x, dtype=np.float64) for x in (u, v, w))
    if not (u.shape == v.shape == w.shape):
        raise ContractViolation("dimension mismatch")
    lhs = bregman(psi, u, v) - bregman(psi, u, w) - bregman(psi, w, v)
    rhs = float((psi.gradient(v) - psi.gradient(w)) @ (w - u))
    return abs(lhs - rhs)


@dataclass(frozen=True)
class ProxSubproblem:
    """``phi(w) = <g, w> + D_proxy(w; anchor) + ||w - anchor||^2 / (2 eta)``.

    The proxy value and gradient at the anchor are computed once at
    construction; every later gradient evaluation costs one proxy gradient.
    """

    anchor: np.ndarray
    g: np.ndarray
    eta: float
    proxy: FunctionOracle
    anchor_value: float = field(init=False, repr=False)
    anchor_grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.eta > 0:
            raise ContractViolation("eta must be positive")
        anchor = as_point(self.anchor, self.proxy.dim)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "g", as_point(self.g, self.proxy.dim))
        object.__setattr__(self, "anchor_value", float(self.proxy.value(anchor)))
        object.__setattr__(self, "anchor_grad", self.proxy.gradient(anchor))

    @property
    def smoothness_shift(self) -> float:
        return 1.0 / self.eta


def phi_value(sp: ProxSubproblem, w) -> float:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != sp.anchor.shape:
        raise ContractViolation(f"dimension mismatch: {w.shape} vs {sp.anchor.shape}")
    d = w - sp.anchor
    breg = sp.proxy.value(w) - sp.anchor_value - float(sp.anchor_grad @ d)
    return float(sp.g @ w) + breg + float(d @ d) / (2.0 * sp.eta)


def phi_gradient(sp: ProxSubproblem, w) -> np.ndarray:
    """``g + grad proxy(w) - grad proxy(anchor) + (w - anchor) / eta``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != sp.anchor.shape:
        raise ContractViolation(f"dimension mismatch: {w.shape} vs {sp.anchor.shape}")
    return sp.g + (sp.proxy.gradient(w) - sp.anchor_grad) + (w - sp.anchor) / sp.eta


def phi_stochastic_gradient(sp: ProxSubproblem, w, idx) -> np.ndarray:
    """Unbiased minibatch estimate of ``phi_gradient`` (proxy gradient on rows ``idx``)."""
    return sp.g + (sp.proxy.batch_gradient(w, idx) - sp.anchor_grad) + (w - sp.anchor) / sp.eta


CRITERION_MODES = ("strongly_convex", "convex", "nonconvex")


@dataclass(frozen=True)
class CriterionSpec:
    """Inexactness criterion for one subproblem solve.

    ========================  ==================================================
    strongly_convex(mu, G2)   ``(mu / (4 eta)) ||w+ - w_k||^2 + G2``
    convex(K, G2)             ``||w+ - w_k||^2 / (4 eta^2 K) + G2``
    nonconvex                 ``(7 / (16 eta^2)) ||w+ - w_k||^2 + ||grad L(w+)||^2 / 8``
                              and ``phi(w+) <= phi(w_k)``
    ========================  ==================================================

    In the non-convex mode ``certified=True`` requires the full objective
    gradient at the candidate point; ``certified=False`` drops that
    non-negative term, which only tightens the threshold.
    """

    mode: str
    eta: float
    mu: float = 0.0
    K: int = 1
    G2: float = 0.0
    certified: bool = True

    def __post_init__(self):
        if self.mode not in CRITERION_MODES:
            raise ContractViolation(f"unknown criterion mode {self.mode!r}")
        if not self.eta > 0:
            raise ContractViolation("eta must be positive")
        if self.G2 < 0:
            raise ContractViolation("G2 must be non-negative")
        if self.mode == "strongly_convex" and not self.mu > 0:
            raise ContractViolation("strongly convex criterion needs mu > 0")
        if self.mode == "convex" and self.K < 1:
            raise ContractViolation("convex criterion needs K >= 1")

    @classmethod
    def strongly_convex(cls, mu: float, G2: float, eta: float) -> "CriterionSpec":
        return cls("strongly_convex", eta, mu=mu, G2=G2)

    @classmethod
    def convex(cls, K: int, G2: float, eta: float) -> "CriterionSpec":
        return cls("convex", eta, K=K, G2=G2)

    @classmethod
    def nonconvex(cls, eta: float, certified: bool = True) -> "CriterionSpec":
        return cls("nonconvex", eta, certified=certified)

    @property
    def needs_objective_gradient(self) -> bool:
        return self.mode == "nonconvex" and self.certified

    def threshold(self, movement_sq: float, grad_L_sq: Optional[float] = None) -> float:
        eta = self.eta
        if self.mode == "strongly_convex":
            return self.mu / (4.0 * eta) * movement_sq + self.G2
        if self.mode == "convex":
            return movement_sq / (4.0 * eta * eta * self.K) + self.G2
        rhs = 7.0 / (16.0 * eta * eta) * movement_sq
        if self.certified:
            if grad_L_sq is None:
                raise ContractViolation("certified nonconvex criterion needs the objective gradient")
            rhs += grad_L_sq / 8.0
        return rhs


def criterion_satisfied(spec: CriterionSpec, sp: ProxSubproblem, w_next,
                        grad_L_at_w_next=None, grad_phi=None) -> tuple[bool, float, float]:
    """Check ``||grad phi(w_next)||^2 <= threshold``.

    Returns ``(ok, lhs, rhs)``. ``grad_phi`` may be passed when already
    computed by the caller.
    """
    w_next = np.asarray(w_next, dtype=np.float64)
    if grad_phi is None:
        grad_phi = phi_gradient(sp, w_next)
    lhs = float(grad_phi @ grad_phi)
    d = w_next - sp.anchor
    movement_sq = float(d @ d)
    grad_L_sq = None
    if spec.needs_objective_gradient:
        if grad_L_at_w_next is None:
            raise ContractViolation("certified nonconvex criterion needs grad_L_at_w_next")
        gl = np.asarray(grad_L_at_w_next, dtype=np.float64)
        grad_L_sq = float(gl @ gl)
    rhs = spec.threshold(movement_sq, grad_L_sq)
    # an overflowed gradient must never pass as inf <= inf
    ok = bool(np.isfinite(lhs)) and lhs <= rhs
    if ok and spec.mode == "nonconvex":
        ok = phi_value(sp, w_next) <= phi_value(sp, sp.anchor)
    return ok, lhs, rhs
