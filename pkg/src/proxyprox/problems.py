"""Concrete objective/proxy pairs: least squares with a covariance proxy,
logistic regression with label-free, random-label and subsampled proxies,
quadratic testbeds, a cosine-perturbed non-convex function, and a
Hessian-similarity estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from .core import (
    CapabilityError,
    ContractViolation,
    FunctionOracle,
    ProblemInstance,
    QuadraticOracle,
    ReferenceSolution,
    StochasticGradientSource,
    ZeroOracle,
    as_point,
)
from .data_io import Dataset, rng_fork

# Sparse designs denser than this are stored densely.
_DENSE_ABOVE = 0.3


def _design(X):
    """Design matrix and its transpose, both in a layout fast for matvecs."""
    if sparse.issparse(X):
        X = sparse.csr_matrix(X, dtype=np.float64)
        if X.nnz > _DENSE_ABOVE * X.shape[0] * X.shape[1]:
            X = X.toarray()
    else:
        X = np.ascontiguousarray(X, dtype=np.float64)
    XT = X.T.tocsr() if sparse.issparse(X) else X.T
    return X, XT


def sigmoid_stable(z):
    """Logistic function ``1 / (1 + exp(-z))`` without overflow.

    Evaluated as ``exp(z) / (1 + exp(z))`` for negative ``z``, which keeps
    subnormal results such as ``s(-745)`` instead of flushing them to zero
    (``scipy.special.expit`` returns 0 there). Accepts scalars or arrays.
    """
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def log_sigmoid(z):
    """``ln s(z)`` computed as ``-log(1 + exp(-z))`` in a stable form."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def power_iteration(matvec, dim: int, *, iters: int = 30, tol: float = 1e-6,
                    rng=None) -> float:
    """Largest-magnitude eigenvalue estimate ``||A v||`` of a symmetric operator.

    The estimate approaches the true value from below.
    """
    rng = np.random.default_rng(rng)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = matvec(v)
        new = float(np.linalg.norm(u))
        if new == 0.0:
            return 0.0
        v = u / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam


class LeastSquaresOracle(FunctionOracle):
    """``(1/2n) ||Xw - y||^2 + (reg/2) ||w||^2`` as a finite sum."""

    has_hvp = True

    def __init__(self, X, y, reg: float = 0.0):
        self.X, self.XT = _design(X)
        self.y = np.asarray(y, dtype=np.float64)
        self.reg = float(reg)
        self.n_samples, self.dim = self.X.shape

    def value(self, w) -> float:
        r = self.X @ w - self.y
        return 0.5 * float(r @ r) / self.n_samples + 0.5 * self.reg * float(w @ w)

    def gradient(self, w) -> np.ndarray:
        r = self.X @ w - self.y
        return self.XT @ r / self.n_samples + self.reg * w

    def hvp(self, w, v) -> np.ndarray:
        return self.XT @ (self.X @ v) / self.n_samples + self.reg * v

    def batch_gradient(self, w, idx) -> np.ndarray:
        Xb = self.X[idx]
        return Xb.T @ (Xb @ w - self.y[idx]) / len(idx) + self.reg * w

    def gradient_variance(self, w, batch_size: int = 1) -> float:
        """Exact variance of the minibatch gradient (sampling with replacement)."""
        r = self.X @ w - self.y
        row_sq = _row_norms_sq(self.X)
        full = self.XT @ r / self.n_samples
        return (float(np.mean(r * r * row_sq)) - float(full @ full)) / batch_size


class CovarianceOracle(QuadraticOracle):
    """Label-free least-squares proxy ``(1/2) w' (X'X/n) w + (reg/2) ||w||^2``.

    A quadratic (so exact subproblem solves apply) that also supports
    minibatch gradients over the rows of ``X``.
    """

    def __init__(self, X, reg: float = 0.0):
        self.X, self.XT = _design(X)
        n, d = self.X.shape
        gram = self.XT @ self.X
        gram = gram.toarray() if sparse.issparse(gram) else gram
        super().__init__(gram / n + reg * np.eye(d))
        self.reg = float(reg)
        self.n_samples = n

    def hvp(self, w, v) -> np.ndarray:
        return self.XT @ (self.X @ v) / self.n_samples + self.reg * v

    def batch_gradient(self, w, idx) -> np.ndarray:
        Xb = self.X[idx]
        return Xb.T @ (Xb @ w) / len(idx) + self.reg * w


class LogisticOracle(FunctionOracle):
    """Mean logistic loss ``-[y ln s(x'w) + (1-y) ln(1 - s(x'w))] + (reg/2)||w||^2``.

    The Hessian does not depend on ``y``, so two instances sharing ``X`` and
    ``reg`` have identical Hessians whatever their labels.
    """

    has_hvp = True

    def __init__(self, X, y, reg: float = 0.0):
        self.X, self.XT = _design(X)
        self.y = np.asarray(y, dtype=np.float64)
        if not np.isin(self.y, (0.0, 1.0)).all():
            raise ContractViolation("logistic labels must be in {0, 1}")
        self.reg = float(reg)
        self.n_samples, self.dim = self.X.shape

    def value(self, w) -> float:
        z = self.X @ w
        # -y ln s(z) - (1-y) ln s(-z) = log(1 + e^z) - y z
        loss = np.logaddexp(0.0, z) - self.y * z
        return float(np.mean(loss)) + 0.5 * self.reg * float(w @ w)

    def gradient(self, w) -> np.ndarray:
        z = self.X @ w
        return self.XT @ (sigmoid_stable(z) - self.y) / self.n_samples + self.reg * w

    def hvp(self, w, v) -> np.ndarray:
        s = sigmoid_stable(self.X @ w)
        return self.XT @ (s * (1.0 - s) * (self.X @ v)) / self.n_samples + self.reg * v

    def batch_gradient(self, w, idx) -> np.ndarray:
        Xb = self.X[idx]
        return Xb.T @ (sigmoid_stable(Xb @ w) - self.y[idx]) / len(idx) + self.reg * w

    def gradient_variance(self, w, batch_size: int = 1) -> float:
        r = sigmoid_stable(self.X @ w) - self.y
        full = self.XT @ r / self.n_samples
        return (float(np.mean(r * r * _row_norms_sq(self.X))) - float(full @ full)) / batch_size


def _row_norms_sq(X):
    if sparse.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", X, X)


def gram_lambda_max(X, seed: int = 0) -> float:
    """Largest eigenvalue of ``X'X / n`` by power iteration."""
    X, XT = _design(X)
    n, d = X.shape
    return power_iteration(lambda v: XT @ (X @ v) / n, d, iters=1000, tol=1e-13, rng=seed)


def logistic_smoothness(X) -> float:
    """``lambda_max(X'X) / (4n)``, the smoothness of the unregularized mean logistic loss."""
    return gram_lambda_max(X) / 4.0


PROXY_TAGS = ("zero", "covariance", "label_free_logistic", "random_label_logistic",
              "subsample", "quadratic")


@dataclass(frozen=True)
class ProxyKind:
    tag: str
    m: Optional[int] = None
    seed: int = 0
    P: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.tag not in PROXY_TAGS:
            raise ContractViolation(f"unknown proxy kind {self.tag!r}")
        if self.tag == "subsample" and (self.m is None or self.m < 1):
            raise ContractViolation("subsample proxy needs m >= 1")
        if self.tag == "quadratic" and self.P is None:
            raise ContractViolation("quadratic proxy needs P")

    @classmethod
    def parse(cls, text: str) -> "ProxyKind":
        """From strings like ``"random_label_logistic"`` or ``"subsample:812:3"``."""
        tag, *rest = text.split(":")
        if tag == "subsample":
            m = int(rest[0]) if rest else None
            seed = int(rest[1]) if len(rest) > 1 else 0
            return cls(tag, m=m, seed=seed)
        if tag == "random_label_logistic" and rest:
            return cls(tag, seed=int(rest[0]))
        return cls(tag)


def _minibatch_source(objective, batch_size, seed, w0):
    sigma2 = objective.gradient_variance(w0, batch_size)
    return StochasticGradientSource(objective, "minibatch", sigma2=max(sigma2, 0.0),
                                    batch_size=batch_size, seed=seed)


def least_squares_pair(data: Dataset, reg_mu: float = 0.0, *, batch_size: int = 1,
                       seed: int = 0, w0=None) -> ProblemInstance:
    """Least squares with the label-free covariance proxy (``delta = 0``).

    Stochastic gradients are minibatch means over rows drawn with replacement;
    ``sigma2`` is the exact minibatch variance at ``w0`` (default 0).
    """
    if reg_mu < 0:
        raise ContractViolation("reg_mu must be non-negative")
    L = LeastSquaresOracle(data.features, data.labels, reg_mu)
    F = CovarianceOracle(L.X, reg_mu)
    w0 = np.zeros(L.dim) if w0 is None else as_point(w0, L.dim)
    eig = np.linalg.eigvalsh(F.P)
    src = _minibatch_source(L, batch_size, seed, w0)
    return ProblemInstance(L, F, src, delta=0.0, mu=float(max(eig[0], reg_mu)),
                           H_proxy=float(eig[-1]), name="least_squares",
                           metadata={"reg_mu": reg_mu, "proxy": "covariance", "H": float(eig[-1]),
                                     "dataset": data.metadata.get("hash")})


def logistic_pair(data: Dataset, reg_mu: float, kind: ProxyKind, *, batch_size: int = 256,
                  seed: int = 0, w0=None, delta_probes: int = 10) -> ProblemInstance:
    """Regularized logistic regression with one of the proxy constructions.

    ``delta`` is 0 for the label-free and random-label proxies (identical
    Hessians), ``estimate_delta`` for a subsample proxy, and the smoothness of
    the objective for the zero proxy.
    """
    if data.task != "classification":
        raise ContractViolation("logistic_pair needs binary labels")
    if isinstance(kind, str):
        kind = ProxyKind.parse(kind)
    L = LogisticOracle(data.features, data.labels, reg_mu)
    H = logistic_smoothness(L.X) + reg_mu
    w0 = np.zeros(L.dim) if w0 is None else as_point(w0, L.dim)
    meta = {"reg_mu": reg_mu, "proxy": kind.tag, "dataset": data.metadata.get("hash"), "H": H,
            "scaling": data.metadata.get("scaling")}
    if kind.tag == "label_free_logistic":
        F = LogisticOracle(L.X, np.ones(L.n_samples), reg_mu)
        delta, H_proxy = 0.0, H
    elif kind.tag == "random_label_logistic":
        rng = np.random.default_rng(rng_fork(kind.seed, "random-labels"))
        F = LogisticOracle(L.X, rng.integers(0, 2, size=L.n_samples).astype(float), reg_mu)
        delta, H_proxy = 0.0, H
        meta["label_seed"] = kind.seed
    elif kind.tag == "subsample":
        if kind.m > L.n_samples:
            raise ContractViolation(f"subsample size {kind.m} exceeds n={L.n_samples}")
        rng = np.random.default_rng(rng_fork(kind.seed, "subsample"))
        rows = np.sort(rng.choice(L.n_samples, size=kind.m, replace=False))
        F = LogisticOracle(L.X[rows], L.y[rows], reg_mu)
        H_proxy = logistic_smoothness(F.X) + reg_mu
        delta = estimate_delta(L, F, delta_probes, rng_fork(kind.seed, "delta-probes"))
        meta.update(subsample_m=kind.m, subsample_seed=kind.seed)
    elif kind.tag == "zero":
        F = ZeroOracle(L.dim)
        delta, H_proxy = H, 0.0
    else:
        raise ContractViolation(f"proxy kind {kind.tag!r} is not available for logistic regression")
    src = _minibatch_source(L, batch_size, seed, w0)
    meta["sigma2_at_w0"] = src.sigma2
    return ProblemInstance(L, F, src, delta=delta, mu=reg_mu, H_proxy=H_proxy,
                           name=f"logistic[{kind.tag}]", metadata=meta)


class CosinePerturbedQuadratic(FunctionOracle):
    """``(1/2n)||Aw - y||^2 + a * sum_i cos(b w_i)``."""

    has_hvp = True

    def __init__(self, quad: QuadraticOracle, amplitude: float, frequency: float):
        self.quad = quad
        self.a = float(amplitude)
        self.b = float(frequency)
        self.dim = quad.dim

    def value(self, w) -> float:
        return self.quad.value(w) + self.a * float(np.sum(np.cos(self.b * w)))

    def gradient(self, w) -> np.ndarray:
        return self.quad.gradient(w) - self.a * self.b * np.sin(self.b * w)

    def hvp(self, w, v) -> np.ndarray:
        return self.quad.hvp(w, v) - self.a * self.b ** 2 * np.cos(self.b * w) * v


def nonconvex_testfn(d: int, amplitude: float, frequency: float, *, sigma2: float = 0.0,
                     seed: int = 0, n: Optional[int] = None) -> ProblemInstance:
    """Quadratic least-squares term plus ``a * sum cos(b w_i)``; the proxy is the
    quadratic part, so ``delta = a b^2`` exactly.

    Stochastic gradients carry additive Gaussian noise of variance ``sigma2``.
    ``f_lower`` (min of the quadratic part minus ``a d``) lower-bounds the
    optimal value.
    """
    if d < 1 or amplitude < 0 or not frequency > 0:
        raise ContractViolation("need d >= 1, amplitude >= 0, frequency > 0")
    n = 4 * d if n is None else n
    rng = np.random.default_rng(rng_fork(seed, "nonconvex-testfn"))
    A = rng.standard_normal((n, d))
    y = A @ rng.standard_normal(d) + 0.1 * rng.standard_normal(n)
    quad = QuadraticOracle(A.T @ A / n, -A.T @ y / n, float(y @ y) / (2 * n))
    L = CosinePerturbedQuadratic(quad, amplitude, frequency)
    f_lower = quad.value(quad.minimizer()) - amplitude * d
    noise = "gaussian" if sigma2 > 0 else "exact"
    src = StochasticGradientSource(L, noise, sigma2=sigma2, seed=rng_fork(seed, "noise"))
    H = float(np.linalg.eigvalsh(quad.P)[-1])
    return ProblemInstance(L, quad, src, delta=amplitude * frequency ** 2, mu=0.0, H_proxy=H,
                           f_lower=f_lower, name="cosine_perturbed_quadratic",
                           metadata={"H": H + amplitude * frequency ** 2,
                                     "d": d, "amplitude": amplitude, "frequency": frequency,
                                     "sigma2": sigma2, "seed": seed})


def quadratic_testbed(d: int = 20, mu: float = 1.0, cond: float = 1e3, *, sigma2: float = 0.0,
                      proxy_delta: float = 0.0, proxy_alpha: Optional[float] = None,
                      seed: int = 0) -> ProblemInstance:
    """``L(w) = (1/2)(w - w*)' A (w - w*)`` with spectrum log-spaced on ``[mu, mu*cond]``.

    Proxy Hessian options:

    * ``proxy_alpha``: ``P = (1 - alpha) A``, so ``delta = alpha ||A||``;
    * otherwise each eigenvalue of ``A`` is perturbed by at most ``proxy_delta``
      (clipped at zero), and ``delta`` is the exact resulting operator-norm gap.

    The reference solution is exact (``w*``, ``L* = 0``). Noise is additive
    Gaussian with total variance ``sigma2``.
    """
    rng = np.random.default_rng(rng_fork(seed, "quadratic-testbed"))
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = mu * np.logspace(0.0, np.log10(cond), d)
    A = (Q * lam) @ Q.T
    w_star = rng.standard_normal(d)
    L = QuadraticOracle(A, -A @ w_star, 0.5 * float(w_star @ (A @ w_star)))
    if proxy_alpha is not None:
        p = (1.0 - proxy_alpha) * lam
    else:
        p = np.maximum(lam + proxy_delta * rng.uniform(-1.0, 1.0, size=d), 0.0)
    P = (Q * p) @ Q.T
    F = QuadraticOracle(P)
    delta = float(np.max(np.abs(lam - p)))
    noise = "gaussian" if sigma2 > 0 else "exact"
    src = StochasticGradientSource(L, noise, sigma2=sigma2, seed=rng_fork(seed, "noise"))
    ref = ReferenceSolution(w_star, 0.0, float(np.linalg.norm(L.gradient(w_star))))
    return ProblemInstance(L, F, src, delta=delta, mu=mu, H_proxy=float(max(p.max(), 0.0)),
                           reference=ref, name="quadratic_testbed",
                           metadata={"H": float(lam[-1]), "d": d, "mu": mu, "cond": cond,
                                     "sigma2": sigma2,
                                     "proxy_delta": proxy_delta, "proxy_alpha": proxy_alpha,
                                     "seed": seed})


def synthetic_regression(n: int = 200, d: int = 20, cond: float = 1e4, *, noise: float = 0.1,
                         seed: int = 0) -> Dataset:
    """Regression data whose empirical covariance ``X'X/n`` has eigenvalues
    log-spaced on ``[1, cond]``."""
    if n < d:
        raise ContractViolation("need n >= d for a prescribed covariance spectrum")
    rng = np.random.default_rng(rng_fork(seed, "synthetic-regression"))
    U, _ = np.linalg.qr(rng.standard_normal((n, d)))
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.logspace(0.0, np.log10(cond), d)
    X = np.sqrt(n) * (U * np.sqrt(lam)) @ V.T
    y = X @ rng.standard_normal(d) + noise * rng.standard_normal(n)
    return Dataset(X, y, task="regression", metadata={"source": f"synthetic(seed={seed})",
                                                      "cond": cond, "scaling": "none"})


def estimate_delta(L: FunctionOracle, F: FunctionOracle, probes: int = 10, seed: int = 0, *,
                   iters: int = 30, tol: float = 1e-6, scale: float = 1.0, center=None) -> float:
    """Max over ``probes`` random points of the operator norm of ``hess L - hess F``.

    Each norm is estimated by power iteration on ``v -> hvp_L(w, v) - hvp_F(w, v)``;
    points are ``center + scale * N(0, I)``. Being a maximum over samples of
    under-estimates, the result can only under-estimate the true constant.
    """
    if probes < 1:
        raise ContractViolation("probes must be >= 1")
    if not (L.has_hvp and F.has_hvp):
        raise CapabilityError("estimate_delta needs Hessian-vector products from both oracles")
    if L.dim != F.dim:
        raise ContractViolation("dimension mismatch")
    rng = np.random.default_rng(seed)
    center = np.zeros(L.dim) if center is None else as_point(center, L.dim)
    best = 0.0
    for _ in range(probes):
        w = center + scale * rng.standard_normal(L.dim)
        est = power_iteration(lambda v: L.hvp(w, v) - F.hvp(w, v), L.dim,
                              iters=iters, tol=tol, rng=rng)
        best = max(best, est)
    return best
