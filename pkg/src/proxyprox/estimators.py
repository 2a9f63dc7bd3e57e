"""scikit-learn style estimators trained with the proxy method.

Both use a proxy whose Hessian matches the objective exactly (``delta = 0``),
so any step size is admissible; ``eta`` defaults to ``eta_rel / H``.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data_io import Dataset
from .inner import InnerConfig
from .outer import OuterConfig, proxyprox_run
from .problems import ProxyKind, least_squares_pair, logistic_pair, logistic_smoothness


def _with_intercept(X, fit_intercept):
    if not fit_intercept:
        return X
    ones = np.ones((X.shape[0], 1))
    return sparse.hstack([X, ones], format="csr") if sparse.issparse(X) else np.hstack([X, ones])


class _ProxyProxBase(BaseEstimator):

    def _solve(self, problem):
        eta = self.eta if self.eta is not None else self.eta_rel / problem.metadata["H"]
        inner = InnerConfig(max_steps=self.inner_steps, method=self.inner_method)
        cfg = OuterConfig(eta=eta, K=self.n_iter, mode="nonconvex", certified=False,
                          inner=inner, seed=self.random_state, on_inner_failure="ignore",
                          record_gradients=False)
        trace = proxyprox_run(problem, cfg)
        w = trace.iterates[-1]
        if self.fit_intercept:
            self.coef_, self.intercept_ = w[:-1], float(w[-1])
        else:
            self.coef_, self.intercept_ = w, 0.0
        self.loss_curve_ = trace.objective_values
        self.n_iter_ = trace.K
        self.eta_ = eta
        return self

    def _linear(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, accept_sparse="csr", reset=False)
        return X @ self.coef_ + self.intercept_


class ProxyProxClassifier(ClassifierMixin, _ProxyProxBase):
    """Binary logistic regression trained with a label-free or random-label proxy.

    Parameters
    ----------
    proxy : {"random_label_logistic", "label_free_logistic"}
    reg_rel : float
        L2 penalty in units of the loss smoothness ``lambda_max(X'X)/(4n)``.
    eta, eta_rel : float
        Outer step size, absolute or relative to the smoothness ``H``.
    n_iter : int
        Outer iterations, each using one minibatch gradient of the loss.
    """

    def __init__(self, proxy="random_label_logistic", reg_rel=1e-6, eta=None, eta_rel=16.0,
                 n_iter=500, batch_size=256, inner_steps=20, inner_method="gd",
                 fit_intercept=True, random_state=0):
        self.proxy = proxy
        self.reg_rel = reg_rel
        self.eta = eta
        self.eta_rel = eta_rel
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.inner_steps = inner_steps
        self.inner_method = inner_method
        self.fit_intercept = fit_intercept
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, accept_sparse="csr", dtype=np.float64)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise ValueError(f"binary classification only; got {self.classes_.size} classes")
        Xa = _with_intercept(X, self.fit_intercept)
        data = Dataset(Xa, (y == self.classes_[1]).astype(np.float64))
        reg = self.reg_rel * logistic_smoothness(Xa)
        problem = logistic_pair(data, reg, ProxyKind.parse(self.proxy),
                                batch_size=min(self.batch_size, data.n), seed=self.random_state)
        return self._solve(problem)

    def decision_function(self, X):
        return self._linear(X)

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-np.clip(self.decision_function(X), -500, 500)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]


class ProxyProxRegressor(RegressorMixin, _ProxyProxBase):
    """Ridge-regularized least squares with the label-free covariance proxy.

    ``inner_method="exact"`` solves each subproblem by a Cholesky solve, which
    makes every outer step a preconditioned stochastic gradient step. Since
    the proxy Hessian is exact, large steps are safe; the default
    ``eta_rel=100`` removes most of the dependence on conditioning.
    """

    def __init__(self, alpha=0.0, eta=None, eta_rel=100.0, n_iter=200, batch_size=32,
                 inner_steps=50, inner_method="exact", fit_intercept=True, random_state=0):
        self.alpha = alpha
        self.eta = eta
        self.eta_rel = eta_rel
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.inner_steps = inner_steps
        self.inner_method = inner_method
        self.fit_intercept = fit_intercept
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, accept_sparse="csr", dtype=np.float64, y_numeric=True)
        Xa = _with_intercept(X, self.fit_intercept)
        data = Dataset(Xa, y, task="regression")
        problem = least_squares_pair(data, self.alpha, batch_size=min(self.batch_size, data.n),
                                     seed=self.random_state)
        return self._solve(problem)

    def predict(self, X):
        return self._linear(X)
