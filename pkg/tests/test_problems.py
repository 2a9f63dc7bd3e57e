import numpy as np
import pytest
from scipy.special import expit

from proxyprox.core import CapabilityError, ContractViolation, FunctionOracle, QuadraticOracle
from proxyprox.data_io import Dataset, scale_features
from proxyprox.problems import (
    LeastSquaresOracle,
    LogisticOracle,
    ProxyKind,
    estimate_delta,
    gram_lambda_max,
    least_squares_pair,
    log_sigmoid,
    logistic_pair,
    logistic_smoothness,
    nonconvex_testfn,
    quadratic_testbed,
    sigmoid_stable,
    synthetic_regression,
)
from proxyprox.subproblem import bregman


def _hvp_gap(p, w, v):
    return np.linalg.norm(p.objective.hvp(w, v) - p.proxy.hvp(w, v))


def test_sigmoid_examples():
    assert sigmoid_stable(0.0) == 0.5
    assert abs(sigmoid_stable(30.0) + sigmoid_stable(-30.0) - 1.0) <= 1e-15
    assert sigmoid_stable(-745.0) > 0.0
    assert log_sigmoid(-745.0) == pytest.approx(-745.0)
    assert log_sigmoid(800.0) == 0.0
    z = np.linspace(-30, 30, 61)
    np.testing.assert_allclose(sigmoid_stable(z), 1 / (1 + np.exp(-z)), rtol=1e-14)


def test_least_squares_one_sample():
    ds = Dataset(np.array([[2.0]]), np.array([4.0]), task="regression")
    p = least_squares_pair(ds, 0.0)
    w = np.array([1.5])
    assert p.objective.value(w) == pytest.approx(0.5 * (2 * 1.5 - 4) ** 2)
    assert p.proxy.value(w) == pytest.approx(2 * 1.5 ** 2)
    assert p.objective.hvp(w, np.ones(1))[0] == p.proxy.hvp(w, np.ones(1))[0] == 4.0
    assert p.delta == 0.0 and p.mu == 4.0


def test_least_squares_hessians_identical(rng):
    p = least_squares_pair(synthetic_regression(n=100, d=20, cond=1e4), 0.1)
    for _ in range(20):
        w, v = rng.standard_normal((2, 20))
        assert _hvp_gap(p, w, v) <= 1e-10 * np.linalg.norm(p.proxy.hvp(w, v))
    lam = np.linalg.eigvalsh(p.proxy.P)
    assert p.mu == pytest.approx(1.0 + 0.1) and p.H_proxy == pytest.approx(lam[-1])


def test_least_squares_finite_sum_identity(rng):
    ds = synthetic_regression(n=30, d=5, cond=10)
    L = LeastSquaresOracle(ds.features, ds.labels, 0.2)
    w = rng.standard_normal(5)
    per_sample = np.array([L.batch_gradient(w, [i]) for i in range(30)])
    np.testing.assert_allclose(per_sample.mean(axis=0), L.gradient(w), atol=1e-12)
    X, y = ds.features, ds.labels
    np.testing.assert_allclose(per_sample[3], (X[3] @ w - y[3]) * X[3] + 0.2 * w, rtol=1e-12)


def test_minibatch_variance_is_exact(rng):
    ds = synthetic_regression(n=25, d=4, cond=5)
    L = LeastSquaresOracle(ds.features, ds.labels)
    w = rng.standard_normal(4)
    per = np.array([L.batch_gradient(w, [i]) for i in range(25)])
    one = np.mean(np.sum((per - per.mean(axis=0)) ** 2, axis=1))
    assert L.gradient_variance(w, 1) == pytest.approx(one, rel=1e-10)
    assert L.gradient_variance(w, 5) == pytest.approx(one / 5, rel=1e-10)


def _tiny_logistic(rng, n=60, d=5):
    X = rng.standard_normal((n, d))
    y = (rng.random(n) < expit(X @ rng.standard_normal(d))).astype(float)
    return Dataset(X, y)


def test_logistic_loss_matches_definition(rng):
    ds = _tiny_logistic(rng)
    L = LogisticOracle(ds.features, ds.labels, 0.3)
    w = rng.standard_normal(5)
    s = 1 / (1 + np.exp(-(ds.features @ w)))
    y = ds.labels
    ref = -np.mean(y * np.log(s) + (1 - y) * np.log(1 - s)) + 0.15 * w @ w
    assert L.value(w) == pytest.approx(ref, rel=1e-13)
    per = np.array([L.batch_gradient(w, [i]) for i in range(60)])
    np.testing.assert_allclose(per.mean(axis=0), L.gradient(w), atol=1e-14)


def test_logistic_rejects_nonbinary(rng):
    with pytest.raises(ContractViolation):
        LogisticOracle(np.ones((2, 1)), np.array([0.0, 2.0]))
    with pytest.raises(ContractViolation):
        logistic_pair(Dataset(np.ones((2, 1)), np.array([0.5, 1.0]), task="regression"),
                      0.0, ProxyKind("label_free_logistic"))


def test_label_free_proxy_one_dimension(rng):
    ds = Dataset(np.array([[1.0], [-1.0]]), np.array([1.0, 0.0]))
    for tag in ("label_free_logistic", "random_label_logistic"):
        p = logistic_pair(ds, 0.0, ProxyKind(tag), batch_size=1)
        for w in rng.standard_normal((10, 1)) * 3:
            assert _hvp_gap(p, w, np.ones(1)) <= 1e-12


@pytest.mark.parametrize("tag", ["label_free_logistic", "random_label_logistic"])
def test_label_free_hessian_identity_at_scale(surrogate, rng, tag):
    H = logistic_smoothness(surrogate.features)
    p = logistic_pair(surrogate, 1e-6 * H, ProxyKind(tag))
    assert p.delta == 0.0
    for _ in range(20):
        w, v = rng.standard_normal((2, p.dim))
        assert _hvp_gap(p, w, v) <= 1e-8 * np.linalg.norm(p.proxy.hvp(w, v))
    assert estimate_delta(p.objective, p.proxy, probes=10) <= 1e-8 * p.metadata["H"]


def test_random_labels_are_reproducible(surrogate):
    a = logistic_pair(surrogate, 1e-3, ProxyKind.parse("random_label_logistic:4"))
    b = logistic_pair(surrogate, 1e-3, ProxyKind.parse("random_label_logistic:4"))
    c = logistic_pair(surrogate, 1e-3, ProxyKind.parse("random_label_logistic:5"))
    np.testing.assert_array_equal(a.proxy.y, b.proxy.y)
    assert not np.array_equal(a.proxy.y, c.proxy.y)
    assert 0.4 < a.proxy.y.mean() < 0.6


def test_smoothness_constant(surrogate):
    X = surrogate.dense_features()
    lam = np.linalg.eigvalsh(X.T @ X / X.shape[0])[-1]
    assert gram_lambda_max(surrogate.features) == pytest.approx(lam, rel=1e-9)
    p = logistic_pair(surrogate, 0.01, ProxyKind("zero"))
    assert p.metadata["H"] == pytest.approx(lam / 4 + 0.01, rel=1e-9)
    assert p.delta == p.metadata["H"] and p.H_proxy == 0.0


def test_subsample_delta_shrinks_with_m(surrogate):
    reg = 1e-6 * logistic_smoothness(surrogate.features)
    means = []
    for m in (812, 2031, 4062, 8124):
        est = [logistic_pair(surrogate, reg, ProxyKind("subsample", m=m, seed=s),
                             delta_probes=3).delta for s in range(10)]
        means.append(np.mean(est))
    assert means[0] > 0
    assert all(a > b for a, b in zip(means, means[1:]))
    assert means[-1] <= 1e-10
    with pytest.raises(ContractViolation):
        ProxyKind("subsample", m=0)
    with pytest.raises(ContractViolation):
        logistic_pair(surrogate, reg, ProxyKind("subsample", m=9000))


def test_proxy_kind_parse():
    assert ProxyKind.parse("subsample:812:3") == ProxyKind("subsample", m=812, seed=3)
    assert ProxyKind.parse("random_label_logistic:2").seed == 2
    with pytest.raises(ContractViolation):
        ProxyKind.parse("mystery")
    with pytest.raises(ContractViolation):
        ProxyKind("quadratic")


def test_nonconvex_testfn_constants(rng):
    p = nonconvex_testfn(10, 0.5, 2.0)
    assert p.delta == 2.0
    h_norms = []
    for _ in range(100):
        w, v = rng.standard_normal((2, 10)) * 3
        v /= np.linalg.norm(v)
        h_norms.append(_hvp_gap(p, w, v))
    assert max(h_norms) <= p.delta + 1e-9
    assert estimate_delta(p.objective, p.proxy, probes=50, seed=1) >= 0.9 * p.delta
    # f_lower really is a lower bound
    vals = [p.objective.value(w) for w in rng.standard_normal((500, 10)) * 3]
    assert min(vals) >= p.f_lower


def test_nonconvex_testfn_without_perturbation_is_the_quadratic(rng):
    p = nonconvex_testfn(5, 0.0, 1.0)
    assert p.delta == 0.0
    w = rng.standard_normal(5)
    assert p.objective.value(w) == pytest.approx(p.proxy.value(w), rel=1e-14)
    with pytest.raises(ContractViolation):
        nonconvex_testfn(5, -1.0, 1.0)


def test_estimate_delta_known_spectrum(rng):
    M = rng.standard_normal((6, 6))
    A = M @ M.T + np.eye(6)
    L = QuadraticOracle(A)
    assert estimate_delta(L, QuadraticOracle(A), probes=3) <= 1e-9
    F = QuadraticOracle(A - np.diag([0.3, 0, 0, 0, 0, 0]))
    assert estimate_delta(L, F, probes=3, iters=200, tol=1e-12) == pytest.approx(0.3, abs=1e-6)


def test_estimate_delta_needs_hvp():
    class NoHvp(FunctionOracle):
        dim = 2

        def value(self, w):
            return 0.0

    with pytest.raises(CapabilityError):
        estimate_delta(NoHvp(), QuadraticOracle(np.eye(2)))
    with pytest.raises(ContractViolation):
        estimate_delta(QuadraticOracle(np.eye(2)), QuadraticOracle(np.eye(2)), probes=0)


def test_quadratic_testbed_reference_and_delta(rng):
    p = quadratic_testbed(d=8, mu=0.5, cond=100, proxy_delta=2.0, seed=3)
    np.testing.assert_allclose(p.objective.gradient(p.reference.w_star), 0.0, atol=1e-10)
    assert p.objective.value(p.reference.w_star) == pytest.approx(0.0, abs=1e-10)
    gap = np.linalg.norm(p.objective.P - p.proxy.P, 2)
    assert p.delta == pytest.approx(gap, rel=1e-9) and 0 < p.delta <= 2.0
    q = quadratic_testbed(d=8, mu=0.5, cond=100, proxy_alpha=0.1)
    assert q.delta == pytest.approx(0.1 * 50.0)


def _shipped_pairs(surrogate):
    small = scale_features(Dataset(surrogate.features[:400], surrogate.labels[:400]))
    reg = 1e-3
    return [
        least_squares_pair(synthetic_regression(n=60, d=6, cond=100), 0.1),
        logistic_pair(small, reg, ProxyKind("label_free_logistic")),
        logistic_pair(small, reg, ProxyKind("random_label_logistic")),
        logistic_pair(small, reg, ProxyKind("subsample", m=100), delta_probes=20),
        logistic_pair(small, reg, ProxyKind("zero")),
        nonconvex_testfn(6, 0.5, 2.0),
        quadratic_testbed(d=6, proxy_delta=3.0),
    ]


def test_similarity_bound_on_every_pair(surrogate, rng):
    """|D_h(u; v)| <= (delta/2)||u - v||^2 for h = L - F."""
    for p in _shipped_pairs(surrogate):
        h = p.objective - p.proxy
        for _ in range(100):
            v = rng.standard_normal(p.dim)
            step = rng.standard_normal(p.dim)
            u = v + step * rng.uniform(0, 10) / np.linalg.norm(step)
            slack = 1e-9 + 1e-12 * abs(p.objective.value(u))
            assert abs(bregman(h, u, v)) <= 0.5 * p.delta * np.sum((u - v) ** 2) + slack, p.name


def test_strong_convexity_of_regularized_pairs(surrogate, rng):
    small = Dataset(surrogate.features[:300], surrogate.labels[:300])
    pairs = [least_squares_pair(synthetic_regression(n=60, d=6, cond=100), 0.5),
             logistic_pair(small, 0.5, ProxyKind("label_free_logistic"))]
    for p in pairs:
        L = p.objective
        for _ in range(100):
            u, v = rng.standard_normal((2, p.dim)) * 3
            lower = L.value(v) + L.gradient(v) @ (u - v) + 0.5 * p.mu * np.sum((u - v) ** 2)
            assert L.value(u) >= lower - 1e-10
