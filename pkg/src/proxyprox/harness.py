"""Experiment runner: problem construction from a spec, certified reference
solutions, replicate execution with CSV/JSON export, and bound checking."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.sparse.linalg import LinearOperator, cg

from .core import (
    ConfigurationError,
    ContractViolation,
    FunctionOracle,
    ProblemInstance,
    ProxyProxError,
    ReferenceSolution,
    UnconvergedError,
    as_point,
)
from .data_io import (
    load_mushrooms,
    make_mushrooms_surrogate,
    parse_sparse_classification,
    rng_fork,
    scale_features,
)
from .inner import InnerConfig
from .outer import (
    OuterConfig,
    RunTrace,
    _check_eta,
    convex_bound,
    nonconvex_bound,
    proxyprox_run,
    regularize_pair,
    schedule_convex,
    schedule_strongly_convex,
    sgd_baseline,
    strongly_convex_bound,
)
from .problems import (
    ProxyKind,
    least_squares_pair,
    logistic_pair,
    logistic_smoothness,
    nonconvex_testfn,
    quadratic_testbed,
    synthetic_regression,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("experiment_id", "replicate", "k", "objective_grad_draws", "proxy_grads",
               "loss", "subopt", "crit_lhs", "crit_rhs", "movement")
AGGREGATE_COLUMNS = ("experiment_id", "k", "objective_grad_draws", "n", "mean_loss",
                     "mean_subopt", "stderr_subopt")
PROBLEMS = ("quadratic", "least_squares", "mushrooms", "mushrooms_surrogate", "libsvm",
            "nonconvex")
GRID_SELECTION_STEP = 250


class ReplicateError(ProxyProxError):
    """A replicate failed; ``replicate`` is its index and ``__cause__`` the error."""

    def __init__(self, replicate: int, cause: BaseException):
        super().__init__(f"replicate {replicate} failed: {type(cause).__name__}: {cause}")
        self.replicate = replicate


# ---------------------------------------------------------------------------
# reference solutions

def _agd(oracle, w, tol, max_evals, L0=1.0):
    """Nesterov acceleration with backtracking and function-value restarts."""
    x, y = w.copy(), w.copy()
    fx = oracle.value(x)
    t, Lc, evals = 1.0, L0, 0
    best = (np.inf, x)
    while evals < max_evals:
        gy = oracle.gradient(y)
        evals += 1
        gn = float(np.linalg.norm(gy))
        if gn < best[0]:
            best = (gn, y.copy())
        if gn <= tol:
            return y, gn, evals
        fy = oracle.value(y)
        while True:
            x_new = y - gy / Lc
            f_new = oracle.value(x_new)
            if f_new <= fy - 0.5 * gn * gn / Lc + 1e-15 * abs(fy):
                break
            Lc *= 2.0
        if f_new > fx:  # restart momentum
            t, y = 1.0, x.copy()
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + (t - 1.0) / t_new * (x_new - x)
        x, fx, t = x_new, f_new, t_new
        Lc *= 0.9
    raise UnconvergedError(f"reference solve hit {max_evals} gradient evaluations "
                           f"(best ||grad|| = {best[0]:.3e})", best=best[1])


def _newton_cg(oracle, w, tol, max_iter=50):
    """Damped Newton with CG on Hessian-vector products; returns (w, ||grad||)."""
    d = w.size
    f = oracle.value(w)
    g = oracle.gradient(w)
    for _ in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            break
        H = LinearOperator((d, d), matvec=lambda v, w=w: oracle.hvp(w, v))
        step, _ = cg(H, -g, rtol=min(0.1, math.sqrt(gn)), maxiter=10 * d)
        slope = float(g @ step)
        if not slope < 0:
            step, slope = -g, -gn * gn
        a = 1.0
        while a > 1e-12:
            w_try = w + a * step
            f_try = oracle.value(w_try)
            g_try = oracle.gradient(w_try)
            # near the optimum the Armijo decrease drops below the rounding of
            # f, so a halved gradient norm also counts as progress
            if f_try <= f + 1e-4 * a * slope or np.linalg.norm(g_try) <= 0.5 * gn:
                break
            a *= 0.5
        else:
            break
        w, f, g = w_try, f_try, g_try
    return w, float(np.linalg.norm(g))


def solve_reference(oracle: FunctionOracle, mu: float = 0.0, tol: float = 1e-10, *,
                    w0=None, max_grad_evals: int = 10_000_000,
                    warm_start: bool = True) -> ReferenceSolution:
    """Deterministic high-accuracy minimizer certified by ``||grad L(w*)|| <= tol``.

    Stages: L-BFGS (scipy) warm start, Newton-CG polishing when Hessian-vector
    products exist, then accelerated gradient descent until the certificate
    holds. Raises :class:`UnconvergedError` carrying the best point when the
    gradient-evaluation cap is reached.
    """
    if not tol > 0:
        raise ContractViolation("tol must be positive")
    if mu < 0:
        raise ContractViolation("mu must be non-negative")
    w = np.zeros(oracle.dim) if w0 is None else as_point(w0, oracle.dim).copy()
    gn = float(np.linalg.norm(oracle.gradient(w)))
    if gn > tol and warm_start:
        res = optimize.minimize(lambda v: oracle.value(v), w, jac=lambda v: oracle.gradient(v),
                                method="L-BFGS-B",
                                options={"maxiter": 20000, "gtol": tol, "ftol": 0.0,
                                         "maxcor": 30})
        w = res.x
        gn = float(np.linalg.norm(oracle.gradient(w)))
    if gn > tol and oracle.has_hvp:
        w, gn = _newton_cg(oracle, w, tol)
    if gn > tol:
        w, gn, _ = _agd(oracle, w, tol, max_grad_evals)
    return ReferenceSolution(w, float(oracle.value(w)), gn)


# ---------------------------------------------------------------------------
# experiment specification

@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one experiment.

    ``problem`` names a generator in :data:`PROBLEMS`; ``params`` holds its
    parameters (dimensions, noise, dataset path, ``reg_rel`` for the
    regularization in units of the objective's smoothness, ``batch_size``,
    ``scaling``). Step sizes are given either absolutely (``eta``), relative to
    the smoothness ``H`` (``eta_rel``, meaning ``eta = eta_rel / H``), by a
    grid search (``grid``: exponents ``i`` of candidates ``2^i / H``) or by a
    complexity ``schedule`` with target ``epsilon``. ``budget`` (stochastic
    objective gradients) overrides ``K`` as ``budget // batch_size``.
    """

    experiment_id: str = "experiment"
    problem: str = "quadratic"
    params: dict = field(default_factory=dict)
    proxy: str = "random_label_logistic"
    algorithm: str = "proxyprox"
    mode: str = "strongly_convex"
    eta: Optional[float] = None
    eta_rel: Optional[float] = None
    grid: Optional[list] = None
    schedule: Optional[str] = None
    epsilon: Optional[float] = None
    K: int = 100
    budget: Optional[int] = None
    G2: float = 0.0
    inner_method: str = "gd"
    inner_steps: int = 100
    inner_step_size: Optional[float] = None
    inner_batch_size: Optional[int] = None
    inner_averaging: bool = False
    stop_on_criterion: bool = True
    on_inner_failure: str = "raise"
    certified: bool = True
    regularize: bool = False
    replicates: int = 1
    seed: int = 0
    workers: int = 1
    reference_tol: float = 1e-10

    def __post_init__(self):
        if self.replicates < 1:
            raise ContractViolation("replicates must be >= 1")
        if self.algorithm not in ("proxyprox", "sgd"):
            raise ContractViolation(f"unknown algorithm {self.algorithm!r}")
        if self.problem not in PROBLEMS:
            raise ContractViolation(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        if self.schedule not in (None, "strongly_convex", "convex"):
            raise ContractViolation(f"unknown schedule {self.schedule!r}")
        if self.schedule is not None and self.epsilon is None:
            raise ContractViolation("a schedule needs epsilon")
        if self.workers < 1:
            raise ContractViolation("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        params = dict(d.get("params", {}))
        kwargs = {}
        for key, val in d.items():
            if key.startswith("params."):
                params[key[len("params."):]] = val
            elif key == "params":
                continue
            elif key in known:
                kwargs[key] = val
            else:
                raise ContractViolation(f"unknown spec key {key!r}")
        return cls(params=params, **kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        """Read a JSON document or ``key = value`` lines (values parsed as JSON
        when possible, otherwise kept as strings; ``#`` starts a comment)."""
        text = Path(path).read_text(encoding="utf-8")
        if text.lstrip().startswith("{"):
            return cls.from_dict(json.loads(text))
        d = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ContractViolation(f"{path}:{lineno}: expected 'key = value'")
            val = val.strip()
            try:
                d[key.strip()] = json.loads(val)
            except json.JSONDecodeError:
                d[key.strip()] = val
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)


_REFERENCE_CACHE: dict = {}


def build_problem(name: str, params: Optional[dict] = None, proxy: str = "random_label_logistic",
                  *, with_reference: bool = True, reference_tol: float = 1e-10,
                  seed: int = 0) -> ProblemInstance:
    """Instantiate a named problem; attach a certified reference when convex."""
    p = dict(params or {})
    batch = int(p.get("batch_size", 256))
    if name == "quadratic":
        return quadratic_testbed(int(p.get("d", 20)), float(p.get("mu", 1.0)),
                                 float(p.get("cond", 1e3)), sigma2=float(p.get("sigma2", 0.0)),
                                 proxy_delta=float(p.get("proxy_delta", 0.0)),
                                 proxy_alpha=p.get("proxy_alpha"), seed=int(p.get("seed", seed)))
    if name == "nonconvex":
        return nonconvex_testfn(int(p.get("d", 10)), float(p.get("a", 0.5)), float(p.get("b", 2.0)),
                                sigma2=float(p.get("sigma2", 0.25)), seed=int(p.get("seed", seed)))
    if name == "least_squares":
        data = synthetic_regression(int(p.get("n", 200)), int(p.get("d", 20)),
                                    float(p.get("cond", 1e4)), noise=float(p.get("noise", 0.1)),
                                    seed=int(p.get("seed", seed)))
        inst = least_squares_pair(data, float(p.get("reg_mu", 0.0)),
                                  batch_size=int(p.get("batch_size", 1)), seed=seed)
    else:
        scaling = p.get("scaling", "unit_columns")
        if name == "mushrooms":
            data = load_mushrooms(p.get("data_dir"), scaling=scaling)
        elif name == "mushrooms_surrogate":
            data = scale_features(make_mushrooms_surrogate(int(p.get("data_seed", 0))), scaling)
        else:
            if "path" not in p:
                raise ContractViolation("libsvm problem needs params.path")
            data = scale_features(parse_sparse_classification(p["path"]), scaling)
        reg = float(p.get("reg_rel", 1e-6)) * logistic_smoothness(data.features)
        inst = logistic_pair(data, reg, ProxyKind.parse(proxy) if isinstance(proxy, str) else proxy,
                             batch_size=batch, seed=seed)
    if with_reference:
        key = (name, inst.metadata.get("dataset"), inst.metadata.get("reg_mu"))
        ref = _REFERENCE_CACHE.get(key)
        if ref is None:
            ref = solve_reference(inst.objective, inst.mu, reference_tol)
            _REFERENCE_CACHE[key] = ref
        inst = inst.with_reference(ref)
    return inst


def problem_smoothness(problem: ProblemInstance) -> float:
    """Smoothness ``H`` of the objective used to scale step sizes."""
    H = problem.metadata.get("H")
    return float(H) if H is not None else problem.H_proxy + problem.delta


# ---------------------------------------------------------------------------
# running

@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    traces: list
    rows: list
    aggregate: list
    metadata: dict


def _inner_config(spec: ExperimentSpec) -> InnerConfig:
    return InnerConfig(max_steps=spec.inner_steps, step_size=spec.inner_step_size,
                       batch_size=spec.inner_batch_size, method=spec.inner_method,
                       averaging=spec.inner_averaging, stop_on_criterion=spec.stop_on_criterion)


def _run_one(problem, spec, eta, K, G2, seed, run_problem=None, eval_problem=None):
    if spec.algorithm == "sgd":
        return sgd_baseline(problem, eta, K, seed=seed)
    cfg = OuterConfig(eta=eta, K=K, mode=spec.mode, G2=G2, inner=_inner_config(spec),
                      seed=seed, on_inner_failure=spec.on_inner_failure,
                      certified=spec.certified, epsilon=spec.epsilon)
    return proxyprox_run(run_problem or problem, cfg, eval_problem=eval_problem)


def grid_search(problem: ProblemInstance, spec: ExperimentSpec, exponents, K: int,
                seed: int) -> tuple[float, dict]:
    """Pick ``eta = 2^i / H`` minimizing the loss after ``min(K, 250)`` steps.

    Candidates violating ``eta <= 1/(4 delta)`` are skipped for the proxy
    method; diverging candidates score ``inf``.
    """
    H = problem_smoothness(problem)
    steps = min(K, GRID_SELECTION_STEP)
    scores = {}
    for i in exponents:
        eta = 2.0 ** i / H
        if spec.algorithm == "proxyprox" and problem.delta > 0 and eta > 1 / (4 * problem.delta):
            continue
        try:
            tr = _run_one(problem, spec, eta, steps, spec.G2, seed)
            val = float(tr.objective_values[-1])
            scores[eta] = val if np.isfinite(val) else math.inf
        except (FloatingPointError, OverflowError):
            scores[eta] = math.inf
    if not scores or all(math.isinf(v) for v in scores.values()):
        raise ConfigurationError("grid search found no usable step size")
    return min(scores, key=scores.get), scores


def _trace_rows(spec, r, tr: RunTrace, batch, f_star):
    rows = []
    for k in range(tr.K + 1):
        loss = float(tr.objective_values[k])
        step = k - 1
        rows.append({
            "experiment_id": spec.experiment_id, "replicate": r, "k": k,
            "objective_grad_draws": k * batch,
            "proxy_grads": int(tr.proxy_grads[step]) if k else 0,
            "loss": loss, "subopt": loss - f_star if f_star is not None else math.nan,
            "crit_lhs": float(tr.criterion_lhs[step]) if k else math.nan,
            "crit_rhs": float(tr.criterion_rhs[step]) if k else math.nan,
            "movement": float(tr.movement[step]) if k else math.nan,
        })
    return rows


def aggregate_rows(rows: list) -> list:
    """Mean and standard error across replicates, keyed by budget position."""
    by_k: dict = {}
    for row in rows:
        by_k.setdefault(row["k"], []).append(row)
    out = []
    for k in sorted(by_k):
        group = by_k[k]
        loss = np.array([g["loss"] for g in group])
        sub = np.array([g["subopt"] for g in group])
        n = len(group)
        se = float(np.std(sub, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out.append({"experiment_id": group[0]["experiment_id"], "k": k,
                    "objective_grad_draws": group[0]["objective_grad_draws"], "n": n,
                    "mean_loss": float(loss.mean()), "mean_subopt": float(sub.mean()),
                    "stderr_subopt": se})
    return out


def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def run_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """Execute ``spec.replicates`` seeded replicates and optionally write
    ``traces.csv``, ``aggregate.csv``, ``metadata.json`` and per-replicate
    ``traces/replicate_XXX.npz`` under ``out_dir``.

    Replicate ``r`` uses seed ``rng_fork(spec.seed, "replicate/r")``; results
    are a deterministic function of ``spec``.
    """
    problem = build_problem(spec.problem, spec.params, spec.proxy,
                            with_reference=spec.params.get("reference", True)
                            and spec.problem != "nonconvex",
                            reference_tol=spec.reference_tol,
                            seed=rng_fork(spec.seed, "problem"))
    batch = problem.grad_source.batch_size
    K = spec.budget // batch if spec.budget is not None else int(spec.K)
    if K < 1:
        raise ContractViolation("budget smaller than one minibatch")
    H = problem_smoothness(problem)
    meta = {"spec": spec.to_dict(), "problem": problem.name, "H": H, "delta": problem.delta,
            "mu": problem.mu, "sigma2": problem.sigma2, "f_star": problem.f_star,
            "dataset_hash": problem.metadata.get("dataset"),
            "scaling": problem.metadata.get("scaling"), "batch_size": batch}
    G2 = spec.G2
    run_problem = eval_problem = None
    w0 = np.zeros(problem.dim)
    B2 = None
    if problem.reference is not None:
        B2 = float(np.sum((w0 - problem.reference.w_star) ** 2))
    B2_used = float(spec.params.get("B2", B2 if B2 is not None else 1.0))
    meta.update(B2_true=B2, B2_used=B2_used)

    if spec.schedule == "strongly_convex":
        eta, K, G2 = schedule_strongly_convex(problem, spec.epsilon, B2_used)
    elif spec.schedule == "convex":
        eta, K, G2, mu_reg = schedule_convex(problem, spec.epsilon, B2_used)
        meta["mu_reg"] = mu_reg
        run_problem = regularize_pair(problem, mu_reg, w0)
        eval_problem = problem
    elif spec.grid is not None:
        exps = spec.grid if spec.grid else list(range(-8, 1))
        eta, scores = grid_search(problem, spec, exps, K, rng_fork(spec.seed, "grid"))
        meta["grid_scores"] = {repr(k): v for k, v in scores.items()}
    elif spec.eta is not None:
        eta = float(spec.eta)
    elif spec.eta_rel is not None:
        eta = float(spec.eta_rel) / H
    else:
        raise ContractViolation("spec gives no step size (eta, eta_rel, grid or schedule)")
    if spec.regularize and run_problem is None:
        mu_reg = 1.0 / (eta * K)
        run_problem, eval_problem = regularize_pair(problem, mu_reg, w0), problem
        meta["mu_reg"] = mu_reg
    if spec.algorithm == "proxyprox":
        _check_eta(problem, eta)
    meta.update(eta=eta, K=K, G2=G2)
    seeds = [rng_fork(spec.seed, f"replicate/{r}") for r in range(spec.replicates)]
    meta["replicate_seeds"] = seeds

    def job(r):
        try:
            return _run_one(problem, spec, eta, K, G2, seeds[r], run_problem, eval_problem)
        except Exception as exc:
            raise ReplicateError(r, exc) from exc

    if spec.workers > 1 and spec.replicates > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            traces = list(pool.map(job, range(spec.replicates)))
    else:
        traces = [job(r) for r in range(spec.replicates)]
    f_star = problem.f_star
    rows = [row for r, tr in enumerate(traces) for row in _trace_rows(spec, r, tr, batch, f_star)]
    agg = aggregate_rows(rows)
    result = ExperimentResult(spec, traces, rows, agg, meta)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    write_csv(out / "traces.csv", result.rows, CSV_COLUMNS)
    write_csv(out / "aggregate.csv", result.aggregate, AGGREGATE_COLUMNS)
    for r, tr in enumerate(result.traces):
        tr.save(out / "traces" / f"replicate_{r:03d}.npz")
    (out / "metadata.json").write_text(json.dumps(result.metadata, indent=2, default=_jsonable),
                                       encoding="utf-8")
    return out


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def load_traces(path) -> list:
    """All ``*.npz`` traces in ``path`` (or in ``path/traces``), sorted by name."""
    path = Path(path)
    if (path / "traces").is_dir():
        path = path / "traces"
    files = sorted(path.glob("*.npz"))
    if not files:
        raise FileNotFoundError(f"no .npz traces in {path}")
    return [RunTrace.load(f) for f in files]


# ---------------------------------------------------------------------------
# bound checks

@dataclass
class BoundReport:
    """Empirical mean vs theoretical bound per iteration count ``K``.

    ``passed[i]`` holds iff ``empirical[i] <= rhs[i] + 2 * stderr[i]``.
    """

    theorem: int
    K: np.ndarray
    empirical: np.ndarray
    rhs: np.ndarray
    stderr: np.ndarray
    n_runs: int

    @property
    def passed(self) -> np.ndarray:
        return self.empirical <= self.rhs + 2.0 * self.stderr

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))

    def rows(self) -> list:
        return [{"theorem": self.theorem, "K": int(k), "empirical": float(e), "rhs": float(r),
                 "stderr": float(s), "passed": bool(p)}
                for k, e, r, s, p in zip(self.K, self.empirical, self.rhs, self.stderr,
                                         self.passed)]

    def summary(self) -> str:
        worst = int(np.argmax(self.empirical - self.rhs - 2 * self.stderr))
        status = "PASS" if self.all_passed else "FAIL"
        return (f"theorem {self.theorem}: {status} over {len(self.K)} values of K "
                f"({self.n_runs} runs); tightest K={int(self.K[worst])}: "
                f"empirical={self.empirical[worst]:.4e} rhs={self.rhs[worst]:.4e} "
                f"stderr={self.stderr[worst]:.2e}")


def _mean_se(x):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    se = x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(x.shape[1:])
    return x.mean(axis=0), se


def _const(traces, constants, key):
    if constants and constants.get(key) is not None:
        return float(constants[key])
    if key == "B2":
        vals = [t.B2 for t in traces]
    elif key == "eta":
        vals = [t.eta for t in traces]
    else:
        vals = [t.constants.get(key) for t in traces]
    if any(v is None for v in vals):
        raise ContractViolation(f"constant {key!r} missing; pass it explicitly")
    vals = np.asarray(vals, dtype=np.float64)
    if not np.allclose(vals, vals[0], rtol=1e-12, atol=0):
        raise ContractViolation(f"traces disagree on {key!r}")
    return float(vals[0])


def check_bound(traces: list, theorem: int, constants: Optional[dict] = None) -> BoundReport:
    """Compare replicate means with the guarantee of ``theorem``.

    1: strongly convex, weighted average, every ``K`` up to the run length;
    2: convex, uniform average, at the run length (the criterion depends on it);
    3: non-convex, average squared gradient norm, every ``K``.
    Constants (``B2``, ``eta``, ``mu``, ``sigma2``, ``G2``, ``f_star``, ``L0``)
    default to those stored in the traces.
    """
    if not traces:
        raise ContractViolation("no traces")
    if theorem not in (1, 2, 3):
        raise ContractViolation("theorem must be 1, 2 or 3")
    expected = {1: "strongly_convex", 2: "convex", 3: "nonconvex"}[theorem]
    if any(t.mode != expected for t in traces):
        raise ContractViolation(f"theorem {theorem} needs traces produced in {expected} mode")
    Kmax = min(t.K for t in traces)
    eta = _const(traces, constants, "eta")
    s2 = _const(traces, constants, "sigma2")
    f_star = _const(traces, constants, "f_star")
    if theorem == 3:
        if any(t.grad_sq_norms is None for t in traces):
            raise ContractViolation("theorem 3 needs gradient-norm logs")
        Ks = np.arange(1, Kmax + 1)
        avg = np.array([np.cumsum(t.grad_sq_norms[1:Kmax + 1]) / Ks for t in traces])
        emp, se = _mean_se(avg)
        L0 = _const(traces, constants, "L0")
        rhs = nonconvex_bound(L0 - f_star, eta, Ks, s2)
        return BoundReport(3, Ks, emp, rhs, se, len(traces))
    if any(t.averaged_objective_values is None for t in traces):
        raise ContractViolation("traces lack averaged objective values")
    B2 = _const(traces, constants, "B2")
    G2 = _const(traces, constants, "G2")
    if theorem == 1:
        mu = _const(traces, constants, "mu")
        Ks = np.arange(1, Kmax + 1)
        sub = np.array([t.averaged_objective_values[:Kmax] - f_star for t in traces])
        emp, se = _mean_se(sub)
        rhs = strongly_convex_bound(B2, eta, mu, Ks, s2, G2)
        return BoundReport(1, Ks, emp, rhs, se, len(traces))
    Ks = sorted({t.K for t in traces})
    emp, ses, rhs = [], [], []
    for K in Ks:
        sub = [t.averaged_objective_values[-1] - f_star for t in traces if t.K == K]
        m, s = _mean_se(np.array(sub))
        emp.append(m)
        ses.append(s)
        rhs.append(convex_bound(B2, eta, K, s2, G2))
    return BoundReport(2, np.array(Ks), np.array(emp, dtype=float), np.array(rhs, dtype=float),
                       np.array(ses, dtype=float), len(traces))
