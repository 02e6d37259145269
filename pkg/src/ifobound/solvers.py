"""Reference incremental and batch solvers.

Every solver has the signature ``run_xxx(config, oracle, x0=None, monitor=None)``
and sees the objective only through ``oracle.query(i, x)`` plus the public
constants ``oracle.n``, ``oracle.mu``, ``oracle.L`` and ``oracle.dim``. The
ridge term ``mu/2 ||x||^2`` is known and handled in closed form.

A :class:`Monitor` is the observer side: it may know ``x*`` or the full
objective, and records samples without issuing oracle calls.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, UnsupportedObjectiveError


@dataclass(frozen=True)
class SolverConfig:
    """Settings shared by all solvers.

    ``budget`` counts IFO calls. ``step=None`` selects the solver's default
    rule; ``mu_eff``/``L_eff`` override the constants AGM uses; ``epoch``
    is SVRG's inner-loop length (default ``2n + ceil(kappa)``); ``k0`` shifts
    the SGD decay schedule.
    """

    name: str
    budget: int
    step: float | None = None
    seed: int | None = None
    epoch: int | None = None
    mu_eff: float | None = None
    L_eff: float | None = None
    k0: float = 0.0
    record_every: int | None = None
    verify_every: int = 0

    def __post_init__(self):
        if self.budget <= 0:
            raise ContractViolation(f"budget must be positive, got {self.budget}")

    @property
    def deterministic(self) -> bool:
        return SOLVERS[self.name].deterministic


@dataclass(frozen=True)
class Sample:
    k_calls: int
    rel_error: float
    obj: float
    lower_bound: float
    log_lower_bound: float
    wall_ns: int


@dataclass
class RunTrace:
    algo: str
    seed: int | None
    samples: list = field(default_factory=list)
    x_final: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def k_calls(self) -> np.ndarray:
        return np.array([s.k_calls for s in self.samples])

    @property
    def rel_errors(self) -> np.ndarray:
        return np.array([s.rel_error for s in self.samples])

    def first_reaching(self, eps: float) -> int | None:
        """IFO calls at the first sample with relative error ``<= eps``."""
        for s in self.samples:
            if s.rel_error <= eps:
                return s.k_calls
        return None

    CSV_COLUMNS = ("algo", "seed", "k_calls", "rel_error", "obj", "lower_bound", "wall_ns",
                   "log_lower_bound")

    def csv_rows(self):
        seed = "" if self.seed is None else self.seed
        for s in self.samples:
            yield [self.algo, seed, s.k_calls, repr(s.rel_error), repr(s.obj),
                   repr(s.lower_bound), s.wall_ns, repr(s.log_lower_bound)]


class Monitor:
    """Observer that turns iterates into :class:`Sample` rows.

    ``x_star`` enables relative errors, ``objective`` evaluates ``f`` outside
    the oracle, ``log_lower_bound(K)`` supplies the bound column.
    """

    def __init__(self, x_star=None, objective=None, log_lower_bound=None):
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=np.float64)
        self.x_star_norm = None if x_star is None else float(np.linalg.norm(x_star))
        self.objective = objective
        self.log_lower_bound = log_lower_bound
        self._t0 = time.perf_counter_ns()

    def sample(self, k_calls: int, x) -> Sample:
        rel = math.nan
        if self.x_star is not None:
            rel = float(np.linalg.norm(x - self.x_star) / self.x_star_norm)
        obj = math.nan if self.objective is None else float(self.objective(x))
        llb = math.nan if self.log_lower_bound is None else float(self.log_lower_bound(k_calls))
        return Sample(k_calls, rel, obj, math.exp(llb) if not math.isnan(llb) else math.nan,
                      llb, time.perf_counter_ns() - self._t0)


class _Recorder:
    def __init__(self, trace: RunTrace, monitor: Monitor | None, every: int):
        self.trace, self.monitor = trace, monitor or Monitor()
        self.every = max(1, every)
        self._next = 0
        self._last = -1

    def __call__(self, k_calls: int, x, force: bool = False):
        if k_calls == self._last:
            return
        if force or k_calls >= self._next:
            self.trace.samples.append(self.monitor.sample(k_calls, x))
            self._last = k_calls
            self._next = k_calls + self.every


def _start(oracle, x0):
    if x0 is None:
        return np.zeros(oracle.dim)
    x0 = np.array(x0, dtype=np.float64)
    if x0.shape != (oracle.dim,):
        raise ContractViolation(f"x0 must have shape ({oracle.dim},), got {x0.shape}")
    return x0


def full_gradient(oracle, x):
    """Assemble ``f(x)`` and ``f'(x)`` with one call per component."""
    n = oracle.n
    v_sum, g_sum = 0.0, np.zeros_like(x)
    for i in range(n):
        v, g = oracle.query(i, x)
        v_sum += v
        g_sum += g
    return 0.5 * oracle.mu * (x @ x) + v_sum / n, oracle.mu * x + g_sum / n


# --------------------------------------------------------------------------
# batch methods


def run_gd(config: SolverConfig, oracle, x0=None, monitor=None) -> RunTrace:
    """Fixed-step gradient descent; ``n`` IFO calls per iteration, default step ``1/L``."""
    n = oracle.n
    step = 1.0 / oracle.L if config.step is None else config.step
    x = _start(oracle, x0)
    trace = RunTrace(config.name, config.seed)
    rec = _Recorder(trace, monitor, config.record_every or n)
    calls = 0
    rec(calls, x, force=True)
    while calls + n <= config.budget:
        _, g = full_gradient(oracle, x)
        calls += n
        x = x - step * g
        rec(calls, x)
    rec(calls, x, force=True)
    trace.x_final = x
    return trace


def run_agm(config: SolverConfig, oracle, x0=None, monitor=None) -> RunTrace:
    """Constant-momentum accelerated gradient for strongly convex objectives.

    ``y = x_k + beta (x_k - x_{k-1})``, ``x_{k+1} = y - f'(y)/L_eff`` with
    ``beta = (sqrt(kappa_eff) - 1)/(sqrt(kappa_eff) + 1)``.
    """
    n = oracle.n
    mu_eff = oracle.mu if config.mu_eff is None else config.mu_eff
    L_eff = oracle.L if config.L_eff is None else config.L_eff
    if not L_eff >= mu_eff > 0:
        raise ContractViolation(f"need L_eff >= mu_eff > 0, got {L_eff}, {mu_eff}")
    step = 1.0 / L_eff if config.step is None else config.step
    s = math.sqrt(L_eff / mu_eff)
    beta = (s - 1.0) / (s + 1.0)
    x = _start(oracle, x0)
    x_prev = x
    trace = RunTrace(config.name, config.seed)
    rec = _Recorder(trace, monitor, config.record_every or n)
    calls = 0
    rec(calls, x, force=True)
    while calls + n <= config.budget:
        y = x + beta * (x - x_prev)
        _, g = full_gradient(oracle, y)
        calls += n
        x_prev, x = x, y - step * g
        rec(calls, x)
    rec(calls, x, force=True)
    trace.x_final = x
    trace.extras["beta"] = beta
    return trace


def run_cg(config: SolverConfig, oracle, x0=None, monitor=None) -> RunTrace:
    """Linear conjugate gradient on a quadratic objective through the IFO.

    Curvature along the search direction comes from a gradient difference,
    ``A p = f'(x + u) - f'(x)`` with ``u = p/||p||``, so every iteration costs
    one full gradient (``n`` calls) after the initial one. The first step is
    checked against a freshly queried gradient (and every ``verify_every``
    steps after that, if set); a mismatch means the objective is not quadratic.
    """
    n = oracle.n
    x = _start(oracle, x0)
    trace = RunTrace(config.name, config.seed)
    rec = _Recorder(trace, monitor, config.record_every or n)
    calls = 0
    rec(calls, x, force=True)
    if config.budget < n:
        trace.x_final = x
        return trace
    _, g = full_gradient(oracle, x)
    calls += n
    r = -g
    p = r.copy()
    rr = r @ r
    it = 0
    while calls + n <= config.budget and rr > 0.0:
        pn = math.sqrt(p @ p)
        u = p / pn
        _, g_probe = full_gradient(oracle, x + u)
        calls += n
        Au = g_probe - g
        curv = u @ Au
        if not curv > 0.0:
            raise UnsupportedObjectiveError(f"non-positive curvature {curv:.3e} along search direction")
        alpha = rr / (pn * pn * curv)
        x = x + alpha * p
        g = g + (alpha * pn) * Au
        it += 1
        check = it == 1 or (config.verify_every and it % config.verify_every == 0)
        if check and calls + n <= config.budget:
            _, g_true = full_gradient(oracle, x)
            calls += n
            scale = max(np.linalg.norm(g_true), np.linalg.norm(g), 1e-300)
            if np.linalg.norm(g_true - g) > 1e-6 * scale + 1e-12 * np.linalg.norm(Au) * abs(alpha * pn):
                raise UnsupportedObjectiveError("gradient is not affine in x: objective is not quadratic")
            g = g_true
        r = -g
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        rec(calls, x)
    rec(calls, x, force=True)
    trace.x_final = x
    return trace


# --------------------------------------------------------------------------
# incremental methods


def _rng(config: SolverConfig):
    if config.seed is None:
        raise ContractViolation(f"{config.name} is randomized and needs a seed")
    return np.random.default_rng(config.seed)


def run_sgd(config: SolverConfig, oracle, x0=None, monitor=None) -> RunTrace:
    """Stochastic gradient with ``eta_k = min(1/L, 2/(mu (k + k0)))``; one call per step."""
    rng = _rng(config)
    n, mu, L = oracle.n, oracle.mu, oracle.L
    x = _start(oracle, x0)
    trace = RunTrace(config.name, config.seed)
    rec = _Recorder(trace, monitor, config.record_every or n)
    rec(0, x, force=True)
    for k in range(config.budget):
        i = int(rng.integers(n))
        _, g = oracle.query(i, x)
        if config.step is not None:
            eta = config.step
        else:
            denom = mu * (k + config.k0)
            eta = 1.0 / L if denom <= 0 else min(1.0 / L, 2.0 / denom)
        x = x - eta * (g + mu * x)
        rec(k + 1, x)
    rec(config.budget, x, force=True)
    trace.x_final = x
    return trace


def run_sag(config: SolverConfig, oracle, x0=None, monitor=None) -> RunTrace:
    """Stochastic average gradient, default step ``1/(16 L)``.

    Unvisited table rows count as zero and the average is over all ``n`` rows.
    """
    rng = _rng(config)
    n, mu, L = oracle.n, oracle.mu, oracle.L
    step = 1.0 / (16.0 * L) if config.step is None else config.step
    x = _start(oracle, x0)
    table = np.zeros((n, oracle.dim))
    total = np.zeros(oracle.dim)
    trace = RunTrace(config.name, config.seed)
    rec = _Recorder(trace, monitor, config.record_every or n)
    rec(0, x, force=True)
    for k in range(config.budget):
        i = int(rng.integers(n))
        _, g = oracle.query(i, x)
        total += g - table[i]
        table[i] = g
        x = x - step * (mu * x + total / n)
        rec(k + 1, x)
    rec(config.budget, x, force=True)
    trace.x_final = x
    trace.extras["table"] = table
    return trace


def run_saga(config: SolverConfig, oracle, x0=None, monitor=None) -> RunTrace:
    """SAGA, default step ``1/(3 L)``; the table starts from zeros like SAG."""
    rng = _rng(config)
    n, mu, L = oracle.n, oracle.mu, oracle.L
    step = 1.0 / (3.0 * L) if config.step is None else config.step
    x = _start(oracle, x0)
    table = np.zeros((n, oracle.dim))
    total = np.zeros(oracle.dim)
    trace = RunTrace(config.name, config.seed)
    rec = _Recorder(trace, monitor, config.record_every or n)
    rec(0, x, force=True)
    for k in range(config.budget):
        i = int(rng.integers(n))
        _, g = oracle.query(i, x)
        v = g - table[i] + total / n
        total += g - table[i]
        table[i] = g
        x = x - step * (mu * x + v)
        rec(k + 1, x)
    rec(config.budget, x, force=True)
    trace.x_final = x
    trace.extras["table"] = table
    return trace


def run_svrg(config: SolverConfig, oracle, x0=None, monitor=None) -> RunTrace:
    """SVRG with stored anchor gradients.

    Each epoch spends ``n`` calls on the anchor ``x~`` (keeping every
    ``g_i'(x~)``) and then ``m`` single-call inner steps
    ``x <- x - eta (g_i'(x) - g_i'(x~) + mean_j g_j'(x~) + mu x)``.
    The next anchor is the last inner iterate. Defaults: ``eta = 1/(10 L)``,
    ``m = 2n + ceil(kappa)``.
    """
    rng = _rng(config)
    n, mu, L = oracle.n, oracle.mu, oracle.L
    step = 1.0 / (10.0 * L) if config.step is None else config.step
    m = config.epoch or (2 * n + math.ceil(L / mu))
    x = _start(oracle, x0)
    anchor_g = np.zeros((n, oracle.dim))
    trace = RunTrace(config.name, config.seed)
    rec = _Recorder(trace, monitor, config.record_every or n)
    calls = 0
    rec(0, x, force=True)
    while calls + n < config.budget:
        for i in range(n):
            anchor_g[i] = oracle.query(i, x)[1]
        calls += n
        anchor_mean = anchor_g.mean(axis=0)
        for _ in range(m):
            if calls >= config.budget:
                break
            i = int(rng.integers(n))
            _, g = oracle.query(i, x)
            calls += 1
            x = x - step * (g - anchor_g[i] + anchor_mean + mu * x)
            rec(calls, x)
    rec(calls, x, force=True)
    trace.x_final = x
    trace.extras["epoch"] = m
    return trace


@dataclass(frozen=True)
class SolverSpec:
    run: object
    deterministic: bool


SOLVERS = {
    "gd": SolverSpec(run_gd, True),
    "agm": SolverSpec(run_agm, True),
    "cg": SolverSpec(run_cg, True),
    "sgd": SolverSpec(run_sgd, False),
    "sag": SolverSpec(run_sag, False),
    "saga": SolverSpec(run_saga, False),
    "svrg": SolverSpec(run_svrg, False),
}


def run_solver(config: SolverConfig, oracle, x0=None, monitor=None) -> RunTrace:
    try:
        spec = SOLVERS[config.name]
    except KeyError:
        raise ContractViolation(f"unknown solver {config.name!r}; known: {sorted(SOLVERS)}") from None
    return spec.run(config, oracle, x0=x0, monitor=monitor)


def with_budget(config: SolverConfig, budget: int) -> SolverConfig:
    return replace(config, budget=budget)
