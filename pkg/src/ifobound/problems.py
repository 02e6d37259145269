"""Objective functions: the chain quadratic, the separable hard finite sum and
regularized least squares on sphere data.

Every finite-sum objective has the form::

    f(x) = mu/2 ||x||^2 + (1/n) sum_i g_i(x)

where each ``g_i`` is convex and ``(L - mu)``-smooth. Components expose
``value_grad(x) -> (float, ndarray)`` and, since all of them are quadratics,
``hessian_apply(v)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DegenerateConditionError
from .numkernel import as_point, q_embed, tridiag_spd_solve

TAIL_MASS = 1e-12


def rate_from_kappa(kappa: float) -> float:
    """``(sqrt(kappa) - 1) / (sqrt(kappa) + 1)``."""
    if kappa < 1:
        raise ContractViolation(f"kappa must be >= 1, got {kappa}")
    # (s-1)/(s+1) rewritten as (kappa-1)/(s+1)^2 to avoid cancellation near kappa = 1
    return (kappa - 1.0) / (1.0 + math.sqrt(kappa)) ** 2


def tail_dim(q: float, tail_mass: float = TAIL_MASS) -> int:
    """Smallest ``d`` with ``q**d <= tail_mass``."""
    if q <= 0.0:
        return 1
    return max(1, math.ceil(math.log(tail_mass) / math.log(q)))


def rho_for_norm(gamma: float, q: float) -> float:
    """Linear coefficient giving the chain minimizer ``(rho q^i)`` norm ``gamma``."""
    if gamma < 0:
        raise ContractViolation(f"gamma must be non-negative, got {gamma}")
    if not 0.0 <= q < 1.0:
        raise ContractViolation(f"q must lie in [0, 1), got {q}")
    if q == 0.0:
        raise DegenerateConditionError("q = 0 (kappa = 1): the instance is a scaled identity quadratic")
    return gamma * math.sqrt(1.0 - q * q) / q


# --------------------------------------------------------------------------
# chain quadratic


def _chain_form_apply(c: np.ndarray) -> np.ndarray:
    # M c for the form c_1^2 + sum (c_{i+1} - c_i)^2 = c^T M c
    Mc = 2.0 * c
    Mc[:-1] -= c[1:]
    Mc[1:] -= c[:-1]
    Mc[-1] -= c[-1]
    return Mc


def chain_value_grad(c: np.ndarray, spread: float, rho: float):
    """Value and gradient of ``spread/8 * (c_1^2 + sum (c_{i+1}-c_i)^2 - 2 rho c_1)``.

    ``spread`` plays the role of ``L - mu``. The sum stops at the last
    coordinate of ``c`` (coordinates past the end are treated as zero in the
    differences that are kept).
    """
    d = np.diff(c)
    form = c[0] * c[0] + d @ d
    value = spread / 8.0 * (form - 2.0 * rho * c[0])
    grad = _chain_form_apply(c)
    grad[0] -= rho
    grad *= spread / 4.0
    return float(value), grad


@dataclass(frozen=True)
class NesterovFunction:
    """Chain quadratic ``N_{mu,L}`` truncated to ``dim`` coordinates.

    ``N(x) = (L-mu)/8 (x_1^2 + sum (x_{i+1}-x_i)^2 - 2 rho x_1) + mu/2 ||x||^2``.
    Its l2 minimizer is ``(rho q^i)`` with ``q = (sqrt(kappa)-1)/(sqrt(kappa)+1)``.
    Construction refuses dims for which ``q**dim`` exceeds ``tail_mass`` unless
    ``check_tail`` is off.
    """

    mu: float
    L: float
    rho: float
    dim: int
    check_tail: bool = True
    tail_mass: float = TAIL_MASS

    def __post_init__(self):
        if not self.mu > 0:
            raise ContractViolation(f"mu must be positive, got {self.mu}")
        if not self.L > self.mu:
            raise ContractViolation(f"need L > mu, got L={self.L}, mu={self.mu}")
        if self.rho < 0:
            raise ContractViolation(f"rho must be non-negative, got {self.rho}")
        if self.dim < 1:
            raise ContractViolation(f"dim must be positive, got {self.dim}")
        if self.check_tail and self.q ** self.dim > self.tail_mass:
            need = tail_dim(self.q, self.tail_mass)
            raise ContractViolation(
                f"dim={self.dim} too small: q^dim = {self.q ** self.dim:.3e} > {self.tail_mass:g}; "
                f"need dim >= {need}"
            )

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    @property
    def q(self) -> float:
        return rate_from_kappa(self.kappa)

    @property
    def spread(self) -> float:
        return self.L - self.mu

    def value_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ContractViolation(f"expected a point of dim {self.dim}, got shape {x.shape}")
        v, g = chain_value_grad(x, self.spread, self.rho)
        return v + 0.5 * self.mu * (x @ x), g + self.mu * x

    def value(self, x) -> float:
        return self.value_grad(x)[0]

    def grad(self, x) -> np.ndarray:
        return self.value_grad(x)[1]

    def hessian_bands(self):
        """Diagonal and off-diagonal of the (tridiagonal) Hessian."""
        s = self.spread / 4.0
        diag = np.full(self.dim, 2.0 * s + self.mu)
        diag[-1] = s + self.mu
        off = np.full(self.dim - 1, -s)
        return diag, off

    def hessian_apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return self.spread / 4.0 * _chain_form_apply(v) + self.mu * v

    def minimizer(self) -> np.ndarray:
        """Analytic l2 minimizer ``(rho q^i)`` cut at ``dim`` coordinates."""
        return self.rho * self.q ** np.arange(1, self.dim + 1)

    def truncated_minimizer(self) -> np.ndarray:
        """Exact minimizer of the truncated function (tridiagonal solve)."""
        diag, off = self.hessian_bands()
        rhs = np.zeros(self.dim)
        rhs[0] = self.spread * self.rho / 4.0
        return tridiag_spd_solve(diag, off, rhs)

    def truncation_slack(self) -> float:
        """Bound on the gap between the analytic and truncated minimizers.

        The two differ through the boundary row only, so the gap is of order
        ``rho q^dim``; a factor ``kappa`` covers the amplification of the
        boundary residual by the inverse Hessian.
        """
        return self.kappa * self.rho * self.q ** self.dim


def nesterov_value(p: NesterovFunction, x) -> float:
    return p.value(x)


def nesterov_grad(p: NesterovFunction, x) -> np.ndarray:
    return p.grad(x)


def nesterov_minimizer(p: NesterovFunction) -> np.ndarray:
    return p.minimizer()


# --------------------------------------------------------------------------
# finite sums


class SeparableChainComponent:
    """``g_i(x) = h(B^T Q_i^T x)`` with ``h`` the chain quadratic without its ridge term.

    ``h(c) = spread/8 (c_1^2 + sum (c_{j+1}-c_j)^2 - 2 rho c_1)`` is convex and
    ``spread``-smooth. ``basis`` is an orthogonal ``(dim_c, dim_c)`` matrix, or
    ``None`` for the identity.
    """

    def __init__(self, i: int, n: int, spread: float, rho: float, dim_c: int, basis=None):
        if basis is not None:
            basis = np.asarray(basis, dtype=np.float64)
            if basis.shape != (dim_c, dim_c):
                raise ContractViolation(f"basis must be ({dim_c}, {dim_c}), got {basis.shape}")
        self.i, self.n = i, n
        self.spread, self.rho, self.dim_c = spread, rho, dim_c
        self.basis = basis

    def value_grad(self, x):
        y = x[self.i :: self.n]
        c = y if self.basis is None else self.basis.T @ y
        v, gc = chain_value_grad(c, self.spread, self.rho)
        gy = gc if self.basis is None else self.basis @ gc
        return v, q_embed(self.i, self.n, gy)

    def hessian_apply(self, v):
        y = v[self.i :: self.n]
        c = y if self.basis is None else self.basis.T @ y
        hc = self.spread / 4.0 * _chain_form_apply(c)
        hy = hc if self.basis is None else self.basis @ hc
        return q_embed(self.i, self.n, hy)


class LeastSquaresComponent:
    """``g(x) = scale * (<a, x> - b)^2``."""

    def __init__(self, a, b: float, scale: float = 0.5):
        self.a = np.asarray(a, dtype=np.float64)
        self.b = float(b)
        self.scale = float(scale)

    def value_grad(self, x):
        r = self.a @ x - self.b
        return float(self.scale * r * r), (2.0 * self.scale * r) * self.a

    def hessian_apply(self, v):
        return (2.0 * self.scale * (self.a @ v)) * self.a


@dataclass(frozen=True)
class FiniteSumProblem:
    """``f(x) = mu/2 ||x||^2 + (1/n) sum_i g_i(x)``.

    Solvers never touch this object directly; they go through an incremental
    oracle wrapped around it. The full-objective methods here are for
    observers (error tracking, tests).
    """

    mu: float
    L: float
    dim: int
    components: tuple
    x_star: np.ndarray | None = None
    name: str = "finite-sum"
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    @property
    def gamma(self) -> float | None:
        return None if self.x_star is None else float(np.linalg.norm(self.x_star))

    def component(self, i: int, x):
        if not 0 <= i < self.n:
            raise ContractViolation(f"component index {i} out of range for n={self.n}")
        return self.components[i].value_grad(x)

    def value_grad(self, x):
        x = as_point(x)
        total_v = 0.0
        total_g = np.zeros(self.dim)
        for comp in self.components:
            v, g = comp.value_grad(x)
            total_v += v
            total_g += g
        return (
            0.5 * self.mu * (x @ x) + total_v / self.n,
            self.mu * x + total_g / self.n,
        )

    def value(self, x) -> float:
        return self.value_grad(x)[0]

    def grad(self, x) -> np.ndarray:
        return self.value_grad(x)[1]

    def hessian_apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        acc = np.zeros(self.dim)
        for comp in self.components:
            acc += comp.hessian_apply(v)
        return self.mu * v + acc / self.n

    def relative_error(self, x) -> float:
        if self.x_star is None:
            return math.nan
        return float(np.linalg.norm(x - self.x_star) / np.linalg.norm(self.x_star))


def component_rate(kappa: float, n: int) -> float:
    """Per-component rate for the separable instance (``kappa_c = 1 + (kappa-1)/n``)."""
    return rate_from_kappa(1.0 + (kappa - 1.0) / n)


def build_hard_instance(n: int, mu: float, L: float, gamma: float, dim_per_component: int,
                        tail_mass: float = TAIL_MASS) -> FiniteSumProblem:
    """Separable worst-case finite sum with ``||x*|| = gamma``.

    Component ``i`` reads the interleaved coordinates ``i, i+n, ...`` only and
    carries a chain quadratic with ``(n mu, L - mu + n mu)``; each block of the
    minimizer has norm ``gamma / sqrt(n)``.
    """
    if n < 1:
        raise ContractViolation(f"n must be positive, got {n}")
    if not L > mu > 0:
        raise ContractViolation(f"need L > mu > 0, got mu={mu}, L={L}")
    if gamma <= 0:
        raise ContractViolation(f"gamma must be positive, got {gamma}")
    mu_c, L_c = n * mu, L - mu + n * mu
    q_c = rate_from_kappa(L_c / mu_c)
    rho = rho_for_norm(gamma / math.sqrt(n), q_c)
    try:
        block = NesterovFunction(mu_c, L_c, rho, dim_per_component, tail_mass=tail_mass)
    except ContractViolation as exc:
        raise ContractViolation(
            f"dim_per_component={dim_per_component} fails the tail guard; "
            f"need >= {tail_dim(q_c, tail_mass)} ({exc})"
        ) from exc
    x_block = block.truncated_minimizer()
    comps = tuple(SeparableChainComponent(i, n, L - mu, rho, dim_per_component) for i in range(n))
    x_star = np.zeros(n * dim_per_component)
    for i in range(n):
        x_star += q_embed(i, n, x_block)
    return FiniteSumProblem(
        mu=mu, L=L, dim=n * dim_per_component, components=comps, x_star=x_star,
        name="hard-static",
        meta={"rho": rho, "q_component": q_c, "kappa_component": L_c / mu_c,
              "dim_per_component": dim_per_component, "gamma": gamma},
    )


# --------------------------------------------------------------------------
# regularized least squares


@dataclass(frozen=True)
class RlsDataset:
    """Rows ``a_i`` on the radius-``R`` sphere with targets ``b_i``."""

    A: np.ndarray
    b: np.ndarray
    R: float
    mu: float
    seed: int
    noise: float = 0.0

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def smoothness(self, loss_scale: float = 0.5) -> float:
        return self.mu + 2.0 * loss_scale * self.R ** 2

    def header(self) -> dict:
        return {"n": self.n, "d": self.d, "R": self.R, "mu": self.mu,
                "seed": self.seed, "noise": self.noise}

    def to_csv(self, path) -> None:
        """Write rows ``a_i1..a_id, b_i`` to ``path`` and the header to ``path.json``."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"a{j + 1}" for j in range(self.d)] + ["b"])
            for a, b in zip(self.A, self.b):
                w.writerow([repr(float(v)) for v in a] + [repr(float(b))])
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(self.header(), indent=2))

    @classmethod
    def from_csv(cls, path) -> "RlsDataset":
        path = Path(path)
        header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(A=data[:, :-1], b=data[:, -1], R=header["R"], mu=header["mu"],
                   seed=header["seed"], noise=header["noise"])


def sample_sphere_dataset(n: int, d: int, R: float, mu: float, noise: float = 0.0,
                          seed: int = 0) -> RlsDataset:
    """Draw ``n`` rows uniformly on the radius-``R`` sphere in ``R^d``.

    Targets are ``b_i = <a_i, x_bar> + noise * xi_i`` for a unit-norm planted
    ``x_bar`` and standard normal ``xi_i``.
    """
    if n < 1 or d < 1:
        raise ContractViolation(f"n and d must be positive, got n={n}, d={d}")
    if R <= 0 or mu <= 0 or noise < 0:
        raise ContractViolation("need R > 0, mu > 0 and noise >= 0")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    A *= R / np.linalg.norm(A, axis=1, keepdims=True)
    x_bar = rng.standard_normal(d)
    x_bar /= np.linalg.norm(x_bar)
    b = A @ x_bar + noise * rng.standard_normal(n)
    return RlsDataset(A=A, b=b, R=float(R), mu=float(mu), seed=int(seed), noise=float(noise))


def rls_component(dataset: RlsDataset, i: int, x):
    """``((<a_i, x> - b_i)^2, 2 (<a_i, x> - b_i) a_i)`` -- the unscaled loss."""
    if not 0 <= i < dataset.n:
        raise ContractViolation(f"row index {i} out of range for n={dataset.n}")
    x = as_point(x)
    if x.shape[0] != dataset.d:
        raise ContractViolation(f"expected a point of dim {dataset.d}, got {x.shape[0]}")
    return LeastSquaresComponent(dataset.A[i], dataset.b[i], scale=1.0).value_grad(x)


def rls_problem(dataset: RlsDataset, loss_scale: float = 0.5) -> FiniteSumProblem:
    """Finite-sum view of the regularized least squares objective.

    With the default ``loss_scale = 1/2`` each component has Hessian
    ``a_i a_i^T`` and ``L = mu + R^2``; ``loss_scale = 1`` gives the literal
    squared loss with ``L = mu + 2 R^2``.
    """
    comps = tuple(LeastSquaresComponent(a, b, loss_scale) for a, b in zip(dataset.A, dataset.b))
    n, d = dataset.n, dataset.d
    H = dataset.mu * np.eye(d) + (2.0 * loss_scale / n) * (dataset.A.T @ dataset.A)
    rhs = (2.0 * loss_scale / n) * (dataset.A.T @ dataset.b)
    x_star = np.linalg.solve(H, rhs)
    return FiniteSumProblem(
        mu=dataset.mu, L=dataset.smoothness(loss_scale), dim=d, components=comps,
        x_star=x_star, name="rls", meta={"loss_scale": loss_scale, **dataset.header()},
    )
